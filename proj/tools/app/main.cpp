#include <chrono>
#include <iostream>

#include <CLI11.hpp>

#include "ccomaml/errors.hpp"
#include "ccomaml_cli/commands.hpp"

using namespace ccomaml;
using namespace ccomaml::cli;

namespace {

enum ExitCode : int { kOk = 0, kConfig = 2, kData = 3, kNumerical = 4, kInternal = 5 };

void add_common(CLI::App* app, CommonOptions& common, std::uint64_t& seed, std::size_t& episodes) {
  app->add_option("--config", common.config, "run configuration (JSON)");
  app->add_option("--seed", seed, "overrides the configured seed");
  app->add_option("--out", common.out, "output directory");
  app->add_option("--threads", common.threads, "worker cap; results do not depend on it")->check(CLI::PositiveNumber);
  app->add_option("--episodes", episodes, "test episode count");
  app->add_flag("--quiet", common.quiet, "no progress lines on stderr");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CCoMAML few-shot meta-learning experiments"};
  app.require_subcommand(1);

  CommonOptions common;
  std::uint64_t seed = 0;
  std::size_t episodes = 0;
  EvalOptions eval_opts;
  std::size_t n_way = 0, k_shot = 0, q_query = 0;
  CompareOptions compare_opts;
  AblateOptions ablate_opts;
  GradcheckCommandOptions grad_opts;
  SynthOptions synth_opts;
  std::size_t classes = 0, per_class = 0, size = 0, channels = 0;
  double noise = 0, jitter = 0;

  auto* train = app.add_subcommand("train", "meta-train, then evaluate on the test classes");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* compare = app.add_subcommand("compare", "train and evaluate several methods on shared episodes");
  auto* ablate = app.add_subcommand("ablate", "sweep one setting");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference self-check of every gradient");
  auto* synth = app.add_subcommand("synth", "write the synthetic dataset as an image folder tree");
  for (auto* sub : {train, eval, compare, ablate, gradcheck, synth}) add_common(sub, common, seed, episodes);

  eval->add_option("--checkpoint", eval_opts.checkpoint, "checkpoint written by train")->required();
  eval->add_option("--n-way", n_way);
  eval->add_option("--k-shot", k_shot);
  eval->add_option("--q-query", q_query);

  compare->add_option("--methods", compare_opts.methods, "default: all")->delimiter(',');
  compare->add_option("--reference", compare_opts.reference, "method the p-values refer to");
  compare->add_option("--runs", compare_opts.runs, "model-init reseeds per method");
  compare->add_flag("--reseed-splits", compare_opts.reseed_splits, "also reseed the class split per run");

  ablate->add_option("--kind", ablate_opts.kind, "gamma | strategy | fc | conv | kshot")->required();
  ablate->add_option("--values", ablate_opts.values, "override the default grid")->delimiter(',');
  ablate->add_flag("--retrain", ablate_opts.retrain, "kshot: train one model per K");

  gradcheck->add_option("--trials", grad_opts.trials, "trials per op");
  gradcheck->add_option("--hvp-trials", grad_opts.hvp_trials, "Hessian-vector trials per op");
  gradcheck->add_option("--inject-sign-error", grad_opts.inject_sign_error, "negate one op's backward (negative control)");

  synth->add_option("--classes", classes);
  synth->add_option("--per-class", per_class);
  synth->add_option("--size", size);
  synth->add_option("--channels", channels);
  synth->add_option("--noise", noise);
  synth->add_option("--jitter", jitter);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  auto given = [](CLI::App* sub, const char* name) { return sub->count(name) > 0; };
  try {
    CLI::App* active = app.get_subcommands().front();
    if (given(active, "--seed")) common.seed = seed;
    if (given(active, "--episodes")) common.episodes = episodes;
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

    CommandOutput out;
    int code = kOk;
    if (active == train) {
      out = run_train(resolve_config(common), common.runtime());
    } else if (active == eval) {
      if (given(eval, "--n-way")) eval_opts.n_way = n_way;
      if (given(eval, "--k-shot")) eval_opts.k_shot = k_shot;
      if (given(eval, "--q-query")) eval_opts.q_query = q_query;
      out = run_eval(common, eval_opts);
    } else if (active == compare) {
      out = run_compare(resolve_config(common), compare_opts, common.runtime());
    } else if (active == ablate) {
      out = run_ablate(resolve_config(common), ablate_opts, common.runtime());
    } else if (active == gradcheck) {
      out = run_gradcheck(grad_opts, common.seed.value_or(1));
      if (!out.payload.at("passed").get<bool>()) code = kNumerical;
    } else {
      if (given(synth, "--classes")) synth_opts.classes = classes;
      if (given(synth, "--per-class")) synth_opts.per_class = per_class;
      if (given(synth, "--size")) synth_opts.size = size;
      if (given(synth, "--channels")) synth_opts.channels = channels;
      if (given(synth, "--noise")) synth_opts.noise = noise;
      if (given(synth, "--jitter")) synth_opts.jitter = jitter;
      out = run_synth(resolve_config(common), synth_opts, common.out);
    }
    write_outputs(common.out, out, elapsed());
    std::cout << out.table_csv;
    return code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}
