#include "ccomaml_cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "ccomaml/autodiff.hpp"
#include "ccomaml/errors.hpp"
#include "ccomaml_cli/gradcheck.hpp"

namespace ccomaml::cli {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string summary_row(const EvalSummary& s) {
  return fmt(s.accuracy.mean) + "," + fmt(s.accuracy.half_width) + "," + fmt(s.macro_f1.mean) + "," +
         fmt(s.macro_f1.half_width);
}

json epochs_json(const std::vector<EpochRecord>& epochs) {
  json out = json::array();
  for (const auto& e : epochs) out.push_back(to_json(e));
  return out;
}

std::function<void(const EpochRecord&)> epoch_printer(const Runtime& runtime, std::string prefix = {}) {
  if (runtime.quiet) return {};
  return [prefix = std::move(prefix)](const EpochRecord& e) {
    std::cerr << prefix << format_epoch_line(e) << '\n';
  };
}

struct TrainedModel {
  TrainResult train;
  EvalSummary test;
};

TrainedModel train_and_test(const RunConfig& config, const PreparedData& data, const Runtime& runtime,
                            std::string prefix = {}) {
  TrainedModel m;
  m.train = train_model(config, data, runtime, epoch_printer(runtime, std::move(prefix)));
  m.test = evaluate_model(config, m.train.checkpoint.state.theta, data, config.test, config.seed, runtime);
  return m;
}

double parse_double(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("ablate: '") + text + "' is not a valid " + what);
  }
}

std::size_t parse_count(const std::string& text, const char* what) {
  const double v = parse_double(text, what);
  if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
    throw ConfigError(std::string("ablate: '") + text + "' is not a valid " + what);
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

RunConfig resolve_config(const CommonOptions& common) {
  RunConfig config = common.config.empty() ? RunConfig{} : load_config(common.config);
  if (common.seed) config.seed = *common.seed;
  if (common.episodes) config.test.count = *common.episodes;
  if (common.threads < 1) throw ConfigError("--threads must be at least 1");
  config.validate();
  return config;
}

CommandOutput run_train(const RunConfig& config, const Runtime& runtime) {
  const auto data = prepare_data(config);
  for (const auto& w : data.warnings)
    if (!runtime.quiet) std::cerr << "warning: " << w << '\n';
  const auto m = train_and_test(config, data, runtime);

  CommandOutput out;
  out.payload = {{"command", "train"},
                 {"config", to_json(config)},
                 {"config_hash", hex64(config_hash(config))},
                 {"seed", config.seed},
                 {"dataset_checksum", hex64(data.dataset.checksum())},
                 {"epochs", epochs_json(m.train.epochs)},
                 {"stopped_early", m.train.stopped_early},
                 {"test", to_json(m.test)}};
  out.table_csv = "method,n_way,k_shot,episodes,acc_mean,acc_ci95,f1_mean,f1_ci95\n" + to_string(config.method) + "," +
                  std::to_string(config.test.n_way) + "," + std::to_string(config.test.k_shot) + "," +
                  std::to_string(config.test.count) + "," + summary_row(m.test) + "\n";
  return out;
}

CommandOutput run_eval(const CommonOptions& common, const EvalOptions& options) {
  if (options.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
  const auto ck = load_checkpoint(options.checkpoint);
  RunConfig config;
  try {
    config = config_from_json(json::parse(ck.config_json));
  } catch (const json::parse_error&) {
    throw DataError("eval: checkpoint carries an unreadable configuration");
  }
  if (common.seed) config.seed = *common.seed;
  if (common.episodes) config.test.count = *common.episodes;
  if (options.n_way) config.test.n_way = *options.n_way;
  if (options.k_shot) config.test.k_shot = *options.k_shot;
  if (options.q_query) config.test.q_query = *options.q_query;
  config.validate();

  const auto runtime = common.runtime();
  const auto data = prepare_data(config);
  const auto test = evaluate_model(config, ck.state.theta, data, config.test, config.seed, runtime);

  CommandOutput out;
  out.payload = {{"command", "eval"},
                 {"config_hash", hex64(ck.config_hash)},
                 {"checkpoint_epoch", ck.epoch},
                 {"theta_checksum", hex64(ck.state.theta.checksum())},
                 {"seed", config.seed},
                 {"method", to_string(config.method)},
                 {"episodes",
                  {{"n_way", config.test.n_way},
                   {"k_shot", config.test.k_shot},
                   {"q_query", config.test.q_query},
                   {"count", config.test.count}}},
                 {"test", to_json(test)}};
  out.table_csv = "method,n_way,k_shot,episodes,acc_mean,acc_ci95,f1_mean,f1_ci95\n" + to_string(config.method) + "," +
                  std::to_string(config.test.n_way) + "," + std::to_string(config.test.k_shot) + "," +
                  std::to_string(config.test.count) + "," + summary_row(test) + "\n";
  return out;
}

CommandOutput run_compare(const RunConfig& base, const CompareOptions& options, const Runtime& runtime) {
  if (options.runs < 1) throw ConfigError("compare: --runs must be at least 1");
  std::vector<MethodId> methods;
  if (options.methods.empty()) {
    methods = all_methods();
  } else {
    for (const auto& m : options.methods) methods.push_back(parse_method(m));
  }
  const MethodId reference = parse_method(options.reference);
  if (std::find(methods.begin(), methods.end(), reference) == methods.end()) {
    throw ConfigError("compare: reference method " + to_string(reference) + " is not among the compared methods");
  }

  // per-run data; shared by every method so all of them see the same episodes
  std::vector<PreparedData> data;
  for (std::size_t r = 0; r < (options.reseed_splits ? options.runs : 1); ++r) {
    RunConfig c = base;
    if (options.reseed_splits) c.data.split_seed = base.data.split_seed + r;
    data.push_back(prepare_data(c));
  }

  struct MethodResult {
    std::vector<EvalSummary> runs;
    std::vector<double> acc_items, f1_items, run_acc, run_f1;
  };
  std::map<MethodId, MethodResult> results;
  for (MethodId method : methods) {
    auto& res = results[method];
    for (std::size_t r = 0; r < options.runs; ++r) {
      RunConfig c = base;
      c.method = method;
      c.meta.method = method;
      c.seed = base.seed + r;
      if (options.reseed_splits) c.data.split_seed = base.data.split_seed + r;
      c.validate();
      const auto m = train_and_test(c, data[options.reseed_splits ? r : 0], runtime,
                                    to_string(method) + " run " + std::to_string(r + 1) + ": ");
      for (const auto& e : m.test.episodes) {
        res.acc_items.push_back(e.accuracy);
        res.f1_items.push_back(e.macro_f1);
      }
      res.run_acc.push_back(m.test.accuracy.mean);
      res.run_f1.push_back(m.test.macro_f1.mean);
      res.runs.push_back(m.test);
    }
  }

  CommandOutput out;
  json rows = json::array();
  out.table_csv = "method,acc_mean,acc_ci95,f1_mean,f1_ci95,p_value,marker\n";
  const auto& ref = results.at(reference);
  for (MethodId method : methods) {
    const auto& res = results.at(method);
    // paired over identical test episodes, pooled across runs
    const auto t = paired_t_test(res.acc_items, ref.acc_items);
    const auto episode_acc = ci95(res.acc_items), episode_f1 = ci95(res.f1_items);
    // headline CI over per-run means when there are at least two runs
    const bool run_level = options.runs >= 2;
    const auto head_acc = run_level ? ci95(res.run_acc) : episode_acc;
    const auto head_f1 = run_level ? ci95(res.run_f1) : episode_f1;

    json runs = json::array();
    for (std::size_t r = 0; r < res.runs.size(); ++r) runs.push_back({{"seed", base.seed + r}, {"test", to_json(res.runs[r])}});
    json row{{"method", to_string(method)},
             {"ci_basis", run_level ? "runs" : "episodes"},
             {"accuracy", to_json(head_acc)},
             {"macro_f1", to_json(head_f1)},
             {"episode_level", {{"accuracy", to_json(episode_acc)}, {"macro_f1", to_json(episode_f1)}}},
             {"t", t.degenerate && t.t != 0.0 ? json(nullptr) : json(t.t)},
             {"p_value", t.p},
             {"degenerate", t.degenerate},
             {"marker", significance_marker(t.p)},
             {"runs", runs}};
    rows.push_back(std::move(row));
    out.table_csv += to_string(method) + "," + fmt(head_acc.mean) + "," + fmt(head_acc.half_width) + "," +
                     fmt(head_f1.mean) + "," + fmt(head_f1.half_width) + "," + fmt(t.p) + "," +
                     significance_marker(t.p) + "\n";
  }
  out.payload = {{"command", "compare"},
                 {"config", to_json(base)},
                 {"config_hash", hex64(config_hash(base))},
                 {"seed", base.seed},
                 {"reference", to_string(reference)},
                 {"runs", options.runs},
                 {"reseed_splits", options.reseed_splits},
                 {"methods", rows}};
  return out;
}

std::vector<std::string> default_grid(const std::string& kind, const RunConfig& config) {
  if (kind == "gamma") return {"0", "0.2", "0.4", "0.6", "0.8", "1.0"};
  if (kind == "strategy") return {"S1", "S2", "S3", "S4"};
  if (kind == "fc" || kind == "conv") return {"1", "2", "3", "4"};
  if (kind == "kshot") return {"1", "2", "3", "4", "5", "6", "7", "8", "9"};
  (void)config;
  throw ConfigError("ablate: unknown sweep kind '" + kind + "' (gamma, strategy, fc, conv, kshot)");
}

CommandOutput run_ablate(const RunConfig& base, const AblateOptions& options, const Runtime& runtime) {
  const auto values = options.values.empty() ? default_grid(options.kind, base) : options.values;
  (void)default_grid(options.kind, base);  // rejects unknown kinds even with explicit values

  std::vector<RunConfig> configs;
  for (const auto& v : values) {
    RunConfig c = base;
    if (options.kind == "gamma") {
      c.meta.gamma = parse_double(v, "gamma");
    } else if (options.kind == "strategy") {
      c.colearner.strategy = parse_strategy(v);
      if (!strategy_has_conv(c.colearner.strategy)) c.colearner.conv_layers = 0;
      else if (c.colearner.conv_layers == 0) c.colearner.conv_layers = CoLearnerSpec{}.conv_layers;
    } else if (options.kind == "fc") {
      c.colearner.fc_layers = parse_count(v, "FC layer count");
    } else if (options.kind == "conv") {
      c.colearner.conv_layers = parse_count(v, "conv layer count");
    } else {
      c.test.k_shot = parse_count(v, "shot count");
      if (options.retrain) c.train.k_shot = c.test.k_shot;
    }
    c.validate();
    configs.push_back(std::move(c));
  }

  const auto data = prepare_data(base);
  const bool shared_model = options.kind == "kshot" && !options.retrain;
  std::optional<TrainResult> shared;
  if (shared_model) shared = train_model(base, data, runtime, epoch_printer(runtime, "kshot: "));

  CommandOutput out;
  json rows = json::array();
  out.table_csv = "kind,value,acc_mean,acc_ci95,f1_mean,f1_ci95\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& c = configs[i];
    json row{{"value", values[i]}};
    EvalSummary test;
    if (shared_model) {
      test = evaluate_model(c, shared->checkpoint.state.theta, data, c.test, c.seed, runtime);
    } else {
      const auto m = train_and_test(c, data, runtime, options.kind + "=" + values[i] + ": ");
      test = m.test;
      row["epochs"] = epochs_json(m.train.epochs);
    }
    row["config_hash"] = hex64(config_hash(c));
    row["test"] = to_json(test);
    rows.push_back(std::move(row));
    out.table_csv += options.kind + "," + values[i] + "," + summary_row(test) + "\n";
  }
  out.payload = {{"command", "ablate"},
                 {"kind", options.kind},
                 {"config", to_json(base)},
                 {"config_hash", hex64(config_hash(base))},
                 {"seed", base.seed},
                 {"shared_model", shared_model},
                 {"rows", rows}};
  return out;
}

CommandOutput run_gradcheck(const GradcheckCommandOptions& options, std::uint64_t seed) {
  struct FaultScope {
    explicit FaultScope(const std::string& op) { debug::inject_sign_error(op); }
    ~FaultScope() { debug::inject_sign_error(""); }
  } fault(options.inject_sign_error);

  GradcheckOptions go;
  go.trials = options.trials;
  go.hvp_trials = options.hvp_trials;
  go.seed = seed;
  const auto ops = check_primitives(go);
  const auto bilevel = check_bilevel(go);

  CommandOutput out;
  bool passed = true;
  json op_rows = json::array(), bilevel_rows = json::array();
  out.table_csv = "check,trials,max_rel_error,status\n";
  for (const auto& r : ops) {
    passed = passed && r.passed;
    op_rows.push_back({{"op", r.op}, {"trials", r.trials}, {"max_rel_error", r.max_rel_error}, {"passed", r.passed}});
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", r.max_rel_error);
    out.table_csv += r.op + "," + std::to_string(r.trials) + "," + buf + "," + (r.passed ? "PASS" : "FAIL") + "\n";
  }
  for (const auto& r : bilevel) {
    passed = passed && r.passed;
    bilevel_rows.push_back({{"model", r.model},
                            {"rel_error", r.rel_error},
                            {"first_order_gap", r.first_order_gap},
                            {"passed", r.passed}});
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", r.rel_error);
    out.table_csv += "bilevel:" + r.model + ",1," + buf + "," + (r.passed ? "PASS" : "FAIL") + "\n";
  }
  out.payload = {{"command", "gradcheck"},
                 {"seed", seed},
                 {"injected_sign_error", options.inject_sign_error},
                 {"ops", op_rows},
                 {"bilevel", bilevel_rows},
                 {"passed", passed}};
  return out;
}

CommandOutput run_synth(const RunConfig& config, const SynthOptions& options, const std::filesystem::path& out_dir) {
  if (out_dir.empty()) throw ConfigError("synth: --out is required");
  SyntheticParams p = config.data.synthetic;
  if (options.classes) p.classes = *options.classes;
  if (options.per_class) p.per_class = *options.per_class;
  if (options.size) p.height = p.width = *options.size;
  if (options.channels) p.channels = *options.channels;
  if (options.noise) p.noise = *options.noise;
  if (options.jitter) p.jitter = *options.jitter;
  if (p.classes < 2 || p.per_class < 1 || p.height < 1 || (p.channels != 1 && p.channels != 3)) {
    throw ConfigError("synth: need at least 2 classes, 1 image per class and 1 or 3 channels");
  }
  const auto dataset = generate_synthetic(p);
  export_folder(dataset, out_dir / "images");

  CommandOutput out;
  out.payload = {{"command", "synth"},
                 {"classes", p.classes},
                 {"per_class", p.per_class},
                 {"height", p.height},
                 {"width", p.width},
                 {"channels", p.channels},
                 {"seed", p.seed},
                 {"noise", p.noise},
                 {"jitter", p.jitter},
                 {"files", dataset.size()},
                 {"checksum", hex64(dataset.checksum())}};
  return out;
}

void write_outputs(const std::filesystem::path& out, const CommandOutput& output, double wall_clock_seconds) {
  if (out.empty()) return;
  std::filesystem::create_directories(out);
  write_report(out / "report.json", make_report(output.payload, wall_clock_seconds));
  if (!output.table_csv.empty()) {
    std::ofstream csv(out / "table.csv", std::ios::trunc);
    if (!csv) throw DataError("cannot write '" + (out / "table.csv").string() + "'");
    csv << output.table_csv;
  }
}

}  // namespace ccomaml::cli
