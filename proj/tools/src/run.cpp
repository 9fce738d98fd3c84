#include "ccomaml_cli/run.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ccomaml/errors.hpp"

namespace ccomaml::cli {

using nlohmann::json;

namespace {

constexpr std::uint64_t kTrainStream = 11;
constexpr std::uint64_t kValStream = 12;
constexpr std::uint64_t kColearnerInitSalt = 0x9e3779b97f4a7c15ull;

void require_classes(const std::vector<int>& part, std::size_t n_way, const char* name) {
  if (part.size() < n_way) {
    throw DataError(std::string(name) + " partition has " + std::to_string(part.size()) + " classes; " +
                    std::to_string(n_way) + "-way episodes need at least " + std::to_string(n_way));
  }
}

}  // namespace

PreparedData prepare_data(const RunConfig& config) {
  PreparedData out;
  const auto& d = config.data;
  FolderLoadOptions folder_opts{config.backbone.image_size, config.backbone.in_channels, false};
  if (d.source == "synthetic") {
    SyntheticParams params = d.synthetic;
    params.height = params.width = config.backbone.image_size;
    params.channels = config.backbone.in_channels;
    out.dataset = generate_synthetic(params);
    out.split = make_split(out.dataset, d.split, d.split_seed, 2);
  } else if (d.source == "folder") {
    auto loaded = load_folder(d.folder, folder_opts);
    out.warnings = std::move(loaded.warnings);
    out.dataset = std::move(loaded.dataset);
    out.split = make_split(out.dataset, d.split, d.split_seed, 2);
  } else {
    auto a = load_folder(d.train_folder, folder_opts);
    auto b = load_folder(d.test_folder, folder_opts);
    out.warnings = std::move(a.warnings);
    out.warnings.insert(out.warnings.end(), b.warnings.begin(), b.warnings.end());
    int offset = 0;
    out.dataset = merge_datasets(a.dataset, b.dataset, offset);
    auto a_ids = a.dataset.class_ids();
    std::vector<int> b_ids;
    for (int id : b.dataset.class_ids()) b_ids.push_back(id + offset);
    out.split = make_cross_split(a_ids, b_ids);
  }
  if (out.split.val.empty() && d.val_holdout > 0.0) out.split = hold_out_validation(out.split, d.val_holdout, d.split_seed);
  if (d.source != "synthetic" && d.standardize) {
    // statistics from training classes only, applied everywhere
    out.dataset = standardize(out.dataset, channel_stats(out.dataset, out.split.train));
  }
  require_classes(out.split.train, config.train.n_way, "train");
  require_classes(out.split.test, config.test.n_way, "test");
  if (!out.split.val.empty()) require_classes(out.split.val, config.val.n_way, "validation");
  return out;
}

std::vector<Episode> draw_episodes(const Dataset& dataset, std::span<const int> classes, const EpisodeSpec& spec,
                                   std::size_t count, std::uint64_t seed, std::uint64_t stream) {
  spec.validate();
  const auto clamped = clamp_queries(spec, dataset, classes);
  auto rng = make_stream(seed, stream);
  std::vector<Episode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample_episode(dataset, classes, clamped, rng));
  return out;
}

EvalSummary summarize(std::vector<EpisodeRecord> records) {
  EvalSummary s;
  std::vector<double> acc, f1;
  for (const auto& r : records) {
    acc.push_back(r.accuracy);
    f1.push_back(r.macro_f1);
  }
  s.accuracy = ci95(acc);
  s.macro_f1 = ci95(f1);
  s.episodes = std::move(records);
  return s;
}

EvalSummary evaluate_model(const RunConfig& config, const ParameterSet& theta, const PreparedData& data,
                           const EpisodeSection& episodes, std::uint64_t seed, const Runtime& runtime) {
  auto backbone = build_backbone(config.backbone);
  auto list = draw_episodes(data.dataset, data.split.test, episodes.spec(), episodes.count, seed, kTestStream);
  MetaConfig meta = config.meta;
  meta.threads = runtime.threads;
  return summarize(evaluate(theta, list, *backbone, meta));
}

TrainResult train_model(const RunConfig& config, const PreparedData& data, const Runtime& runtime,
                        const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  auto backbone = build_backbone(config.backbone);
  MetaConfig meta = config.meta;
  meta.threads = runtime.threads;

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  ck.config_json = to_json(config).dump();
  ck.config_hash = config_hash(config);
  InitPolicy init;
  init.seed = config.seed;
  ck.state.theta = backbone->init(init);
  std::optional<CoLearner> colearner;
  if (uses_colearner(config.method)) {
    colearner.emplace(build_colearner(config.effective_colearner(), backbone->feature_shape(), config.train.n_way));
    InitPolicy co_init;
    co_init.seed = config.seed ^ kColearnerInitSalt;
    ck.state.psi = colearner->init(co_init);
  }
  ck.plateau.patience = config.training.plateau_patience;
  ck.plateau.factor = config.training.plateau_factor;
  ck.early_stop.patience = config.training.early_stop_patience;

  const auto& train_classes = data.split.train;
  const auto& val_classes = data.split.val.empty() ? data.split.train : data.split.val;
  const auto val_episodes =
      draw_episodes(data.dataset, val_classes, config.val.spec(), config.val.count, config.seed, kValStream);
  const auto train_spec = clamp_queries(config.train.spec(), data.dataset, train_classes);
  auto rng = make_stream(config.seed, kTrainStream);

  std::ofstream log;
  if (!runtime.out.empty()) {
    std::filesystem::create_directories(runtime.out);
    log.open(runtime.out / "epochs.log", std::ios::app);
    log << "# epoch l_meta l_co r_l2 l_total val_loss lr_multiplier\n";
  }
  auto save_rng = [&] {
    std::ostringstream os;
    os << rng;
    ck.rng_state = os.str();
  };

  const CoLearner* co = colearner ? &*colearner : nullptr;
  for (std::size_t epoch = 1; epoch <= config.training.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr_multiplier = ck.plateau.multiplier;
    for (std::size_t b = 0; b < config.training.meta_batches_per_epoch; ++b) {
      std::vector<Episode> batch;
      batch.reserve(meta.meta_batch);
      for (std::size_t i = 0; i < meta.meta_batch; ++i) batch.push_back(sample_episode(data.dataset, train_classes, train_spec, rng));
      LossBreakdown l;
      try {
        l = train_step(ck.state, batch, *backbone, co, meta, ck.plateau.multiplier);
      } catch (const NumericalError&) {
        if (!runtime.out.empty()) {
          ck.epoch = epoch - 1;
          save_rng();
          save_checkpoint(runtime.out / "diverged.ckpt", ck);
        }
        throw;
      }
      rec.train.l_meta += l.l_meta;
      rec.train.l_co += l.l_co;
      rec.train.r_l2 += l.r_l2;
      rec.train.l_total += l.l_total;
    }
    const double inv = 1.0 / static_cast<double>(config.training.meta_batches_per_epoch);
    rec.train.l_meta *= inv;
    rec.train.l_co *= inv;
    rec.train.r_l2 *= inv;
    rec.train.l_total *= inv;

    double val = 0.0;
    for (const auto& r : evaluate(ck.state.theta, val_episodes, *backbone, meta)) val += r.loss;
    rec.val_loss = val / static_cast<double>(val_episodes.size());
    if (!std::isfinite(rec.val_loss)) {
      if (!runtime.out.empty()) save_checkpoint(runtime.out / "diverged.ckpt", ck);
      throw NumericalError("validation loss became non-finite at epoch " + std::to_string(epoch));
    }
    ck.plateau.step(rec.val_loss);
    const bool keep_going = ck.early_stop.step(rec.val_loss);
    ck.epoch = epoch;
    save_rng();
    result.epochs.push_back(rec);
    if (!runtime.out.empty()) {
      log << format_epoch_line(rec) << '\n' << std::flush;
      save_checkpoint(runtime.out / "checkpoint.ckpt", ck);
    }
    if (on_epoch) on_epoch(rec);
    if (!keep_going) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

std::string format_epoch_line(const EpochRecord& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu %.10g %.10g %.10g %.10g %.10g %.6g", e.epoch, e.train.l_meta, e.train.l_co,
                e.train.r_l2, e.train.l_total, e.val_loss, e.lr_multiplier);
  return buf;
}

json to_json(const StatSummary& s) {
  return {{"mean", s.mean}, {"stddev", s.stddev}, {"ci95", s.half_width}, {"n", s.n}, {"defined", s.defined}};
}

json to_json(const EvalSummary& e, bool with_episodes) {
  json j{{"accuracy", to_json(e.accuracy)}, {"macro_f1", to_json(e.macro_f1)}};
  if (with_episodes) {
    json eps = json::array();
    for (const auto& r : e.episodes) eps.push_back({{"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}, {"loss", r.loss}});
    j["episodes"] = std::move(eps);
  }
  return j;
}

json to_json(const EpochRecord& e) {
  return {{"epoch", e.epoch},         {"l_meta", e.train.l_meta},   {"l_co", e.train.l_co},
          {"r_l2", e.train.r_l2},     {"l_total", e.train.l_total}, {"val_loss", e.val_loss},
          {"lr_multiplier", e.lr_multiplier}};
}

json make_report(const json& payload, double wall_clock_seconds) {
  return {{"schema_version", 1},
          {"payload", payload},
          {"payload_hash", hex64(fnv1a(payload.dump()))},
          {"wall_clock_seconds", wall_clock_seconds}};
}

void write_report(const std::filesystem::path& path, const json& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write report '" + path.string() + "'");
  out << report.dump(2) << '\n';
}

namespace {

void check_summaries(const json& node) {
  if (node.is_object()) {
    if (node.contains("episodes") && node.contains("accuracy") && node.contains("macro_f1") &&
        node["episodes"].is_array()) {
      std::vector<double> acc, f1;
      for (const auto& e : node["episodes"]) {
        acc.push_back(e.at("accuracy").get<double>());
        f1.push_back(e.at("macro_f1").get<double>());
      }
      for (const auto& [key, values] : {std::pair{"accuracy", &acc}, std::pair{"macro_f1", &f1}}) {
        const auto s = ci95(*values);
        const auto& stored = node[key];
        if (std::abs(s.mean - stored.at("mean").get<double>()) > 1e-12 ||
            std::abs(s.half_width - stored.at("ci95").get<double>()) > 1e-12) {
          throw DataError(std::string("report: ") + key + " summary disagrees with its per-episode records");
        }
      }
    }
    for (const auto& [_, v] : node.items()) check_summaries(v);
  } else if (node.is_array()) {
    for (const auto& v : node) check_summaries(v);
  }
}

}  // namespace

void check_report(const json& report) {
  if (report.value("schema_version", 0) != 1) throw DataError("report: unsupported schema_version");
  const auto& payload = report.at("payload");
  if (report.at("payload_hash").get<std::string>() != hex64(fnv1a(payload.dump()))) {
    throw DataError("report: payload hash mismatch");
  }
  check_summaries(payload);
}

json load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("report '" + path.string() + "' is not valid JSON: " + e.what());
  }
  check_report(j);
  return j;
}

}  // namespace ccomaml::cli
