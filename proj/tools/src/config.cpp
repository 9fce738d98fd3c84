#include "ccomaml_cli/config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

#include "ccomaml/errors.hpp"

namespace ccomaml::cli {

using nlohmann::json;

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as typos.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  void get(const char* key, std::size_t& out) { read(key, [&](const json& v) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) fail(key, "a non-negative integer");
      out = v.get<std::size_t>();
    });
  }
  template <class T>
    requires(std::is_same_v<T, std::uint64_t> && !std::is_same_v<T, std::size_t>)
  void get(const char* key, T& out) {
    std::size_t tmp = out;
    get(key, tmp);
    out = tmp;
  }
  void get(const char* key, int& out) { read(key, [&](const json& v) {
      if (!v.is_number_integer()) fail(key, "an integer");
      out = v.get<int>();
    });
  }
  void get(const char* key, double& out) { read(key, [&](const json& v) {
      if (!v.is_number()) fail(key, "a number");
      out = v.get<double>();
    });
  }
  void get(const char* key, bool& out) { read(key, [&](const json& v) {
      if (!v.is_boolean()) fail(key, "true or false");
      out = v.get<bool>();
    });
  }
  void get(const char* key, std::string& out) { read(key, [&](const json& v) {
      if (!v.is_string()) fail(key, "a string");
      out = v.get<std::string>();
    });
  }
  template <class F>
  void sub(const char* key, F&& f) {
    read(key, [&](const json& v) {
      Section s(v, path_.empty() ? key : path_ + "." + key);
      f(s);
      s.finish();
    });
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError("config: unknown key '" + (path_.empty() ? "" : path_ + ".") + it.key() + "'");
      }
    }
  }

 private:
  template <class F>
  void read(const char* key, F&& f) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it != j_.end()) f(*it);
  }
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw ConfigError("config: '" + (path_.empty() ? "" : path_ + ".") + key + "' must be " + what);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json episodes_json(const EpisodeSection& e) {
  return {{"n_way", e.n_way}, {"k_shot", e.k_shot}, {"q_query", e.q_query}, {"count", e.count}};
}

void read_episodes(Section& s, EpisodeSection& e) {
  s.get("n_way", e.n_way);
  s.get("k_shot", e.k_shot);
  s.get("q_query", e.q_query);
  s.get("count", e.count);
}

}  // namespace

void RunConfig::validate() const {
  meta.validate();
  if (meta.method != method) throw ConfigError("config: internal method mismatch");
  for (const auto* e : {&train, &val, &test}) e->spec().validate();
  if (val.count < 1) throw ConfigError("config: val.count must be at least 1");
  if (test.count < 1) throw ConfigError("config: test.count must be at least 1");
  if (training.epochs < 1) throw ConfigError("config: training.epochs must be at least 1");
  if (training.meta_batches_per_epoch < 1) throw ConfigError("config: training.meta_batches_per_epoch must be at least 1");
  if (training.plateau_patience < 1 || training.early_stop_patience < 1) {
    throw ConfigError("config: scheduler patience values must be at least 1");
  }
  if (!(training.plateau_factor > 0.0 && training.plateau_factor <= 1.0)) {
    throw ConfigError("config: training.plateau_factor must lie in (0, 1]");
  }
  if (data.source != "synthetic" && data.source != "folder" && data.source != "cross") {
    throw ConfigError("config: data.source must be synthetic, folder or cross, got '" + data.source + "'");
  }
  if (data.source == "folder" && data.folder.empty()) throw ConfigError("config: data.folder is required");
  if (data.source == "cross" && (data.train_folder.empty() || data.test_folder.empty())) {
    throw ConfigError("config: data.train_folder and data.test_folder are required for cross-dataset runs");
  }
  if (!(data.val_holdout >= 0.0 && data.val_holdout < 1.0)) throw ConfigError("config: data.val_holdout must lie in [0, 1)");
  if (backbone.n_way != train.n_way) throw ConfigError("config: internal n_way mismatch");
  // builds and discards: surfaces invalid sizes and strategy/depth combinations early
  try {
    auto bb = build_backbone(backbone);
    if (uses_colearner(method)) (void)build_colearner(effective_colearner(), bb->feature_shape(), train.n_way);
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

CoLearnerSpec RunConfig::effective_colearner() const {
  CoLearnerSpec spec = colearner;
  if (method == MethodId::CML) {
    spec.strategy = CoLearnerStrategy::S1;
    spec.conv_layers = 0;
  }
  return spec;
}

json to_json(const RunConfig& c) {
  const auto& b = c.backbone;
  const auto& m = c.meta;
  const auto& sp = c.data.synthetic;
  return {
      {"method", to_string(c.method)},
      {"seed", c.seed},
      {"backbone",
       {{"name", b.name},
        {"image_size", b.image_size},
        {"in_channels", b.in_channels},
        {"width", b.width},
        {"patch_size", b.patch_size},
        {"embed", b.embed},
        {"heads", b.heads},
        {"fusion_heads", b.fusion_heads}}},
      {"colearner",
       {{"strategy", to_string(c.colearner.strategy)},
        {"conv_layers", c.colearner.conv_layers},
        {"fc_layers", c.colearner.fc_layers},
        {"hidden", c.colearner.hidden},
        {"conv_channels", c.colearner.conv_channels}}},
      {"meta",
       {{"alpha", m.alpha},
        {"beta", m.beta},
        {"gamma", m.gamma},
        {"weight_decay", m.weight_decay},
        {"inner_steps", m.inner_steps},
        {"eval_inner_steps", m.eval_inner_steps},
        {"meta_batch", m.meta_batch},
        {"second_order", m.second_order},
        {"carry_feature_source", m.carry_feature_source},
        {"co_source_gradient", to_string(m.co_source_gradient)},
        {"reptile_epsilon", m.reptile_epsilon},
        {"reptile_inner_steps", m.reptile_inner_steps}}},
      {"train_episodes", episodes_json(c.train)},
      {"val_episodes", episodes_json(c.val)},
      {"test_episodes", episodes_json(c.test)},
      {"data",
       {{"source", c.data.source},
        {"synthetic",
         {{"classes", sp.classes},
          {"per_class", sp.per_class},
          {"seed", sp.seed},
          {"noise", sp.noise},
          {"jitter", sp.jitter}}},
        {"folder", c.data.folder},
        {"train_folder", c.data.train_folder},
        {"test_folder", c.data.test_folder},
        {"standardize", c.data.standardize},
        {"split", {{"train", c.data.split.train}, {"val", c.data.split.val}, {"test", c.data.split.test}}},
        {"val_holdout", c.data.val_holdout},
        {"split_seed", c.data.split_seed}}},
      {"training",
       {{"epochs", c.training.epochs},
        {"meta_batches_per_epoch", c.training.meta_batches_per_epoch},
        {"plateau_patience", c.training.plateau_patience},
        {"plateau_factor", c.training.plateau_factor},
        {"early_stop_patience", c.training.early_stop_patience}}},
  };
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  std::string method = to_string(c.method);
  root.get("method", method);
  c.method = parse_method(method);
  root.get("seed", c.seed);
  root.sub("backbone", [&](Section& s) {
    s.get("name", c.backbone.name);
    s.get("image_size", c.backbone.image_size);
    s.get("in_channels", c.backbone.in_channels);
    s.get("width", c.backbone.width);
    s.get("patch_size", c.backbone.patch_size);
    s.get("embed", c.backbone.embed);
    s.get("heads", c.backbone.heads);
    s.get("fusion_heads", c.backbone.fusion_heads);
  });
  root.sub("colearner", [&](Section& s) {
    std::string strategy = to_string(c.colearner.strategy);
    s.get("strategy", strategy);
    c.colearner.strategy = parse_strategy(strategy);
    s.get("conv_layers", c.colearner.conv_layers);
    s.get("fc_layers", c.colearner.fc_layers);
    s.get("hidden", c.colearner.hidden);
    s.get("conv_channels", c.colearner.conv_channels);
  });
  root.sub("meta", [&](Section& s) {
    auto& m = c.meta;
    s.get("alpha", m.alpha);
    s.get("beta", m.beta);
    s.get("gamma", m.gamma);
    s.get("weight_decay", m.weight_decay);
    s.get("inner_steps", m.inner_steps);
    s.get("eval_inner_steps", m.eval_inner_steps);
    s.get("meta_batch", m.meta_batch);
    s.get("second_order", m.second_order);
    s.get("carry_feature_source", m.carry_feature_source);
    std::string co_source = to_string(m.co_source_gradient);
    s.get("co_source_gradient", co_source);
    m.co_source_gradient = parse_co_source_gradient(co_source);
    s.get("reptile_epsilon", m.reptile_epsilon);
    s.get("reptile_inner_steps", m.reptile_inner_steps);
  });
  root.sub("train_episodes", [&](Section& s) { read_episodes(s, c.train); });
  root.sub("val_episodes", [&](Section& s) { read_episodes(s, c.val); });
  root.sub("test_episodes", [&](Section& s) { read_episodes(s, c.test); });
  root.sub("data", [&](Section& s) {
    s.get("source", c.data.source);
    s.sub("synthetic", [&](Section& t) {
      auto& sp = c.data.synthetic;
      t.get("classes", sp.classes);
      t.get("per_class", sp.per_class);
      t.get("seed", sp.seed);
      t.get("noise", sp.noise);
      t.get("jitter", sp.jitter);
    });
    s.get("folder", c.data.folder);
    s.get("train_folder", c.data.train_folder);
    s.get("test_folder", c.data.test_folder);
    s.get("standardize", c.data.standardize);
    s.sub("split", [&](Section& t) {
      t.get("train", c.data.split.train);
      t.get("val", c.data.split.val);
      t.get("test", c.data.split.test);
    });
    s.get("val_holdout", c.data.val_holdout);
    s.get("split_seed", c.data.split_seed);
  });
  root.sub("training", [&](Section& s) {
    s.get("epochs", c.training.epochs);
    s.get("meta_batches_per_epoch", c.training.meta_batches_per_epoch);
    s.get("plateau_patience", c.training.plateau_patience);
    s.get("plateau_factor", c.training.plateau_factor);
    s.get("early_stop_patience", c.training.early_stop_patience);
  });
  root.finish();

  c.meta.method = c.method;
  c.backbone.n_way = c.train.n_way;
  // synthetic images follow the backbone input size
  c.data.synthetic.height = c.data.synthetic.width = c.backbone.image_size;
  c.data.synthetic.channels = c.backbone.in_channels;
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::uint64_t config_hash(const RunConfig& config) { return fnv1a(to_json(config).dump()); }

}  // namespace ccomaml::cli
