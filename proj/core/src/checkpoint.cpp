#include "ccomaml/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "ccomaml/errors.hpp"

namespace ccomaml {

namespace {

constexpr char kMagic[8] = {'C', 'C', 'M', 'L', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}

  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void params(const ParameterSet& p) {
    pod<std::uint64_t>(p.size());
    for (const auto& [name, value] : p) {
      str(name);
      pod<std::uint64_t>(value.dim());
      for (auto d : value.shape()) pod<std::uint64_t>(d);
      auto data = value.data();
      out_.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
    }
  }
  void adam(const AdamState& s) {
    pod<std::uint64_t>(s.step);
    params(s.m);
    params(s.v);
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}

  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    check();
    return v;
  }
  std::string str() {
    const auto n = bounded(pod<std::uint64_t>());
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    check();
    return s;
  }
  ParameterSet params() {
    ParameterSet p;
    const auto count = bounded(pod<std::uint64_t>());
    for (std::uint64_t i = 0; i < count; ++i) {
      auto name = str();
      const auto dims = bounded(pod<std::uint64_t>());
      Shape shape;
      for (std::uint64_t d = 0; d < dims; ++d) shape.push_back(bounded(pod<std::uint64_t>()));
      std::vector<double> data(bounded(shape_numel(shape)));
      in_.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
      check();
      p.add(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return p;
  }
  AdamState adam() {
    AdamState s;
    s.step = pod<std::uint64_t>();
    s.m = params();
    s.v = params();
    return s;
  }

 private:
  void check() {
    if (!in_) throw DataError("checkpoint '" + origin_ + "' is truncated");
  }
  std::size_t bounded(std::uint64_t n) {
    if (n > (std::uint64_t{1} << 32)) throw DataError("checkpoint '" + origin_ + "' is corrupt");
    return static_cast<std::size_t>(n);
  }

  std::ifstream& in_;
  std::string origin_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, sizeof kMagic);
  Writer w(out);
  w.pod(kCheckpointVersion);
  w.str(c.config_json);
  w.pod(c.config_hash);
  w.params(c.state.theta);
  w.params(c.state.psi);
  w.adam(c.state.adam_theta);
  w.adam(c.state.adam_psi);
  w.params(c.state.feature_source);
  w.pod<std::uint64_t>(c.state.steps);
  w.pod<std::uint64_t>(c.plateau.patience);
  w.pod(c.plateau.factor);
  w.pod(c.plateau.best);
  w.pod<std::uint64_t>(c.plateau.bad_epochs);
  w.pod(c.plateau.multiplier);
  w.pod<std::uint64_t>(c.early_stop.patience);
  w.pod(c.early_stop.best);
  w.pod<std::uint64_t>(c.early_stop.bad_epochs);
  w.pod<std::uint64_t>(c.epoch);
  w.str(c.rng_state);
  if (!out) throw DataError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw DataError("'" + path.string() + "' is not a checkpoint");
  }
  Reader r(in, path.string());
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint '" + path.string() + "' has version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  Checkpoint c;
  c.config_json = r.str();
  c.config_hash = r.pod<std::uint64_t>();
  c.state.theta = r.params();
  c.state.psi = r.params();
  c.state.adam_theta = r.adam();
  c.state.adam_psi = r.adam();
  c.state.feature_source = r.params();
  c.state.steps = r.pod<std::uint64_t>();
  c.plateau.patience = r.pod<std::uint64_t>();
  c.plateau.factor = r.pod<double>();
  c.plateau.best = r.pod<double>();
  c.plateau.bad_epochs = r.pod<std::uint64_t>();
  c.plateau.multiplier = r.pod<double>();
  c.early_stop.patience = r.pod<std::uint64_t>();
  c.early_stop.best = r.pod<double>();
  c.early_stop.bad_epochs = r.pod<std::uint64_t>();
  c.epoch = r.pod<std::uint64_t>();
  c.rng_state = r.str();
  return c;
}

}  // namespace ccomaml
