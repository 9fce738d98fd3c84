#include "ccomaml/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>

#include "ccomaml/errors.hpp"
#include "ccomaml/image_io.hpp"
#include "ccomaml/ops.hpp"

namespace ccomaml {

namespace fs = std::filesystem;

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::Synthetic: return "synthetic";
    case Provenance::Folder: return "folder";
    case Provenance::Merged: return "merged";
  }
  return "?";
}

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::vector<Item> items, Provenance provenance, std::vector<std::string> class_names)
    : items_(std::move(items)), provenance_(provenance) {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!items_[i].image.defined() || items_[i].image.dim() != 3) {
      throw DataError("dataset: item " + std::to_string(i) + " is not a C×H×W image");
    }
    if (items_[i].image.shape() != items_[0].image.shape()) {
      throw DataError("dataset: item " + std::to_string(i) + " has shape " + shape_str(items_[i].image.shape()) +
                      ", expected " + shape_str(items_[0].image.shape()));
    }
    by_class_[items_[i].class_id].push_back(i);
  }
  std::size_t k = 0;
  for (const auto& [id, _] : by_class_) {
    names_[id] = k < class_names.size() ? class_names[k] : "class_" + std::to_string(id);
    ++k;
  }
}

Shape Dataset::image_shape() const {
  if (items_.empty()) throw DataError("dataset: empty");
  return items_[0].image.shape();
}

std::vector<int> Dataset::class_ids() const {
  std::vector<int> ids;
  ids.reserve(by_class_.size());
  for (const auto& [id, _] : by_class_) ids.push_back(id);
  return ids;
}

const std::vector<std::size_t>& Dataset::items_of(int class_id) const {
  auto it = by_class_.find(class_id);
  if (it == by_class_.end()) throw DataError("dataset: unknown class id " + std::to_string(class_id));
  return it->second;
}

std::string Dataset::class_name(int class_id) const {
  auto it = names_.find(class_id);
  if (it == names_.end()) throw DataError("dataset: unknown class id " + std::to_string(class_id));
  return it->second;
}

std::uint64_t Dataset::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& item : items_) {
    mix(&item.class_id, sizeof item.class_id);
    auto d = item.image.data();
    mix(d.data(), d.size_bytes());
  }
  return h;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

struct ClassPattern {
  double orientation, freq_major, freq_minor, phase, phase_minor, ridge;
  std::vector<double> tint, offset;
};

ClassPattern draw_pattern(std::mt19937_64& rng, std::size_t channels) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ClassPattern p;
  p.orientation = std::numbers::pi * unit(rng);
  p.freq_major = 2.5 + 3.5 * unit(rng);  // cycles per image
  p.freq_minor = 1.0 + 2.5 * unit(rng);
  p.phase = 2.0 * std::numbers::pi * unit(rng);
  p.phase_minor = 2.0 * std::numbers::pi * unit(rng);
  p.ridge = 0.3 + 0.6 * unit(rng);
  for (std::size_t c = 0; c < channels; ++c) {
    p.tint.push_back(0.85 + 0.3 * unit(rng));
    p.offset.push_back(-0.03 + 0.06 * unit(rng));
  }
  return p;
}

Tensor render(const ClassPattern& p, const SyntheticParams& sp, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double j = sp.jitter;
  const double rot = 0.04 * j * gauss(rng);
  const double scale = std::exp(0.02 * j * gauss(rng));
  const double tx = 0.066 * j * unit(rng);
  const double ty = 0.066 * j * unit(rng);
  const double cr = std::cos(rot), sr = std::sin(rot);
  const double co = std::cos(p.orientation), so = std::sin(p.orientation);
  const double two_pi = 2.0 * std::numbers::pi;

  std::vector<double> base(sp.height * sp.width);
  for (std::size_t y = 0; y < sp.height; ++y) {
    for (std::size_t x = 0; x < sp.width; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(sp.width) - 0.5;
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(sp.height) - 0.5;
      const double uw = (cr * u - sr * v) / scale + tx;
      const double vw = (sr * u + cr * v) / scale + ty;
      const double r = uw * co + vw * so;
      const double s = -uw * so + vw * co;
      const double ridge = std::sin(two_pi * p.freq_major * r + p.phase);
      const double cross = std::sin(two_pi * p.freq_minor * s + p.phase_minor);
      base[y * sp.width + x] = 0.2 * ridge + 0.2 * p.ridge * ridge * cross;
    }
  }
  std::vector<double> pixels(sp.channels * base.size());
  for (std::size_t c = 0; c < sp.channels; ++c) {
    for (std::size_t i = 0; i < base.size(); ++i) {
      double val = 0.5 + p.offset[c] + p.tint[c] * base[i];
      if (sp.noise > 0.0) val += sp.noise * gauss(rng);
      val = std::clamp(val, 0.0, 1.0);
      pixels[c * base.size() + i] = std::round(val * 255.0) / 255.0;
    }
  }
  return Tensor({sp.channels, sp.height, sp.width}, std::move(pixels));
}

}  // namespace

Dataset generate_synthetic(const SyntheticParams& sp) {
  if (sp.classes == 0 || sp.per_class == 0 || sp.height == 0 || sp.width == 0 || sp.channels == 0) {
    throw DataError("generate_synthetic: all counts must be positive");
  }
  std::vector<Item> items;
  items.reserve(sp.classes * sp.per_class);
  for (std::size_t k = 0; k < sp.classes; ++k) {
    const int id = sp.first_class + static_cast<int>(k);
    auto pattern_rng = make_stream(sp.seed, 2 * static_cast<std::uint64_t>(id));
    auto sample_rng = make_stream(sp.seed, 2 * static_cast<std::uint64_t>(id) + 1);
    const auto pattern = draw_pattern(pattern_rng, sp.channels);
    for (std::size_t s = 0; s < sp.per_class; ++s) items.push_back({render(pattern, sp, sample_rng), id});
  }
  std::vector<std::string> names;
  for (std::size_t k = 0; k < sp.classes; ++k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "class_%04d", sp.first_class + static_cast<int>(k));
    names.emplace_back(buf);
  }
  return Dataset(std::move(items), Provenance::Synthetic, std::move(names));
}

// ---------------------------------------------------------------------------
// Folder ingestion

FolderLoadResult load_folder(const fs::path& root, const FolderLoadOptions& options) {
  if (!fs::is_directory(root)) throw DataError("load_folder: '" + root.string() + "' is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.size() < 2) {
    throw DataError("load_folder: '" + root.string() + "' needs at least 2 class directories, found " +
                    std::to_string(class_dirs.size()));
  }
  const auto& exts = supported_image_extensions();
  FolderLoadResult result;
  std::vector<Item> items;
  std::vector<std::string> names;
  int class_id = 0;
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      auto ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (std::find(exts.begin(), exts.end(), ext) != exts.end()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t loaded = 0;
    for (const auto& file : files) {
      try {
        auto raw = read_image(file);
        auto planar = resize_to_planar(raw, options.image_size, options.image_size, options.channels);
        items.push_back({Tensor({options.channels, options.image_size, options.image_size}, std::move(planar)), class_id});
        ++loaded;
      } catch (const std::exception& e) {
        ++result.skipped;
        result.warnings.push_back(std::string("skipped unreadable image: ") + e.what());
      }
    }
    if (loaded == 0) throw DataError("load_folder: class directory '" + dir.string() + "' has no decodable images");
    names.push_back(dir.filename().string());
    ++class_id;
  }
  Dataset ds(std::move(items), Provenance::Folder, std::move(names));
  if (options.standardize) {
    auto ids = ds.class_ids();
    ds = standardize(ds, channel_stats(ds, ids));
  }
  result.dataset = std::move(ds);
  return result;
}

void export_folder(const Dataset& dataset, const fs::path& root) {
  fs::create_directories(root);
  const auto shape = dataset.image_shape();
  const std::size_t c = shape[0], h = shape[1], w = shape[2];
  if (c != 1 && c != 3) throw DataError("export_folder: only 1- or 3-channel images can be written");
  for (int id : dataset.class_ids()) {
    const auto dir = root / dataset.class_name(id);
    fs::create_directories(dir);
    std::size_t k = 0;
    for (auto idx : dataset.items_of(id)) {
      RawImage raw{w, h, c, std::vector<unsigned char>(w * h * c)};
      auto d = dataset.items()[idx].image.data();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < h * w; ++p)
          raw.pixels[p * c + ch] = static_cast<unsigned char>(std::lround(std::clamp(d[ch * h * w + p], 0.0, 1.0) * 255.0));
      char name[32];
      std::snprintf(name, sizeof name, "%05zu.png", k++);
      write_png(dir / name, raw);
    }
  }
}

Dataset merge_datasets(const Dataset& a, const Dataset& b, int& offset) {
  if (a.image_shape() != b.image_shape()) {
    throw DataError("merge_datasets: image shapes " + shape_str(a.image_shape()) + " and " +
                    shape_str(b.image_shape()) + " differ");
  }
  auto a_ids = a.class_ids();
  offset = a_ids.empty() ? 0 : a_ids.back() + 1;
  auto b_ids = b.class_ids();
  if (!b_ids.empty()) offset -= b_ids.front();
  std::vector<Item> items = a.items();
  for (const auto& item : b.items()) items.push_back({item.image, item.class_id + offset});
  std::vector<std::string> names;
  for (int id : a_ids) names.push_back(a.class_name(id));
  for (int id : b_ids) names.push_back(b.class_name(id));
  return Dataset(std::move(items), Provenance::Merged, std::move(names));
}

ChannelStats channel_stats(const Dataset& dataset, std::span<const int> classes) {
  const auto shape = dataset.image_shape();
  const std::size_t c = shape[0], plane = shape[1] * shape[2];
  ChannelStats stats{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  std::vector<double> sq(c, 0.0);
  double count = 0.0;
  for (int id : classes) {
    for (auto idx : dataset.items_of(id)) {
      auto d = dataset.items()[idx].image.data();
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t p = 0; p < plane; ++p) {
          const double v = d[ch * plane + p];
          stats.mean[ch] += v;
          sq[ch] += v * v;
        }
      }
      count += static_cast<double>(plane);
    }
  }
  if (count == 0.0) throw DataError("channel_stats: no items in the requested classes");
  for (std::size_t ch = 0; ch < c; ++ch) {
    stats.mean[ch] /= count;
    const double var = std::max(sq[ch] / count - stats.mean[ch] * stats.mean[ch], 0.0);
    stats.stddev[ch] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return stats;
}

Dataset standardize(const Dataset& dataset, const ChannelStats& stats) {
  const auto shape = dataset.image_shape();
  const std::size_t c = shape[0], plane = shape[1] * shape[2];
  if (stats.mean.size() != c) throw DataError("standardize: channel count mismatch");
  std::vector<Item> items;
  items.reserve(dataset.size());
  for (const auto& item : dataset.items()) {
    auto d = item.image.data();
    std::vector<double> out(d.size());
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) out[ch * plane + p] = (d[ch * plane + p] - stats.mean[ch]) / stats.stddev[ch];
    items.push_back({Tensor(shape, std::move(out)), item.class_id});
  }
  std::vector<std::string> names;
  for (int id : dataset.class_ids()) names.push_back(dataset.class_name(id));
  return Dataset(std::move(items), dataset.provenance(), std::move(names));
}

// ---------------------------------------------------------------------------
// Splits

namespace {

void require_partition(const std::vector<int>& part, std::size_t min_classes, const char* name) {
  if (!part.empty() && part.size() < min_classes) {
    throw DataError(std::string("split: ") + name + " partition has " + std::to_string(part.size()) +
                    " classes, fewer than the required " + std::to_string(min_classes));
  }
}

SplitPlan split_by_counts(std::vector<int> ids, std::size_t train, std::size_t val, std::size_t test,
                          std::uint64_t seed, std::size_t min_classes) {
  if (train + val + test > ids.size()) {
    throw DataError("split: requested " + std::to_string(train + val + test) + " classes but the dataset has " +
                    std::to_string(ids.size()));
  }
  auto rng = make_stream(seed, 0x5b117);
  std::shuffle(ids.begin(), ids.end(), rng);
  SplitPlan plan;
  plan.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(train));
  plan.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(train), ids.begin() + static_cast<std::ptrdiff_t>(train + val));
  plan.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(train + val),
                   ids.begin() + static_cast<std::ptrdiff_t>(train + val + test));
  for (auto* part : {&plan.train, &plan.val, &plan.test}) std::sort(part->begin(), part->end());
  require_partition(plan.train, min_classes, "train");
  require_partition(plan.val, min_classes, "validation");
  require_partition(plan.test, min_classes, "test");
  return plan;
}

}  // namespace

SplitPlan make_split(const Dataset& dataset, const SplitFractions& f, std::uint64_t seed, std::size_t min_classes) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split: fractions must be non-negative and sum to 1");
  }
  auto ids = dataset.class_ids();
  const auto n = static_cast<double>(ids.size());
  const auto train = static_cast<std::size_t>(std::lround(f.train * n));
  const auto val = std::min(static_cast<std::size_t>(std::lround(f.val * n)), ids.size() - train);
  const std::size_t test = ids.size() - train - val;
  return split_by_counts(std::move(ids), train, val, test, seed, min_classes);
}

SplitPlan make_split_counts(const Dataset& dataset, std::size_t train, std::size_t val, std::size_t test,
                            std::uint64_t seed, std::size_t min_classes) {
  return split_by_counts(dataset.class_ids(), train, val, test, seed, min_classes);
}

SplitPlan make_cross_split(std::span<const int> a_classes, std::span<const int> b_classes) {
  SplitPlan plan;
  plan.train.assign(a_classes.begin(), a_classes.end());
  plan.test.assign(b_classes.begin(), b_classes.end());
  check_split(plan);
  return plan;
}

SplitPlan hold_out_validation(const SplitPlan& plan, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0) throw ConfigError("validation hold-out fraction must lie in [0, 1)");
  SplitPlan out = plan;
  const auto n = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(plan.train.size())));
  if (n == 0) return out;
  auto ids = plan.train;
  auto rng = make_stream(seed, 0x7a11d);
  std::shuffle(ids.begin(), ids.end(), rng);
  out.val.insert(out.val.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
  out.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  check_split(out);
  return out;
}

void check_split(const SplitPlan& plan) {
  std::set<int> seen;
  for (const auto* part : {&plan.train, &plan.val, &plan.test}) {
    for (int id : *part) {
      if (!seen.insert(id).second) throw DataError("split: class " + std::to_string(id) + " appears in two partitions");
    }
  }
}

// ---------------------------------------------------------------------------
// Episodes

void EpisodeSpec::validate() const {
  if (n_way < 2) throw ConfigError("episode: n_way must be at least 2, got " + std::to_string(n_way));
  if (k_shot < 1) throw ConfigError("episode: k_shot must be at least 1, got " + std::to_string(k_shot));
  if (q_query < 1) throw ConfigError("episode: q_query must be at least 1, got " + std::to_string(q_query));
}

std::vector<int> eligible_classes(const Dataset& dataset, std::span<const int> classes, const EpisodeSpec& spec) {
  std::vector<int> out;
  for (int id : classes) {
    if (dataset.class_size(id) >= spec.k_shot + spec.q_query) out.push_back(id);
  }
  return out;
}

EpisodeSpec clamp_queries(const EpisodeSpec& spec, const Dataset& dataset, std::span<const int> classes) {
  EpisodeSpec out = spec;
  std::size_t smallest = std::numeric_limits<std::size_t>::max();
  for (int id : classes) smallest = std::min(smallest, dataset.class_size(id));
  if (smallest != std::numeric_limits<std::size_t>::max() && smallest > spec.k_shot) {
    out.q_query = std::max<std::size_t>(1, std::min(spec.q_query, smallest - spec.k_shot));
  }
  return out;
}

Episode sample_episode(const Dataset& dataset, std::span<const int> classes, const EpisodeSpec& spec,
                       std::mt19937_64& rng) {
  spec.validate();
  auto eligible = eligible_classes(dataset, classes, spec);
  if (eligible.size() < spec.n_way) {
    throw DataError("sample_episode: " + std::to_string(spec.n_way) + "-way " + std::to_string(spec.k_shot) + "-shot " +
                    std::to_string(spec.q_query) + "-query episodes need " + std::to_string(spec.n_way) +
                    " classes with >= " + std::to_string(spec.k_shot + spec.q_query) + " items; only " +
                    std::to_string(eligible.size()) + " eligible");
  }
  // partial Fisher-Yates over classes, then within each class
  for (std::size_t i = 0; i < spec.n_way; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
    std::swap(eligible[i], eligible[pick(rng)]);
  }
  Episode ep;
  std::vector<Tensor> support, query;
  for (std::size_t local = 0; local < spec.n_way; ++local) {
    const int id = eligible[local];
    ep.class_map.push_back(id);
    auto pool = dataset.items_of(id);
    const std::size_t need = spec.k_shot + spec.q_query;
    for (std::size_t i = 0; i < need; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    for (std::size_t i = 0; i < need; ++i) {
      const bool is_support = i < spec.k_shot;
      (is_support ? ep.support_items : ep.query_items).push_back(pool[i]);
      (is_support ? ep.support_labels : ep.query_labels).push_back(static_cast<int>(local));
      (is_support ? support : query).push_back(dataset.items()[pool[i]].image);
    }
  }
  ep.support_images = stack(support);
  ep.query_images = stack(query);
  return ep;
}

}  // namespace ccomaml
