#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ccomaml/episodes.hpp"
#include "ccomaml/errors.hpp"

using namespace ccomaml;
namespace fs = std::filesystem;

namespace {

SyntheticParams small(std::size_t classes = 6, std::size_t per_class = 8) {
  SyntheticParams p;
  p.classes = classes;
  p.per_class = per_class;
  p.height = p.width = 8;
  return p;
}

fs::path scratch(const char* name) {
  auto dir = fs::temp_directory_path() / (std::string("ccomaml_test_") + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("synthetic generator is deterministic and quantized") {
  auto a = generate_synthetic(small());
  auto b = generate_synthetic(small());
  CHECK(a.checksum() == b.checksum());
  CHECK(a.size() == 48);
  CHECK(a.num_classes() == 6);
  CHECK(a.image_shape() == Shape{3, 8, 8});
  for (double v : a.items()[5].image.data()) CHECK(v * 255.0 == doctest::Approx(std::round(v * 255.0)).epsilon(1e-12));
  auto p = small();
  p.seed = 8;
  CHECK(generate_synthetic(p).checksum() != a.checksum());
}

TEST_CASE("class patterns depend on the class id, not on the class count") {
  auto few = generate_synthetic(small(3, 4));
  auto many = generate_synthetic(small(6, 4));
  for (auto idx : few.items_of(2)) {
    auto x = few.items()[idx].image.data();
    auto y = many.items()[idx].image.data();
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }
}

TEST_CASE("export then load reproduces the tensors exactly") {
  auto ds = generate_synthetic(small(4, 5));
  const auto dir = scratch("roundtrip");
  export_folder(ds, dir);
  std::size_t files = 0, dirs = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) (e.is_directory() ? dirs : files)++;
  CHECK(dirs == 4);
  CHECK(files == 20);
  auto loaded = load_folder(dir, {8, 3, false});
  CHECK(loaded.skipped == 0);
  CHECK(loaded.dataset.checksum() == ds.checksum());
  fs::remove_all(dir);
}

TEST_CASE("folder loading errors and warnings") {
  const auto dir = scratch("folder_errors");
  CHECK_THROWS_AS(load_folder(dir), DataError);
  fs::create_directories(dir / "only");
  CHECK_THROWS_AS(load_folder(dir), DataError);

  export_folder(generate_synthetic(small(2, 3)), dir / "tree");
  std::ofstream(dir / "tree" / "class_0000" / "broken.png") << "not a png";
  std::ofstream(dir / "tree" / "class_0000" / "notes.txt") << "ignored";
  auto r = load_folder(dir / "tree", {8, 3, false});
  CHECK(r.skipped == 1);
  CHECK(r.warnings.size() == 1);
  CHECK(r.dataset.size() == 6);

  fs::create_directories(dir / "tree" / "empty_class");
  std::ofstream(dir / "tree" / "empty_class" / "x.png") << "junk";
  CHECK_THROWS_AS(load_folder(dir / "tree", {8, 3, false}), DataError);
  fs::remove_all(dir);
}

TEST_CASE("splits are disjoint and deterministic") {
  auto ds = generate_synthetic(small(30, 2));
  auto a = make_split(ds, {0.6, 0.2, 0.2}, 3, 2);
  auto b = make_split(ds, {0.6, 0.2, 0.2}, 3, 2);
  CHECK(a.train == b.train);
  CHECK(a.train.size() == 18);
  CHECK(a.val.size() == 6);
  CHECK(a.test.size() == 6);
  std::set<int> all(a.train.begin(), a.train.end());
  all.insert(a.val.begin(), a.val.end());
  all.insert(a.test.begin(), a.test.end());
  CHECK(all.size() == 30);
  CHECK(make_split(ds, {0.6, 0.2, 0.2}, 4, 2).train != a.train);
  CHECK_THROWS_AS(make_split(ds, {0.6, 0.2, 0.3}, 3, 2), ConfigError);

  auto h = hold_out_validation(make_split(ds, {0.5, 0.0, 0.5}, 1, 2), 0.2, 9);
  CHECK(h.val.size() == 3);
  CHECK(h.train.size() == 12);
  CHECK_NOTHROW(check_split(h));
  SplitPlan bad{{1, 2}, {}, {2, 3}};
  CHECK_THROWS_AS(check_split(bad), DataError);
}

TEST_CASE("episodes: cardinalities, labels and provenance") {
  auto ds = generate_synthetic(small(6, 8));
  auto classes = ds.class_ids();
  auto rng = make_stream(1, 2);
  EpisodeSpec spec{4, 2, 3, 0};
  auto e = sample_episode(ds, classes, spec, rng);
  CHECK(e.support_images.shape() == Shape{8, 3, 8, 8});
  CHECK(e.query_images.shape() == Shape{12, 3, 8, 8});
  CHECK(e.support_labels == std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3});
  for (std::size_t i = 0; i < e.query_items.size(); ++i) {
    CHECK(ds.items()[e.query_items[i]].class_id == e.class_map[e.query_labels[i]]);
  }
  auto rng2 = make_stream(1, 2);
  auto again = sample_episode(ds, classes, spec, rng2);
  CHECK(again.support_items == e.support_items);
  CHECK(again.query_items == e.query_items);
}

TEST_CASE("sampler preconditions name the eligible class count") {
  auto ds = generate_synthetic(small(6, 8));
  auto classes = ds.class_ids();
  auto rng = make_stream(1, 2);
  EpisodeSpec too_many_shots{5, 8, 1, 0};
  CHECK_THROWS_WITH_AS(sample_episode(ds, classes, too_many_shots, rng), doctest::Contains("0 eligible"), DataError);
  EpisodeSpec too_many_ways{7, 1, 1, 0};
  CHECK_THROWS_WITH_AS(sample_episode(ds, classes, too_many_ways, rng), doctest::Contains("6 eligible"), DataError);
  EpisodeSpec one_way{1, 1, 1, 0};
  CHECK_THROWS_AS(one_way.validate(), ConfigError);
  CHECK(eligible_classes(ds, classes, {2, 4, 4, 0}).size() == 6);
  CHECK(eligible_classes(ds, classes, {2, 4, 5, 0}).empty());
}

TEST_CASE("query count is clamped to class capacity") {
  auto ds = generate_synthetic(small(6, 8));
  auto classes = ds.class_ids();
  CHECK(clamp_queries({5, 5, 15, 0}, ds, classes).q_query == 3);
  CHECK(clamp_queries({5, 2, 4, 0}, ds, classes).q_query == 4);
  CHECK(clamp_queries({5, 8, 4, 0}, ds, classes).q_query == 4);
}

TEST_CASE("merging and standardizing") {
  auto a = generate_synthetic(small(2, 3));
  auto p = small(3, 2);
  p.first_class = 50;
  auto b = generate_synthetic(p);
  int offset = 0;
  auto m = merge_datasets(a, b, offset);
  CHECK(m.num_classes() == 5);
  CHECK(m.class_size(50 + offset) == 2);
  CHECK(m.provenance() == Provenance::Merged);

  auto ids = m.class_ids();
  auto stats = channel_stats(m, ids);
  auto z = standardize(m, stats);
  auto again = channel_stats(z, ids);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(again.mean[c] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(again.stddev[c] == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("independent streams differ") {
  auto a = make_stream(1, 1), b = make_stream(1, 2), c = make_stream(2, 1);
  const auto x = a(), y = b(), z = c();
  CHECK(x != y);
  CHECK(x != z);
  CHECK(make_stream(1, 1)() == x);
}
