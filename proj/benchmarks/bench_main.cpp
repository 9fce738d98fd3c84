#include <benchmark/benchmark.h>

#include <optional>
#include <random>

#include "ccomaml/meta_engine.hpp"
#include "ccomaml/ops.hpp"

using namespace ccomaml;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t = Tensor::zeros(shape);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  for (auto& v : t.mutable_data()) v = n(rng);
  return t;
}

void BM_Conv3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor({25, c, 16, 16}, 1).requires_grad_();
  const auto w = random_tensor({c, c, 3, 3}, 2).requires_grad_();
  for (auto _ : state) {
    auto y = sum(conv2d_nobias(x, w, 1, 1));
    auto g = grad(y, std::vector<Tensor>{x, w});
    benchmark::DoNotOptimize(g[0].data().data());
  }
}
BENCHMARK(BM_Conv3x3)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

struct Setup {
  std::unique_ptr<Backbone> backbone;
  std::optional<CoLearner> colearner;
  ParameterSet theta, psi;
  Dataset dataset;
  std::vector<int> classes;
};

Setup make_setup(std::size_t size) {
  Setup s;
  BackboneSpec bs;
  bs.image_size = size;
  bs.width = 16;
  s.backbone = build_backbone(bs);
  CoLearnerSpec cs;
  s.colearner.emplace(build_colearner(cs, s.backbone->feature_shape(), bs.n_way));
  InitPolicy init;
  s.theta = s.backbone->init(init);
  init.seed = 2;
  s.psi = s.colearner->init(init);
  SyntheticParams sp;
  sp.classes = 20;
  sp.per_class = 20;
  sp.height = sp.width = size;
  s.dataset = generate_synthetic(sp);
  s.classes = s.dataset.class_ids();
  return s;
}

void BM_MetaStep(benchmark::State& state) {
  auto s = make_setup(32);
  MetaConfig cfg;
  cfg.method = state.range(0) ? MethodId::CCoMAML : MethodId::FOMAML;
  cfg.meta_batch = 1;
  auto rng = make_stream(1, 11);
  EpisodeSpec es{5, 5, 5, 0};
  std::vector<Episode> batch{sample_episode(s.dataset, s.classes, es, rng)};
  MetaState st{s.theta, s.psi, {}, {}, {}, 0};
  for (auto _ : state) train_step(st, batch, *s.backbone, &*s.colearner, cfg);
}
BENCHMARK(BM_MetaStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_SampleEpisode(benchmark::State& state) {
  auto s = make_setup(32);
  auto rng = make_stream(1, 11);
  EpisodeSpec es{5, 5, 15, 0};
  for (auto _ : state) {
    auto e = sample_episode(s.dataset, s.classes, es, rng);
    benchmark::DoNotOptimize(e.query_images.data().data());
  }
}
BENCHMARK(BM_SampleEpisode);

}  // namespace
BENCHMARK_MAIN();
