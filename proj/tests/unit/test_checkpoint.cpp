#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ccomaml/checkpoint.hpp"
#include "ccomaml/errors.hpp"

using namespace ccomaml;
namespace fs = std::filesystem;

namespace {

Checkpoint sample() {
  Checkpoint c;
  c.config_json = R"({"method":"CCoMAML"})";
  c.config_hash = 0xdeadbeefcafef00dull;
  c.state.theta.add("body.conv0.w", Tensor({2, 1, 3, 3}, std::vector<double>(18, 0.1 / 3.0)));
  c.state.theta.add("head.b", Tensor({2}, {-0.0, 1e-300}));
  c.state.psi.add("fc0.w", Tensor({1, 2}, {3.5, -2.25}));
  c.state.adam_theta.step = 7;
  c.state.adam_theta.m = c.state.theta.detached();
  c.state.adam_theta.v = c.state.theta.detached();
  c.state.steps = 42;
  c.plateau.bad_epochs = 3;
  c.plateau.multiplier = 0.1;
  c.early_stop.best = 0.625;
  c.epoch = 9;
  c.rng_state = "1 2 3";
  return c;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  const auto path = fs::temp_directory_path() / "ccomaml_test_ckpt.bin";
  const auto c = sample();
  save_checkpoint(path, c);
  const auto r = load_checkpoint(path);
  CHECK(r.config_json == c.config_json);
  CHECK(r.config_hash == c.config_hash);
  CHECK(bitwise_equal(r.state.theta, c.state.theta));
  CHECK(bitwise_equal(r.state.psi, c.state.psi));
  CHECK(bitwise_equal(r.state.adam_theta.m, c.state.adam_theta.m));
  CHECK(r.state.adam_theta.step == 7);
  CHECK(r.state.adam_psi.step == 0);
  CHECK(r.state.steps == 42);
  CHECK(r.plateau.bad_epochs == 3);
  CHECK(r.plateau.multiplier == 0.1);
  CHECK(r.early_stop.best == 0.625);
  CHECK(r.epoch == 9);
  CHECK(r.rng_state == "1 2 3");
  CHECK(std::signbit(r.state.theta.at("head.b").at(0)));
  fs::remove(path);
}

TEST_CASE("damaged checkpoints raise data errors") {
  const auto path = fs::temp_directory_path() / "ccomaml_test_ckpt_bad.bin";
  CHECK_THROWS_AS(load_checkpoint(path.string() + ".missing"), DataError);

  save_checkpoint(path, sample());
  const auto full = fs::file_size(path);
  fs::resize_file(path, full / 2);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);

  std::ofstream(path, std::ios::trunc) << "NOTACKPTxxxxxxxxxxxxxxxx";
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  fs::remove(path);
}
