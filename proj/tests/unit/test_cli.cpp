#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "ccomaml/errors.hpp"
#include "ccomaml_cli/commands.hpp"

using namespace ccomaml;
using namespace ccomaml::cli;
namespace fs = std::filesystem;

namespace {

fs::path source_file(const char* rel) { return fs::path(CCOMAML_SOURCE_DIR) / rel; }

RunConfig smoke() { return load_config(source_file("configs/smoke.json")); }

fs::path scratch(const char* name) {
  auto p = fs::temp_directory_path() / "ccomaml_cli_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::trunc) << text; }

int run_binary(const std::string& args) {
  const char* bin = std::getenv("CCOMAML_BIN");
  REQUIRE(bin != nullptr);
  const std::string cmd = std::string(bin) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config survives a JSON round trip") {
  const auto c = smoke();
  const auto back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(config_hash(back) == config_hash(c));
  auto other = c;
  other.meta.gamma = 0.4;
  CHECK(config_hash(other) != config_hash(c));
}

TEST_CASE("config rejects unknown keys and bad values") {
  auto j = to_json(smoke());
  j["meta"]["gama"] = 0.2;
  CHECK_THROWS_AS(config_from_json(j), ConfigError);

  j = to_json(smoke());
  j["meta"]["gamma"] = 1.5;
  CHECK_THROWS_AS(config_from_json(j), ConfigError);

  j = to_json(smoke());
  j["method"] = "NotAMethod";
  CHECK_THROWS_AS(config_from_json(j), ConfigError);

  j = to_json(smoke());
  j["meta"]["alpha"] = "fast";
  CHECK_THROWS_AS(config_from_json(j), ConfigError);

  const auto dir = scratch("badjson");
  write_text(dir / "c.json", "{ not json");
  CHECK_THROWS_AS(load_config(dir / "c.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
}

TEST_CASE("training twice gives the same payload") {
  const auto c = smoke();
  Runtime one;
  Runtime three;
  three.threads = 3;
  const auto a = run_train(c, one);
  const auto b = run_train(c, three);
  CHECK(a.payload.dump() == b.payload.dump());
  CHECK(a.payload["epochs"].size() == c.training.epochs);
  CHECK(a.payload["test"]["episodes"].size() == c.test.count);
}

TEST_CASE("reports are written, verified and tamper-evident") {
  const auto dir = scratch("report");
  CommonOptions common;
  common.config = source_file("configs/smoke.json");
  common.out = dir;
  common.quiet = true;
  const auto out = run_train(resolve_config(common), common.runtime());
  write_outputs(dir, out, 1.25);
  CHECK(fs::exists(dir / "checkpoint.ckpt"));
  CHECK(fs::exists(dir / "epochs.log"));

  const auto report = load_report(dir / "report.json");
  CHECK(report["schema_version"] == 1);
  CHECK(report["wall_clock_seconds"] == 1.25);
  CHECK(make_report(out.payload, 99.0)["payload_hash"] == report["payload_hash"]);

  auto tampered = report;
  tampered["payload"]["seed"] = 12345;
  CHECK_THROWS_AS(check_report(tampered), DataError);

  // a consistent hash over an inconsistent summary is still caught
  auto edited = report;
  edited["payload"]["test"]["accuracy"]["ci95"] = 0.5;
  edited = make_report(edited["payload"], 0.0);
  CHECK_THROWS_AS(check_report(edited), DataError);

  EvalOptions eo;
  eo.checkpoint = dir / "checkpoint.ckpt";
  CommonOptions eval_common;
  const auto ev = run_eval(eval_common, eo);
  CHECK(ev.payload["test"].dump() == out.payload["test"].dump());
}

TEST_CASE("a method compared with itself has p = 1") {
  auto c = smoke();
  c.test.count = 8;
  CompareOptions o;
  o.methods = {"MAML", "CCoMAML"};
  o.reference = "MAML";
  const auto r = run_compare(c, o, Runtime{});
  const auto& rows = r.payload["methods"];
  REQUIRE(rows.size() == 2);
  CHECK(rows[0]["method"] == "MAML");
  CHECK(rows[0]["p_value"] == 1.0);
  CHECK(r.table_csv.starts_with("method,acc_mean,acc_ci95,f1_mean,f1_ci95,p_value,marker\n"));

  o.reference = "ProtoNet";
  CHECK_THROWS_AS(run_compare(c, o, Runtime{}), ConfigError);
}

TEST_CASE("ablation grids") {
  const auto c = smoke();
  CHECK(default_grid("gamma", c) == std::vector<std::string>{"0", "0.2", "0.4", "0.6", "0.8", "1.0"});
  CHECK(default_grid("strategy", c) == std::vector<std::string>{"S1", "S2", "S3", "S4"});
  CHECK_THROWS_AS(default_grid("depth", c), ConfigError);

  auto small = c;
  small.test.count = 4;
  AblateOptions o;
  o.kind = "gamma";
  o.values = {"0", "1.0"};
  const auto r = run_ablate(small, o, Runtime{});
  CHECK(r.payload["rows"].size() == 2);
  o.values = {"1.5"};
  CHECK_THROWS_AS(run_ablate(small, o, Runtime{}), ConfigError);
}

TEST_CASE("synthesized folders load back to the same images") {
  const auto dir = scratch("synth");
  auto c = smoke();
  SynthOptions so;
  so.classes = 4;
  so.per_class = 3;
  const auto r = run_synth(c, so, dir);
  CHECK(r.payload["files"] == 12);

  FolderLoadOptions lo;
  lo.image_size = c.data.synthetic.height;
  lo.channels = c.data.synthetic.channels;
  lo.standardize = false;
  const auto loaded = load_folder(dir / "images", lo);
  CHECK(loaded.dataset.size() == 12);
  CHECK(loaded.skipped == 0);
  CHECK(hex64(loaded.dataset.checksum()) == r.payload["checksum"]);
}

TEST_CASE("gradcheck verb") {
  GradcheckCommandOptions o;
  o.trials = 3;
  o.hvp_trials = 1;
  CHECK(run_gradcheck(o, 1).payload["passed"] == true);
  o.inject_sign_error = "mul";
  CHECK(run_gradcheck(o, 1).payload["passed"] == false);
}

TEST_CASE("exit codes") {
  const auto dir = scratch("exit");
  const auto smoke_path = source_file("configs/smoke.json").string();
  CHECK(run_binary("gradcheck --trials 2 --hvp-trials 1") == 0);
  CHECK(run_binary("train --config " + smoke_path + " --out " + (dir / "ok").string() + " --quiet") == 0);

  write_text(dir / "bad.json", R"({"meta": {"gamma": 3}})");
  CHECK(run_binary("train --config " + (dir / "bad.json").string()) == 2);
  CHECK(run_binary("train --no-such-flag") == 2);

  write_text(dir / "nodata.json", R"({"data": {"source": "folder", "folder": "/nonexistent/ccomaml"}})");
  CHECK(run_binary("train --config " + (dir / "nodata.json").string()) == 3);
  CHECK(run_binary("eval --checkpoint " + (dir / "missing.ckpt").string()) == 3);

  CHECK(run_binary("gradcheck --trials 2 --hvp-trials 1 --inject-sign-error mul") == 4);
}
