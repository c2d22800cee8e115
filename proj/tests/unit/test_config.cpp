#include <doctest.h>

#include "../support/scratch_dir.hpp"
#include "depthcontrast/config.hpp"

using namespace dc;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text, "run.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("empty document gives the desk preset") {
  const RunConfig c = parse_run_config("{}", "run.json");
  CHECK(c.preset == "desk");
  CHECK(c.precision == Precision::float64);
  CHECK(c.pretrain.batch_size == 32);
  CHECK(c.pretrain.crop_size == 32);
  CHECK(c.pretrain.tau == 0.1);
  CHECK(c.downstream.batch_size == 16);
  CHECK(c.model.encoder.stages.size() == 4);
  CHECK(to_json(c) == to_json(RunConfig::from_preset("desk")));
}

TEST_CASE("paper-faithful preset carries the full-scale hyperparameters") {
  const RunConfig c = RunConfig::from_preset("paper-faithful");
  CHECK(c.pretrain.tau == 0.1);
  CHECK(c.pretrain.learning_rate == 0.00005);
  CHECK(c.pretrain.batch_size == 256);
  CHECK(c.pretrain.crop_size == 224);
  CHECK(c.downstream.learning_rate == 0.00001);
  CHECK(c.downstream.batch_size == 16);
  CHECK(c.model.projector.hidden[0].size == 2048);
  CHECK(c.model.projector.output_dim == 128);
  CHECK_NOTHROW(c.validate());
  CHECK_THROWS_AS(RunConfig::from_preset("laptop"), ConfigError);
}

TEST_CASE("file values override the preset") {
  const RunConfig c = parse_run_config(R"({
    "preset": "paper-faithful",
    "seed": 12,
    "precision": "float32",
    "pretrain": {"epochs": 3, "batch_size": 8},
    "protocol": {"name": "LE-semi", "runs": 2}
  })",
                                       "run.json");
  CHECK(c.seed == 12);
  CHECK(c.precision == Precision::float32);
  CHECK(c.pretrain.epochs == 3);
  CHECK(c.pretrain.batch_size == 8);
  CHECK(c.pretrain.learning_rate == 0.00005);  // untouched preset value
  CHECK(c.protocol == "LE-semi");
  CHECK(c.runs == 2);
}

TEST_CASE("unknown keys are rejected with their line") {
  const std::string e = error_of("{\n  \"pretrain\": {\n    \"epochs\": 3,\n    \"epoch\": 4\n  }\n}\n");
  CHECK(e.find("run.json:4") == 0);
  CHECK(e.find("epoch") != std::string::npos);

  const std::string top = error_of("{\n  \"seed\": 1,\n  \"colour\": \"red\"\n}");
  CHECK(top.find("run.json:3") == 0);

  const std::string nested = error_of("{\"model\": {\n\"encoder\": {\n\"stages\": [{\"out_channels\": 4, \"stride\": 2, \"pad\": 1}]}}}");
  CHECK(nested.find("run.json:3") == 0);
}

TEST_CASE("syntax, type and range errors") {
  CHECK(error_of("{\n\"seed\": 1,\n}").find("run.json:3") == 0);
  CHECK(error_of("{\"seed\": \"one\"}").find("seed") != std::string::npos);
  CHECK(error_of("{\"precision\": \"float16\"}").find("precision") != std::string::npos);
  CHECK(error_of("{\"pretrain\": {\"batch_size\": 0}}").find("batch_size") != std::string::npos);
  CHECK(error_of("{\"pretrain\": {\"dropout_rate\": 0.1}}").find("dropout_rate") != std::string::npos);
  CHECK(error_of("{\"protocol\": {\"name\": \"FT-half\"}}").find("FT-full") != std::string::npos);
  CHECK(error_of("{\"generator\": {\"scale\": 0}}").find("scale") != std::string::npos);
  CHECK(error_of("[1, 2]").find("object") != std::string::npos);
}

TEST_CASE("resolved config round trips through its own JSON") {
  RunConfig c = RunConfig::from_preset("desk");
  c.seed = 5;
  c.runs = 3;
  c.pretrain.epochs = 7;
  c.generator.scale = 0.5;
  const std::string text = to_json(c).dump(2);
  CHECK(to_json(parse_run_config(text, "echo.json")) == to_json(c));
}

TEST_CASE("load by preset name or path") {
  const testing::ScratchDir dir("cfg");
  testing::spit(dir / "c.json", R"({"seed": 9})");
  CHECK(load_run_config((dir / "c.json").string()).seed == 9);
  CHECK(load_run_config("paper-faithful").preset == "paper-faithful");
  CHECK_THROWS_AS(load_run_config((dir / "missing.json").string()), IoError);
}
