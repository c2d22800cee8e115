#include <doctest.h>

#include <cstring>

#include "../support/scratch_dir.hpp"
#include "depthcontrast/checkpoint.hpp"

using namespace dc;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.encoder.stages = {{4, 3, 2}, {8, 3, 2}};
  c.encoder.embedding_dim = 8;
  c.projector = ProjectionHeadConfig::scaled(1.0 / 64.0);
  c.classifier.hidden = 6;
  return c;
}

template <typename S>
bool same_params(const ModelParams<S>& a, const ModelParams<S>& b) {
  if (a.entries().size() != b.entries().size()) return false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const auto &x = a.entries()[i], &y = b.entries()[i];
    if (x.name != y.name || x.kind != y.kind || x.value.shape() != y.value.shape() ||
        std::memcmp(x.value.data(), y.value.data(), sizeof(S) * std::size_t(x.value.size())) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("checkpoint round trip is bitwise in both widths") {
  const auto p = init_params<double>(small_config(), 3);
  const auto back = decode_checkpoint<double>(encode_checkpoint(p, {{"note", "x"}}));
  CHECK(same_params(p, back.params));
  CHECK(back.scalar_bits == 64);
  CHECK(back.snapshot["note"] == "x");
  CHECK(back.snapshot["seed"] == 3);
  CHECK(to_json(back.params.config()) == to_json(p.config()));

  const auto pf = p.cast<float>();
  const auto backf = decode_checkpoint<float>(encode_checkpoint(pf));
  CHECK(same_params(pf, backf.params));
  CHECK(backf.scalar_bits == 32);
  // A 32-bit file widens exactly.
  CHECK(same_params(pf.cast<double>(), decode_checkpoint<double>(encode_checkpoint(pf)).params));
}

TEST_CASE("checkpoint file round trip and missing file") {
  const testing::ScratchDir dir("ckpt");
  const auto p = init_params<double>(small_config(), 1);
  write_checkpoint(dir / "m.ckpt", p);
  CHECK(same_params(p, read_checkpoint<double>(dir / "m.ckpt").params));
  CHECK(testing::slurp(dir / "m.ckpt") == encode_checkpoint(p));
  CHECK_THROWS_AS(read_checkpoint<double>(dir / "absent.ckpt"), IoError);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const std::string good = encode_checkpoint(init_params<double>(small_config(), 1));
  std::string bad = good;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint<double>(bad), IoError);
  bad = good;
  bad[4] = 9;  // version
  CHECK_THROWS_AS(decode_checkpoint<double>(bad), IoError);
  bad = good;
  bad[8] = 16;  // scalar width
  CHECK_THROWS_AS(decode_checkpoint<double>(bad), IoError);
  CHECK_THROWS_AS(decode_checkpoint<double>(good.substr(0, good.size() - 3)), IoError);
  CHECK_THROWS_AS(decode_checkpoint<double>(good + "tail"), IoError);
  CHECK_THROWS_AS(decode_checkpoint<double>(""), IoError);
}

TEST_CASE("load_weights names the mismatching tensor") {
  auto into = init_params<double>(small_config(), 1);
  const auto same = init_params<double>(small_config(), 2);
  load_weights(into, same);
  CHECK(same_params(into, same));

  ModelConfig wider = small_config();
  wider.encoder.stages[0].out_channels = 5;
  const auto other = init_params<double>(wider, 2);
  try {
    load_weights(into, other);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("encoder.stage0.conv.weight") != std::string::npos);
  }

  ModelConfig deeper = small_config();
  deeper.encoder.stages.push_back({8, 3, 1});
  try {
    load_weights(into, init_params<double>(deeper, 2));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("encoder.stage2") != std::string::npos);
  }
}
