#include <doctest.h>

#include <algorithm>
#include <set>

#include "../support/scratch_dir.hpp"
#include "depthcontrast/dataset.hpp"

using namespace dc;
namespace fs = std::filesystem;

namespace {

std::vector<int> labels_with_counts(std::initializer_list<int> counts) {
  std::vector<int> labels;
  int c = 0;
  for (int n : counts) labels.insert(labels.end(), std::size_t(n), c++);
  return labels;
}

std::array<int, kNumClasses> fold_counts(const FoldPlan& plan, std::span<const int> labels, int f) {
  std::array<int, kNumClasses> out{};
  for (Index i : plan.members(f)) ++out[std::size_t(labels[std::size_t(i)])];
  return out;
}

}  // namespace

TEST_CASE("plane files round trip bitwise") {
  const testing::ScratchDir dir("plane");
  Stream s(1);
  std::uniform_real_distribution<float> u(-5.0f, 5.0f);
  Plane p(17, 23);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = double(u(s));
  write_plane(dir / "p.dpc", p);
  CHECK(read_plane(dir / "p.dpc") == p);
  CHECK(testing::slurp(dir / "p.dpc").size() == 12 + 17 * 23 * 4);
}

TEST_CASE("corrupted plane files are rejected") {
  const std::string good = encode_plane(Plane::Ones(3, 4));
  std::string bad = good;
  bad[1] = 'Q';
  CHECK_THROWS_AS(decode_plane(bad), IoError);
  CHECK_THROWS_AS(decode_plane(good.substr(0, good.size() - 4)), IoError);
  CHECK_THROWS_AS(decode_plane(good + "xxxx"), IoError);
  bad = good;
  bad[4] = 0;  // height 3 -> 0
  CHECK_THROWS_AS(decode_plane(bad), IoError);
  CHECK_THROWS_AS(decode_plane("DPC"), IoError);
  CHECK_THROWS_AS(read_plane("/nonexistent/plane.dpc"), IoError);
  Plane nan = Plane::Zero(2, 2);
  nan(1, 1) = NAN;
  CHECK_THROWS_AS(encode_plane(nan), NumericalError);
}

TEST_CASE("class names") {
  CHECK(class_index("Ore3") == 4);
  CHECK(class_index("Cylindrical") == 6);
  CHECK_THROWS_AS(class_index("ore3"), ValueError);
}

TEST_CASE("generator counts follow the reference table") {
  GeneratorConfig full;
  CHECK(full.counts() == kReferenceClassCounts);
  GeneratorConfig tenth{0.1, 40};
  const auto c = tenth.counts();
  CHECK(c[2] == 86);
  CHECK(c[6] == 5);  // 4.5 rounds up
  CHECK_THROWS_AS((GeneratorConfig{0.0, 40}.validate()), ValueError);
  CHECK_THROWS_AS((GeneratorConfig{-1.0, 40}.validate()), ValueError);
  CHECK_THROWS_AS((GeneratorConfig{0.1, 8}.validate()), ValueError);
}

TEST_CASE("rendered samples sit on the conveyor baseline") {
  for (int label = 0; label < kNumClasses; ++label)
    for (std::uint64_t i = 0; i < 3; ++i) {
      const RawSample s = render_sample(label, 11, i, 40);
      CHECK(s.depth.minCoeff() == 0.0);
      CHECK(s.depth.maxCoeff() > 0.0);
      CHECK(s.reflectance.allFinite());
      CHECK(s.label == label);
      CHECK_NOTHROW(s.validate());
    }
  CHECK(render_sample(3, 5, 2, 40).depth == render_sample(3, 5, 2, 40).depth);
  CHECK_FALSE(render_sample(3, 5, 2, 40).depth == render_sample(3, 5, 3, 40).depth);
}

TEST_CASE("generated dataset: determinism, manifest and loader round trip") {
  const testing::ScratchDir dir("gen");
  const GeneratorConfig cfg{0.03, 24};
  const DatasetManifest m = generate_synthetic_dataset(cfg, 7, dir / "a");
  generate_synthetic_dataset(cfg, 7, dir / "b");
  CHECK(testing::tree_contents(dir / "a") == testing::tree_contents(dir / "b"));
  generate_synthetic_dataset(cfg, 8, dir / "c");
  CHECK_FALSE(testing::tree_contents(dir / "a") == testing::tree_contents(dir / "c"));

  const auto counts = m.class_counts();
  for (int k = 0; k < kNumClasses; ++k) CHECK(counts[std::size_t(k)] == cfg.counts()[std::size_t(k)]);
  const DatasetManifest back = read_manifest(dir / "a");
  REQUIRE(back.entries.size() == m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    CHECK(back.entries[i].id == m.entries[i].id);
    CHECK(back.entries[i].label == m.entries[i].label);
    CHECK(back.entries[i].depth_path == m.entries[i].depth_path);
  }

  // Planes are stored as float32; the loader matches the in-memory renderer
  // after the same rounding.
  const Dataset loaded = load_dataset(dir / "a");
  const Dataset direct = generate_samples(cfg, 7);
  REQUIRE(loaded.samples.size() == direct.samples.size());
  for (std::size_t i = 0; i < loaded.samples.size(); ++i) {
    CHECK(loaded.samples[i].id == direct.samples[i].id);
    CHECK(loaded.samples[i].depth == direct.samples[i].depth.cast<float>().cast<double>());
  }
}

TEST_CASE("manifest errors") {
  const testing::ScratchDir dir("manifest");
  CHECK_THROWS_AS(read_manifest(dir.path()), IoError);
  testing::spit(dir / "manifest.tsv", "id\tclass\treflectance\tdepth\nx\tOre1\ta.dpc\n");
  CHECK_THROWS_AS(read_manifest(dir.path()), IoError);
  testing::spit(dir / "manifest.tsv", "id\tclass\treflectance\tdepth\nx\tGold\ta.dpc\tb.dpc\n");
  CHECK_THROWS_AS(read_manifest(dir.path()), IoError);
  testing::spit(dir / "manifest.tsv", "id\tclass\treflectance\tdepth\nx\tOre1\ta.dpc\tb.dpc\n");
  CHECK(read_manifest(dir.path()).entries.size() == 1);
  CHECK_THROWS_AS(load_dataset(dir.path()), IoError);  // plane files missing
  DatasetManifest dup;
  dup.entries = {{"x", 1, "a", "b"}, {"x", 2, "c", "d"}};
  CHECK_THROWS_AS(dup.validate(), ValueError);
}

TEST_CASE("stratified folds: divisible, Cylindrical and Ore3 counts") {
  const auto even = labels_with_counts({50, 50, 50, 50, 50, 50, 50});
  const FoldPlan plan = stratified_folds(even, 5, 3);
  for (int f = 0; f < 5; ++f)
    for (int c : fold_counts(plan, even, f)) CHECK(c == 10);

  const auto table = labels_with_counts({164, 122, 860, 698, 503, 616, 45});
  const FoldPlan tp = stratified_folds(table, 5, 9);
  int ore3_total = 0;
  for (int f = 0; f < 5; ++f) {
    const auto c = fold_counts(tp, table, f);
    CHECK(c[6] == 9);
    CHECK((c[4] == 100 || c[4] == 101));
    ore3_total += c[4];
    for (int k = 0; k < kNumClasses; ++k)
      CHECK(std::abs(c[std::size_t(k)] - kReferenceClassCounts[std::size_t(k)] / 5.0) <= 1.0);
  }
  CHECK(ore3_total == 503);
  CHECK(stratified_folds(table, 5, 9).fold == tp.fold);
  CHECK_THROWS_AS(stratified_folds(labels_with_counts({3, 10}), 5, 1), ValueError);
}

TEST_CASE("split sizes and test isolation over all rotations") {
  const auto labels = labels_with_counts({100, 100, 100, 100, 100, 100, 100});
  const FoldPlan plan = stratified_folds(labels, 5, 1);
  std::vector<int> tested(labels.size(), 0);
  for (int r = 0; r < 5; ++r) {
    const Splits full = make_splits(plan, labels, SplitSpec{}, r);
    CHECK(full.train.size() == 420);
    CHECK(full.val.size() == 140);
    CHECK(full.test.size() == 140);
    for (Index i : full.test) ++tested[std::size_t(i)];

    const Splits semi = make_splits(plan, labels, SplitSpec{Protocol::semi_supervised, 4}, r);
    CHECK(semi.train.size() == 70);
    CHECK(semi.val.size() == 70);
    CHECK(semi.test.size() == 140);

    for (const Splits* s : {&full, &semi}) {
      const std::set<Index> test(s->test.begin(), s->test.end());
      for (const auto* part : {&s->pretrain, &s->train, &s->val})
        for (Index i : *part) CHECK(test.count(i) == 0);
    }
    std::set<Index> semi_train(semi.train.begin(), semi.train.end());
    for (Index i : semi.val) CHECK(semi_train.count(i) == 0);
  }
  CHECK(std::all_of(tested.begin(), tested.end(), [](int n) { return n == 1; }));
  CHECK_THROWS_AS(make_splits(plan, labels, SplitSpec{}, 5), ValueError);
}
