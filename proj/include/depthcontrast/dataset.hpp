#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "depthcontrast/augment.hpp"

namespace dc {

inline constexpr int kNumClasses = 7;

/// Class index is the position in this list.
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "Mixed1", "Mixed2", "Ore1", "Ore2", "Ore3", "Agglomerated", "Cylindrical"};

/// Images per class in the reference conveyor dataset.
inline constexpr std::array<int, kNumClasses> kReferenceClassCounts = {164, 122, 860, 698, 503, 616, 45};

int class_index(std::string_view name);

// Plane files: "DPC1" | u32 height | u32 width | height*width little-endian
// float32, row-major.
std::string encode_plane(const Plane& plane);
Plane decode_plane(std::string_view bytes, const std::string& source = "plane");
void write_plane(const std::filesystem::path& path, const Plane& plane);
Plane read_plane(const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  int label = 0;
  std::string reflectance_path;  // relative to the manifest directory
  std::string depth_path;
};

/// Tab-separated "id class reflectance depth" records after a header line.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  void validate() const;
  std::vector<int> labels() const;
  std::array<Index, kNumClasses> class_counts() const;
};

inline constexpr std::string_view kManifestFile = "manifest.tsv";

void write_manifest(const std::filesystem::path& dir, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& dir);

/// Labeled samples held in memory, in manifest order.
struct Dataset {
  std::vector<RawSample> samples;

  std::vector<int> labels() const;
  std::vector<const RawSample*> select(std::span<const Index> indices) const;
};

Dataset load_dataset(const std::filesystem::path& dir);

struct GeneratorConfig {
  double scale = 1.0;  // multiplies kReferenceClassCounts
  Index image_size = 40;
  std::array<int, kNumClasses> counts() const;
  void validate() const;
};

/// Renders one sample of class `label`; deterministic per (seed, index).
RawSample render_sample(int label, std::uint64_t seed, std::uint64_t index, Index image_size);

/// Samples are ordered by class, then by index within the class.
Dataset generate_samples(const GeneratorConfig& cfg, std::uint64_t seed);

/// Writes plane files under dir/planes and dir/manifest.tsv.
DatasetManifest generate_synthetic_dataset(const GeneratorConfig& cfg, std::uint64_t seed,
                                           const std::filesystem::path& dir);

/// Fold index per sample (manifest order).
struct FoldPlan {
  int k = 5;
  std::uint64_t seed = 0;
  std::vector<int> fold;

  std::vector<Index> members(int f) const;
};

FoldPlan stratified_folds(std::span<const int> labels, int k, std::uint64_t seed);

enum class Protocol { fully_supervised, semi_supervised };

/// Fractions of the whole dataset; test is always one fold.
struct SplitSpec {
  Protocol protocol = Protocol::fully_supervised;
  std::uint64_t subsample_seed = 0;  // semi-supervised 10% draws

  double train_fraction() const { return protocol == Protocol::fully_supervised ? 0.6 : 0.1; }
  double val_fraction() const { return protocol == Protocol::fully_supervised ? 0.2 : 0.1; }
  static constexpr double test_fraction() { return 0.2; }
};

struct Splits {
  std::vector<Index> pretrain;  // unlabeled pool: the three training folds
  std::vector<Index> train;
  std::vector<Index> val;
  std::vector<Index> test;
};

Splits make_splits(const FoldPlan& plan, std::span<const int> labels, const SplitSpec& spec, int test_fold);

}  // namespace dc
