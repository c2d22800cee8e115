#include "depthcontrast/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"

namespace dc {

namespace fs = std::filesystem;

int class_index(std::string_view name) {
  for (int c = 0; c < kNumClasses; ++c)
    if (kClassNames[std::size_t(c)] == name) return c;
  throw ValueError("unknown class name '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// plane files

std::string encode_plane(const Plane& plane) {
  if (!plane.allFinite()) throw NumericalError("write_plane: non-finite value");
  std::string out = "DPC1";
  binio::put_u32(out, std::uint32_t(plane.rows()));
  binio::put_u32(out, std::uint32_t(plane.cols()));
  out.reserve(out.size() + std::size_t(plane.size()) * 4);
  for (Index i = 0; i < plane.size(); ++i) binio::put_f32(out, float(plane.data()[i]));
  return out;
}

Plane decode_plane(std::string_view bytes, const std::string& source) {
  binio::Reader r(bytes, source);
  if (r.bytes(4) != "DPC1") throw IoError(source + ": bad magic at byte offset 0");
  const std::uint32_t h = r.u32(), w = r.u32();
  if (h == 0 || w == 0) r.fail("zero plane dimension");
  const std::size_t payload = std::size_t(h) * w * 4;
  if (r.remaining() != payload)
    r.fail("payload holds " + std::to_string(r.remaining()) + " bytes but header declares " + std::to_string(h) +
           "x" + std::to_string(w) + " (" + std::to_string(payload) + " bytes)");
  Plane plane(h, w);
  for (Index i = 0; i < plane.size(); ++i) plane.data()[i] = double(r.f32());
  return plane;
}

void write_plane(const fs::path& path, const Plane& plane) { binio::write_file(path, encode_plane(plane)); }

Plane read_plane(const fs::path& path) { return decode_plane(binio::read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// manifest

void DatasetManifest::validate() const {
  std::vector<std::string> ids;
  for (const auto& e : entries) {
    if (e.id.empty()) throw ValueError("manifest: empty id");
    if (e.label < 0 || e.label >= kNumClasses) throw ValueError("manifest: bad label for " + e.id);
    ids.push_back(e.id);
  }
  std::sort(ids.begin(), ids.end());
  auto dup = std::adjacent_find(ids.begin(), ids.end());
  if (dup != ids.end()) throw ValueError("manifest: duplicate id " + *dup);
}

std::vector<int> DatasetManifest::labels() const {
  std::vector<int> out;
  for (const auto& e : entries) out.push_back(e.label);
  return out;
}

std::array<Index, kNumClasses> DatasetManifest::class_counts() const {
  std::array<Index, kNumClasses> n{};
  for (const auto& e : entries) ++n[std::size_t(e.label)];
  return n;
}

void write_manifest(const fs::path& dir, const DatasetManifest& manifest) {
  manifest.validate();
  std::ostringstream os;
  os << "id\tclass\treflectance\tdepth\n";
  for (const auto& e : manifest.entries)
    os << e.id << '\t' << kClassNames[std::size_t(e.label)] << '\t' << e.reflectance_path << '\t' << e.depth_path
       << '\n';
  binio::write_file(dir / kManifestFile, os.str());
}

DatasetManifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / kManifestFile;
  std::istringstream in(binio::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "id\tclass\treflectance\tdepth")
    throw IoError(path.string() + ": missing or malformed header line");
  DatasetManifest m;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream ls(line);
    for (std::string col; std::getline(ls, col, '\t');) cols.push_back(col);
    if (cols.size() != 4) throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected 4 fields");
    try {
      m.entries.push_back({cols[0], class_index(cols[1]), cols[2], cols[3]});
    } catch (const ValueError& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  m.validate();
  return m;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  for (const auto& s : samples) out.push_back(s.label.value_or(-1));
  return out;
}

std::vector<const RawSample*> Dataset::select(std::span<const Index> indices) const {
  std::vector<const RawSample*> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(&samples.at(std::size_t(i)));
  return out;
}

Dataset load_dataset(const fs::path& dir) {
  const DatasetManifest m = read_manifest(dir);
  Dataset ds;
  for (const auto& e : m.entries) {
    RawSample s{e.id, read_plane(dir / e.reflectance_path), read_plane(dir / e.depth_path), e.label};
    s.validate();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// synthetic generator

std::array<int, kNumClasses> GeneratorConfig::counts() const {
  std::array<int, kNumClasses> n{};
  for (int c = 0; c < kNumClasses; ++c) n[std::size_t(c)] = int(std::lround(kReferenceClassCounts[std::size_t(c)] * scale));
  return n;
}

void GeneratorConfig::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ValueError("generator scale must be > 0");
  if (image_size < 16) throw ValueError("generator image size must be >= 16");
  const auto n = counts();
  for (int c = 0; c < kNumClasses; ++c)
    if (n[std::size_t(c)] < 1)
      throw ValueError("scale " + std::to_string(scale) + " leaves class " +
                       std::string(kClassNames[std::size_t(c)]) + " empty");
}

namespace {

enum class Shape2D { cap, capsule };

struct Particle {
  Shape2D shape = Shape2D::cap;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // capsule axis; caps use (x0, y0)
  double radius = 1;
  double height_scale = 1;
  double albedo = 0.5;
  double texture = 0.05;  // per-pixel albedo noise
};

struct Scene {
  std::vector<Particle> particles;
};

double uniform(Stream& s, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(s); }
int uniform_int(Stream& s, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(s); }

// Heaped rounded particles with radii drawn from [r_lo, r_hi] until the
// nominal covered area reaches `coverage` of the image.
void add_ore(Scene& scene, Stream& s, Index size, double r_lo, double r_hi, double coverage, double texture) {
  const double area = double(size * size) * coverage;
  double covered = 0.0;
  while (covered < area) {
    Particle p;
    p.radius = uniform(s, r_lo, r_hi);
    p.x0 = uniform(s, -p.radius * 0.5, double(size) + p.radius * 0.5);
    p.y0 = uniform(s, -p.radius * 0.5, double(size) + p.radius * 0.5);
    p.height_scale = uniform(s, 0.7, 1.0);
    p.albedo = uniform(s, 0.35, 0.85);
    p.texture = texture;
    covered += std::numbers::pi * p.radius * p.radius;
    scene.particles.push_back(p);
  }
}

void add_agglomerates(Scene& scene, Stream& s, Index size) {
  const int clusters = uniform_int(s, 3, 6);
  std::normal_distribution<double> spread(0.0, 2.8);
  for (int c = 0; c < clusters; ++c) {
    const double cx = uniform(s, 0.0, double(size)), cy = uniform(s, 0.0, double(size));
    const int blobs = uniform_int(s, 6, 11);
    const double albedo = uniform(s, 0.35, 0.85);
    for (int b = 0; b < blobs; ++b) {
      Particle p;
      p.radius = uniform(s, 1.5, 2.8);
      p.x0 = cx + spread(s);
      p.y0 = cy + spread(s);
      p.height_scale = uniform(s, 0.8, 1.0);
      p.albedo = std::clamp(albedo + uniform(s, -0.05, 0.05), 0.0, 1.0);
      p.texture = 0.08;
      scene.particles.push_back(p);
    }
  }
}

void add_cylinders(Scene& scene, Stream& s, Index size) {
  const int n = uniform_int(s, 6, 10);
  for (int i = 0; i < n; ++i) {
    Particle p;
    p.shape = Shape2D::capsule;
    p.radius = uniform(s, 1.8, 2.8);
    const double len = uniform(s, 12.0, 22.0), angle = uniform(s, 0.0, std::numbers::pi);
    const double cx = uniform(s, 0.0, double(size)), cy = uniform(s, 0.0, double(size));
    p.x0 = cx - 0.5 * len * std::cos(angle);
    p.y0 = cy - 0.5 * len * std::sin(angle);
    p.x1 = cx + 0.5 * len * std::cos(angle);
    p.y1 = cy + 0.5 * len * std::sin(angle);
    p.height_scale = 1.0;
    p.albedo = uniform(s, 0.35, 0.85);
    p.texture = 0.02;
    scene.particles.push_back(p);
  }
}

double distance(const Particle& p, double x, double y) {
  if (p.shape == Shape2D::cap) return std::hypot(x - p.x0, y - p.y0);
  const double dx = p.x1 - p.x0, dy = p.y1 - p.y0;
  const double t = std::clamp(((x - p.x0) * dx + (y - p.y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0);
  return std::hypot(x - (p.x0 + t * dx), y - (p.y0 + t * dy));
}

Scene build_scene(int label, Stream& s, Index size) {
  Scene scene;
  const double coverage = uniform(s, 0.55, 0.9);
  switch (label) {
    case 0:  // Mixed1: fine and coarse ore together
      add_ore(scene, s, size, 1.8, 3.2, coverage * 0.6, 0.03);
      add_ore(scene, s, size, 4.5, 7.5, coverage * 0.4, 0.07);
      break;
    case 1:  // Mixed2: medium and coarse ore together
      add_ore(scene, s, size, 3.0, 4.8, coverage * 0.6, 0.05);
      add_ore(scene, s, size, 4.5, 7.5, coverage * 0.4, 0.07);
      break;
    case 2: add_ore(scene, s, size, 1.8, 3.2, coverage, 0.03); break;
    case 3: add_ore(scene, s, size, 3.0, 4.8, coverage, 0.05); break;
    case 4: add_ore(scene, s, size, 4.5, 7.5, coverage, 0.07); break;
    case 5: add_agglomerates(scene, s, size); break;
    case 6: add_cylinders(scene, s, size); break;
    default: throw ValueError("render_sample: label out of range");
  }
  return scene;
}

}  // namespace

RawSample render_sample(int label, std::uint64_t seed, std::uint64_t index, Index size) {
  Stream s = derive_stream(seed, {0xda7a, std::uint64_t(label), index});
  const Scene scene = build_scene(label, s, size);

  Plane height = Plane::Zero(size, size);
  Plane albedo = Plane::Constant(size, size, 0.2);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const double px = double(x) + 0.5, py = double(y) + 0.5;
      for (const Particle& p : scene.particles) {
        const double d = distance(p, px, py);
        if (d >= p.radius) continue;
        const double h = p.height_scale * std::sqrt(p.radius * p.radius - d * d);
        if (h > height(y, x)) {
          height(y, x) = h;
          albedo(y, x) = p.albedo + p.texture * unit(s);
        }
      }
    }

  // Conveyor tilt and sag differ per capture; they shift depth but barely
  // change the shading.
  const double tilt_x = uniform(s, -0.15, 0.15), tilt_y = uniform(s, -0.15, 0.15), sag = uniform(s, 0.0, 2.5);
  const double c = 0.5 * double(size);
  Plane surface = height;
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const double u = (double(x) + 0.5 - c) / c;
      surface(y, x) += tilt_x * (double(x) - c) + tilt_y * (double(y) - c) + sag * u * u;
    }

  // Lambertian shading under a per-capture light and sensor gain.
  const double azimuth = uniform(s, 0.0, 2.0 * std::numbers::pi), elevation = uniform(s, 0.8, 1.25);
  const Eigen::Vector3d light(std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                              std::sin(elevation));
  const double gain = uniform(s, 0.6, 1.4), ambient = uniform(s, 0.05, 0.2), falloff = uniform(s, -0.2, 0.2);
  RawSample out;
  out.label = label;
  out.reflectance.resize(size, size);
  out.depth.resize(size, size);
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const double hx = 0.5 * (surface(y, std::min(x + 1, size - 1)) - surface(y, std::max<Index>(x - 1, 0)));
      const double hy = 0.5 * (surface(std::min(y + 1, size - 1), x) - surface(std::max<Index>(y - 1, 0), x));
      const double shade = std::max(0.0, Eigen::Vector3d(-hx, -hy, 1.0).normalized().dot(light));
      const double line = 1.0 + falloff * (double(y) + 0.5 - c) / c;  // intensity along the laser line
      out.reflectance(y, x) = double(float(gain * line * albedo(y, x) * shade + ambient + 0.01 * unit(s)));
      const double noise = height(y, x) > 0.0 ? 0.03 * unit(s) : 0.0;
      out.depth(y, x) = double(float(surface(y, x) + noise));
    }
  // Triangulation dropouts: short runs along the scan line read as conveyor.
  const double dropout_rate = uniform(s, 0.0, 0.04);
  using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Mask missing = Mask::Constant(size, size, false);
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x)
      if (uniform(s, 0.0, 1.0) < dropout_rate)
        missing.row(y).segment(x, std::min<Index>(uniform_int(s, 1, 4), size - x)) = true;
  if (missing.any()) {
    double floor = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < out.depth.size(); ++i)
      if (!missing.data()[i]) floor = std::min(floor, out.depth.data()[i]);
    if (!std::isfinite(floor)) floor = 0.0;
    out.depth = missing.select(floor, out.depth.array()).matrix();
  }
  // Baseline correction: the lowest point is the conveyor.
  const double base = out.depth.minCoeff();
  out.depth = out.depth.unaryExpr([base](double v) { return double(float(v - base)); });
  return out;
}

Dataset generate_samples(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto counts = cfg.counts();
  Dataset ds;
  std::uint64_t index = 0;
  for (int c = 0; c < kNumClasses; ++c)
    for (int i = 0; i < counts[std::size_t(c)]; ++i, ++index) {
      RawSample s = render_sample(c, seed, index, cfg.image_size);
      std::ostringstream id;
      id << kClassNames[std::size_t(c)] << '_';
      id.width(5);
      id.fill('0');
      id << i;
      s.id = id.str();
      ds.samples.push_back(std::move(s));
    }
  return ds;
}

DatasetManifest generate_synthetic_dataset(const GeneratorConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "planes", ec);
  if (ec) throw IoError("cannot create " + (dir / "planes").string() + ": " + ec.message());
  const Dataset ds = generate_samples(cfg, seed);
  DatasetManifest m;
  for (const auto& s : ds.samples) {
    ManifestEntry e{s.id, *s.label, "planes/" + s.id + ".ref.dpc", "planes/" + s.id + ".dep.dpc"};
    write_plane(dir / e.reflectance_path, s.reflectance);
    write_plane(dir / e.depth_path, s.depth);
    m.entries.push_back(std::move(e));
  }
  write_manifest(dir, m);
  return m;
}

// ---------------------------------------------------------------------------
// folds and splits

std::vector<Index> FoldPlan::members(int f) const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < fold.size(); ++i)
    if (fold[i] == f) out.push_back(Index(i));
  return out;
}

FoldPlan stratified_folds(std::span<const int> labels, int k, std::uint64_t seed) {
  if (k < 2) throw ValueError("stratified_folds: k must be >= 2");
  FoldPlan plan{k, seed, std::vector<int>(labels.size(), -1)};
  int offset = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<Index> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= kNumClasses) throw ValueError("stratified_folds: label out of range");
      if (labels[i] == c) members.push_back(Index(i));
    }
    if (members.empty()) continue;
    if (Index(members.size()) < k)
      throw ValueError("stratified_folds: class " + std::string(kClassNames[std::size_t(c)]) + " has " +
                       std::to_string(members.size()) + " samples, fewer than k = " + std::to_string(k));
    Stream s = derive_stream(seed, {0xf01d, std::uint64_t(c)});
    std::shuffle(members.begin(), members.end(), s);
    // Round-robin with a carried offset keeps both per-class and total fold
    // sizes within one of each other.
    for (std::size_t j = 0; j < members.size(); ++j) plan.fold[std::size_t(members[j])] = int((offset + j) % k);
    offset = int((offset + members.size()) % std::size_t(k));
  }
  return plan;
}

namespace {

// Largest-remainder apportionment of `total` across classes by `weights`.
std::array<Index, kNumClasses> apportion(Index total, const std::array<Index, kNumClasses>& weights) {
  const double sum = double(std::accumulate(weights.begin(), weights.end(), Index(0)));
  std::array<Index, kNumClasses> out{};
  std::array<double, kNumClasses> rem{};
  Index assigned = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const double q = double(total) * double(weights[std::size_t(c)]) / sum;
    out[std::size_t(c)] = Index(std::floor(q));
    rem[std::size_t(c)] = q - std::floor(q);
    assigned += out[std::size_t(c)];
  }
  std::array<int, kNumClasses> order;
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[std::size_t(a)] > rem[std::size_t(b)]; });
  for (int i = 0; assigned < total; ++i, ++assigned) ++out[std::size_t(order[std::size_t(i % kNumClasses)])];
  return out;
}

}  // namespace

Splits make_splits(const FoldPlan& plan, std::span<const int> labels, const SplitSpec& spec, int test_fold) {
  if (test_fold < 0 || test_fold >= plan.k)
    throw ValueError("make_splits: test fold " + std::to_string(test_fold) + " outside 0.." + std::to_string(plan.k - 1));
  if (labels.size() != plan.fold.size()) throw ValueError("make_splits: labels do not match the fold plan");
  const int val_fold = (test_fold + 1) % plan.k;
  Splits out;
  for (std::size_t i = 0; i < plan.fold.size(); ++i) {
    const int f = plan.fold[i];
    if (f == test_fold)
      out.test.push_back(Index(i));
    else if (f == val_fold)
      out.val.push_back(Index(i));
    else
      out.pretrain.push_back(Index(i));
  }
  if (spec.protocol == Protocol::fully_supervised) {
    out.train = out.pretrain;
    return out;
  }

  // Semi-supervised: stratified 10% train and 10% val drawn from the pool.
  std::array<Index, kNumClasses> class_total{};
  for (int l : labels) ++class_total[std::size_t(l)];
  const Index target = Index(std::lround(0.1 * double(labels.size())));
  const auto quota = apportion(target, class_total);
  out.val.clear();
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<Index> pool;
    for (Index i : out.pretrain)
      if (labels[std::size_t(i)] == c) pool.push_back(i);
    const Index q = quota[std::size_t(c)];
    if (Index(pool.size()) < 2 * q)
      throw ValueError("make_splits: class " + std::string(kClassNames[std::size_t(c)]) +
                       " too small for the semi-supervised subsample");
    Stream s = derive_stream(spec.subsample_seed, {0x5e31, std::uint64_t(test_fold), std::uint64_t(c)});
    std::shuffle(pool.begin(), pool.end(), s);
    out.train.insert(out.train.end(), pool.begin(), pool.begin() + q);
    out.val.insert(out.val.end(), pool.begin() + q, pool.begin() + 2 * q);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

}  // namespace dc
