#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "depthcontrast/checkpoint.hpp"
#include "depthcontrast/config.hpp"
#include "depthcontrast/grad_suite.hpp"
#include "depthcontrast/pipeline.hpp"

namespace dc::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kDataEnv = "DEPTHCONTRAST_DATA";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_out(const std::string& out, const std::string& command) {
  if (out.empty()) throw UsageError(command + ": --out is required");
}

struct Options {
  std::string config = "desk";
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<int> batch_size;
  int run = 0;
  // gen-data
  std::optional<double> scale;
  std::optional<Index> image_size;
  // downstream
  std::string init = "random";
  bool semi = false;
  // protocol
  std::string name;
  std::optional<int> runs;
  // gradcheck
  std::string grad_scale = "tiny";
  std::string corrupt;
  bool print_config = false;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream f(path, std::ios::binary);
  if (!(f << text) || !f.flush()) throw IoError("cannot write " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string data_dir(const Options& o) {
  if (!o.data.empty()) return o.data;
  if (const char* env = std::getenv(kDataEnv); env && *env) return env;
  throw ConfigError(std::string("no dataset: pass --data or set ") + kDataEnv);
}

// Flags override file values, which override preset defaults.
RunConfig resolve(const Options& o, TrainMode downstream_mode) {
  RunConfig c = load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  c.downstream.mode = downstream_mode;
  TrainConfig& t = downstream_mode == TrainMode::pretrain ? c.pretrain : c.downstream;
  if (downstream_mode == TrainMode::pretrain) c.downstream.mode = TrainMode::finetune;
  if (o.epochs) t.epochs = *o.epochs;
  if (o.learning_rate) t.learning_rate = *o.learning_rate;
  if (o.batch_size) t.batch_size = *o.batch_size;
  if (o.runs) c.runs = *o.runs;
  if (o.semi) c.semi = true;
  if (!o.name.empty()) c.protocol = o.name;
  c.validate();
  return c;
}

std::string header(const RunConfig& c, const std::string& command) {
  return "# command\t" + command + "\n# seed\t" + std::to_string(c.seed) + "\n# config\t" + to_json(c).dump() + "\n";
}

std::string header(const RunConfig& c, const std::string& command, int run, const RunSeeds& seeds) {
  return header(c, command) + "# run\t" + std::to_string(run) + "\n# test_fold\t" + std::to_string(seeds.test_fold) +
         "\n";
}

int print(const RunConfig& c, std::ostream& out) {
  out << to_json(c).dump(2) << '\n';
  return 0;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Protocol split_of(const RunConfig& c) { return c.semi ? Protocol::semi_supervised : Protocol::fully_supervised; }

Splits run_splits(const Dataset& data, const RunConfig& c, const RunSeeds& seeds) {
  const std::vector<int> labels = data.labels();
  return make_splits(protocol_folds(labels, c.seed), labels, SplitSpec{split_of(c), seeds.subsample}, seeds.test_fold);
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Options& o, std::ostream& out) {
  RunConfig c = load_run_config(o.config);
  if (o.scale) c.generator.scale = *o.scale;
  if (o.image_size) c.generator.image_size = *o.image_size;
  const std::uint64_t seed = o.seed.value_or(c.generator_seed);
  c.generator_seed = seed;
  try {
    c.generator.validate();
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
  if (o.print_config) return print(c, out);
  require_out(o.out, "gen-data");
  const DatasetManifest m = generate_synthetic_dataset(c.generator, seed, o.out);
  json meta{{"generator", {{"scale", c.generator.scale}, {"image_size", c.generator.image_size}}}, {"seed", seed}};
  write_text(fs::path(o.out) / "generator.json", meta.dump(2) + "\n");
  const auto counts = m.class_counts();
  out << "class\tcount\n";
  for (int k = 0; k < kNumClasses; ++k) out << kClassNames[std::size_t(k)] << '\t' << counts[std::size_t(k)] << '\n';
  out << "total\t" << m.entries.size() << '\n';
  return kOk;
}

template <typename Scalar>
int cmd_pretrain(const Options& o, std::ostream& out) {
  const RunConfig c = resolve(o, TrainMode::pretrain);
  if (o.print_config) return print(c, out);
  require_out(o.out, "pretrain");
  const Dataset data = load_dataset(data_dir(o));
  const RunSeeds seeds = protocol_run(c.seed, o.run, split_of(c));
  const Splits splits = run_splits(data, c, seeds);
  TrainConfig t = c.pretrain;
  t.seed = seeds.pretrain;
  TrainResult<Scalar> r = pretrain(data, splits.pretrain, init_params<Scalar>(c.model, seeds.init), t);
  r.record.config = to_json(c);
  const json extra{{"run", to_json(c)}, {"mode", "pretrain"}, {"run_seed", c.seed}, {"run_index", o.run},
                   {"test_fold", seeds.test_fold}};
  write_checkpoint(o.out, r.model, extra);
  write_text(o.out + ".record.tsv", header(c, "pretrain", o.run, seeds) + format_run_record(r.record));
  out << "pretrained on " << splits.pretrain.size() << " samples, " << t.epochs << " epochs\n";
  out << "loss first " << num(r.record.epochs.front().loss) << " last " << num(r.record.epochs.back().loss) << '\n';
  out << "checkpoint " << o.out << '\n';
  return kOk;
}

template <typename Scalar>
int cmd_downstream(const Options& o, TrainMode mode, std::ostream& out) {
  const RunConfig c = resolve(o, mode);
  if (o.print_config) return print(c, out);
  require_out(o.out, std::string(mode_name(mode)));
  const Dataset data = load_dataset(data_dir(o));
  const RunSeeds seeds = protocol_run(c.seed, o.run, split_of(c));
  const Splits splits = run_splits(data, c, seeds);

  ModelParams<Scalar> model = init_params<Scalar>(c.model, seeds.init);
  std::string init = "random";
  if (o.init != "random") {
    const Checkpoint<Scalar> ck = read_checkpoint<Scalar>(o.init);
    // The pretraining pool must not contain this run's test fold.
    const json& s = ck.snapshot;
    if (s.contains("test_fold") && s.contains("run_seed") &&
        (s["test_fold"] != seeds.test_fold || s["run_seed"] != c.seed))
      throw ConfigError("checkpoint " + o.init + " was pretrained for seed " + s["run_seed"].dump() + " test fold " +
                        s["test_fold"].dump() + "; this run uses seed " + std::to_string(c.seed) + " test fold " +
                        std::to_string(seeds.test_fold));
    load_weights(model, ck.params);
    init = o.init;
  }
  TrainConfig t = c.downstream;
  t.seed = seeds.downstream;
  TrainResult<Scalar> r = mode == TrainMode::finetune ? finetune(data, splits, model, t) : linear_eval(data, splits, model, t);
  r.record.config = to_json(c);
  r.record.config["init"] = init;

  make_dir(o.out);
  const fs::path dir(o.out);
  const std::string head = header(c, std::string(mode_name(mode)), o.run, seeds) + "# init\t" + init + "\n";
  write_checkpoint(dir / "model.ckpt", r.model,
                   json{{"run", to_json(c)}, {"mode", std::string(mode_name(mode))}, {"init", init},
                        {"run_seed", c.seed}, {"run_index", o.run}, {"test_fold", seeds.test_fold}});
  write_text(dir / "record.tsv", head + format_run_record(r.record));
  const std::string split_name = c.semi ? "10/10/20" : "60/20/20";
  std::string report = head + "# split\t" + split_name + "\n" + format_report(*r.record.train_report, "train") + "\n" +
                       format_report(*r.record.test_report, "test");
  write_text(dir / "report.tsv", report);

  out << format_report(*r.record.test_report, std::string(mode_name(mode)) + " test (" + split_name + ", init " + init + ")");
  out << "best_epoch\t" << r.record.best_epoch << "\nclassifier_params\t" << r.record.classifier_params << '\n';
  if (r.record.encoder_unchanged) {
    out << "encoder_unchanged\t" << (*r.record.encoder_unchanged ? "true" : "false") << '\n';
    if (!*r.record.encoder_unchanged) return kTolerance;
  }
  return kOk;
}

template <typename Scalar>
int cmd_protocol(const Options& o, std::ostream& out) {
  const std::string name = o.name.empty() ? load_run_config(o.config).protocol : o.name;
  const ProtocolSpec spec = ProtocolSpec::parse(name);
  RunConfig c = resolve(o, spec.downstream);
  if (o.print_config) return print(c, out);
  require_out(o.out, "protocol");
  const Dataset data = load_dataset(data_dir(o));
  ProtocolConfig pc{c.model, c.pretrain, c.downstream, c.seed, c.runs};
  std::ostringstream runs;
  const ProtocolResult result = run_protocol<Scalar>(spec, data, pc, [&](const std::string& arm, int r, const RunRecord& rec) {
    runs << "# arm\t" << arm << "\n# run\t" << r << '\n' << format_run_record(rec) << '\n';
  });
  make_dir(o.out);
  const std::string head = header(c, "protocol " + spec.name());
  const std::string table = format_protocol(result);
  write_text(fs::path(o.out) / "protocol.tsv", head + table);
  write_text(fs::path(o.out) / "runs.tsv", head + runs.str());
  out << table;
  return kOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  if (o.grad_scale != "tiny") throw ConfigError("gradcheck --scale must be 'tiny'");
  std::optional<Primitive> corrupt;
  if (!o.corrupt.empty()) {
    for (int k = int(Primitive::matmul); k <= int(Primitive::reduce_sum); ++k)
      if (primitive_name(Primitive(k)) == o.corrupt) corrupt = Primitive(k);
    if (!corrupt) throw ConfigError("unknown primitive '" + o.corrupt + "'");
  }
  const GradSuiteConfig cfg = GradSuiteConfig::tiny();
  const std::uint64_t seed = o.seed.value_or(0);
  const GradSuiteReport r = run_grad_suite(cfg, seed, corrupt);
  out << "# seed\t" << seed << "\n# eps\t" << cfg.eps << "\n# tol\t" << cfg.tol << "\n# floor\t" << cfg.floor << '\n';
  out << format_grad_suite(r);
  const ParamCheck* worst = r.contrastive.worst();
  if (const ParamCheck* w = r.classification.worst(); w && (!worst || w->max_rel_error > worst->max_rel_error)) worst = w;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", worst ? worst->max_rel_error : 0.0);
  out << (r.passed() ? "PASS" : "FAIL") << "\tworst " << (worst ? worst->name : "-") << ' ' << buf << '\n';
  return r.passed() ? kOk : kTolerance;
}

template <typename Fn>
int by_precision(const Options& o, Fn&& fn) {
  const RunConfig c = load_run_config(o.config);
  return c.precision == Precision::float32 ? fn(float{}) : fn(double{});
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Depth Contrast: cross-modal contrastive pretraining for conveyor material classification",
               "depthcontrast"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "preset name (desk, paper-faithful) or JSON config file");
    sub->add_option("--seed", o.seed, "run seed (overrides the config)");
    sub->add_flag("--print-config", o.print_config, "print the resolved config as written to the outputs, then exit");
  };
  auto add_train = [&](CLI::App* sub) {
    add_config(sub);
    sub->add_option("--data", o.data, std::string("dataset directory (default $") + kDataEnv + ")");
    sub->add_option("--out", o.out, "output path");
    sub->add_option("--epochs", o.epochs, "override epochs");
    sub->add_option("--lr", o.learning_rate, "override learning rate");
    sub->add_option("--batch-size", o.batch_size, "override batch size");
    sub->add_option("--run", o.run, "protocol run index (0-4); selects seeds and the held-out fold")
        ->check(CLI::Range(0, 4));
    sub->add_flag("--semi", o.semi, "10/10/20 split instead of 60/20/20 (held-out fold is always 0)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  add_config(gen);
  gen->add_option("--out", o.out, "output directory");
  gen->add_option("--scale", o.scale, "fraction of the reference class counts");
  gen->add_option("--image-size", o.image_size, "plane side length in pixels");

  CLI::App* pre = app.add_subcommand("pretrain", "contrastive pretraining on the unlabeled pool");
  add_train(pre);

  CLI::App* ft = app.add_subcommand("finetune", "train encoder and classifier");
  CLI::App* le = app.add_subcommand("linear-eval", "train the classifier on a frozen encoder");
  for (CLI::App* sub : {ft, le}) {
    add_train(sub);
    sub->add_option("--init", o.init, "pretrained checkpoint, or 'random'");
  }

  CLI::App* proto = app.add_subcommand("protocol", "pretrained vs random-init comparison over all runs");
  add_config(proto);
  proto->add_option("--name", o.name, "FT-full, FT-semi, LE-full or LE-semi (default: the config's protocol.name)");
  proto->add_option("--data", o.data, std::string("dataset directory (default $") + kDataEnv + ")");
  proto->add_option("--out", o.out, "output directory");
  proto->add_option("--runs", o.runs, "number of runs per arm");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of both training losses");
  gc->add_option("--scale", o.grad_scale, "model size (tiny)");
  gc->add_option("--seed", o.seed, "parameter and data seed");
  gc->add_option("--corrupt-backward", o.corrupt)->group("");  // test hook

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (gc->parsed()) return cmd_gradcheck(o, out);
    return by_precision(o, [&](auto scalar) {
      using S = decltype(scalar);
      if (pre->parsed()) return cmd_pretrain<S>(o, out);
      if (ft->parsed()) return cmd_downstream<S>(o, TrainMode::finetune, out);
      if (le->parsed()) return cmd_downstream<S>(o, TrainMode::linear_eval, out);
      return cmd_protocol<S>(o, out);
    });
  } catch (const UsageError& e) {
    err << e.what() << "\nRun with --help for more information.\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const ToleranceError& e) {
    err << "check failed: " << e.what() << '\n';
    return kTolerance;
  } catch (const std::invalid_argument& e) {
    err << "invalid input: " << e.what() << '\n';
    return kConfig;
  }
}

}  // namespace dc::cli
