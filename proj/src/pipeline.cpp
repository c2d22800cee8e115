#include "depthcontrast/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace dc {

using json = nlohmann::ordered_json;

std::string_view mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::pretrain: return "pretrain";
    case TrainMode::finetune: return "finetune";
    case TrainMode::linear_eval: return "linear_eval";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (mode == TrainMode::pretrain && batch_size < 2)
    throw ConfigError("pretraining batch_size must be >= 2 (a single pair has no negatives)");
  if (crop_size < 1) throw ConfigError("crop_size must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
}

TrainConfig TrainConfig::desk(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.crop_size = 32;
  c.learning_rate = 1e-3;
  if (mode == TrainMode::pretrain) {
    c.batch_size = 32;
    c.epochs = 100;
  } else {
    c.batch_size = 16;
    c.epochs = 50;
  }
  return c;
}

TrainConfig TrainConfig::faithful(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.crop_size = 224;
  if (mode == TrainMode::pretrain) {
    c.learning_rate = 5e-5;
    c.batch_size = 256;
    c.epochs = 100;
  } else {
    c.learning_rate = 1e-5;
    c.batch_size = 16;
    c.epochs = 50;
  }
  return c;
}

json to_json(const TrainConfig& cfg) {
  json j;
  j["mode"] = std::string(mode_name(cfg.mode));
  j["learning_rate"] = cfg.learning_rate;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["crop_size"] = cfg.crop_size;
  j["seed"] = cfg.seed;
  if (cfg.mode == TrainMode::pretrain)
    j["tau"] = cfg.tau;
  else
    j["dropout_rate"] = cfg.dropout_rate;
  return j;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string format_run_record(const RunRecord& r) {
  std::ostringstream out;
  out << "# mode\t" << mode_name(r.mode) << '\n';
  out << "# seed\t" << r.seed << '\n';
  out << "# config\t" << r.config.dump() << '\n';
  out << "epoch\tloss\tval_macro_f1\n";
  for (const auto& e : r.epochs)
    out << e.epoch << '\t' << num(e.loss) << '\t' << (e.val_macro_f1 ? num(*e.val_macro_f1) : "-") << '\n';
  out << "# summary\ttrainable_params=" << r.trainable_params;
  if (r.mode != TrainMode::pretrain) out << "\tclassifier_params=" << r.classifier_params << "\tbest_epoch=" << r.best_epoch;
  out << "\tcrops=" << r.crops.crops << "\tpadded=" << r.crops.padded;
  if (r.train_report) out << "\ttrain_macro_f1=" << num(r.train_report->macro_f1);
  if (r.test_report) out << "\ttest_macro_f1=" << num(r.test_report->macro_f1);
  if (r.encoder_unchanged) out << "\tencoder_unchanged=" << (*r.encoder_unchanged ? "true" : "false");
  out << '\n';
  return out.str();
}

namespace {

// Standardized copies of the samples a run touches, keyed by dataset index.
class NormalizedView {
 public:
  NormalizedView(const Dataset& data, std::span<const Index> stats_from, std::initializer_list<std::span<const Index>> use)
      : stats_(compute_normalization(data.select(stats_from))) {
    for (auto ids : use)
      for (Index i : ids)
        if (!samples_.count(i)) samples_.emplace(i, normalize_sample(data.samples.at(std::size_t(i)), stats_));
  }
  const RawSample& operator[](Index i) const { return samples_.at(i); }
  const NormalizationStats& stats() const { return stats_; }

 private:
  NormalizationStats stats_;
  std::unordered_map<Index, RawSample> samples_;
};

template <typename Scalar>
void copy_into(Tensor<Scalar>& batch, Index slot, const Tensor<double>& view) {
  const Index n = view.size();
  batch.values().segment(slot * n, n) = view.values().template cast<Scalar>();
}

template <typename Scalar>
ModelParams<Scalar> with_dropout(const ModelParams<Scalar>& p, double rate) {
  ModelConfig c = p.config();
  c.classifier.dropout_rate = rate;
  c.validate();
  ModelParams<Scalar> out(c, p.seed());
  for (const auto& e : p.entries()) out.add(e.name, e.value, e.kind);
  return out;
}

std::vector<Index> shuffled(std::span<const Index> ids, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<Index> order(ids.begin(), ids.end());
  Stream s = derive_stream(seed, {0x5bf1, epoch});
  std::shuffle(order.begin(), order.end(), s);
  return order;
}

void require_disjoint(std::span<const Index> a, std::span<const Index> test, const char* what) {
  std::set<Index> t(test.begin(), test.end());
  for (Index i : a)
    if (t.count(i)) throw ValueError(std::string("test sample ") + std::to_string(i) + " appears in the " + what + " set");
}

[[noreturn]] void abort_batch(const NumericalError& e, int epoch, std::size_t batch) {
  throw NumericalError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) + ": " + e.what());
}

template <typename Scalar>
Tensor<Scalar> composed_batch(const NormalizedView& view, std::span<const Index> ids, Index crop,
                              const std::function<CropRect(Index, const RawSample&)>& rect_of) {
  Tensor<Scalar> x({Index(ids.size()), 3, crop, crop});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const RawSample& s = view[ids[i]];
    copy_into(x, Index(i), compose_crop(s, rect_of(ids[i], s)));
  }
  return x;
}

template <typename Scalar>
std::vector<int> predict_view(const ModelParams<Scalar>& model, const NormalizedView& view, std::span<const Index> ids,
                              Index crop) {
  std::vector<const RawSample*> ptrs;
  for (Index i : ids) ptrs.push_back(&view[i]);
  return predict(model, std::span<const RawSample* const>(ptrs), crop);
}

MetricsReport report_for(std::span<const int> pred, const Dataset& data, std::span<const Index> ids) {
  std::vector<int> truth;
  for (Index i : ids) truth.push_back(*data.samples.at(std::size_t(i)).label);
  return prf1(confusion(pred, truth));
}

void check_finite_loss(double loss, int epoch, std::size_t batch) {
  if (!std::isfinite(loss))
    throw NumericalError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) + ": non-finite loss");
}

}  // namespace

template <typename Scalar>
std::vector<int> predict(const ModelParams<Scalar>& model, std::span<const RawSample* const> samples, Index crop) {
  constexpr std::size_t kChunk = 64;
  std::vector<int> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, samples.size() - start);
    Tensor<Scalar> x({Index(n), 3, crop, crop});
    for (std::size_t i = 0; i < n; ++i) {
      const RawSample& s = *samples[start + i];
      copy_into(x, Index(i), compose_crop(s, center_crop_rect(s.depth.rows(), s.depth.cols(), crop, crop)));
    }
    const Tensor<Scalar> logits = classifier_forward(model, encoder_forward(model, x), false);
    auto m = logits.matrix();
    for (Index r = 0; r < m.rows(); ++r) {
      Index best;
      m.row(r).maxCoeff(&best);
      out.push_back(int(best));
    }
  }
  return out;
}

template <typename Scalar>
TrainResult<Scalar> pretrain(const Dataset& data, std::span<const Index> pool, ModelParams<Scalar> model,
                             const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.mode != TrainMode::pretrain) throw ConfigError("pretrain: config mode is " + std::string(mode_name(cfg.mode)));
  if (pool.empty()) throw ValueError("pretrain: empty sample pool");
  const std::size_t batch = std::size_t(cfg.batch_size);
  if (pool.size() < batch)
    throw ValueError("pretrain: pool of " + std::to_string(pool.size()) + " samples is smaller than one batch of " +
                     std::to_string(batch));

  const NormalizedView view(data, pool, {pool});
  const Index channels = model.config().encoder.input_channels, crop = cfg.crop_size;
  const auto trainable = [](const std::string& n) { return is_encoder_param(n) || is_projector_param(n); };
  AdamState<Scalar> adam;

  RunRecord rec;
  rec.mode = cfg.mode;
  rec.seed = cfg.seed;
  rec.config = {{"train", to_json(cfg)}, {"model", to_json(model.config())}};
  rec.trainable_params = model.count("encoder.") + model.count("projector.");
  const std::size_t batches = pool.size() / batch;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::vector<Index> order = shuffled(pool, cfg.seed, std::uint64_t(epoch));
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const Index n = Index(batch);
      Tensor<Scalar> x({2 * n, channels, crop, crop});
      for (Index i = 0; i < n; ++i) {
        const Index id = order[b * batch + std::size_t(i)];
        Stream s = derive_stream(cfg.seed, {std::uint64_t(epoch), std::uint64_t(id)});
        const AugmentedPair pair = synchronized_random_crop(view[id], crop, crop, channels, s, &rec.crops);
        copy_into(x, i, pair.view_ref);
        copy_into(x, n + i, pair.view_dep);
      }
      try {
        Tape<Scalar> tape;
        BoundParams<Scalar> bound(tape, model, trainable);
        const Var<Scalar> h = encoder_forward(bound, tape.leaf(std::move(x)), true);
        const NtXentTerms<Scalar> terms = nt_xent_loss(projector_forward(bound, h, true), ContrastiveConfig{cfg.tau});
        tape.backward(terms.loss);
        const double loss = double(terms.loss.value().item());
        check_finite_loss(loss, epoch, b);
        adam_step(model, bound.gradients(), adam, cfg.learning_rate);
        loss_sum += loss;
      } catch (const NumericalError& e) {
        abort_batch(e, epoch, b);
      }
    }
    rec.epochs.push_back({epoch, loss_sum / double(batches), std::nullopt});
  }
  return {std::move(model), std::move(rec)};
}

namespace {

template <typename Scalar>
TrainResult<Scalar> downstream(const Dataset& data, const Splits& splits, ModelParams<Scalar> init,
                               const TrainConfig& cfg, TrainMode mode) {
  cfg.validate();
  if (cfg.mode != mode)
    throw ConfigError(std::string(mode_name(mode)) + ": config mode is " + std::string(mode_name(cfg.mode)));
  if (splits.train.empty()) throw ValueError(std::string(mode_name(mode)) + ": empty train split");
  if (splits.val.empty()) throw ValueError(std::string(mode_name(mode)) + ": empty validation split");
  require_disjoint(splits.train, splits.test, "train");
  require_disjoint(splits.val, splits.test, "validation");
  for (Index i : splits.train)
    if (!data.samples.at(std::size_t(i)).label) throw ValueError("train sample " + std::to_string(i) + " has no label");

  const bool frozen = mode == TrainMode::linear_eval;
  ModelParams<Scalar> model = with_dropout(init, cfg.dropout_rate);
  const NormalizedView view(data, splits.train, {splits.train, splits.val, splits.test});
  const Index crop = cfg.crop_size;
  const int classes = model.config().classifier.num_classes;
  const std::function<bool(const std::string&)> trainable =
      frozen ? std::function<bool(const std::string&)>(is_classifier_param)
             : [](const std::string& n) { return is_encoder_param(n) || is_classifier_param(n); };

  RunRecord rec;
  rec.mode = mode;
  rec.seed = cfg.seed;
  rec.config = {{"train", to_json(cfg)}, {"model", to_json(model.config())}};
  rec.classifier_params = model.count("classifier.");
  rec.trainable_params = rec.classifier_params + (frozen ? 0 : model.count("encoder."));

  AdamState<Scalar> adam;
  ModelParams<Scalar> best = model;
  double best_f1 = -1.0;
  const std::size_t batch = std::size_t(cfg.batch_size);
  const std::size_t batches = (splits.train.size() + batch - 1) / batch;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::vector<Index> order = shuffled(splits.train, cfg.seed, std::uint64_t(epoch));
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::span<const Index> ids(order.data() + b * batch, std::min(batch, order.size() - b * batch));
      const Index n = Index(ids.size());
      Tensor<Scalar> x = composed_batch<Scalar>(view, ids, crop, [&](Index id, const RawSample& s) {
        Stream st = derive_stream(cfg.seed, {std::uint64_t(epoch), std::uint64_t(id), 0xc409});
        ++rec.crops.crops;
        if (crop > s.depth.rows() || crop > s.depth.cols()) ++rec.crops.padded;
        return draw_crop_rect(s.depth.rows(), s.depth.cols(), crop, crop, st);
      });
      Tensor<Scalar> onehot({n, Index(classes)});
      for (Index i = 0; i < n; ++i) onehot.matrix()(i, *data.samples[std::size_t(ids[std::size_t(i)])].label) = Scalar(1);
      try {
        Tape<Scalar> tape;
        BoundParams<Scalar> bound(tape, model, trainable);
        Stream drop = derive_stream(cfg.seed, {std::uint64_t(epoch), b, 0xd409});
        const Var<Scalar> h = encoder_forward(bound, tape.leaf(std::move(x)), !frozen);
        const Var<Scalar> logits = classifier_forward(bound, h, true, &drop);
        const Var<Scalar> loss = scale(reduce_sum(log_softmax(logits) * tape.leaf(std::move(onehot))), -1.0 / double(n));
        tape.backward(loss);
        const double value = double(loss.value().item());
        check_finite_loss(value, epoch, b);
        adam_step(model, bound.gradients(), adam, cfg.learning_rate);
        loss_sum += value;
      } catch (const NumericalError& e) {
        abort_batch(e, epoch, b);
      }
    }
    const std::vector<int> val_pred = predict_view(model, view, splits.val, crop);
    const double f1 = report_for(val_pred, data, splits.val).macro_f1;
    rec.epochs.push_back({epoch, loss_sum / double(batches), f1});
    if (f1 > best_f1) {
      best_f1 = f1;
      best = model;
      rec.best_epoch = epoch;
    }
  }

  if (frozen) {
    bool same = true;
    for (const auto& e : init.entries())
      if (is_encoder_param(e.name)) same = same && bitwise_equal(e.value, best.at(e.name));
    rec.encoder_unchanged = same;
  }
  rec.train_report = report_for(predict_view(best, view, splits.train, crop), data, splits.train);
  if (!splits.test.empty()) rec.test_report = report_for(predict_view(best, view, splits.test, crop), data, splits.test);
  return {std::move(best), std::move(rec)};
}

}  // namespace

template <typename Scalar>
TrainResult<Scalar> finetune(const Dataset& data, const Splits& splits, ModelParams<Scalar> init,
                             const TrainConfig& cfg) {
  return downstream(data, splits, std::move(init), cfg, TrainMode::finetune);
}

template <typename Scalar>
TrainResult<Scalar> linear_eval(const Dataset& data, const Splits& splits, ModelParams<Scalar> init,
                                const TrainConfig& cfg) {
  return downstream(data, splits, std::move(init), cfg, TrainMode::linear_eval);
}

FoldPlan protocol_folds(std::span<const int> labels, std::uint64_t seed) {
  return stratified_folds(labels, 5, derive_seed(seed, {0xf01d}));
}

RunSeeds protocol_run(std::uint64_t seed, int r, Protocol split) {
  const auto ur = std::uint64_t(r);
  return {derive_seed(seed, {0x1417, ur}), derive_seed(seed, {0x9e7, ur}), derive_seed(seed, {0xd0, ur}),
          derive_seed(seed, {0x5e31, ur}), split == Protocol::fully_supervised ? r : 0};
}

ProtocolSpec ProtocolSpec::parse(std::string_view name) {
  if (name == "FT-full") return {TrainMode::finetune, Protocol::fully_supervised};
  if (name == "FT-semi") return {TrainMode::finetune, Protocol::semi_supervised};
  if (name == "LE-full") return {TrainMode::linear_eval, Protocol::fully_supervised};
  if (name == "LE-semi") return {TrainMode::linear_eval, Protocol::semi_supervised};
  std::string valid;
  for (auto n : kProtocolNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
  throw ConfigError("unknown protocol '" + std::string(name) + "' (valid: " + valid + ")");
}

std::string ProtocolSpec::name() const {
  return std::string(downstream == TrainMode::finetune ? "FT" : "LE") +
         (split == Protocol::fully_supervised ? "-full" : "-semi");
}

double ProtocolResult::margin() const {
  double pre = 0.0, rnd = 0.0;
  for (const auto& a : arms) (a.arm == "pretrained" ? pre : rnd) = a.aggregate.macro_f1_spread->mean;
  return pre - rnd;
}

template <typename Scalar>
ProtocolResult run_protocol(const ProtocolSpec& spec, const Dataset& data, const ProtocolConfig& cfg,
                            const RunObserver& observer) {
  if (cfg.runs < 1) throw ConfigError("protocol runs must be >= 1");
  const std::vector<int> labels = data.labels();
  const FoldPlan plan = protocol_folds(labels, cfg.seed);
  if (spec.split == Protocol::fully_supervised && cfg.runs > plan.k)
    throw ConfigError("fully supervised protocol has only " + std::to_string(plan.k) + " fold rotations");

  ProtocolResult result{spec, {{"pretrained", {}, {}}, {"random-init", {}, {}}}};
  for (int r = 0; r < cfg.runs; ++r) {
    const RunSeeds seeds = protocol_run(cfg.seed, r, spec.split);
    const Splits splits = make_splits(plan, labels, SplitSpec{spec.split, seeds.subsample}, seeds.test_fold);
    require_disjoint(splits.pretrain, splits.test, "pretraining");

    const ModelParams<Scalar> init = init_params<Scalar>(cfg.model, seeds.init);
    TrainConfig pre_cfg = cfg.pretrain;
    pre_cfg.seed = seeds.pretrain;
    TrainConfig down_cfg = cfg.downstream;
    down_cfg.mode = spec.downstream;
    down_cfg.seed = seeds.downstream;

    for (auto& arm : result.arms) {
      ModelParams<Scalar> start = init;
      if (arm.arm == "pretrained") {
        TrainResult<Scalar> pre = pretrain(data, splits.pretrain, init, pre_cfg);
        if (observer) observer(arm.arm, r, pre.record);
        start = std::move(pre.model);
      }
      TrainResult<Scalar> out = spec.downstream == TrainMode::finetune ? finetune(data, splits, start, down_cfg)
                                                                        : linear_eval(data, splits, start, down_cfg);
      if (out.record.encoder_unchanged && !*out.record.encoder_unchanged)
        throw ToleranceError("linear evaluation modified the frozen encoder");
      if (observer) observer(arm.arm, r, out.record);
      arm.runs.push_back(*out.record.test_report);
    }
  }
  for (auto& arm : result.arms) arm.aggregate = aggregate_folds(arm.runs);
  return result;
}

std::string format_protocol(const ProtocolResult& result) {
  std::ostringstream out;
  const bool full = result.spec.split == Protocol::fully_supervised;
  out << "# experiment\t" << result.spec.name() << '\n';
  out << "# split\t" << (full ? "60/20/20" : "10/10/20") << " (train/val/test %)\n";
  out << "# input\t" << (result.spec.downstream == TrainMode::finetune ? "fine-tune" : "linear evaluation")
      << ", depth-reflectance-depth channels\n";
  out << "arm\trun\tmacro_f1\n";
  for (const auto& a : result.arms)
    for (std::size_t r = 0; r < a.runs.size(); ++r) out << a.arm << '\t' << r << '\t' << num(a.runs[r].macro_f1) << '\n';
  out << "arm\tmean_macro_f1\tstd_macro_f1\n";
  for (const auto& a : result.arms)
    out << a.arm << '\t' << num(a.aggregate.macro_f1_spread->mean) << '\t' << num(a.aggregate.macro_f1_spread->std)
        << '\n';
  for (const auto& a : result.arms) out << '\n' << format_report(a.aggregate, result.spec.name() + " " + a.arm);
  const double m = result.margin();
  out << "\n# ordering\tpretrained " << (m >= 0.0 ? ">=" : "<") << " random-init\tmargin=" << num(m) << '\n';
  return out.str();
}

#define DC_INSTANTIATE(S)                                                                                      \
  template std::vector<int> predict(const ModelParams<S>&, std::span<const RawSample* const>, Index);         \
  template TrainResult<S> pretrain(const Dataset&, std::span<const Index>, ModelParams<S>, const TrainConfig&); \
  template TrainResult<S> finetune(const Dataset&, const Splits&, ModelParams<S>, const TrainConfig&);         \
  template TrainResult<S> linear_eval(const Dataset&, const Splits&, ModelParams<S>, const TrainConfig&);      \
  template ProtocolResult run_protocol<S>(const ProtocolSpec&, const Dataset&, const ProtocolConfig&, const RunObserver&);

DC_INSTANTIATE(float)
DC_INSTANTIATE(double)

}  // namespace dc
