#include "depthcontrast/model.hpp"

#include <cmath>

#include "depthcontrast/json_fields.hpp"

namespace dc {

using json = nlohmann::ordered_json;

void EncoderConfig::validate() const {
  if (input_channels != 1 && input_channels != 3)
    throw ValueError("encoder.input_channels must be 1 or 3, got " + std::to_string(input_channels));
  if (stages.empty()) throw ValueError("encoder needs at least one stage");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    if (s.out_channels <= 0 || s.kernel_size <= 0 || s.stride <= 0)
      throw ValueError("encoder.stages[" + std::to_string(i) + "] must have positive channels/kernel/stride");
  }
  if (embedding_dim != stages.back().out_channels)
    throw ValueError("encoder.embedding_dim (" + std::to_string(embedding_dim) +
                     ") must equal the last stage's out_channels (" + std::to_string(stages.back().out_channels) + ")");
}

Index EncoderConfig::output_size(Index size) const {
  for (const auto& s : stages) {
    const Index pad = s.kernel_size / 2;
    if (size + 2 * pad < s.kernel_size) return 0;
    size = (size + 2 * pad - s.kernel_size) / s.stride + 1;
  }
  return size;
}

void EncoderConfig::validate_input(Index height, Index width) const {
  if (output_size(height) < 1 || output_size(width) < 1)
    throw ShapeError("encoder: input " + std::to_string(height) + "x" + std::to_string(width) +
                     " too small for the configured stages");
}

ProjectionHeadConfig ProjectionHeadConfig::scaled(double factor) {
  if (!(factor > 0.0)) throw ValueError("projector scale factor must be > 0");
  auto sz = [factor](int full) { return std::max(1, int(std::lround(full * factor))); };
  ProjectionHeadConfig cfg;
  cfg.hidden = {{sz(2048)}, {sz(2048)}, {sz(512)}};
  cfg.output_dim = sz(128);
  return cfg;
}

void ProjectionHeadConfig::validate() const {
  if (hidden.empty()) throw ValueError("projector needs at least one hidden layer");
  for (const auto& h : hidden)
    if (h.size <= 0) throw ValueError("projector hidden sizes must be positive");
  if (output_dim <= 0) throw ValueError("projector.output_dim must be positive");
  if (output_dim > hidden.front().size)
    throw ValueError("projector.output_dim must not exceed the first hidden size");
}

void ClassifierHeadConfig::validate() const {
  if (hidden <= 0) throw ValueError("classifier.hidden must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ValueError("classifier.dropout_rate must lie in [0, 1)");
  if (num_classes < 2) throw ValueError("classifier.num_classes must be >= 2");
}

void ModelConfig::validate() const {
  encoder.validate();
  projector.validate();
  classifier.validate();
}

json to_json(const ModelConfig& cfg) {
  json stages = json::array();
  for (const auto& s : cfg.encoder.stages)
    stages.push_back({{"out_channels", s.out_channels}, {"kernel_size", s.kernel_size}, {"stride", s.stride}});
  json hidden = json::array();
  for (const auto& h : cfg.projector.hidden)
    hidden.push_back({{"size", h.size}, {"relu", h.relu}, {"batch_norm", h.batch_norm}});
  json j;
  j["encoder"] = {{"input_channels", cfg.encoder.input_channels},
                  {"stages", stages},
                  {"embedding_dim", cfg.encoder.embedding_dim}};
  j["projector"] = {{"hidden", hidden}, {"output_dim", cfg.projector.output_dim}};
  j["classifier"] = {{"hidden", cfg.classifier.hidden},
                     {"dropout_rate", cfg.classifier.dropout_rate},
                     {"num_classes", cfg.classifier.num_classes}};
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  JsonFields top(j, "model");
  if (const json* e = top.child("encoder")) {
    JsonFields f(*e, top.path("encoder"));
    f.field("input_channels", cfg.encoder.input_channels);
    f.field("embedding_dim", cfg.encoder.embedding_dim);
    if (const json* st = f.child("stages")) {
      if (!st->is_array()) throw ConfigError(f.path("stages") + ": expected an array");
      cfg.encoder.stages.clear();
      for (std::size_t i = 0; i < st->size(); ++i) {
        JsonFields s((*st)[i], f.path("stages[" + std::to_string(i) + "]"));
        ConvStage stage;
        s.field("out_channels", stage.out_channels);
        s.field("kernel_size", stage.kernel_size);
        s.field("stride", stage.stride);
        s.finish();
        cfg.encoder.stages.push_back(stage);
      }
    }
    f.finish();
  }
  if (const json* p = top.child("projector")) {
    JsonFields f(*p, top.path("projector"));
    f.field("output_dim", cfg.projector.output_dim);
    if (const json* hs = f.child("hidden")) {
      if (!hs->is_array()) throw ConfigError(f.path("hidden") + ": expected an array");
      cfg.projector.hidden.clear();
      for (std::size_t i = 0; i < hs->size(); ++i) {
        HiddenLayer layer;
        if ((*hs)[i].is_number_integer()) {
          layer.size = (*hs)[i].get<int>();
        } else {
          JsonFields h((*hs)[i], f.path("hidden[" + std::to_string(i) + "]"));
          h.field("size", layer.size);
          h.field("relu", layer.relu);
          h.field("batch_norm", layer.batch_norm);
          h.finish();
        }
        cfg.projector.hidden.push_back(layer);
      }
    }
    f.finish();
  }
  if (const json* c = top.child("classifier")) {
    JsonFields f(*c, top.path("classifier"));
    f.field("hidden", cfg.classifier.hidden);
    f.field("dropout_rate", cfg.classifier.dropout_rate);
    f.field("num_classes", cfg.classifier.num_classes);
    f.finish();
  }
  top.finish();
  return cfg;
}

template <typename Scalar>
void ModelParams<Scalar>::add(std::string name, Tensor<Scalar> value, ParamKind kind) {
  if (index_.count(name)) throw ValueError("duplicate parameter name " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), kind});
}

template <typename Scalar>
Tensor<Scalar>& ModelParams<Scalar>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown parameter " + name);
  return entries_[it->second].value;
}

template <typename Scalar>
const Tensor<Scalar>& ModelParams<Scalar>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("unknown parameter " + name);
  return entries_[it->second].value;
}

template <typename Scalar>
Index ModelParams<Scalar>::count(const std::string& prefix) const {
  Index n = 0;
  for (const auto& e : entries_)
    if (e.kind == ParamKind::weight && e.name.rfind(prefix, 0) == 0) n += e.value.size();
  return n;
}

namespace {

template <typename Scalar>
Tensor<Scalar> normal_tensor(Shape shape, double stddev, std::uint64_t seed, std::uint64_t key) {
  Tensor<Scalar> t(std::move(shape));
  Stream stream = derive_stream(seed, {0x1417, key});
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < t.size(); ++i) t[i] = Scalar(dist(stream));
  return t;
}

template <typename Scalar>
void add_batch_norm(ModelParams<Scalar>& p, const std::string& prefix, Index features) {
  p.add(prefix + ".gamma", Tensor<Scalar>::ones({features}), ParamKind::weight);
  p.add(prefix + ".beta", Tensor<Scalar>::zeros({features}), ParamKind::weight);
  p.add(prefix + ".running_mean", Tensor<Scalar>::zeros({features}), ParamKind::buffer);
  p.add(prefix + ".running_var", Tensor<Scalar>::ones({features}), ParamKind::buffer);
}

// He scaling for layers feeding a relu, LeCun scaling for linear outputs.
template <typename Scalar>
void add_linear(ModelParams<Scalar>& p, const std::string& prefix, Index in, Index out, bool feeds_relu,
                std::uint64_t seed, std::uint64_t& key) {
  const double gain = feeds_relu ? 2.0 : 1.0;
  p.add(prefix + ".weight", normal_tensor<Scalar>({in, out}, std::sqrt(gain / double(in)), seed, key++),
        ParamKind::weight);
  p.add(prefix + ".bias", Tensor<Scalar>::zeros({out}), ParamKind::weight);
}

}  // namespace

template <typename Scalar>
ModelParams<Scalar> init_params(const EncoderConfig& encoder, const ProjectionHeadConfig& projector,
                                const ClassifierHeadConfig& classifier, std::uint64_t seed) {
  ModelConfig cfg{encoder, projector, classifier};
  cfg.validate();
  ModelParams<Scalar> p(cfg, seed);
  std::uint64_t key = 0;

  Index channels = encoder.input_channels;
  for (std::size_t i = 0; i < encoder.stages.size(); ++i) {
    const auto& s = encoder.stages[i];
    const std::string prefix = "encoder.stage" + std::to_string(i);
    const Index fan_in = channels * s.kernel_size * s.kernel_size;
    p.add(prefix + ".conv.weight",
          normal_tensor<Scalar>({s.out_channels, channels, s.kernel_size, s.kernel_size},
                                std::sqrt(2.0 / double(fan_in)), seed, key++),
          ParamKind::weight);
    add_batch_norm(p, prefix + ".bn", s.out_channels);
    channels = s.out_channels;
  }

  Index width = encoder.embedding_dim;
  for (std::size_t i = 0; i < projector.hidden.size(); ++i) {
    const auto& h = projector.hidden[i];
    const std::string prefix = "projector.hidden" + std::to_string(i);
    add_linear(p, prefix, width, h.size, h.relu, seed, key);
    if (h.batch_norm) add_batch_norm(p, prefix + ".bn", h.size);
    width = h.size;
  }
  add_linear(p, "projector.out", width, projector.output_dim, false, seed, key);

  add_linear(p, "classifier.hidden", encoder.embedding_dim, classifier.hidden, true, seed, key);
  add_linear(p, "classifier.out", classifier.hidden, classifier.num_classes, false, seed, key);
  return p;
}

template <typename Scalar>
BoundParams<Scalar>::BoundParams(Tape<Scalar>& tape, ModelParams<Scalar>& params, Predicate trainable)
    : tape_(tape), mutable_params_(&params), params_(&params), trainable_(std::move(trainable)) {}

template <typename Scalar>
BoundParams<Scalar>::BoundParams(Tape<Scalar>& tape, const ModelParams<Scalar>& params)
    : tape_(tape), params_(&params), trainable_([](const std::string&) { return false; }) {}

template <typename Scalar>
Var<Scalar> BoundParams<Scalar>::get(const std::string& name) {
  auto it = vars_.find(name);
  if (it != vars_.end()) return it->second;
  const bool grad = params_->kind(name) == ParamKind::weight && trainable_(name);
  Var<Scalar> v = tape_.leaf(params_->at(name), grad);
  vars_.emplace(name, v);
  return v;
}

template <typename Scalar>
void BoundParams<Scalar>::bind(const std::string& name, Var<Scalar> var) {
  if (!params_->contains(name)) throw ValueError("bind: unknown parameter " + name);
  if (var.shape() != params_->at(name).shape())
    throw ShapeError("bind: " + name + " expects " + shape_string(params_->at(name).shape()) + ", got " +
                     shape_string(var.shape()));
  vars_.insert_or_assign(name, var);
}

template <typename Scalar>
BatchNormBuffers<Scalar> BoundParams<Scalar>::buffers(const std::string& prefix, bool training) {
  const std::string mean = prefix + ".running_mean", var = prefix + ".running_var";
  if (mutable_params_) return {&mutable_params_->at(mean), &mutable_params_->at(var)};
  if (training) throw ValueError("training-mode batch_norm requires mutable parameters (" + prefix + ")");
  auto& m = buffer_copies_.try_emplace(mean, params_->at(mean)).first->second;
  auto& v = buffer_copies_.try_emplace(var, params_->at(var)).first->second;
  return {&m, &v};
}

template <typename Scalar>
std::map<std::string, Tensor<Scalar>> BoundParams<Scalar>::gradients() const {
  std::map<std::string, Tensor<Scalar>> out;
  for (const auto& [name, var] : vars_)
    if (tape_.requires_grad(var)) out.emplace(name, tape_.grad(var));
  return out;
}

template <typename Scalar>
Var<Scalar> encoder_forward(BoundParams<Scalar>& bound, Var<Scalar> images, bool training) {
  const EncoderConfig& cfg = bound.config().encoder;
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != cfg.input_channels)
    throw ShapeError("encoder: expected Nx" + std::to_string(cfg.input_channels) + "xHxW images, got " +
                     shape_string(s));
  cfg.validate_input(s[2], s[3]);
  Var<Scalar> x = images;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const std::string prefix = "encoder.stage" + std::to_string(i);
    const auto& st = cfg.stages[i];
    x = conv2d(x, bound.get(prefix + ".conv.weight"), st.stride, st.kernel_size / 2);
    x = batch_norm(x, bound.get(prefix + ".bn.gamma"), bound.get(prefix + ".bn.beta"), training,
                   bound.buffers(prefix + ".bn", training));
    x = relu(x);
  }
  return global_avg_pool(x);
}

template <typename Scalar>
Var<Scalar> projector_forward(BoundParams<Scalar>& bound, Var<Scalar> h, bool training) {
  const ModelConfig& cfg = bound.config();
  if (h.shape().size() != 2 || h.shape()[1] != cfg.encoder.embedding_dim)
    throw ShapeError("projector: expected Nx" + std::to_string(cfg.encoder.embedding_dim) + " input, got " +
                     shape_string(h.shape()));
  Var<Scalar> x = h;
  for (std::size_t i = 0; i < cfg.projector.hidden.size(); ++i) {
    const auto& layer = cfg.projector.hidden[i];
    const std::string prefix = "projector.hidden" + std::to_string(i);
    x = add(matmul(x, bound.get(prefix + ".weight")), bound.get(prefix + ".bias"));
    if (layer.relu) x = relu(x);
    if (layer.batch_norm)
      x = batch_norm(x, bound.get(prefix + ".bn.gamma"), bound.get(prefix + ".bn.beta"), training,
                     bound.buffers(prefix + ".bn", training));
  }
  return add(matmul(x, bound.get("projector.out.weight")), bound.get("projector.out.bias"));
}

template <typename Scalar>
Var<Scalar> classifier_forward(BoundParams<Scalar>& bound, Var<Scalar> h, bool training, Stream* stream) {
  const ModelConfig& cfg = bound.config();
  if (h.shape().size() != 2 || h.shape()[1] != cfg.encoder.embedding_dim)
    throw ShapeError("classifier: expected Nx" + std::to_string(cfg.encoder.embedding_dim) + " input, got " +
                     shape_string(h.shape()));
  Var<Scalar> x = relu(add(matmul(h, bound.get("classifier.hidden.weight")), bound.get("classifier.hidden.bias")));
  x = dropout(x, cfg.classifier.dropout_rate, training, stream);
  return add(matmul(x, bound.get("classifier.out.weight")), bound.get("classifier.out.bias"));
}

template <typename Scalar>
Tensor<Scalar> encoder_forward(const ModelParams<Scalar>& params, const Tensor<Scalar>& images) {
  Tape<Scalar> tape;
  tape.set_recording(false);
  BoundParams<Scalar> bound(tape, params);
  return encoder_forward(bound, tape.leaf(images), false).value();
}

template <typename Scalar>
Tensor<Scalar> projector_forward(const ModelParams<Scalar>& params, const Tensor<Scalar>& h) {
  Tape<Scalar> tape;
  tape.set_recording(false);
  BoundParams<Scalar> bound(tape, params);
  return projector_forward(bound, tape.leaf(h), false).value();
}

template <typename Scalar>
Tensor<Scalar> classifier_forward(const ModelParams<Scalar>& params, const Tensor<Scalar>& h, bool training,
                                  Stream* stream) {
  Tape<Scalar> tape;
  tape.set_recording(false);
  BoundParams<Scalar> bound(tape, params);
  return classifier_forward(bound, tape.leaf(h), training, stream).value();
}

#define DC_INSTANTIATE(S)                                                                                       \
  template class ModelParams<S>;                                                                                \
  template class BoundParams<S>;                                                                                \
  template ModelParams<S> init_params(const EncoderConfig&, const ProjectionHeadConfig&,                        \
                                      const ClassifierHeadConfig&, std::uint64_t);                              \
  template Var<S> encoder_forward(BoundParams<S>&, Var<S>, bool);                                               \
  template Var<S> projector_forward(BoundParams<S>&, Var<S>, bool);                                             \
  template Var<S> classifier_forward(BoundParams<S>&, Var<S>, bool, Stream*);                                   \
  template Tensor<S> encoder_forward(const ModelParams<S>&, const Tensor<S>&);                                  \
  template Tensor<S> projector_forward(const ModelParams<S>&, const Tensor<S>&);                                \
  template Tensor<S> classifier_forward(const ModelParams<S>&, const Tensor<S>&, bool, Stream*);

DC_INSTANTIATE(float)
DC_INSTANTIATE(double)
#undef DC_INSTANTIATE

}  // namespace dc
