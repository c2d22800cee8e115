#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "depthcontrast/tape.hpp"

namespace dc {

struct ConvStage {
  int out_channels = 16;
  int kernel_size = 3;
  int stride = 2;
};

/// Convolutional encoder f: stages of conv -> batch_norm -> relu, then global
/// average pooling to an embedding of width `embedding_dim`.
struct EncoderConfig {
  int input_channels = 3;
  std::vector<ConvStage> stages = {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}, {128, 3, 2}};
  int embedding_dim = 128;

  void validate() const;
  /// Spatial size after all stages for an input of `size` pixels per side.
  Index output_size(Index size) const;
  void validate_input(Index height, Index width) const;
};

struct HiddenLayer {
  int size = 128;
  bool relu = true;
  bool batch_norm = true;
};

/// Projection head g: hidden linear layers (each optionally followed by relu
/// and then batch_norm) and a linear output layer.
struct ProjectionHeadConfig {
  std::vector<HiddenLayer> hidden = {{128}, {128}, {32}};
  int output_dim = 8;

  /// 2048-2048-512 -> 128 multiplied by `factor` (factor 1 gives full size).
  static ProjectionHeadConfig scaled(double factor);
  void validate() const;
};

struct ClassifierHeadConfig {
  int hidden = 512;
  double dropout_rate = 0.3;
  int num_classes = 7;

  void validate() const;
};

struct ModelConfig {
  EncoderConfig encoder;
  ProjectionHeadConfig projector;
  ClassifierHeadConfig classifier;

  void validate() const;
};

nlohmann::ordered_json to_json(const ModelConfig& cfg);
/// Strict parse: unknown keys and wrong types are rejected with ConfigError.
ModelConfig model_config_from_json(const nlohmann::ordered_json& j);

enum class ParamKind : std::uint8_t { weight, buffer };

/// Named parameter store for encoder, projector and classifier. Weights are
/// trainable; buffers are batch-norm running statistics.
template <typename Scalar>
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor<Scalar> value;
    ParamKind kind;
  };

  ModelParams() = default;
  ModelParams(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {}

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  void add(std::string name, Tensor<Scalar> value, ParamKind kind);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<Scalar>& at(const std::string& name);
  const Tensor<Scalar>& at(const std::string& name) const;
  ParamKind kind(const std::string& name) const { return entries_.at(index_.at(name)).kind; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  /// Number of scalar weights whose name starts with `prefix` (buffers excluded).
  Index count(const std::string& prefix = "") const;

  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out(config_, seed_);
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<Other>(), e.kind);
    return out;
  }

 private:
  ModelConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename Scalar>
ModelParams<Scalar> init_params(const EncoderConfig& encoder, const ProjectionHeadConfig& projector,
                                const ClassifierHeadConfig& classifier, std::uint64_t seed);

template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  return init_params<Scalar>(cfg.encoder, cfg.projector, cfg.classifier, seed);
}

/// Registers parameters on a tape on first use. Weights matching the
/// trainable predicate become requires_grad leaves. In read-only mode,
/// batch-norm buffers are private copies and training-mode batch_norm is
/// refused.
template <typename Scalar>
class BoundParams {
 public:
  using Predicate = std::function<bool(const std::string&)>;

  BoundParams(Tape<Scalar>& tape, ModelParams<Scalar>& params, Predicate trainable);
  BoundParams(Tape<Scalar>& tape, const ModelParams<Scalar>& params);

  Tape<Scalar>& tape() { return tape_; }
  const ModelConfig& config() const { return params_->config(); }
  Var<Scalar> get(const std::string& name);
  /// Uses an existing variable for `name` instead of registering a new leaf.
  void bind(const std::string& name, Var<Scalar> var);
  BatchNormBuffers<Scalar> buffers(const std::string& prefix, bool training);

  /// Accumulated gradients of every trainable weight used so far.
  std::map<std::string, Tensor<Scalar>> gradients() const;

 private:
  Tape<Scalar>& tape_;
  ModelParams<Scalar>* mutable_params_ = nullptr;
  const ModelParams<Scalar>* params_;
  Predicate trainable_;
  std::unordered_map<std::string, Var<Scalar>> vars_;
  std::map<std::string, Tensor<Scalar>> buffer_copies_;
};

template <typename Scalar>
Var<Scalar> encoder_forward(BoundParams<Scalar>& bound, Var<Scalar> images, bool training);
template <typename Scalar>
Var<Scalar> projector_forward(BoundParams<Scalar>& bound, Var<Scalar> h, bool training);
template <typename Scalar>
Var<Scalar> classifier_forward(BoundParams<Scalar>& bound, Var<Scalar> h, bool training, Stream* stream);

/// Eval-mode conveniences on concrete tensors.
template <typename Scalar>
Tensor<Scalar> encoder_forward(const ModelParams<Scalar>& params, const Tensor<Scalar>& images);
template <typename Scalar>
Tensor<Scalar> projector_forward(const ModelParams<Scalar>& params, const Tensor<Scalar>& h);
/// `stream` is only consulted when training is set (dropout active).
template <typename Scalar>
Tensor<Scalar> classifier_forward(const ModelParams<Scalar>& params, const Tensor<Scalar>& h, bool training,
                                  Stream* stream = nullptr);

inline bool is_encoder_param(const std::string& name) { return name.rfind("encoder.", 0) == 0; }
inline bool is_projector_param(const std::string& name) { return name.rfind("projector.", 0) == 0; }
inline bool is_classifier_param(const std::string& name) { return name.rfind("classifier.", 0) == 0; }

}  // namespace dc
