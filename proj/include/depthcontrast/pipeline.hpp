#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthcontrast/contrastive.hpp"
#include "depthcontrast/dataset.hpp"
#include "depthcontrast/metrics.hpp"
#include "depthcontrast/model.hpp"
#include "depthcontrast/optim.hpp"

namespace dc {

enum class TrainMode { pretrain, finetune, linear_eval };

std::string_view mode_name(TrainMode mode);

struct TrainConfig {
  TrainMode mode = TrainMode::pretrain;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 100;
  Index crop_size = 32;
  std::uint64_t seed = 0;
  double tau = 0.1;           // pretrain only
  double dropout_rate = 0.3;  // downstream only

  void validate() const;

  /// Desk-scale presets (CPU minutes on a few hundred 40x40 samples). The
  /// downstream batch of 16 is kept from the full-scale settings.
  static TrainConfig desk(TrainMode mode);
  /// Hyperparameters of the original GPU-scale experiments.
  static TrainConfig faithful(TrainMode mode);
};

nlohmann::ordered_json to_json(const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  std::optional<double> val_macro_f1;
};

struct RunRecord {
  TrainMode mode = TrainMode::pretrain;
  std::uint64_t seed = 0;
  nlohmann::ordered_json config;  // resolved configuration, echoed verbatim
  std::vector<EpochRecord> epochs;
  Index trainable_params = 0;
  Index classifier_params = 0;
  CropStats crops;
  int best_epoch = 0;
  std::optional<MetricsReport> train_report;
  std::optional<MetricsReport> test_report;
  std::optional<bool> encoder_unchanged;  // linear evaluation freeze check
};

/// Tab-separated: '#' header lines with config and seed, one line per epoch
/// (epoch, loss, validation macro F1 or '-'), then a summary line.
std::string format_run_record(const RunRecord& record);

template <typename Scalar>
struct TrainResult {
  ModelParams<Scalar> model;
  RunRecord record;
};

/// Contrastive pretraining of encoder + projector on unlabeled `pool`
/// indices of `data`. Trailing partial batches are dropped.
template <typename Scalar>
TrainResult<Scalar> pretrain(const Dataset& data, std::span<const Index> pool, ModelParams<Scalar> model,
                             const TrainConfig& cfg);

/// End-to-end training of encoder + classifier on (depth, reflectance, depth)
/// inputs; keeps the epoch with the best validation macro F1.
template <typename Scalar>
TrainResult<Scalar> finetune(const Dataset& data, const Splits& splits, ModelParams<Scalar> init,
                             const TrainConfig& cfg);

/// Classifier-only training on a frozen encoder.
template <typename Scalar>
TrainResult<Scalar> linear_eval(const Dataset& data, const Splits& splits, ModelParams<Scalar> init,
                                const TrainConfig& cfg);

/// Predicted classes on center crops of already normalized samples.
template <typename Scalar>
std::vector<int> predict(const ModelParams<Scalar>& model, std::span<const RawSample* const> samples, Index crop_size);

/// The five stratified folds shared by protocol runs and single CLI runs.
FoldPlan protocol_folds(std::span<const int> labels, std::uint64_t seed);

/// Seeds and held-out fold of protocol run `r`; the CLI uses the same values
/// so a single command reproduces one protocol run.
struct RunSeeds {
  std::uint64_t init, pretrain, downstream, subsample;
  int test_fold;
};
RunSeeds protocol_run(std::uint64_t seed, int r, Protocol split);

/// Experiment protocols: fine-tuning (FT) or linear evaluation (LE) with
/// 60/20/20 (full) or 10/10/20 (semi) splits.
struct ProtocolSpec {
  TrainMode downstream = TrainMode::finetune;
  Protocol split = Protocol::fully_supervised;

  static ProtocolSpec parse(std::string_view name);  // FT-full, FT-semi, LE-full, LE-semi
  std::string name() const;
};

inline constexpr std::array<std::string_view, 4> kProtocolNames = {"FT-full", "FT-semi", "LE-full", "LE-semi"};

struct ProtocolConfig {
  ModelConfig model;
  TrainConfig pretrain = TrainConfig::desk(TrainMode::pretrain);
  TrainConfig downstream = TrainConfig::desk(TrainMode::finetune);
  std::uint64_t seed = 0;  // fold plan and per-run seeds derive from it
  int runs = 5;
};

struct ArmResult {
  std::string arm;  // "pretrained" or "random-init"
  std::vector<MetricsReport> runs;
  MetricsReport aggregate;
};

struct ProtocolResult {
  ProtocolSpec spec;
  std::vector<ArmResult> arms;
  double margin() const;  // pretrained mean macro F1 minus random-init
};

/// Optional observer called after every completed run (arm, run index, record).
using RunObserver = std::function<void(const std::string&, int, const RunRecord&)>;

/// Full protocol: rotates the test fold over all five folds (full) or repeats
/// the single-fold semi-supervised split with `runs` subsample seeds.
template <typename Scalar>
ProtocolResult run_protocol(const ProtocolSpec& spec, const Dataset& data, const ProtocolConfig& cfg,
                            const RunObserver& observer = {});

std::string format_protocol(const ProtocolResult& result);

}  // namespace dc
