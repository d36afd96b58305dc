#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "aqcl/alpha.hpp"
#include "aqcl/augment.hpp"
#include "aqcl/codebook.hpp"
#include "aqcl/data.hpp"
#include "aqcl/loss.hpp"
#include "aqcl/metrics.hpp"
#include "aqcl/model.hpp"
#include "aqcl/optim.hpp"

namespace aqcl {

enum class AuxMode { None, Icl, Aqcl };

const char* aux_mode_name(AuxMode mode);
AuxMode parse_aux_mode(const std::string& name);

struct CodebookConfig {
  std::size_t capacity = 128;
  double tau3 = 0.1;
};

struct TrainConfig {
  std::size_t batch_size = 256;
  AdamConfig adam;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  double embed_l2 = 1e-5;
  std::uint64_t seed = 0;
  AuxMode aux = AuxMode::Aqcl;
  bool codebook_updates = true;

  void validate() const;
};

// Everything one training run needs besides the data.
struct TrainSetup {
  ModelConfig model;
  AugmentConfig augment;
  LossConfig loss;
  CodebookConfig codebook;
  SinkhornConfig sinkhorn;
  AlphaSchedule schedule;
  TrainConfig train;

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double logloss = 0.0;
  double aux = 0.0;
  double codebook = 0.0;
  double total = 0.0;
  double mean_alpha = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_logloss = 0.0;  // mean step logloss over the epoch
  double val_logloss = 0.0;
  Measured val_auc;
  std::vector<std::size_t> usage;  // discrete codeword assignments this epoch
};

struct TrainTrace {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
};

struct TrainedModel {
  ModelConfig config;
  ModelParams params;
  std::optional<Codebook> codebook;
};

struct TrainResult {
  TrainedModel model;
  TrainTrace trace;
};

struct TrainHooks {
  // Line-delimited JSON records are appended here as training proceeds, so
  // the trace survives a diverged run.
  std::ostream* trace_out = nullptr;
  std::function<void(const EpochRecord&)> on_epoch_end;
};

// Joint training over logloss + w * auxiliary loss with per-batch codebook
// updates and early stopping on validation logloss. The parameters of the
// best validation epoch are restored before returning. A non-finite loss
// throws ErrorCode::Diverged after the offending step has been traced.
TrainResult train(const TrainSetup& setup, const std::vector<Sample>& train_split,
                  const std::vector<Sample>& val_split, const TrainHooks& hooks = {});

// Eval-mode predictions and per-bucket metrics. Only the backbone is used;
// the projector and codebook play no part.
MetricsReport evaluate(const ModelConfig& cfg, const ModelParams& params,
                       const std::vector<Sample>& split, const ActivityBuckets& buckets,
                       std::string name);

// Per-sample alpha for a batch: the constant override when set, otherwise
// the schedule applied to each sample's history length.
std::vector<double> batch_alphas(const TrainSetup& setup, std::span<const Sample> batch);

}  // namespace aqcl
