#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aqcl/data.hpp"
#include "aqcl/trainer.hpp"

namespace aqcl {

struct DataConfig {
  // Dataset file in the delimited format. Empty means "generate in memory
  // from the generator section".
  std::string path;
  SchemaConfig schema;
  // Defaults to the generator's validation/test window starts.
  std::optional<SplitBoundaries> split;
  // Fixed history-length cutoffs (non-active max, slightly-active max)
  // instead of the 60th/90th percentile.
  std::optional<std::array<std::size_t, 2>> bucket_thresholds;
};

struct SearchConfig {
  std::vector<double> w1_grid{0.25, 0.5, 1.0, 2.0, 4.0};
  std::vector<double> w2_grid{0.5, 1.0, 2.0};

  void validate() const;
};

// The single structured configuration behind every command. One seed drives
// generation, initialisation, shuffling, dropout, augmentation and the
// codebook through independent streams.
struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  GeneratorConfig generator;
  ModelConfig model;
  AugmentConfig augment;
  LossConfig loss;
  CodebookConfig codebook;
  SinkhornConfig sinkhorn;
  double alpha_w1 = 1.0;
  double alpha_w2 = 1.0;
  TrainConfig train;
  SearchConfig search;

  void validate() const;
  SplitBoundaries boundaries() const;
  GeneratorConfig seeded_generator() const;
  // Training setup for a concrete dataset; vocabulary sizes come from the
  // data and the schedule's mean length from the training split.
  TrainSetup setup(const Dataset& ds, double mean_length) const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Strict: unknown keys and ill-typed values are Config errors naming the key.
RunConfig config_from_json(const nlohmann::json& j);

// Objects merge key by key, everything else is replaced by the overlay.
nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& overlay);

// default < file < overrides, returned fully materialised and validated.
nlohmann::json resolve_config(const nlohmann::json& file, const nlohmann::json& overrides);

nlohmann::json model_to_json(const ModelConfig& m, bool with_vocab);
ModelConfig model_from_json(const nlohmann::json& j, bool with_vocab);

}  // namespace aqcl
