#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "aqcl/checkpoint.hpp"
#include "aqcl/config.hpp"
#include "aqcl/data.hpp"

namespace aqcl {

struct PreparedData {
  Splits splits;
  ActivityBuckets buckets;
  double mean_length = 1.0;

  const std::vector<Sample>& split(const std::string& name) const;
};

// data.path when set, otherwise the seeded generator.
Dataset load_dataset(const RunConfig& cfg);
PreparedData prepare(const Dataset& ds, const RunConfig& cfg);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);
// Digest of the dataset in its canonical text form.
std::string dataset_digest(const Dataset& ds);

// Top-1 codeword of each sample's projected representation, or -1 for
// every sample when the model carries no projector or codebook.
std::vector<long> interest_ids(const TrainedModel& model, const std::vector<Sample>& samples);

// Train + restore with the run configuration, returning a complete checkpoint.
Checkpoint train_checkpoint(const Dataset& ds, const RunConfig& cfg, const TrainHooks& hooks = {},
                            TrainTrace* trace = nullptr);

}  // namespace aqcl
