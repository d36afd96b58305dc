#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "aqcl/model.hpp"
#include "aqcl/random.hpp"

namespace aqcl {

// Positive-view construction for the contrastive branch. Only the augmented
// view is perturbed; the anchor view never passes through these functions.
struct AugmentConfig {
  double history_mask_rate = 0.2;
  double embed_drop_rate = 0.1;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// Drops each history item independently with probability history_mask_rate.
// A non-empty history never comes back empty: the draw is repeated until at
// least one item survives.
Sample augment_history(const Sample& sample, const AugmentConfig& cfg, Rng& rng);

// 0/1 mask, each entry zero with probability embed_drop_rate. Survivors are
// not rescaled.
Tensor embed_dropout_mask(std::size_t rows, std::size_t cols, const AugmentConfig& cfg,
                          Rng& rng);

std::vector<Sample> augment_batch(std::span<const Sample> batch, const AugmentConfig& cfg,
                                  Rng& rng);

}  // namespace aqcl
