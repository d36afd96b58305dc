#include "aqcl/augment.hpp"

#include "aqcl/error.hpp"

namespace aqcl {

void AugmentConfig::validate() const {
  if (!(history_mask_rate >= 0.0 && history_mask_rate <= 1.0))
    fail(ErrorCode::Config, "augment: history_mask_rate must lie in [0,1]");
  if (!(embed_drop_rate >= 0.0 && embed_drop_rate <= 1.0))
    fail(ErrorCode::Config, "augment: embed_drop_rate must lie in [0,1]");
}

Sample augment_history(const Sample& sample, const AugmentConfig& cfg, Rng& rng) {
  Sample out = sample;
  if (sample.history.empty() || cfg.history_mask_rate <= 0.0) return out;
  // With rate 1 every draw empties the history; keep the draw count bounded by
  // falling back to a single uniformly chosen item.
  if (cfg.history_mask_rate >= 1.0) {
    std::uniform_int_distribution<std::size_t> pick(0, sample.history.size() - 1);
    out.history = {sample.history[pick(rng)]};
    return out;
  }
  do {
    out.history.clear();
    for (auto item : sample.history)
      if (!bernoulli(rng, cfg.history_mask_rate)) out.history.push_back(item);
  } while (out.history.empty());
  return out;
}

Tensor embed_dropout_mask(std::size_t rows, std::size_t cols, const AugmentConfig& cfg,
                          Rng& rng) {
  Tensor mask(rows, cols, 1.0);
  if (cfg.embed_drop_rate <= 0.0) return mask;
  for (double& m : mask.data) m = bernoulli(rng, cfg.embed_drop_rate) ? 0.0 : 1.0;
  return mask;
}

std::vector<Sample> augment_batch(std::span<const Sample> batch, const AugmentConfig& cfg,
                                  Rng& rng) {
  std::vector<Sample> out;
  out.reserve(batch.size());
  for (const Sample& s : batch) out.push_back(augment_history(s, cfg, rng));
  return out;
}

}  // namespace aqcl
