#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aqcl/ndcore.hpp"
#include "aqcl/random.hpp"

namespace aqcl {

using nd::Tensor;
using nd::Var;

// One interaction record: user, candidate item, click history (oldest first),
// optional extra categorical fields, and the binary click label.
struct Sample {
  std::size_t user = 0;
  std::size_t item = 0;
  std::vector<std::size_t> history;
  std::vector<std::size_t> extras;
  int label = 0;
  std::int64_t timestamp = 0;

  std::size_t history_length() const { return history.size(); }
  bool operator==(const Sample&) const = default;
};

enum class Pooling { Mean, Attention };

struct ModelConfig {
  std::size_t embed_dim = 16;
  std::vector<std::size_t> hidden_dims{64, 32};
  // The projector always has three layers: the two hidden widths below
  // followed by z_dim.
  std::vector<std::size_t> projector_hidden{32, 32};
  std::size_t z_dim = 32;
  Pooling pooling = Pooling::Mean;
  std::size_t attention_hidden = 16;
  double dropout_rate = 0.2;
  double leaky_slope = 0.01;
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<std::size_t> extra_vocab;

  void validate() const;
  std::size_t input_dim() const { return embed_dim * (3 + extra_vocab.size()); }
  std::size_t h_dim() const { return hidden_dims.back(); }
};

struct Dense {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // 1 x fan_out
};

struct ModelParams {
  Tensor user_embeddings;
  Tensor item_embeddings;
  std::vector<Tensor> extra_embeddings;
  std::vector<Dense> interaction;
  Dense attention_hidden;  // empty unless pooling == Attention
  Tensor attention_out;
  Dense head;
  std::vector<Dense> projector;

  // Stable, ordered names for checkpointing and the optimizer.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  bool has_projector() const { return projector.size() == 3; }
};

ModelParams init_params(const ModelConfig& cfg, Rng& rng);

// Parameters mirrored onto a tape. Trainable binds record gradients;
// frozen binds record constants only.
struct BoundParams {
  const ModelConfig* cfg = nullptr;
  Var user_embeddings;
  Var item_embeddings;
  std::vector<Var> extra_embeddings;
  std::vector<std::pair<Var, Var>> interaction;
  std::pair<Var, Var> attention_hidden;
  Var attention_out;
  std::pair<Var, Var> head;
  std::vector<std::pair<Var, Var>> projector;
  // (name, var) for every bound tensor, in ModelParams::named() order
  std::vector<std::pair<std::string, Var>> all;
};

BoundParams bind(nd::Tape& tape, const ModelConfig& cfg, const ModelParams& params,
                 bool trainable);

enum class Mode { Train, Eval };

struct ForwardOptions {
  Mode mode = Mode::Eval;
  Rng* dropout_rng = nullptr;        // required in train mode when dropout > 0
  const Tensor* input_mask = nullptr;  // B x input_dim, multiplies embeddings
};

struct ForwardOutput {
  Var h;       // B x h_dim latent code
  Var y_hat;   // B x 1 click probability
  // gathered embedding rows, for the embedding L2 penalty
  std::vector<Var> embeddings;
};

// Throws ErrorCode::Index naming the sample position and field.
void check_indices(const ModelConfig& cfg, std::span<const Sample> batch);

ForwardOutput forward(const BoundParams& p, std::span<const Sample> batch,
                      const ForwardOptions& opts);

// Projector g: three dense layers with leaky-ReLU between them.
Var project(const BoundParams& p, Var h);

// DIN-style pooling: a small MLP scores every history row against its
// candidate, the scores are softmax-normalised per sample, and the output is
// the weighted sum. Empty segments pool to zero. candidate_embeds holds the
// candidate embedding repeated once per history row.
Var attention_pool(const BoundParams& p, Var history_embeds, Var candidate_embeds,
                   const std::vector<std::size_t>& offsets);

// Attention weights for a single history, for inspection and tests.
std::vector<double> attention_weights(const ModelConfig& cfg, const ModelParams& params,
                                      const Tensor& history_embeds,
                                      const Tensor& candidate_embed);

// Gradient-free helpers over frozen parameters.
std::vector<double> predict(const ModelConfig& cfg, const ModelParams& params,
                            std::span<const Sample> samples, std::size_t chunk = 1024);
Tensor latent_codes(const ModelConfig& cfg, const ModelParams& params,
                    std::span<const Sample> samples, std::size_t chunk = 1024);

}  // namespace aqcl
