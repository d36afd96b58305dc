#include "aqcl/model.hpp"

#include <cmath>

#include "aqcl/error.hpp"

namespace aqcl {

namespace {

constexpr double kProbFloor = 1e-15;

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Tensor t(rows, cols);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data) v = dist(rng);
  return t;
}

Dense init_dense(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Dense{uniform_tensor(fan_in, fan_out, bound, rng), Tensor(1, fan_out)};
}

Var dense(const std::pair<Var, Var>& layer, Var x) {
  return nd::add_bias(nd::matmul(x, layer.first), layer.second);
}

Var dropout(Var x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  const Tensor& v = x.value();
  Tensor mask = nd::zeros_like(v);
  if (rate < 1.0) {
    const double keep = 1.0 / (1.0 - rate);
    for (double& m : mask.data) m = bernoulli(rng, rate) ? 0.0 : keep;
  }
  return nd::mul(x, x.tape->constant(std::move(mask)));
}

}  // namespace

void ModelConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorCode::Config, "model: " + msg); };
  if (embed_dim == 0) bad("embed_dim must be positive");
  if (hidden_dims.empty()) bad("hidden_dims must not be empty");
  for (auto w : hidden_dims)
    if (w == 0) bad("hidden widths must be positive");
  if (projector_hidden.size() != 2) bad("projector needs exactly two hidden widths (three layers)");
  for (auto w : projector_hidden)
    if (w == 0) bad("projector widths must be positive");
  if (z_dim == 0) bad("z_dim must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate <= 1.0)) bad("dropout_rate must lie in [0,1]");
  if (num_users == 0 || num_items == 0) bad("vocabulary sizes must be positive");
  for (auto v : extra_vocab)
    if (v == 0) bad("extra feature vocabularies must be positive");
  if (pooling == Pooling::Attention && attention_hidden == 0) bad("attention_hidden must be positive");
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("embed.user", &user_embeddings);
  out.emplace_back("embed.item", &item_embeddings);
  for (std::size_t i = 0; i < extra_embeddings.size(); ++i)
    out.emplace_back("embed.extra" + std::to_string(i), &extra_embeddings[i]);
  for (std::size_t i = 0; i < interaction.size(); ++i) {
    out.emplace_back("mlp" + std::to_string(i) + ".weight", &interaction[i].weight);
    out.emplace_back("mlp" + std::to_string(i) + ".bias", &interaction[i].bias);
  }
  if (!attention_out.data.empty()) {
    out.emplace_back("attention.hidden.weight", &attention_hidden.weight);
    out.emplace_back("attention.hidden.bias", &attention_hidden.bias);
    out.emplace_back("attention.out", &attention_out);
  }
  out.emplace_back("head.weight", &head.weight);
  out.emplace_back("head.bias", &head.bias);
  for (std::size_t i = 0; i < projector.size(); ++i) {
    out.emplace_back("projector" + std::to_string(i) + ".weight", &projector[i].weight);
    out.emplace_back("projector" + std::to_string(i) + ".bias", &projector[i].bias);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  auto mut = const_cast<ModelParams*>(this)->named();
  return {mut.begin(), mut.end()};
}

ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p;
  const double eb = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  p.user_embeddings = uniform_tensor(cfg.num_users, cfg.embed_dim, eb, rng);
  p.item_embeddings = uniform_tensor(cfg.num_items, cfg.embed_dim, eb, rng);
  for (auto v : cfg.extra_vocab) p.extra_embeddings.push_back(uniform_tensor(v, cfg.embed_dim, eb, rng));
  std::size_t in = cfg.input_dim();
  for (auto w : cfg.hidden_dims) {
    p.interaction.push_back(init_dense(in, w, rng));
    in = w;
  }
  if (cfg.pooling == Pooling::Attention) {
    p.attention_hidden = init_dense(3 * cfg.embed_dim, cfg.attention_hidden, rng);
    p.attention_out = init_dense(cfg.attention_hidden, 1, rng).weight;
  }
  p.head = init_dense(cfg.h_dim(), 1, rng);
  std::size_t pin = cfg.h_dim();
  for (auto w : {cfg.projector_hidden[0], cfg.projector_hidden[1], cfg.z_dim}) {
    p.projector.push_back(init_dense(pin, w, rng));
    pin = w;
  }
  return p;
}

BoundParams bind(nd::Tape& tape, const ModelConfig& cfg, const ModelParams& params,
                 bool trainable) {
  BoundParams b;
  b.cfg = &cfg;
  auto put = [&](const std::string& name, const Tensor& t) {
    Var v = trainable ? tape.param(t) : tape.constant(t);
    b.all.emplace_back(name, v);
    return v;
  };
  for (const auto& [name, t] : params.named()) {
    Var v = put(name, *t);
    (void)v;
  }
  // Re-derive the structured view from the flat list (same order as named()).
  std::size_t k = 0;
  auto next = [&]() { return b.all[k++].second; };
  b.user_embeddings = next();
  b.item_embeddings = next();
  for (std::size_t i = 0; i < params.extra_embeddings.size(); ++i) b.extra_embeddings.push_back(next());
  for (std::size_t i = 0; i < params.interaction.size(); ++i) {
    Var w = next();
    b.interaction.emplace_back(w, next());
  }
  if (!params.attention_out.data.empty()) {
    Var w = next();
    Var bias = next();
    b.attention_hidden = {w, bias};
    b.attention_out = next();
  }
  {
    Var w = next();
    b.head = {w, next()};
  }
  for (std::size_t i = 0; i < params.projector.size(); ++i) {
    Var w = next();
    b.projector.emplace_back(w, next());
  }
  return b;
}

void check_indices(const ModelConfig& cfg, std::span<const Sample> batch) {
  auto oob = [](std::size_t pos, const std::string& field, std::size_t v, std::size_t n) {
    fail(ErrorCode::Index, "sample " + std::to_string(pos) + ": " + field + " " +
                               std::to_string(v) + " out of range [0, " + std::to_string(n) + ")");
  };
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample& s = batch[i];
    if (s.user >= cfg.num_users) oob(i, "user_id", s.user, cfg.num_users);
    if (s.item >= cfg.num_items) oob(i, "item_id", s.item, cfg.num_items);
    for (auto h : s.history)
      if (h >= cfg.num_items) oob(i, "history item", h, cfg.num_items);
    if (s.extras.size() != cfg.extra_vocab.size()) {
      fail(ErrorCode::Index, "sample " + std::to_string(i) + ": expected " +
                                 std::to_string(cfg.extra_vocab.size()) + " extra fields, got " +
                                 std::to_string(s.extras.size()));
    }
    for (std::size_t f = 0; f < s.extras.size(); ++f)
      if (s.extras[f] >= cfg.extra_vocab[f]) oob(i, "extra" + std::to_string(f), s.extras[f], cfg.extra_vocab[f]);
    if (s.label != 0 && s.label != 1) {
      fail(ErrorCode::Index, "sample " + std::to_string(i) + ": label must be 0 or 1");
    }
  }
}

Var attention_pool(const BoundParams& p, Var history_embeds, Var candidate_embeds,
                   const std::vector<std::size_t>& offsets) {
  const ModelConfig& cfg = *p.cfg;
  Var feats = nd::concat_cols({history_embeds, candidate_embeds,
                               nd::mul(history_embeds, candidate_embeds)});
  Var hidden = nd::leaky_relu(dense(p.attention_hidden, feats), cfg.leaky_slope);
  Var logits = nd::matmul(hidden, p.attention_out);
  Var weights = nd::segment_softmax(logits, offsets);
  return nd::segment_sum(nd::mul_col(history_embeds, weights), offsets);
}

std::vector<double> attention_weights(const ModelConfig& cfg, const ModelParams& params,
                                      const Tensor& history_embeds,
                                      const Tensor& candidate_embed) {
  nd::Tape tape;
  BoundParams p = bind(tape, cfg, params, false);
  const std::size_t L = history_embeds.rows();
  if (L == 0) return {};
  Tensor cand(L, cfg.embed_dim);
  for (std::size_t r = 0; r < L; ++r)
    for (std::size_t j = 0; j < cfg.embed_dim; ++j) cand.at(r, j) = candidate_embed.data[j];
  Var hist = tape.constant(history_embeds);
  Var c = tape.constant(std::move(cand));
  Var feats = nd::concat_cols({hist, c, nd::mul(hist, c)});
  Var hidden = nd::leaky_relu(dense(p.attention_hidden, feats), cfg.leaky_slope);
  Var w = nd::segment_softmax(nd::matmul(hidden, p.attention_out), {0, L});
  return w.value().data;
}

ForwardOutput forward(const BoundParams& p, std::span<const Sample> batch,
                      const ForwardOptions& opts) {
  const ModelConfig& cfg = *p.cfg;
  if (batch.empty()) fail(ErrorCode::InvalidArgument, "forward: empty batch");
  check_indices(cfg, batch);
  const bool train = opts.mode == Mode::Train;
  if (train && cfg.dropout_rate > 0.0 && opts.dropout_rng == nullptr) {
    fail(ErrorCode::InvalidArgument, "forward: train mode needs a dropout rng");
  }
  const std::size_t B = batch.size();
  std::vector<std::size_t> users(B), items(B), flat, cand_rep, offsets{0};
  for (std::size_t i = 0; i < B; ++i) {
    users[i] = batch[i].user;
    items[i] = batch[i].item;
    for (auto h : batch[i].history) {
      flat.push_back(h);
      cand_rep.push_back(batch[i].item);
    }
    offsets.push_back(flat.size());
  }
  ForwardOutput out;
  Var user_e = nd::gather_rows(p.user_embeddings, users);
  Var item_e = nd::gather_rows(p.item_embeddings, items);
  Var hist_e = nd::gather_rows(p.item_embeddings, flat);
  out.embeddings = {user_e, item_e, hist_e};
  Var pooled = cfg.pooling == Pooling::Attention
                   ? attention_pool(p, hist_e, nd::gather_rows(p.item_embeddings, cand_rep), offsets)
                   : nd::segment_mean(hist_e, offsets);
  std::vector<Var> parts{user_e, item_e, pooled};
  for (std::size_t f = 0; f < p.extra_embeddings.size(); ++f) {
    std::vector<std::size_t> idx(B);
    for (std::size_t i = 0; i < B; ++i) idx[i] = batch[i].extras[f];
    Var e = nd::gather_rows(p.extra_embeddings[f], std::move(idx));
    out.embeddings.push_back(e);
    parts.push_back(e);
  }
  Var x = nd::concat_cols(parts);
  if (opts.input_mask != nullptr) {
    if (opts.input_mask->shape != x.value().shape) {
      fail(ErrorCode::Shape, "forward: input mask " + opts.input_mask->shape_str() +
                                 " vs embeddings " + x.value().shape_str());
    }
    x = nd::mul(x, x.tape->constant(*opts.input_mask));
  }
  for (const auto& layer : p.interaction) {
    x = nd::leaky_relu(dense(layer, x), cfg.leaky_slope);
    if (train) x = dropout(x, cfg.dropout_rate, *opts.dropout_rng);
  }
  out.h = x;
  // Saturated logits would round to exactly 0 or 1.
  Var y = nd::clamp_min(nd::sigmoid(dense(p.head, x)), kProbFloor);
  out.y_hat = nd::scale(nd::clamp_min(nd::scale(y, -1.0), kProbFloor - 1.0), -1.0);
  return out;
}

Var project(const BoundParams& p, Var h) {
  if (p.projector.size() != 3) fail(ErrorCode::InvalidArgument, "project: model has no projector");
  Var x = h;
  for (std::size_t i = 0; i < 3; ++i) {
    x = dense(p.projector[i], x);
    if (i < 2) x = nd::leaky_relu(x, p.cfg->leaky_slope);
  }
  return x;
}

std::vector<double> predict(const ModelConfig& cfg, const ModelParams& params,
                            std::span<const Sample> samples, std::size_t chunk) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (std::size_t b = 0; b < samples.size(); b += chunk) {
    nd::Tape tape;
    BoundParams p = bind(tape, cfg, params, false);
    auto part = samples.subspan(b, std::min(chunk, samples.size() - b));
    ForwardOutput f = forward(p, part, {});
    const auto& v = f.y_hat.value().data;
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

Tensor latent_codes(const ModelConfig& cfg, const ModelParams& params,
                    std::span<const Sample> samples, std::size_t chunk) {
  Tensor out(samples.size(), cfg.h_dim());
  for (std::size_t b = 0; b < samples.size(); b += chunk) {
    nd::Tape tape;
    BoundParams p = bind(tape, cfg, params, false);
    auto part = samples.subspan(b, std::min(chunk, samples.size() - b));
    ForwardOutput f = forward(p, part, {});
    const auto& v = f.h.value().data;
    std::copy(v.begin(), v.end(), out.data.begin() + static_cast<std::ptrdiff_t>(b * cfg.h_dim()));
  }
  return out;
}

}  // namespace aqcl
