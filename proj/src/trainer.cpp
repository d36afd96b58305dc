#include "aqcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "aqcl/error.hpp"

namespace aqcl {

const char* aux_mode_name(AuxMode mode) {
  switch (mode) {
    case AuxMode::None: return "none";
    case AuxMode::Icl: return "icl";
    case AuxMode::Aqcl: return "aqcl";
  }
  return "?";
}

AuxMode parse_aux_mode(const std::string& name) {
  if (name == "none") return AuxMode::None;
  if (name == "icl") return AuxMode::Icl;
  if (name == "aqcl") return AuxMode::Aqcl;
  fail(ErrorCode::Config, "aux must be one of none, icl, aqcl (got '" + name + "')");
}

void TrainConfig::validate() const {
  if (batch_size < 2) fail(ErrorCode::Config, "train.batch_size must be >= 2");
  if (!(adam.lr > 0.0)) fail(ErrorCode::Config, "train.lr must be positive");
  if (max_epochs == 0) fail(ErrorCode::Config, "train.max_epochs must be >= 1");
  if (!(embed_l2 >= 0.0)) fail(ErrorCode::Config, "train.embed_l2 must be non-negative");
}

void TrainSetup::validate() const {
  model.validate();
  augment.validate();
  sinkhorn.validate();
  train.validate();
  if (codebook.capacity < 2) fail(ErrorCode::Config, "codebook.capacity must be >= 2");
  if (!(codebook.tau3 > 0.0)) fail(ErrorCode::Config, "codebook.tau3 must be positive");
  loss.validate(codebook.capacity);
  if (!loss.alpha_const) schedule.validate();
}

std::vector<double> batch_alphas(const TrainSetup& setup, std::span<const Sample> batch) {
  std::vector<double> a(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    a[i] = setup.loss.alpha_const ? *setup.loss.alpha_const
                                  : setup.schedule(static_cast<double>(batch[i].history_length()));
  }
  return a;
}

namespace {

void emit(std::ostream* out, const nlohmann::json& j) {
  if (!out) return;
  *out << j.dump() << '\n';
  out->flush();
}

nlohmann::json step_json(const StepRecord& s) {
  return {{"type", "step"},      {"step", s.step},         {"epoch", s.epoch},
          {"logloss", s.logloss}, {"aux", s.aux},           {"codebook", s.codebook},
          {"total", s.total},     {"mean_alpha", s.mean_alpha}};
}

nlohmann::json epoch_json(const EpochRecord& e) {
  nlohmann::json j = {{"type", "epoch"},
                      {"epoch", e.epoch},
                      {"train_logloss", e.train_logloss},
                      {"val_logloss", e.val_logloss},
                      {"usage", e.usage}};
  j["val_auc"] = e.val_auc.defined() ? nlohmann::json(*e.val_auc.value) : nlohmann::json(nullptr);
  return j;
}

Var embedding_penalty(const std::vector<Var>& embeddings, std::size_t batch) {
  Var acc = nd::sum(nd::mul(embeddings[0], embeddings[0]));
  for (std::size_t k = 1; k < embeddings.size(); ++k)
    acc = nd::add(acc, nd::sum(nd::mul(embeddings[k], embeddings[k])));
  return nd::scale(acc, 1.0 / static_cast<double>(batch));
}

struct Snapshot {
  ModelParams params;
  std::optional<Codebook> codebook;
};

}  // namespace

TrainResult train(const TrainSetup& setup, const std::vector<Sample>& train_split,
                  const std::vector<Sample>& val_split, const TrainHooks& hooks) {
  setup.validate();
  const TrainConfig& tc = setup.train;
  const ModelConfig& mc = setup.model;
  if (train_split.size() < tc.batch_size) {
    fail(ErrorCode::InvalidArgument, "train: " + std::to_string(train_split.size()) +
                                         " training samples is fewer than one batch of " +
                                         std::to_string(tc.batch_size));
  }
  if (val_split.empty()) fail(ErrorCode::InvalidArgument, "train: empty validation split");
  check_indices(mc, train_split);
  check_indices(mc, val_split);

  Rng init_rng = make_rng(tc.seed, Stream::Init);
  Rng shuffle_rng = make_rng(tc.seed, Stream::Shuffle);
  Rng dropout_rng = make_rng(tc.seed, Stream::Dropout);
  Rng augment_rng = make_rng(tc.seed ^ setup.augment.rng_seed, Stream::Augment);
  Rng codebook_rng = make_rng(tc.seed, Stream::Codebook);

  TrainResult result;
  result.model.config = mc;
  ModelParams& params = result.model.params;
  params = init_params(mc, init_rng);
  const bool aqcl = tc.aux == AuxMode::Aqcl;
  const bool aux = tc.aux != AuxMode::None;
  std::optional<Codebook>& codebook = result.model.codebook;
  if (aqcl) codebook = Codebook::random(setup.codebook.capacity, mc.z_dim, setup.codebook.tau3, codebook_rng);
  const bool update_codebook = aqcl && tc.codebook_updates;

  Adam model_opt(tc.adam);
  Adam codebook_opt(tc.adam);
  auto named = params.named();
  std::vector<Tensor*> param_ptrs;
  for (auto& [name, t] : named) param_ptrs.push_back(t);

  const std::size_t B = tc.batch_size;
  const std::size_t n_batches = train_split.size() / B;
  std::vector<std::size_t> order(train_split.size());
  std::vector<Sample> batch(B);

  double best_val = 0.0;
  std::size_t since_best = 0;
  Snapshot best;
  std::size_t step = 0;
  std::vector<int> val_labels;
  for (const auto& s : val_split) val_labels.push_back(s.label);

  for (std::size_t epoch = 0; epoch < tc.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord er;
    er.epoch = epoch;
    if (codebook) er.usage.assign(codebook->capacity(), 0);
    double ll_sum = 0.0;

    for (std::size_t bi = 0; bi < n_batches; ++bi) {
      for (std::size_t k = 0; k < B; ++k) batch[k] = train_split[order[bi * B + k]];
      std::vector<int> labels(B);
      for (std::size_t k = 0; k < B; ++k) labels[k] = batch[k].label;

      nd::Tape tape;
      BoundParams bp = bind(tape, mc, params, true);
      ForwardOptions anchor_opts{Mode::Train, &dropout_rng, nullptr};
      ForwardOutput anchor = forward(bp, batch, anchor_opts);
      Var lc = logloss(anchor.y_hat, labels);
      Var total = lc;
      if (tc.embed_l2 > 0.0) {
        total = nd::add(total, nd::scale(embedding_penalty(anchor.embeddings, B), tc.embed_l2));
      }

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      Var z, q;
      std::vector<double> alphas;
      if (aux) {
        std::vector<Sample> view = augment_batch(batch, setup.augment, augment_rng);
        Tensor mask = embed_dropout_mask(B, mc.input_dim(), setup.augment, augment_rng);
        ForwardOptions view_opts{Mode::Train, &augment_rng, &mask};
        ForwardOutput positive = forward(bp, view, view_opts);
        z = project(bp, anchor.h);
        Var z_plus = project(bp, positive.h);
        Var aux_loss;
        if (aqcl) {
          q = update_codebook ? tape.param(codebook->codewords) : tape.constant(codebook->codewords);
          alphas = batch_alphas(setup, batch);
          aux_loss = aqcl_loss(z, z_plus, q, alphas, setup.loss);
          rec.mean_alpha = std::accumulate(alphas.begin(), alphas.end(), 0.0) / static_cast<double>(B);
        } else {
          aux_loss = icl_loss(z, z_plus, setup.loss.icl_tau);
        }
        rec.aux = aux_loss.value().item();
        total = total_loss(total, aux_loss, setup.loss.aux_weight);
      }
      rec.logloss = lc.value().item();
      rec.total = total.value().item();

      auto diverged = [&](const char* what) {
        result.trace.steps.push_back(rec);
        emit(hooks.trace_out, step_json(rec));
        emit(hooks.trace_out, {{"type", "diverged"}, {"step", step}, {"epoch", epoch}, {"what", what}});
        fail(ErrorCode::Diverged, std::string("training diverged: non-finite ") + what + " at step " +
                                      std::to_string(step));
      };
      if (!std::isfinite(rec.total) || !std::isfinite(rec.aux)) diverged("loss");

      tape.backward(total);
      std::vector<Tensor> grads;
      grads.reserve(bp.all.size());
      for (auto& [name, v] : bp.all) grads.push_back(tape.grad(v));
      for (const auto& g : grads)
        if (!g.all_finite()) diverged("gradient");

      // Model first, then the codebook, which is assigned with the z values
      // computed before the model update.
      model_opt.step(param_ptrs, grads);

      if (aqcl) {
        Tensor z_values = z.value();
        Tensor assignment = sinkhorn_assign(codebook->codewords, z_values, setup.sinkhorn);
        auto codes = assignment_argmax(assignment);
        for (auto c : codes) ++er.usage[c];
        if (update_codebook) {
          Tensor onehot = discretize(assignment);
          nd::Tape cb_tape;
          Var cq = cb_tape.param(codebook->codewords);
          Var cz = nd::stop_gradient(cb_tape.constant(z_values));
          Var lcb = codebook_loss(cq, cz, onehot, codebook->tau3);
          rec.codebook = lcb.value().item();
          if (!std::isfinite(rec.codebook)) diverged("codebook loss");
          cb_tape.backward(lcb);
          Tensor g = cb_tape.grad(cq);
          const Tensor g_aux = tape.grad(q);
          for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += g_aux.data[i];
          codebook_opt.step({&codebook->codewords}, {g});
          codebook->renormalize();
        }
      }

      ll_sum += rec.logloss;
      result.trace.steps.push_back(rec);
      emit(hooks.trace_out, step_json(rec));
      ++step;
    }

    er.train_logloss = ll_sum / static_cast<double>(n_batches);
    const auto preds = predict(mc, params, val_split);
    er.val_logloss = mean_logloss(preds, val_labels);
    er.val_auc = auc(preds, val_labels);
    result.trace.epochs.push_back(er);
    emit(hooks.trace_out, epoch_json(er));
    if (hooks.on_epoch_end) hooks.on_epoch_end(er);

    if (epoch == 0 || er.val_logloss < best_val) {
      best_val = er.val_logloss;
      best = {params, codebook};
      result.trace.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= tc.patience) {
      break;
    }
  }

  params = std::move(best.params);
  codebook = std::move(best.codebook);
  emit(hooks.trace_out, {{"type", "restore"}, {"best_epoch", result.trace.best_epoch}});
  return result;
}

MetricsReport evaluate(const ModelConfig& cfg, const ModelParams& params,
                       const std::vector<Sample>& split, const ActivityBuckets& buckets,
                       std::string name) {
  check_indices(cfg, split);
  const auto preds = predict(cfg, params, split);
  std::vector<int> labels;
  labels.reserve(split.size());
  for (const auto& s : split) labels.push_back(s.label);
  const auto b = buckets.of(split);
  return bucket_report(preds, labels, b, std::move(name));
}

}  // namespace aqcl
