#include <doctest.h>

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "aqcl/error.hpp"
#include "aqcl/pipeline.hpp"
#include "aqcl/trainer.hpp"
#include "testutil.hpp"

using namespace aqcl;

namespace {

struct Fixture {
  RunConfig cfg;
  Dataset ds;
  PreparedData prep;

  explicit Fixture(std::size_t users = 300) {
    cfg.seed = 5;
    cfg.generator = testutil::small_generator(5, users);
    cfg.model.embed_dim = 4;
    cfg.model.hidden_dims = {8, 6};
    cfg.model.projector_hidden = {8, 8};
    cfg.model.z_dim = 6;
    cfg.codebook.capacity = 8;
    cfg.train.batch_size = 64;
    cfg.train.max_epochs = 3;
    ds = load_dataset(cfg);
    prep = prepare(ds, cfg);
  }

  TrainSetup setup() const { return cfg.setup(ds, prep.mean_length); }
  TrainResult run(const TrainSetup& s, const TrainHooks& hooks = {}) const {
    return train(s, prep.splits.train, prep.splits.val, hooks);
  }
};

bool same_params(const ModelParams& a, const ModelParams& b) {
  auto x = const_cast<ModelParams&>(a).named();
  auto y = const_cast<ModelParams&>(b).named();
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i].first != y[i].first || !(*x[i].second == *y[i].second)) return false;
  return true;
}

}  // namespace

TEST_CASE("one step per full batch, the remainder is dropped") {
  Fixture f;
  auto s = f.setup();
  s.train.batch_size = 256;
  s.train.max_epochs = 1;
  REQUIRE(f.prep.splits.train.size() >= 600);
  std::vector<Sample> part(f.prep.splits.train.begin(), f.prep.splits.train.begin() + 512);
  CHECK(train(s, part, f.prep.splits.val).trace.steps.size() == 2);
  part.assign(f.prep.splits.train.begin(), f.prep.splits.train.begin() + 600);
  CHECK(train(s, part, f.prep.splits.val).trace.steps.size() == 2);
  part.resize(255);
  CHECK_THROWS_AS(train(s, part, f.prep.splits.val), Error);
}

TEST_CASE("training is deterministic for a fixed seed") {
  Fixture f;
  for (auto mode : {AuxMode::None, AuxMode::Icl, AuxMode::Aqcl}) {
    auto s = f.setup();
    s.train.aux = mode;
    std::ostringstream t1, t2;
    TrainHooks h1, h2;
    h1.trace_out = &t1;
    h2.trace_out = &t2;
    const auto a = f.run(s, h1);
    const auto b = f.run(s, h2);
    CHECK(t1.str() == t2.str());
    CHECK(same_params(a.model.params, b.model.params));
    CHECK(a.model.codebook.has_value() == (mode == AuxMode::Aqcl));
    if (a.model.codebook) CHECK(a.model.codebook->codewords == b.model.codebook->codewords);
  }
}

TEST_CASE("trace records are finite and well formed") {
  Fixture f;
  auto s = f.setup();
  std::ostringstream trace;
  TrainHooks h;
  h.trace_out = &trace;
  std::size_t epochs_seen = 0;
  h.on_epoch_end = [&](const EpochRecord&) { ++epochs_seen; };
  const auto r = f.run(s, h);
  CHECK(epochs_seen == r.trace.epochs.size());
  for (const auto& st : r.trace.steps) {
    CHECK(std::isfinite(st.logloss));
    CHECK(std::isfinite(st.aux));
    CHECK(std::isfinite(st.codebook));
    CHECK(std::isfinite(st.total));
    CHECK(st.mean_alpha > 0.0);
    CHECK(st.mean_alpha <= 1.0);
  }
  std::istringstream lines(trace.str());
  std::string line;
  std::map<std::string, std::size_t> kinds;
  std::string last;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    last = j.at("type").get<std::string>();
    ++kinds[last];
  }
  CHECK(kinds["step"] == r.trace.steps.size());
  CHECK(kinds["epoch"] == r.trace.epochs.size());
  CHECK(last == "restore");
  for (const auto& e : r.trace.epochs) {
    std::size_t used = 0;
    for (auto u : e.usage) used += u;
    CHECK(used == (f.prep.splits.train.size() / s.train.batch_size) * s.train.batch_size);
  }
}

TEST_CASE("codewords stay on the unit sphere") {
  Fixture f;
  const auto r = f.run(f.setup());
  REQUIRE(r.model.codebook);
  const Tensor& q = r.model.codebook->codewords;
  for (std::size_t t = 0; t < q.rows(); ++t) {
    double n = 0;
    for (double v : q.row(t)) n += v * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-10);
  }
}

TEST_CASE("zero auxiliary weight without codebook updates equals the plain baseline") {
  Fixture f;
  auto base = f.setup();
  base.train.aux = AuxMode::None;
  auto zero = f.setup();
  zero.train.aux = AuxMode::Aqcl;
  zero.loss.aux_weight = 0.0;
  zero.train.codebook_updates = false;
  const auto a = f.run(base);
  const auto b = f.run(zero);
  CHECK(same_params(a.model.params, b.model.params));
  REQUIRE(a.trace.epochs.size() == b.trace.epochs.size());
  for (std::size_t e = 0; e < a.trace.epochs.size(); ++e)
    CHECK(a.trace.epochs[e].val_logloss == b.trace.epochs[e].val_logloss);
  const auto pa = predict(a.model.config, a.model.params, f.prep.splits.test);
  const auto pb = predict(b.model.config, b.model.params, f.prep.splits.test);
  CHECK(pa == pb);
}

TEST_CASE("the best validation epoch is restored") {
  Fixture f;
  auto s = f.setup();
  s.train.max_epochs = 5;
  s.train.patience = 5;
  s.train.adam.lr = 0.02;  // large enough that validation loss turns around
  const auto full = f.run(s);
  const std::size_t best = full.trace.best_epoch;
  for (const auto& e : full.trace.epochs) CHECK(full.trace.epochs[best].val_logloss <= e.val_logloss);
  // a run cut off after the best epoch ends on the same parameters
  s.train.max_epochs = best + 1;
  const auto cut = f.run(s);
  CHECK(same_params(full.model.params, cut.model.params));
}

TEST_CASE("early stopping honours patience") {
  Fixture f;
  auto s = f.setup();
  s.train.max_epochs = 8;
  s.train.patience = 1;
  s.train.adam.lr = 0.05;
  const auto r = f.run(s);
  const auto& ep = r.trace.epochs;
  if (ep.size() < 8) {
    // the last epoch did not improve on the one before it
    CHECK(ep.back().val_logloss >= ep[r.trace.best_epoch].val_logloss);
    CHECK(r.trace.best_epoch + 2 == ep.size());
  }
}

TEST_CASE("a non-finite loss stops training with a traced divergence") {
  Fixture f;
  auto s = f.setup();
  s.loss.tau2 = 1e-300;
  std::ostringstream trace;
  TrainHooks h;
  h.trace_out = &trace;
  try {
    f.run(s, h);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Diverged);
  }
  CHECK(trace.str().find("\"diverged\"") != std::string::npos);
}

TEST_CASE("evaluation ignores the auxiliary parts") {
  Fixture f;
  const auto r = f.run(f.setup());
  auto stripped = r.model.params;
  stripped.projector.clear();
  const auto a = evaluate(r.model.config, r.model.params, f.prep.splits.test, f.prep.buckets, "t");
  const auto b = evaluate(r.model.config, stripped, f.prep.splits.test, f.prep.buckets, "t");
  CHECK(dump_report(a) == dump_report(b));
  CHECK(a.overall.count == f.prep.splits.test.size());
}

TEST_CASE("batch alphas follow the schedule or the constant") {
  Fixture f;
  auto s = f.setup();
  std::vector<Sample> batch(3);
  batch[1].history = {1, 2};
  batch[2].history = std::vector<std::size_t>(20, 1);
  const auto a = batch_alphas(s, batch);
  CHECK(a[0] == 1.0);
  CHECK(a[1] == alpha(s.schedule, 2.0));
  CHECK(a[1] >= a[2]);
  s.loss.alpha_const = 0.3;
  for (double v : batch_alphas(s, batch)) CHECK(v == 0.3);
}
