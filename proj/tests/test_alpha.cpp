#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "aqcl/alpha.hpp"
#include "aqcl/error.hpp"
#include "aqcl/pipeline.hpp"
#include "aqcl/search.hpp"
#include "testutil.hpp"

using namespace aqcl;

TEST_CASE("alpha hand values") {
  AlphaSchedule s{1.0, 3.0, 2.5};
  CHECK(alpha(s, 0.0) == 1.0);
  CHECK(alpha(s, 2.5) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(alpha(s, 2.5) == doctest::Approx(0.3679).epsilon(1e-4));
  AlphaSchedule t{2.0, 0.5, 3.0};
  CHECK(alpha(t, 12.0) == doctest::Approx(std::exp(-4.0)).epsilon(1e-14));
  CHECK(alpha(t, 12.0) == doctest::Approx(0.0183).epsilon(1e-3));
}

TEST_CASE("alpha is in (0,1], starts at 1 and never increases") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> w(0.01, 5.0), lbar(0.1, 20.0), len(0.0, 60.0);
  for (int i = 0; i < 1000; ++i) {
    const AlphaSchedule s{w(rng), w(rng), lbar(rng)};
    double a = len(rng), b = len(rng);
    if (a > b) std::swap(a, b);
    CHECK(alpha(s, 0.0) == 1.0);
    CHECK(std::abs(alpha(s, s.mean_length) - std::exp(-s.w1)) <= 1e-15);
    const double fa = alpha(s, a), fb = alpha(s, b);
    CHECK(fa >= fb);
    if (b > a && a > 0.0 && fb > 0.0) CHECK(fa > fb);
    CHECK(fb <= 1.0);
    CHECK(fb >= 0.0);
  }
}

TEST_CASE("alpha stays strictly positive on the generator's length range") {
  // lengths up to 50 against a mean of about 3
  for (double w1 : {0.25, 0.5, 1.0, 2.0, 4.0})
    for (double w2 : {0.5, 1.0, 2.0}) {
      const AlphaSchedule s{w1, w2, 3.0};
      if (w1 * std::pow(50.0 / 3.0, w2) < 700.0) CHECK(alpha(s, 50.0) > 0.0);
    }
}

TEST_CASE("schedule validation") {
  CHECK_THROWS_AS((AlphaSchedule{0.0, 1.0, 1.0}.validate()), Error);
  CHECK_THROWS_AS((AlphaSchedule{1.0, -1.0, 1.0}.validate()), Error);
  CHECK_THROWS_AS((AlphaSchedule{1.0, 1.0, 0.0}.validate()), Error);
  CHECK_THROWS_AS(alpha(AlphaSchedule{}, -1.0), Error);
  const std::vector<double> zeros{0.0, 0.0};
  CHECK(mean_history_length(zeros) == 1.0);
  const std::vector<double> some{1.0, 2.0, 6.0};
  CHECK(mean_history_length(some) == 3.0);
}

namespace {

struct Fixture {
  RunConfig cfg;
  Dataset ds;
  PreparedData prep;
  TrainSetup setup;

  Fixture() {
    cfg.seed = 3;
    cfg.generator = testutil::small_generator(3, 200);
    cfg.model.embed_dim = 4;
    cfg.model.hidden_dims = {8};
    cfg.model.projector_hidden = {8, 8};
    cfg.model.z_dim = 4;
    cfg.codebook.capacity = 8;
    cfg.train.batch_size = 64;
    cfg.train.max_epochs = 2;
    ds = load_dataset(cfg);
    prep = prepare(ds, cfg);
    setup = cfg.setup(ds, prep.mean_length);
  }
};

}  // namespace

TEST_CASE("the grid enumerates w1 outer, w2 inner") {
  SearchConfig s;
  const auto g = grid_candidates(s);
  REQUIRE(g.size() == 15);
  CHECK(g[0].w1 == 0.25);
  CHECK(g[0].w2 == 0.5);
  CHECK(g[1].w2 == 1.0);
  CHECK(g[3].w1 == 0.5);
  s.w1_grid = {1.0, -2.0};
  CHECK_THROWS_AS(grid_candidates(s), Error);
}

TEST_CASE("search over one candidate returns it") {
  Fixture f;
  const auto r = search_alpha({{0.5, 2.0}}, f.setup, f.prep.splits, f.prep.buckets);
  CHECK(r.best.w1 == 0.5);
  CHECK(r.best.w2 == 2.0);
  CHECK(r.best.mean_length == f.prep.mean_length);
  CHECK_THROWS_AS(search_alpha({}, f.setup, f.prep.splits, f.prep.buckets), Error);
}

TEST_CASE("a diverging candidate is recorded and excluded") {
  Fixture f;
  CandidateTrainer trainer = [&](const TrainSetup& s) {
    if (s.schedule.w1 == 1.0) fail(ErrorCode::Diverged, "forced divergence");
    return train(s, f.prep.splits.train, f.prep.splits.val);
  };
  const auto r = search_alpha({{1.0, 1.0}, {2.0, 1.0}}, f.setup, f.prep.splits, f.prep.buckets, 1, trainer);
  CHECK(r.best.w1 == 2.0);
  CHECK(r.candidates[0].failed);
  CHECK(r.candidates[0].failure.find("forced divergence") != std::string::npos);
  CHECK(!r.candidates[1].failed);
  const auto rep = search_report_json(r);
  CHECK(rep["failures"].size() == 1);
  CHECK(rep["candidates"].size() == 1);
  // one header line plus one row per surviving candidate
  const auto tsv = search_table_tsv(r);
  CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 2);
}

TEST_CASE("the winner has the lowest validation logloss in the table") {
  Fixture f;
  const std::vector<Candidate> cands{{0.25, 1.0}, {1.0, 0.5}, {4.0, 2.0}};
  const auto r = search_alpha(cands, f.setup, f.prep.splits, f.prep.buckets);
  std::istringstream tsv(search_table_tsv(r));
  std::string line;
  std::getline(tsv, line);
  double lowest = 1e300;
  std::size_t rows = 0;
  while (std::getline(tsv, line)) {
    ++rows;
    std::istringstream cells(line);
    double w1, w2, seed, tr, val;
    cells >> w1 >> w2 >> seed >> tr >> val;
    lowest = std::min(lowest, val);
  }
  CHECK(rows == cands.size());
  CHECK(r.candidates[r.best_index].val_logloss <= lowest + 1e-9);
  for (const auto& c : r.candidates) CHECK(r.candidates[r.best_index].val_logloss <= c.val_logloss);
}

TEST_CASE("parallel search matches serial search") {
  Fixture f;
  const std::vector<Candidate> cands{{0.25, 0.5}, {1.0, 1.0}, {2.0, 2.0}, {4.0, 0.5}};
  const auto serial = search_alpha(cands, f.setup, f.prep.splits, f.prep.buckets, 1);
  const auto parallel = search_alpha(cands, f.setup, f.prep.splits, f.prep.buckets, 4);
  CHECK(search_report_json(serial).dump() == search_report_json(parallel).dump());
  CHECK(search_table_tsv(serial) == search_table_tsv(parallel));
}
