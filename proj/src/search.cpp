#include "aqcl/search.hpp"

#include <atomic>
#include <chrono>
#include <mutex>
#include <sstream>
#include <thread>

#include "aqcl/error.hpp"

namespace aqcl {

std::vector<Candidate> grid_candidates(const SearchConfig& cfg) {
  cfg.validate();
  std::vector<Candidate> out;
  for (double w1 : cfg.w1_grid)
    for (double w2 : cfg.w2_grid) out.push_back({w1, w2});
  return out;
}

namespace {

CandidateResult run_candidate(const Candidate& c, const TrainSetup& base, const Splits& splits,
                              const ActivityBuckets& buckets, const CandidateTrainer& trainer) {
  CandidateResult r;
  r.candidate = c;
  r.seed = base.train.seed;
  TrainSetup setup = base;
  setup.schedule.w1 = c.w1;
  setup.schedule.w2 = c.w2;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    TrainResult tr = trainer ? trainer(setup) : train(setup, splits.train, splits.val);
    const auto& best = tr.trace.epochs.at(tr.trace.best_epoch);
    r.best_epoch = tr.trace.best_epoch;
    r.train_logloss = best.train_logloss;
    r.val_report = evaluate(tr.model.config, tr.model.params, splits.val, buckets, "val");
    r.val_logloss = r.val_report.overall.logloss.value_or(best.val_logloss);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Diverged) throw;
    r.failed = true;
    r.failure = e.what();
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// True when a should be preferred over b.
bool better(const CandidateResult& a, const CandidateResult& b) {
  if (a.val_logloss != b.val_logloss) return a.val_logloss < b.val_logloss;
  const double auc_a = a.val_report.overall.auc.value.value_or(-1.0);
  const double auc_b = b.val_report.overall.auc.value.value_or(-1.0);
  if (auc_a != auc_b) return auc_a > auc_b;
  if (a.candidate.w1 != b.candidate.w1) return a.candidate.w1 < b.candidate.w1;
  return a.candidate.w2 < b.candidate.w2;
}

nlohmann::json candidate_json(const CandidateResult& r) {
  nlohmann::json j = {{"w1", r.candidate.w1}, {"w2", r.candidate.w2}, {"seed", r.seed}};
  if (r.failed) {
    j["failed"] = true;
    j["failure"] = r.failure;
    return j;
  }
  j["failed"] = false;
  j["best_epoch"] = r.best_epoch;
  j["train_logloss"] = r.train_logloss;
  j["val_logloss"] = r.val_logloss;
  j["val"] = to_json(r.val_report);
  return j;
}

}  // namespace

SearchResult search_alpha(const std::vector<Candidate>& candidates, const TrainSetup& base,
                          const Splits& splits, const ActivityBuckets& buckets, unsigned parallel,
                          CandidateTrainer trainer) {
  if (candidates.empty()) fail(ErrorCode::Config, "search: empty candidate set");
  for (const auto& c : candidates) {
    if (!(c.w1 > 0.0 && c.w2 > 0.0)) fail(ErrorCode::Config, "search: candidates need w1 > 0 and w2 > 0");
  }
  SearchResult out;
  out.candidates.resize(candidates.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < candidates.size();) {
      try {
        out.candidates[i] = run_candidate(candidates[i], base, splits, buckets, trainer);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(parallel, static_cast<unsigned>(candidates.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);

  bool found = false;
  for (std::size_t i = 0; i < out.candidates.size(); ++i) {
    const auto& c = out.candidates[i];
    if (c.failed) continue;
    if (!found || better(c, out.candidates[out.best_index])) {
      out.best_index = i;
      found = true;
    }
  }
  if (!found) fail(ErrorCode::Diverged, "search: every candidate diverged");
  const auto& w = out.candidates[out.best_index].candidate;
  out.best = {w.w1, w.w2, base.schedule.mean_length};
  return out;
}

nlohmann::json search_report_json(const SearchResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& c : r.candidates) (c.failed ? failures : rows).push_back(candidate_json(c));
  return {{"winner", {{"w1", r.best.w1}, {"w2", r.best.w2}, {"mean_length", r.best.mean_length}}},
          {"selection", "min val_logloss, then max val auc, then min (w1, w2)"},
          {"candidates", rows},
          {"failures", failures}};
}

nlohmann::json search_timings_json(const SearchResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : r.candidates)
    rows.push_back({{"w1", c.candidate.w1}, {"w2", c.candidate.w2}, {"wall_seconds", c.wall_seconds}});
  return rows;
}

std::string search_table_tsv(const SearchResult& r) {
  std::ostringstream os;
  os.precision(10);
  os << "w1\tw2\tseed\ttrain_logloss\tval_logloss\tval_auc";
  for (const char* b : kBucketNames) os << "\tval_auc_" << b;
  os << '\n';
  auto cell = [&](const Measured& m) {
    if (m.defined()) {
      os << *m.value;
    } else {
      os << "NA";
    }
  };
  for (const auto& c : r.candidates) {
    if (c.failed) continue;
    os << c.candidate.w1 << '\t' << c.candidate.w2 << '\t' << c.seed << '\t' << c.train_logloss << '\t'
       << c.val_logloss << '\t';
    cell(c.val_report.overall.auc);
    for (const auto& b : c.val_report.buckets) {
      os << '\t';
      cell(b.auc);
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace aqcl
