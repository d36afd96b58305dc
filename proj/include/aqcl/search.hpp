#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aqcl/config.hpp"
#include "aqcl/trainer.hpp"

namespace aqcl {

struct Candidate {
  double w1 = 1.0;
  double w2 = 1.0;
};

struct CandidateResult {
  Candidate candidate;
  bool failed = false;
  std::string failure;
  double train_logloss = 0.0;
  double val_logloss = 0.0;
  MetricsReport val_report;
  std::size_t best_epoch = 0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

struct SearchResult {
  AlphaSchedule best;
  std::size_t best_index = 0;
  std::vector<CandidateResult> candidates;  // grid order, failures included
};

// Grid order: w1 outer, w2 inner.
std::vector<Candidate> grid_candidates(const SearchConfig& cfg);

// Trains one model; the default is aqcl::train on the given splits.
using CandidateTrainer = std::function<TrainResult(const TrainSetup&)>;

// Trains one model per candidate with the same base setup and seed, then
// picks the lowest validation logloss. Ties go to the higher validation AUC,
// then to the smaller (w1, w2). Diverged candidates are recorded and
// excluded. `parallel` threads share the candidate list; the outcome does
// not depend on it.
SearchResult search_alpha(const std::vector<Candidate>& candidates, const TrainSetup& base,
                          const Splits& splits, const ActivityBuckets& buckets,
                          unsigned parallel = 1, CandidateTrainer trainer = {});

// Reproducible report (no timings) and the per-candidate wall times.
nlohmann::json search_report_json(const SearchResult& r);
nlohmann::json search_timings_json(const SearchResult& r);
// One row per successful candidate.
std::string search_table_tsv(const SearchResult& r);

}  // namespace aqcl
