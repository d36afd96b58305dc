#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "aqcl/metrics.hpp"
#include "aqcl/model.hpp"

namespace aqcl {

// Interaction log with dense vocabularies. Samples are ordered by timestamp.
struct Dataset {
  std::vector<Sample> samples;
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<std::size_t> extra_vocab;
  std::vector<std::string> extra_names;
  // Raw identifiers by dense id, kept so serialisation round-trips.
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::vector<std::vector<std::string>> extra_ids;

  bool operator==(const Dataset&) const = default;
};

// ---- synthetic generation -------------------------------------------------

struct ActivityGroup {
  double fraction = 0.0;
  std::size_t min_length = 0;
  std::size_t max_length = 0;
};

struct GeneratorConfig {
  std::size_t n_users = 10000;
  std::size_t n_items = 1000;
  std::size_t n_interests = 8;
  std::array<ActivityGroup, 3> groups{{{0.6, 0, 2}, {0.3, 3, 10}, {0.1, 11, 50}}};
  double p_hi = 0.8;  // click probability when the item matches a user interest
  double p_lo = 0.1;  // otherwise
  double noise = 0.0;  // label flip probability
  double second_interest_rate = 0.5;
  // Probability that an impression's candidate is drawn from the user's
  // interests rather than uniformly over the catalogue.
  double interest_candidate_rate = 0.5;
  // Extra categorical field: with this probability it encodes the user's
  // first interest, otherwise it is uniform noise.
  double extra_informativeness = 0.5;
  std::size_t extra_vocab = 16;
  std::size_t train_tail = 2;  // training impressions after the history is complete
  std::size_t val_per_user = 1;
  std::size_t test_per_user = 1;
  std::int64_t val_start = 24 * 86400;
  std::int64_t test_start = 27 * 86400;
  std::int64_t end_time = 30 * 86400;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GeneratedTruth {
  std::vector<std::vector<std::size_t>> user_interests;
  std::vector<std::size_t> item_interest;
  std::vector<std::size_t> user_group;
  std::vector<std::size_t> user_length;
};

Dataset generate(const GeneratorConfig& cfg, GeneratedTruth* truth = nullptr);

// ---- delimited text format ------------------------------------------------

struct SchemaConfig {
  char delimiter = ',';
  char history_separator = '|';
  double max_malformed_fraction = 0.01;
};

struct LineIssue {
  std::size_t line = 0;
  std::string reason;
};

struct IngestReport {
  std::size_t rows = 0;
  std::size_t accepted = 0;
  std::vector<LineIssue> malformed;
  std::vector<LineIssue> rejected;  // chronology violations
};

// Header: user_id,item_id,timestamp,label,history[,extra...]. History is a
// separator-joined list of item ids, most recent last. Dense ids are assigned
// in order of first appearance after sorting rows by timestamp.
Dataset ingest(std::istream& in, const SchemaConfig& schema, IngestReport* report = nullptr);
Dataset ingest_file(const std::string& path, const SchemaConfig& schema,
                    IngestReport* report = nullptr);

void write_dataset(std::ostream& out, const Dataset& ds, const SchemaConfig& schema = {});
void write_dataset_file(const std::string& path, const Dataset& ds, const SchemaConfig& schema = {});

// ---- splits and activity buckets -----------------------------------------

struct SplitBoundaries {
  std::int64_t val_start = 0;
  std::int64_t test_start = 0;
};

struct Splits {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

struct ActivityBuckets {
  // Per user: longest history seen in the training split.
  std::vector<double> user_length;
  std::vector<Bucket> user_bucket;
  std::vector<bool> present;  // user has at least one sample in any split
  std::size_t non_active_max = 0;  // lengths <= this are non-active
  std::size_t slightly_max = 0;    // lengths <= this (and above) are slightly active

  Bucket of(const Sample& s) const { return user_bucket[s.user]; }
  std::vector<Bucket> of(const std::vector<Sample>& samples) const;
  // Mean training history length over users present in the data.
  double mean_length() const;
};

Splits split_by_time(const Dataset& ds, const SplitBoundaries& bounds);

// Quantile thresholds at the 60th and 90th percentile of users, unless fixed
// thresholds are supplied.
ActivityBuckets bucket_users(const Dataset& ds, const Splits& splits,
                             std::optional<std::array<std::size_t, 2>> fixed = std::nullopt);

}  // namespace aqcl
