#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

namespace aqcl {

// A metric that may be undefined; `reason` explains why when it is.
struct Measured {
  std::optional<double> value;
  std::string reason;

  static Measured of(double v) { return {v, {}}; }
  static Measured undefined(std::string why) { return {std::nullopt, std::move(why)}; }
  bool defined() const { return value.has_value(); }
};

// Rank-sum AUC: ties between a positive and a negative count one half.
Measured auc(std::span<const double> scores, std::span<const int> labels);

// ((target - 0.5) / (base - 0.5) - 1) * 100, defined only for base > 0.5.
Measured rela_impr(double target_auc, double base_auc);

// Mean binary cross-entropy with log arguments clamped at 1e-12.
double mean_logloss(std::span<const double> predictions, std::span<const int> labels);

enum class Bucket : unsigned char { NonActive = 0, SlightlyActive = 1, HighlyActive = 2 };
inline constexpr std::array<const char*, 3> kBucketNames{"non_active", "slightly_active",
                                                         "highly_active"};

struct GroupMetrics {
  std::size_t count = 0;
  std::size_t positives = 0;
  Measured auc;
  std::optional<double> logloss;
  Measured rela_impr = Measured::undefined("no base report");
};

struct MetricsReport {
  std::string name;
  std::string base_name;
  GroupMetrics overall;
  std::array<GroupMetrics, 3> buckets;
};

// Overall and per-bucket AUC/Logloss. When `base` is given the RelaImpr
// fields are filled against it.
MetricsReport bucket_report(std::span<const double> predictions, std::span<const int> labels,
                            std::span<const Bucket> buckets, std::string name,
                            const MetricsReport* base = nullptr);

void attach_rela_impr(MetricsReport& target, const MetricsReport& base);

// Sorted-key JSON; the same report always serialises to the same bytes.
nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);
std::string dump_report(const MetricsReport& r);

// Tab-separated group/count/positives/auc/logloss/rela_impr rows for plotting.
std::string flat_table(const MetricsReport& r);

}  // namespace aqcl
