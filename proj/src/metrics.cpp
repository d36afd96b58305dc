#include "aqcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "aqcl/error.hpp"

namespace aqcl {

Measured auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorCode::Shape, "auc: " + std::to_string(scores.size()) + " scores vs " +
                               std::to_string(labels.size()) + " labels");
  }
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) fail(ErrorCode::InvalidArgument, "auc: label not in {0,1}");
    pos += static_cast<std::size_t>(l);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) {
    return Measured::undefined(pos == 0 ? "no positive samples" : "no negative samples");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of (1-based, tie-averaged) ranks of positives, doubled so it stays
  // an integer.
  std::size_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::size_t twice_avg = (i + 1) + j;  // (i+1 + j) / 2 doubled
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) twice_rank_sum += twice_avg;
    i = j;
  }
  // 2U = 2R - P(P+1); U counts wins plus half-ties.
  const std::size_t twice_u = twice_rank_sum - pos * (pos + 1);
  return Measured::of(static_cast<double>(twice_u) /
                      (2.0 * static_cast<double>(pos) * static_cast<double>(neg)));
}

Measured rela_impr(double target_auc, double base_auc) {
  if (!(base_auc > 0.5)) return Measured::undefined("base AUC <= 0.5");
  return Measured::of(((target_auc - 0.5) / (base_auc - 0.5) - 1.0) * 100.0);
}

double mean_logloss(std::span<const double> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size() || predictions.empty()) {
    fail(ErrorCode::Shape, "logloss: prediction/label count mismatch or empty");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = predictions[i];
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::InvalidArgument, "logloss: prediction outside [0,1]");
    const double q = labels[i] == 1 ? p : 1.0 - p;
    s -= std::log(std::max(q, 1e-12));
  }
  return s / static_cast<double>(predictions.size());
}

namespace {

GroupMetrics group_metrics(std::span<const double> p, std::span<const int> y) {
  GroupMetrics g;
  g.count = p.size();
  g.positives = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
  if (p.empty()) {
    g.auc = Measured::undefined("empty group");
    return g;
  }
  g.auc = auc(p, y);
  g.logloss = mean_logloss(p, y);
  return g;
}

void fill_rela(GroupMetrics& t, const GroupMetrics& b) {
  if (!t.auc.defined()) {
    t.rela_impr = Measured::undefined("target AUC undefined");
  } else if (!b.auc.defined()) {
    t.rela_impr = Measured::undefined("base AUC undefined");
  } else {
    t.rela_impr = rela_impr(*t.auc.value, *b.auc.value);
  }
}

nlohmann::json measured_json(const Measured& m) {
  if (m.defined()) return *m.value;
  return nullptr;
}

nlohmann::json group_json(const GroupMetrics& g) {
  nlohmann::json j;
  j["count"] = g.count;
  j["positives"] = g.positives;
  j["auc"] = measured_json(g.auc);
  if (!g.auc.defined()) j["auc_reason"] = g.auc.reason;
  j["logloss"] = g.logloss ? nlohmann::json(*g.logloss) : nlohmann::json(nullptr);
  j["rela_impr"] = measured_json(g.rela_impr);
  if (!g.rela_impr.defined()) j["rela_impr_reason"] = g.rela_impr.reason;
  return j;
}

Measured measured_from(const nlohmann::json& j, const char* key, const char* reason_key) {
  if (j.contains(key) && j.at(key).is_number()) return Measured::of(j.at(key).get<double>());
  return Measured::undefined(j.value(reason_key, std::string("absent")));
}

GroupMetrics group_from(const nlohmann::json& j) {
  GroupMetrics g;
  g.count = j.value("count", std::size_t{0});
  g.positives = j.value("positives", std::size_t{0});
  g.auc = measured_from(j, "auc", "auc_reason");
  if (j.contains("logloss") && j.at("logloss").is_number()) g.logloss = j.at("logloss").get<double>();
  g.rela_impr = measured_from(j, "rela_impr", "rela_impr_reason");
  return g;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream os;
  os.precision(10);
  os << *v;
  return os.str();
}

}  // namespace

MetricsReport bucket_report(std::span<const double> predictions, std::span<const int> labels,
                            std::span<const Bucket> buckets, std::string name,
                            const MetricsReport* base) {
  if (predictions.size() != labels.size() || predictions.size() != buckets.size()) {
    fail(ErrorCode::Shape, "bucket_report: predictions, labels and buckets differ in length");
  }
  MetricsReport r;
  r.name = std::move(name);
  r.overall = group_metrics(predictions, labels);
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<double> p;
    std::vector<int> y;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      if (static_cast<std::size_t>(buckets[i]) == b) {
        p.push_back(predictions[i]);
        y.push_back(labels[i]);
      }
    }
    r.buckets[b] = group_metrics(p, y);
  }
  if (base) attach_rela_impr(r, *base);
  return r;
}

void attach_rela_impr(MetricsReport& target, const MetricsReport& base) {
  target.base_name = base.name;
  fill_rela(target.overall, base.overall);
  for (std::size_t b = 0; b < 3; ++b) fill_rela(target.buckets[b], base.buckets[b]);
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["base"] = r.base_name.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.base_name);
  j["overall"] = group_json(r.overall);
  for (std::size_t b = 0; b < 3; ++b) j["buckets"][kBucketNames[b]] = group_json(r.buckets[b]);
  return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.name = j.value("name", std::string());
    if (j.contains("base") && j.at("base").is_string()) r.base_name = j.at("base").get<std::string>();
    r.overall = group_from(j.at("overall"));
    for (std::size_t b = 0; b < 3; ++b) r.buckets[b] = group_from(j.at("buckets").at(kBucketNames[b]));
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("metrics report: ") + e.what());
  }
}

std::string dump_report(const MetricsReport& r) { return to_json(r).dump(2) + "\n"; }

std::string flat_table(const MetricsReport& r) {
  std::ostringstream os;
  os << "group\tcount\tpositives\tauc\tlogloss\trela_impr\n";
  auto row = [&](const char* name, const GroupMetrics& g) {
    os << name << '\t' << g.count << '\t' << g.positives << '\t' << fmt(g.auc.value) << '\t'
       << fmt(g.logloss) << '\t' << fmt(g.rela_impr.value) << '\n';
  };
  row("overall", r.overall);
  for (std::size_t b = 0; b < 3; ++b) row(kBucketNames[b], r.buckets[b]);
  return os.str();
}

}  // namespace aqcl
