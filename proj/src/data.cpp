#include "aqcl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "aqcl/alpha.hpp"
#include "aqcl/error.hpp"
#include "aqcl/log.hpp"

namespace aqcl {

namespace {

std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// n strictly increasing timestamps in [lo, hi)
std::vector<std::int64_t> draw_times(Rng& rng, std::size_t n, std::int64_t lo, std::int64_t hi) {
  std::vector<std::int64_t> t(n);
  if (n == 0) return t;
  if (hi - lo < static_cast<std::int64_t>(n)) {
    fail(ErrorCode::Config, "generator: " + std::to_string(n) + " events do not fit in window [" +
                                std::to_string(lo) + ", " + std::to_string(hi) + ")");
  }
  // Draw from a shrunken window and spread by index so values stay distinct.
  std::uniform_int_distribution<std::int64_t> dist(lo, hi - static_cast<std::int64_t>(n));
  for (auto& v : t) v = dist(rng);
  std::sort(t.begin(), t.end());
  for (std::size_t i = 0; i < n; ++i) t[i] += static_cast<std::int64_t>(i);
  return t;
}

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

bool parse_int64(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

struct RawRow {
  std::size_t line = 0;
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;
  int label = 0;
  std::vector<std::string> history;
  std::vector<std::string> extras;
};

class Vocab {
 public:
  std::size_t id(const std::string& raw) {
    auto [it, inserted] = index_.try_emplace(raw, names_.size());
    if (inserted) names_.push_back(raw);
    return it->second;
  }
  std::vector<std::string> names() const { return names_; }
  std::size_t size() const { return names_.size(); }

 private:
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> names_;
};

}  // namespace

// ---- generation -----------------------------------------------------------

void GeneratorConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorCode::Config, "generator: " + m); };
  if (n_users == 0) bad("n_users must be positive");
  if (n_interests < 2) bad("n_interests must be >= 2");
  if (n_items < n_interests) bad("n_items must be >= n_interests");
  double total = 0.0;
  for (const auto& g : groups) {
    if (!(g.fraction >= 0.0)) bad("activity fractions must be non-negative");
    if (g.min_length > g.max_length) bad("activity group has min_length > max_length");
    total += g.fraction;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    std::ostringstream os;
    os << "activity fractions sum to " << total << ", expected 1";
    bad(os.str());
  }
  for (double p : {p_hi, p_lo, noise, second_interest_rate, interest_candidate_rate,
                   extra_informativeness})
    if (!(p >= 0.0 && p <= 1.0)) bad("probabilities must lie in [0,1]");
  if (!(p_hi > 0.0)) bad("p_hi must be positive");
  if (extra_vocab < n_interests) bad("extra_vocab must be >= n_interests");
  if (!(0 < val_start && val_start < test_start && test_start < end_time))
    bad("time windows must satisfy 0 < val_start < test_start < end_time");
  std::size_t longest = 0;
  for (const auto& g : groups) longest = std::max(longest, g.max_length);
  if (static_cast<std::int64_t>(longest + train_tail) > val_start)
    bad("history range exceeds the training timeline");
  if (static_cast<std::int64_t>(val_per_user) > test_start - val_start ||
      static_cast<std::int64_t>(test_per_user) > end_time - test_start)
    bad("evaluation impressions exceed their time windows");
}

Dataset generate(const GeneratorConfig& cfg, GeneratedTruth* truth) {
  cfg.validate();
  Rng rng = make_rng(cfg.seed, Stream::Generator);
  GeneratedTruth gt;

  gt.item_interest.resize(cfg.n_items);
  for (std::size_t i = 0; i < cfg.n_items; ++i) gt.item_interest[i] = i % cfg.n_interests;
  std::shuffle(gt.item_interest.begin(), gt.item_interest.end(), rng);
  std::vector<std::vector<std::size_t>> items_of(cfg.n_interests);
  for (std::size_t i = 0; i < cfg.n_items; ++i) items_of[gt.item_interest[i]].push_back(i);

  const std::size_t n0 = static_cast<std::size_t>(std::llround(cfg.groups[0].fraction * cfg.n_users));
  const std::size_t n1 = std::min(cfg.n_users - std::min(n0, cfg.n_users),
                                  static_cast<std::size_t>(std::llround(cfg.groups[1].fraction * cfg.n_users)));
  gt.user_group.assign(cfg.n_users, 2);
  for (std::size_t u = 0; u < cfg.n_users; ++u) gt.user_group[u] = u < n0 ? 0 : (u < n0 + n1 ? 1 : 2);
  std::shuffle(gt.user_group.begin(), gt.user_group.end(), rng);

  Dataset ds;
  ds.num_users = cfg.n_users;
  ds.num_items = cfg.n_items;
  ds.extra_vocab = {cfg.extra_vocab};
  ds.extra_names = {"region"};
  gt.user_interests.resize(cfg.n_users);
  gt.user_length.resize(cfg.n_users);

  struct Event {
    Sample s;
    std::size_t order;
  };
  std::vector<Event> events;
  std::size_t order = 0;

  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    auto& interests = gt.user_interests[u];
    interests.push_back(uniform_index(rng, cfg.n_interests));
    if (bernoulli(rng, cfg.second_interest_rate)) {
      std::size_t second = uniform_index(rng, cfg.n_interests - 1);
      if (second >= interests[0]) ++second;
      interests.push_back(second);
    }
    const auto& grp = cfg.groups[gt.user_group[u]];
    const std::size_t target =
        grp.min_length + uniform_index(rng, grp.max_length - grp.min_length + 1);
    gt.user_length[u] = target;
    const std::size_t extra = bernoulli(rng, cfg.extra_informativeness)
                                  ? interests[0] % cfg.extra_vocab
                                  : uniform_index(rng, cfg.extra_vocab);

    auto impression = [&](const std::vector<std::size_t>& history) {
      Sample s;
      s.user = u;
      if (bernoulli(rng, cfg.interest_candidate_rate)) {
        const auto& pool = items_of[interests[uniform_index(rng, interests.size())]];
        s.item = pool[uniform_index(rng, pool.size())];
      } else {
        s.item = uniform_index(rng, cfg.n_items);
      }
      const bool match = std::find(interests.begin(), interests.end(), gt.item_interest[s.item]) !=
                         interests.end();
      bool click = bernoulli(rng, match ? cfg.p_hi : cfg.p_lo);
      if (bernoulli(rng, cfg.noise)) click = !click;
      s.label = click ? 1 : 0;
      s.history = history;
      s.extras = {extra};
      return s;
    };

    std::vector<Sample> train;
    std::vector<std::size_t> history;
    const std::size_t cap = 1000 + 200 * target;
    while (history.size() < target) {
      if (train.size() >= cap) {
        fail(ErrorCode::Config, "generator: click model cannot produce the requested history lengths");
      }
      train.push_back(impression(history));
      if (train.back().label == 1) history.push_back(train.back().item);
    }
    for (std::size_t k = 0; k < cfg.train_tail; ++k) train.push_back(impression(history));
    auto t_train = draw_times(rng, train.size(), 0, cfg.val_start);
    for (std::size_t k = 0; k < train.size(); ++k) {
      train[k].timestamp = t_train[k];
      events.push_back({std::move(train[k]), order++});
    }
    auto t_val = draw_times(rng, cfg.val_per_user, cfg.val_start, cfg.test_start);
    for (auto t : t_val) {
      Sample s = impression(history);
      s.timestamp = t;
      events.push_back({std::move(s), order++});
    }
    auto t_test = draw_times(rng, cfg.test_per_user, cfg.test_start, cfg.end_time);
    for (auto t : t_test) {
      Sample s = impression(history);
      s.timestamp = t;
      events.push_back({std::move(s), order++});
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return a.s.timestamp < b.s.timestamp;
  });
  ds.samples.reserve(events.size());
  for (auto& e : events) ds.samples.push_back(std::move(e.s));

  ds.user_ids.resize(cfg.n_users);
  ds.item_ids.resize(cfg.n_items);
  for (std::size_t u = 0; u < cfg.n_users; ++u) ds.user_ids[u] = std::to_string(u);
  for (std::size_t i = 0; i < cfg.n_items; ++i) ds.item_ids[i] = std::to_string(i);
  ds.extra_ids.resize(1);
  for (std::size_t e = 0; e < cfg.extra_vocab; ++e) ds.extra_ids[0].push_back(std::to_string(e));
  if (truth) *truth = std::move(gt);
  return ds;
}

// ---- ingest ---------------------------------------------------------------

Dataset ingest(std::istream& in, const SchemaConfig& schema, IngestReport* report_out) {
  IngestReport report;
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::Parse, "ingest: missing header line");
  const auto header = split_line(line, schema.delimiter);
  static const std::array<const char*, 5> kRequired{"user_id", "item_id", "timestamp", "label",
                                                     "history"};
  if (header.size() < kRequired.size()) fail(ErrorCode::Parse, "ingest: header has too few columns");
  for (std::size_t c = 0; c < kRequired.size(); ++c) {
    if (header[c] != kRequired[c]) {
      fail(ErrorCode::Parse, "ingest: header column " + std::to_string(c + 1) + " must be '" +
                                 kRequired[c] + "', got '" + header[c] + "'");
    }
  }
  const std::size_t n_extra = header.size() - kRequired.size();

  std::vector<RawRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    ++report.rows;
    auto f = split_line(line, schema.delimiter);
    auto bad = [&](const std::string& why) { report.malformed.push_back({line_no, why}); };
    if (f.size() != header.size()) {
      bad("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
      continue;
    }
    RawRow r;
    r.line = line_no;
    r.user = f[0];
    r.item = f[1];
    std::int64_t label = 0;
    if (r.user.empty() || r.item.empty()) {
      bad("empty user or item id");
      continue;
    }
    if (!parse_int64(f[2], r.timestamp)) {
      bad("timestamp is not an integer");
      continue;
    }
    if (!parse_int64(f[3], label) || (label != 0 && label != 1)) {
      bad("label must be 0 or 1");
      continue;
    }
    r.label = static_cast<int>(label);
    if (!f[4].empty()) {
      r.history = split_line(f[4], schema.history_separator);
      if (std::any_of(r.history.begin(), r.history.end(), [](const std::string& s) { return s.empty(); })) {
        bad("empty item id in history");
        continue;
      }
    }
    bool extras_ok = true;
    for (std::size_t e = 0; e < n_extra; ++e) {
      if (f[5 + e].empty()) extras_ok = false;
      r.extras.push_back(f[5 + e]);
    }
    if (!extras_ok) {
      bad("empty extra feature value");
      continue;
    }
    rows.push_back(std::move(r));
  }
  if (report.rows > 0 && static_cast<double>(report.malformed.size()) >
                             schema.max_malformed_fraction * static_cast<double>(report.rows)) {
    std::ostringstream os;
    os << "ingest: " << report.malformed.size() << " of " << report.rows
       << " rows malformed (limit " << schema.max_malformed_fraction * 100 << "%)";
    for (std::size_t k = 0; k < std::min<std::size_t>(5, report.malformed.size()); ++k)
      os << "; line " << report.malformed[k].line << ": " << report.malformed[k].reason;
    if (report_out) *report_out = report;
    fail(ErrorCode::Parse, os.str());
  }

  // Chronology: a history item the user interacts with in this log must have
  // been interacted with strictly before the row referencing it.
  std::map<std::pair<std::string, std::string>, std::int64_t> first_seen;
  for (const auto& r : rows) {
    auto [it, inserted] = first_seen.try_emplace({r.user, r.item}, r.timestamp);
    if (!inserted) it->second = std::min(it->second, r.timestamp);
  }
  std::vector<RawRow> kept;
  for (auto& r : rows) {
    bool ok = true;
    for (const auto& h : r.history) {
      auto it = first_seen.find({r.user, h});
      if (it != first_seen.end() && it->second >= r.timestamp) {
        report.rejected.push_back({r.line, "history item '" + h + "' is not interacted with before timestamp " +
                                               std::to_string(r.timestamp)});
        ok = false;
        break;
      }
    }
    if (ok) kept.push_back(std::move(r));
  }
  std::stable_sort(kept.begin(), kept.end(), [](const RawRow& a, const RawRow& b) {
    return a.timestamp < b.timestamp;
  });

  Vocab users, items;
  std::vector<Vocab> extras(n_extra);
  Dataset ds;
  ds.samples.reserve(kept.size());
  for (const auto& r : kept) {
    Sample s;
    s.user = users.id(r.user);
    s.item = items.id(r.item);
    for (const auto& h : r.history) s.history.push_back(items.id(h));
    for (std::size_t e = 0; e < n_extra; ++e) s.extras.push_back(extras[e].id(r.extras[e]));
    s.label = r.label;
    s.timestamp = r.timestamp;
    ds.samples.push_back(std::move(s));
  }
  ds.num_users = users.size();
  ds.num_items = items.size();
  ds.user_ids = users.names();
  ds.item_ids = items.names();
  for (std::size_t e = 0; e < n_extra; ++e) {
    ds.extra_vocab.push_back(extras[e].size());
    ds.extra_ids.push_back(extras[e].names());
    ds.extra_names.push_back(header[5 + e]);
  }
  report.accepted = ds.samples.size();
  if (!report.malformed.empty())
    log_warning("ingest: skipped " + std::to_string(report.malformed.size()) + " malformed rows (first at line " +
                std::to_string(report.malformed.front().line) + ")");
  if (!report.rejected.empty())
    log_warning("ingest: rejected " + std::to_string(report.rejected.size()) +
                " rows whose history is not in the past (first at line " +
                std::to_string(report.rejected.front().line) + ")");
  if (report_out) *report_out = std::move(report);
  return ds;
}

Dataset ingest_file(const std::string& path, const SchemaConfig& schema, IngestReport* report) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open dataset '" + path + "'");
  return ingest(in, schema, report);
}

void write_dataset(std::ostream& out, const Dataset& ds, const SchemaConfig& schema) {
  const char d = schema.delimiter;
  out << "user_id" << d << "item_id" << d << "timestamp" << d << "label" << d << "history";
  for (const auto& n : ds.extra_names) out << d << n;
  out << '\n';
  for (const auto& s : ds.samples) {
    out << ds.user_ids[s.user] << d << ds.item_ids[s.item] << d << s.timestamp << d << s.label << d;
    for (std::size_t k = 0; k < s.history.size(); ++k) {
      if (k) out << schema.history_separator;
      out << ds.item_ids[s.history[k]];
    }
    for (std::size_t e = 0; e < s.extras.size(); ++e) out << d << ds.extra_ids[e][s.extras[e]];
    out << '\n';
  }
}

void write_dataset_file(const std::string& path, const Dataset& ds, const SchemaConfig& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write dataset '" + path + "'");
  write_dataset(out, ds, schema);
  if (!out) fail(ErrorCode::Io, "write failed for '" + path + "'");
}

// ---- splits and buckets ---------------------------------------------------

Splits split_by_time(const Dataset& ds, const SplitBoundaries& bounds) {
  if (bounds.val_start > bounds.test_start) {
    fail(ErrorCode::Config, "split: val_start must not exceed test_start");
  }
  Splits sp;
  for (const auto& s : ds.samples) {
    if (s.timestamp < bounds.val_start) {
      sp.train.push_back(s);
    } else if (s.timestamp < bounds.test_start) {
      sp.val.push_back(s);
    } else {
      sp.test.push_back(s);
    }
  }
  if (sp.train.empty() || sp.val.empty() || sp.test.empty()) {
    fail(ErrorCode::InvalidArgument,
         "split: empty split (train=" + std::to_string(sp.train.size()) + ", val=" +
             std::to_string(sp.val.size()) + ", test=" + std::to_string(sp.test.size()) + ")");
  }
  return sp;
}

std::vector<Bucket> ActivityBuckets::of(const std::vector<Sample>& samples) const {
  std::vector<Bucket> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(of(s));
  return out;
}

double ActivityBuckets::mean_length() const {
  std::vector<double> lens;
  for (std::size_t u = 0; u < user_length.size(); ++u)
    if (present[u]) lens.push_back(user_length[u]);
  return mean_history_length(lens);
}

ActivityBuckets bucket_users(const Dataset& ds, const Splits& splits,
                             std::optional<std::array<std::size_t, 2>> fixed) {
  ActivityBuckets ab;
  ab.user_length.assign(ds.num_users, 0.0);
  ab.present.assign(ds.num_users, false);
  for (const auto* part : {&splits.train, &splits.val, &splits.test})
    for (const auto& s : *part) ab.present[s.user] = true;
  for (const auto& s : splits.train)
    ab.user_length[s.user] = std::max(ab.user_length[s.user], static_cast<double>(s.history.size()));

  if (fixed) {
    ab.non_active_max = (*fixed)[0];
    ab.slightly_max = (*fixed)[1];
  } else {
    std::vector<std::size_t> lens;
    for (std::size_t u = 0; u < ds.num_users; ++u)
      if (ab.present[u]) lens.push_back(static_cast<std::size_t>(ab.user_length[u]));
    if (lens.empty()) fail(ErrorCode::InvalidArgument, "bucket: no users");
    std::sort(lens.begin(), lens.end());
    auto quantile = [&](double q) {
      const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(lens.size())));
      return lens[std::max<std::size_t>(rank, 1) - 1];
    };
    ab.non_active_max = quantile(0.6);
    ab.slightly_max = quantile(0.9);
  }
  ab.user_bucket.assign(ds.num_users, Bucket::NonActive);
  for (std::size_t u = 0; u < ds.num_users; ++u) {
    const auto L = static_cast<std::size_t>(ab.user_length[u]);
    ab.user_bucket[u] = L <= ab.non_active_max ? Bucket::NonActive
                        : L <= ab.slightly_max ? Bucket::SlightlyActive
                                               : Bucket::HighlyActive;
  }
  return ab;
}

}  // namespace aqcl
