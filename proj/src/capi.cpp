#include "aqcl/aqcl.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>
#include <sstream>
#include <string>

#include "aqcl/error.hpp"
#include "aqcl/log.hpp"
#include "aqcl/pipeline.hpp"
#include "aqcl/search.hpp"

struct aqcl_dataset {
  aqcl::Dataset data;
  std::string digest;
};

struct aqcl_model {
  aqcl::Checkpoint ckpt;
};

namespace {

using nlohmann::json;

thread_local std::string g_last_error;

aqcl_status status_of(aqcl::ErrorCode c) { return static_cast<aqcl_status>(static_cast<int>(c)); }

template <typename F>
aqcl_status guarded(F&& fn) {
  g_last_error.clear();
  try {
    fn();
    return AQCL_OK;
  } catch (const aqcl::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const json::exception& e) {
    g_last_error = std::string("json: ") + e.what();
    return AQCL_PARSE;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return AQCL_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return AQCL_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) aqcl::fail(aqcl::ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

json parse_json(const char* text, const char* what) {
  if (!text || !*text) return json::object();
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    aqcl::fail(aqcl::ErrorCode::Parse, std::string(what) + ": " + e.what());
  }
}

aqcl::RunConfig run_config(const char* config_json) {
  return aqcl::config_from_json(aqcl::resolve_config(parse_json(config_json, "config"), json()));
}

json issues_json(const std::vector<aqcl::LineIssue>& v) {
  json a = json::array();
  for (const auto& i : v) a.push_back({{"line", i.line}, {"reason", i.reason}});
  return a;
}

json epoch_summary(const aqcl::TrainTrace& t) {
  json epochs = json::array();
  for (const auto& e : t.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_logloss", e.train_logloss},
                      {"val_logloss", e.val_logloss},
                      {"val_auc", e.val_auc.defined() ? json(*e.val_auc.value) : json(nullptr)},
                      {"usage", e.usage}});
  }
  return {{"steps", t.steps.size()}, {"best_epoch", t.best_epoch}, {"epochs", epochs}};
}

std::mutex g_warn_mutex;
aqcl_warning_fn g_warn_fn = nullptr;
void* g_warn_user = nullptr;

}  // namespace

extern "C" {

const char* aqcl_version(void) { return "1.0.0"; }

const char* aqcl_status_name(aqcl_status s) {
  switch (s) {
    case AQCL_OK: return "ok";
    case AQCL_INVALID_ARGUMENT: return "invalid_argument";
    case AQCL_CONFIG: return "config";
    case AQCL_IO: return "io";
    case AQCL_PARSE: return "parse";
    case AQCL_SHAPE: return "shape";
    case AQCL_INDEX: return "index";
    case AQCL_DIVERGED: return "diverged";
    case AQCL_UNDEFINED: return "undefined";
    case AQCL_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* aqcl_last_error(void) { return g_last_error.c_str(); }

void aqcl_string_free(char* s) { std::free(s); }

void aqcl_set_warning_callback(aqcl_warning_fn fn, void* user_data) {
  std::lock_guard<std::mutex> lock(g_warn_mutex);
  g_warn_fn = fn;
  g_warn_user = user_data;
  if (!fn) {
    aqcl::set_log_sink(nullptr);
    return;
  }
  aqcl::set_log_sink([](const std::string& msg) {
    aqcl_warning_fn f;
    void* u;
    {
      std::lock_guard<std::mutex> inner(g_warn_mutex);
      f = g_warn_fn;
      u = g_warn_user;
    }
    if (f) f(msg.c_str(), u);
  });
}

aqcl_status aqcl_config_resolve(const char* file_json, const char* overrides_json, char** resolved_json) {
  return guarded([&] {
    require(resolved_json, "resolved_json");
    const json file = parse_json(file_json, "config file");
    const json over = parse_json(overrides_json, "overrides");
    put(resolved_json, aqcl::resolve_config(file, over).dump(2));
  });
}

aqcl_status aqcl_dataset_generate(const char* config_json, aqcl_dataset** out) {
  return guarded([&] {
    require(out, "out");
    const auto cfg = run_config(config_json);
    auto* ds = new aqcl_dataset{aqcl::generate(cfg.seeded_generator()), {}};
    ds->digest = aqcl::dataset_digest(ds->data);
    *out = ds;
  });
}

aqcl_status aqcl_dataset_ingest(const char* path, const char* config_json, aqcl_dataset** out,
                                char** report_json) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    const auto cfg = run_config(config_json);
    aqcl::IngestReport rep;
    auto* ds = new aqcl_dataset{aqcl::ingest_file(path, cfg.data.schema, &rep), {}};
    ds->digest = aqcl::dataset_digest(ds->data);
    *out = ds;
    put(report_json, json{{"rows", rep.rows},
                          {"accepted", rep.accepted},
                          {"malformed", issues_json(rep.malformed)},
                          {"rejected", issues_json(rep.rejected)}}
                         .dump(2));
  });
}

aqcl_status aqcl_dataset_load(const char* config_json, aqcl_dataset** out) {
  return guarded([&] {
    require(out, "out");
    const auto cfg = run_config(config_json);
    auto* ds = new aqcl_dataset{aqcl::load_dataset(cfg), {}};
    ds->digest = aqcl::dataset_digest(ds->data);
    *out = ds;
  });
}

aqcl_status aqcl_dataset_write(const aqcl_dataset* ds, const char* path) {
  return guarded([&] {
    require(ds, "dataset");
    require(path, "path");
    aqcl::write_dataset_file(path, ds->data);
  });
}

aqcl_status aqcl_dataset_size(const aqcl_dataset* ds, size_t* n) {
  return guarded([&] {
    require(ds, "dataset");
    require(n, "n_samples");
    *n = ds->data.samples.size();
  });
}

aqcl_status aqcl_dataset_summary(const aqcl_dataset* ds, const char* config_json, char** summary_json) {
  return guarded([&] {
    require(ds, "dataset");
    require(summary_json, "summary_json");
    const auto cfg = run_config(config_json);
    const auto p = aqcl::prepare(ds->data, cfg);
    std::size_t users[3] = {0, 0, 0};
    for (std::size_t u = 0; u < ds->data.num_users; ++u)
      if (p.buckets.present[u]) ++users[static_cast<int>(p.buckets.user_bucket[u])];
    json j = {{"samples", ds->data.samples.size()},
              {"users", ds->data.num_users},
              {"items", ds->data.num_items},
              {"digest", ds->digest},
              {"splits", {{"train", p.splits.train.size()}, {"val", p.splits.val.size()}, {"test", p.splits.test.size()}}},
              {"bucket_thresholds", {p.buckets.non_active_max, p.buckets.slightly_max}},
              {"mean_history_length", p.mean_length}};
    for (int b = 0; b < 3; ++b) j["bucket_users"][aqcl::kBucketNames[b]] = users[b];
    put(summary_json, j.dump(2));
  });
}

void aqcl_dataset_free(aqcl_dataset* ds) { delete ds; }

aqcl_status aqcl_train(const aqcl_dataset* ds, const char* config_json, const char* trace_path,
                       aqcl_model** out, char** summary_json) {
  return guarded([&] {
    require(ds, "dataset");
    require(out, "out");
    const auto cfg = run_config(config_json);
    std::ofstream trace;
    aqcl::TrainHooks hooks;
    if (trace_path) {
      trace.open(trace_path, std::ios::binary);
      if (!trace) aqcl::fail(aqcl::ErrorCode::Io, std::string("cannot write trace '") + trace_path + "'");
      hooks.trace_out = &trace;
    }
    aqcl::TrainTrace tr;
    auto* m = new aqcl_model{aqcl::train_checkpoint(ds->data, cfg, hooks, &tr)};
    *out = m;
    put(summary_json, epoch_summary(tr).dump(2));
  });
}

aqcl_status aqcl_model_save(const aqcl_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    aqcl::save_checkpoint(path, model->ckpt);
  });
}

aqcl_status aqcl_model_load(const char* path, aqcl_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new aqcl_model{aqcl::load_checkpoint(path)};
  });
}

aqcl_status aqcl_model_config(const aqcl_model* model, char** config_json) {
  return guarded([&] {
    require(model, "model");
    require(config_json, "config_json");
    put(config_json, model->ckpt.run_config.dump(2));
  });
}

void aqcl_model_free(aqcl_model* model) { delete model; }

aqcl_status aqcl_evaluate(const aqcl_model* model, const aqcl_dataset* ds, const char* split,
                          char** report_json) {
  return guarded([&] {
    require(model, "model");
    require(ds, "dataset");
    require(split, "split");
    require(report_json, "report_json");
    const auto cfg = aqcl::config_from_json(model->ckpt.run_config);
    const auto& mc = model->ckpt.model.config;
    if (mc.num_users != ds->data.num_users || mc.num_items != ds->data.num_items ||
        mc.extra_vocab != ds->data.extra_vocab) {
      aqcl::fail(aqcl::ErrorCode::Shape, "evaluate: dataset vocabulary does not match the model");
    }
    const auto p = aqcl::prepare(ds->data, cfg);
    const auto report = aqcl::evaluate(mc, model->ckpt.model.params, p.split(split), p.buckets, split);
    put(report_json, aqcl::dump_report(report));
  });
}

aqcl_status aqcl_report_table(const char* report_json, char** table_tsv) {
  return guarded([&] {
    require(report_json, "report_json");
    require(table_tsv, "table_tsv");
    put(table_tsv, aqcl::flat_table(aqcl::report_from_json(parse_json(report_json, "report"))));
  });
}

aqcl_status aqcl_search_alpha(const aqcl_dataset* ds, const char* config_json, unsigned parallel,
                              char** result_json, char** timings_json, char** table_tsv) {
  return guarded([&] {
    require(ds, "dataset");
    require(result_json, "result_json");
    const auto cfg = run_config(config_json);
    const auto p = aqcl::prepare(ds->data, cfg);
    const auto setup = cfg.setup(ds->data, p.mean_length);
    const auto r = aqcl::search_alpha(aqcl::grid_candidates(cfg.search), setup, p.splits, p.buckets, parallel);
    put(result_json, aqcl::search_report_json(r).dump(2) + "\n");
    put(timings_json, aqcl::search_timings_json(r).dump(2) + "\n");
    put(table_tsv, aqcl::search_table_tsv(r));
  });
}

aqcl_status aqcl_compare(const char* target_report_json, const char* base_report_json, char** out_json,
                         char** table_tsv) {
  return guarded([&] {
    require(target_report_json, "target_report_json");
    require(base_report_json, "base_report_json");
    auto target = aqcl::report_from_json(parse_json(target_report_json, "target report"));
    const auto base = aqcl::report_from_json(parse_json(base_report_json, "base report"));
    aqcl::attach_rela_impr(target, base);
    put(out_json, aqcl::dump_report(target));
    put(table_tsv, aqcl::flat_table(target));
  });
}

aqcl_status aqcl_export_reps(const aqcl_model* model, const aqcl_dataset* ds, const char* split,
                             const char* path, size_t* rows) {
  return guarded([&] {
    require(model, "model");
    require(ds, "dataset");
    require(split, "split");
    require(path, "path");
    const auto cfg = aqcl::config_from_json(model->ckpt.run_config);
    const auto p = aqcl::prepare(ds->data, cfg);
    const auto& samples = p.split(split);
    const auto& tm = model->ckpt.model;
    aqcl::check_indices(tm.config, samples);
    const auto h = aqcl::latent_codes(tm.config, tm.params, samples);
    const auto ids = aqcl::interest_ids(tm, samples);
    std::ofstream out(path, std::ios::binary);
    if (!out) aqcl::fail(aqcl::ErrorCode::Io, std::string("cannot write '") + path + "'");
    out.precision(17);
    for (std::size_t j = 0; j < h.cols(); ++j) out << 'h' << j << ',';
    out << "interest_id\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
      for (double v : h.row(i)) out << v << ',';
      out << ids[i] << '\n';
    }
    if (!out) aqcl::fail(aqcl::ErrorCode::Io, std::string("write failed for '") + path + "'");
    if (rows) *rows = samples.size();
  });
}

aqcl_status aqcl_rela_impr(double target_auc, double base_auc, double* out) {
  return guarded([&] {
    require(out, "out");
    const auto m = aqcl::rela_impr(target_auc, base_auc);
    if (!m.defined()) aqcl::fail(aqcl::ErrorCode::Undefined, "rela_impr: " + m.reason);
    *out = *m.value;
  });
}

aqcl_status aqcl_auc(const double* scores, const int* labels, size_t n, double* out) {
  return guarded([&] {
    require(out, "out");
    if (n > 0) {
      require(scores, "scores");
      require(labels, "labels");
    }
    const auto m = aqcl::auc({scores, n}, {labels, n});
    if (!m.defined()) aqcl::fail(aqcl::ErrorCode::Undefined, "auc: " + m.reason);
    *out = *m.value;
  });
}

aqcl_status aqcl_alpha(double w1, double w2, double mean_length, double length, double* out) {
  return guarded([&] {
    require(out, "out");
    if (!(length >= 0.0)) aqcl::fail(aqcl::ErrorCode::InvalidArgument, "alpha: length must be >= 0");
    *out = aqcl::alpha(aqcl::AlphaSchedule{w1, w2, mean_length}, length);
  });
}

aqcl_status aqcl_file_digest(const char* path, uint64_t* out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    std::ifstream in(path, std::ios::binary);
    if (!in) aqcl::fail(aqcl::ErrorCode::Io, std::string("cannot open '") + path + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    *out = aqcl::fnv1a64(bytes);
  });
}

uint64_t aqcl_bytes_digest(const void* data, size_t n) {
  return aqcl::fnv1a64({static_cast<const char*>(data), n});
}

}  // extern "C"
