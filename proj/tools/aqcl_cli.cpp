#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "aqcl/aqcl.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;
constexpr int kExitReplayMismatch = 10;

struct CliError {
  std::string code;
  std::string message;
  int exit_code;
};

[[noreturn]] void die(const std::string& code, const std::string& message, int exit_code = 1) {
  throw CliError{code, message, exit_code};
}

void check(aqcl_status s) {
  if (s != AQCL_OK) die(aqcl_status_name(s), aqcl_last_error(), static_cast<int>(s));
}

// Owns a string handed out by the library.
class CStr {
 public:
  CStr() = default;
  CStr(const CStr&) = delete;
  CStr& operator=(const CStr&) = delete;
  ~CStr() { aqcl_string_free(p_); }
  char** out() { return &p_; }
  std::string str() const { return p_ ? p_ : ""; }

 private:
  char* p_ = nullptr;
};

struct Dataset {
  aqcl_dataset* h = nullptr;
  Dataset() = default;
  Dataset(const Dataset&) = delete;
  ~Dataset() { aqcl_dataset_free(h); }
};

struct Model {
  aqcl_model* h = nullptr;
  Model() = default;
  Model(const Model&) = delete;
  ~Model() { aqcl_model_free(h); }
};

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_digest(const fs::path& p) {
  std::uint64_t d = 0;
  check(aqcl_file_digest(p.string().c_str(), &d));
  return hex16(d);
}

std::string read_text(const fs::path& p, const char* what) {
  std::ifstream in(p, std::ios::binary);
  if (!in) die("io", std::string("cannot read ") + what + " '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
  if (!out) die("io", "cannot write '" + p.string() + "'");
}

json parse_json_file(const fs::path& p, const char* what) {
  const std::string text = read_text(p, what);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    die("parse", std::string(what) + " '" + p.string() + "': " + e.what());
  }
}

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string aux;
  std::optional<double> alpha_const;
  unsigned parallel = 1;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string split = "test";
  std::string target;
  std::string base;
  std::vector<std::string> sets;
};

// "a.b.c=value": value is taken as JSON when it parses, otherwise as a string.
void apply_set(json& overrides, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) die("usage", "--set expects key.path=value, got '" + assignment + "'", 2);
  json value;
  const std::string raw = assignment.substr(eq + 1);
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &overrides;
  std::string key = assignment.substr(0, eq);
  for (std::size_t dot; (dot = key.find('.')) != std::string::npos; key = key.substr(dot + 1)) {
    json& child = (*node)[key.substr(0, dot)];
    if (!child.is_object()) child = json::object();
    node = &child;
  }
  (*node)[key] = value;
}

json flag_overrides(const Options& o) {
  json ov = json::object();
  for (const auto& s : o.sets) apply_set(ov, s);
  if (o.seed) ov["seed"] = *o.seed;
  if (!o.aux.empty()) ov["train"]["aux"] = o.aux;
  if (o.alpha_const) ov["loss"]["alpha_const"] = *o.alpha_const;
  if (!o.data.empty()) ov["data"]["path"] = absolute(o.data);
  return ov;
}

bool has_overrides(const Options& o) {
  return o.seed || !o.aux.empty() || o.alpha_const || !o.data.empty() || !o.sets.empty();
}

json resolve(const json& file, const json& overrides) {
  CStr out;
  check(aqcl_config_resolve(file.dump().c_str(), overrides.dump().c_str(), out.out()));
  return json::parse(out.str());
}

// One invocation: where outputs go, what was read, what was written.
class Run {
 public:
  Run(std::string command, const Options& opts) : command_(std::move(command)), opts_(opts) {
    if (!opts.config.empty()) {
      const json loaded = parse_json_file(opts.config, "config");
      if (loaded.is_object() && loaded.contains("aqcl_manifest")) {
        replay_ = loaded;
        if (replay_.value("command", "") != command_)
          die("usage", "manifest was written by '" + replay_.value("command", "") + "', not '" + command_ + "'", 2);
        if (has_overrides(opts)) die("usage", "replaying a manifest does not take override flags", 2);
      } else {
        file_config_ = loaded;
      }
    }
  }

  bool replaying() const { return !replay_.is_null(); }
  const json& file_config() const { return file_config_; }

  // Stored argument, from the manifest when replaying.
  std::string arg(const char* key, const std::string& given) const {
    if (replaying()) {
      const json& a = replay_.at("args");
      return a.contains(key) && a[key].is_string() ? a[key].get<std::string>() : std::string();
    }
    return given;
  }

  json config_for_generation() const {
    if (replaying()) return replay_.at("config");
    return resolve(file_config_, flag_overrides(opts_));
  }

  void set_config(json cfg) { config_ = std::move(cfg); }
  void set_arg(const std::string& key, json v) { args_[key] = std::move(v); }
  void set_extra(const std::string& key, json v) { extra_[key] = std::move(v); }

  void add_input(const std::string& role, const std::string& path) {
    const std::string digest = file_digest(path);
    if (replaying()) {
      for (const auto& in : replay_.at("inputs")) {
        if (in.at("role") == role && in.at("digest") != digest)
          die("replay_mismatch", "input '" + role + "' (" + path + ") changed since the manifest was written",
              kExitReplayMismatch);
      }
    }
    inputs_.push_back({{"role", role}, {"path", path}, {"digest", digest}});
  }

  const fs::path& dir() {
    if (dir_.empty()) dir_ = make_dir();
    return dir_;
  }

  fs::path output(const std::string& name, bool deterministic = true) {
    outputs_.push_back({name, deterministic});
    return dir() / name;
  }

  // Writes manifest.json and, when replaying, compares output digests.
  void finish() {
    json outs = json::array();
    for (const auto& [name, deterministic] : outputs_) {
      json o = {{"name", name}, {"digest", file_digest(dir() / name)}};
      if (!deterministic) o["deterministic"] = false;
      outs.push_back(o);
    }
    json m = {{"aqcl_manifest", kManifestVersion},
              {"tool_version", aqcl_version()},
              {"command", command_},
              {"seed", config_.is_object() && config_.contains("seed") ? config_["seed"] : json(nullptr)},
              {"config", config_},
              {"args", args_},
              {"inputs", inputs_},
              {"outputs", outs}};
    if (!opts_.config.empty() && !replaying()) m["config_file"] = {{"path", absolute(opts_.config)}, {"digest", file_digest(opts_.config)}};
    for (auto& [k, v] : extra_.items()) m[k] = v;
    write_text(dir() / "manifest.json", m.dump(2) + "\n");
    std::cout << dir().string() << "\n";
    if (replaying()) verify(outs);
  }

 private:
  void verify(const json& outs) const {
    std::size_t compared = 0;
    for (const auto& want : replay_.at("outputs")) {
      if (!want.value("deterministic", true)) continue;
      const json* got = nullptr;
      for (const auto& o : outs)
        if (o.at("name") == want.at("name")) got = &o;
      if (!got) die("replay_mismatch", "output '" + want.at("name").get<std::string>() + "' was not produced", kExitReplayMismatch);
      if (got->at("digest") != want.at("digest"))
        die("replay_mismatch", "output '" + want.at("name").get<std::string>() + "' differs from the manifest",
            kExitReplayMismatch);
      ++compared;
    }
    std::cerr << "replay: " << compared << " outputs identical\n";
  }

  fs::path make_dir() const {
    fs::path d;
    if (!opts_.out.empty()) {
      d = opts_.out;
    } else {
      const char* root = std::getenv("AQCL_ARTIFACT_ROOT");
      const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
      std::tm tm{};
      gmtime_r(&now, &tm);
      char stamp[32];
      std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
      const std::string key = command_ + config_.dump() + args_.dump();
      const std::string base = command_ + "-" + stamp + "-" + hex16(aqcl_bytes_digest(key.data(), key.size())).substr(0, 8);
      const fs::path parent = root && *root ? fs::path(root) : fs::path("runs");
      d = parent / base;
      for (int i = 1; fs::exists(d); ++i) d = parent / (base + "." + std::to_string(i));
    }
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) die("io", "cannot create run directory '" + d.string() + "': " + ec.message());
    return d;
  }

  std::string command_;
  const Options& opts_;
  json replay_;
  json file_config_ = json::object();
  json config_;
  json args_ = json::object();
  json inputs_ = json::array();
  json extra_ = json::object();
  std::vector<std::pair<std::string, bool>> outputs_;
  fs::path dir_;
};

void load_data(const json& cfg, Run& run, Dataset& ds) {
  const std::string path = cfg.at("data").value("path", "");
  if (!path.empty()) run.add_input("data", path);
  check(aqcl_dataset_load(cfg.dump().c_str(), &ds.h));
}

void cmd_gen(const Options& o) {
  Run run("gen", o);
  json cfg = run.config_for_generation();
  cfg["data"]["path"] = "";
  run.set_config(cfg);
  Dataset ds;
  check(aqcl_dataset_generate(cfg.dump().c_str(), &ds.h));
  check(aqcl_dataset_write(ds.h, run.output("dataset.csv").string().c_str()));
  CStr summary;
  check(aqcl_dataset_summary(ds.h, cfg.dump().c_str(), summary.out()));
  write_text(run.output("summary.json"), summary.str());
  run.finish();
}

void cmd_train(const Options& o) {
  Run run("train", o);
  const json cfg = run.config_for_generation();
  run.set_config(cfg);
  Dataset ds;
  load_data(cfg, run, ds);
  const std::string dumped = cfg.dump();
  const fs::path trace = run.output("trace.jsonl");
  Model model;
  CStr summary;
  check(aqcl_train(ds.h, dumped.c_str(), trace.string().c_str(), &model.h, summary.out()));
  write_text(run.output("train_summary.json"), summary.str());
  check(aqcl_model_save(model.h, run.output("checkpoint.aqcl").string().c_str()));
  for (const char* split : {"val", "test"}) {
    CStr report, table;
    check(aqcl_evaluate(model.h, ds.h, split, report.out()));
    check(aqcl_report_table(report.str().c_str(), table.out()));
    write_text(run.output(std::string("report_") + split + ".json"), report.str());
    write_text(run.output(std::string("report_") + split + ".tsv"), table.str());
    if (std::string(split) == "test") std::cerr << table.str();
  }
  run.finish();
}

void cmd_search(const Options& o) {
  Run run("search-alpha", o);
  const json cfg = run.config_for_generation();
  run.set_config(cfg);
  const unsigned parallel = o.parallel == 0 ? 1 : o.parallel;
  run.set_arg("parallel", parallel);
  Dataset ds;
  load_data(cfg, run, ds);
  CStr result, timings, table;
  check(aqcl_search_alpha(ds.h, cfg.dump().c_str(), parallel, result.out(), timings.out(), table.out()));
  write_text(run.output("search.json"), result.str());
  write_text(run.output("search.tsv"), table.str());
  write_text(run.output("timings.json", false), timings.str());
  std::cerr << "winner: " << json::parse(result.str()).at("winner").dump() << "\n";
  run.finish();
}

// Configuration stored in the checkpoint, optionally pointed at another data file.
json checkpoint_config(const Model& m, const std::string& data) {
  CStr c;
  check(aqcl_model_config(m.h, c.out()));
  json ov = json::object();
  if (!data.empty()) ov["data"]["path"] = data;
  return resolve(json::parse(c.str()), ov);
}

void cmd_eval(const Options& o) {
  Run run("eval", o);
  const std::string ckpt = run.arg("checkpoint", o.checkpoint.empty() ? "" : absolute(o.checkpoint));
  const std::string split = run.arg("split", o.split);
  const std::string data = run.arg("data", o.data.empty() ? "" : absolute(o.data));
  const std::string base = run.arg("base", o.base.empty() ? "" : absolute(o.base));
  if (ckpt.empty()) die("usage", "eval requires --checkpoint", 2);
  run.set_arg("checkpoint", ckpt);
  run.set_arg("split", split);
  if (!data.empty()) run.set_arg("data", data);
  if (!base.empty()) run.set_arg("base", base);
  run.add_input("checkpoint", ckpt);
  Model model;
  check(aqcl_model_load(ckpt.c_str(), &model.h));
  const json cfg = checkpoint_config(model, data);
  run.set_config(cfg);
  Dataset ds;
  load_data(cfg, run, ds);
  CStr report;
  check(aqcl_evaluate(model.h, ds.h, split.c_str(), report.out()));
  std::string text = report.str();
  if (!base.empty()) {
    run.add_input("base", base);
    CStr cmp, unused;
    check(aqcl_compare(text.c_str(), read_text(base, "base report").c_str(), cmp.out(), unused.out()));
    text = cmp.str();
  }
  CStr table;
  check(aqcl_report_table(text.c_str(), table.out()));
  write_text(run.output("report.json"), text);
  write_text(run.output("report.tsv"), table.str());
  std::cerr << table.str();
  run.finish();
}

void cmd_compare(const Options& o) {
  Run run("compare", o);
  const std::string target = run.arg("target", o.target.empty() ? "" : absolute(o.target));
  const std::string base = run.arg("base", o.base.empty() ? "" : absolute(o.base));
  if (target.empty() || base.empty()) die("usage", "compare requires --target and --base", 2);
  run.set_arg("target", target);
  run.set_arg("base", base);
  run.add_input("target", target);
  run.add_input("base", base);
  CStr out, table;
  check(aqcl_compare(read_text(target, "target report").c_str(), read_text(base, "base report").c_str(),
                     out.out(), table.out()));
  write_text(run.output("compare.json"), out.str());
  write_text(run.output("compare.tsv"), table.str());
  std::cerr << table.str();
  run.finish();
}

void cmd_export(const Options& o) {
  Run run("export-reps", o);
  const std::string ckpt = run.arg("checkpoint", o.checkpoint.empty() ? "" : absolute(o.checkpoint));
  const std::string split = run.arg("split", o.split);
  const std::string data = run.arg("data", o.data.empty() ? "" : absolute(o.data));
  if (ckpt.empty()) die("usage", "export-reps requires --checkpoint", 2);
  run.set_arg("checkpoint", ckpt);
  run.set_arg("split", split);
  if (!data.empty()) run.set_arg("data", data);
  run.add_input("checkpoint", ckpt);
  Model model;
  check(aqcl_model_load(ckpt.c_str(), &model.h));
  const json cfg = checkpoint_config(model, data);
  run.set_config(cfg);
  Dataset ds;
  load_data(cfg, run, ds);
  std::size_t rows = 0;
  check(aqcl_export_reps(model.h, ds.h, split.c_str(), run.output("reps.csv").string().c_str(), &rows));
  run.set_extra("rows", rows);
  run.finish();
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive interest-quantised contrastive learning for CTR models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(aqcl_version()));
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON config file, or a manifest.json to replay");
    c->add_option("--out", o.out, "Output directory (default: $AQCL_ARTIFACT_ROOT/<cmd>-<time>-<digest>)");
  };
  auto overrides = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "Top-level seed");
    c->add_option("--aux", o.aux, "Auxiliary loss")->check(CLI::IsMember({"none", "icl", "aqcl"}));
    c->add_option("--alpha-const", o.alpha_const, "Replace the alpha schedule with a constant");
    c->add_option("--data", o.data, "Dataset file (default: generate from the config)");
    c->add_option("--set", o.sets, "Override any config key, e.g. train.max_epochs=3");
  };

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  common(gen);
  gen->add_option("--seed", o.seed, "Top-level seed");
  gen->add_option("--set", o.sets, "Override any config key");

  auto* train = app.add_subcommand("train", "Train a model, evaluate on val and test");
  common(train);
  overrides(train);

  auto* search = app.add_subcommand("search-alpha", "Grid search over the alpha schedule");
  common(search);
  overrides(search);
  search->add_option("--parallel", o.parallel, "Concurrent candidates");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  eval->add_option("--split", o.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--data", o.data, "Dataset file (default: the checkpoint's data source)");
  eval->add_option("--base", o.base, "Base report for RelaImpr");

  auto* compare = app.add_subcommand("compare", "RelaImpr of one report against another");
  common(compare);
  compare->add_option("--target", o.target, "Target report.json");
  compare->add_option("--base", o.base, "Base report.json");

  auto* exp = app.add_subcommand("export-reps", "Export latent codes and interest ids");
  common(exp);
  exp->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  exp->add_option("--split", o.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  exp->add_option("--data", o.data, "Dataset file (default: the checkpoint's data source)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*gen) cmd_gen(o);
    if (*train) cmd_train(o);
    if (*search) cmd_search(o);
    if (*eval) cmd_eval(o);
    if (*compare) cmd_compare(o);
    if (*exp) cmd_export(o);
  } catch (const CliError& e) {
    print_error(e.code, e.message);
    return e.exit_code;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 9;
  }
  return 0;
}
