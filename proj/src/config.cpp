#include "aqcl/config.hpp"

#include <set>

#include "aqcl/error.hpp"

namespace aqcl {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as typos.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorCode::Config, "config: '" + where() + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorCode::Config, "config: '" + name(key) + "' has the wrong type");
    }
  }

  template <typename T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  void get_char(const char* key, char& out) {
    std::string s(1, out);
    get(key, s);
    if (s.size() != 1) fail(ErrorCode::Config, "config: '" + name(key) + "' must be one character");
    out = s[0];
  }

  // Calls fn(Reader&) on a nested object when present.
  template <typename F>
  void section(const char* key, F&& fn) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    Reader sub(j_.at(key), name(key));
    fn(sub);
    sub.finish();
  }

  // Marks a key handled elsewhere.
  void skip(const char* key) { seen_.insert(key); }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) fail(ErrorCode::Config, "config: unknown key '" + name(k.c_str()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }
  std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const char* pooling_name(Pooling p) { return p == Pooling::Mean ? "mean" : "attention"; }

Pooling parse_pooling(const std::string& s) {
  if (s == "mean") return Pooling::Mean;
  if (s == "attention") return Pooling::Attention;
  fail(ErrorCode::Config, "config: model.pooling must be 'mean' or 'attention' (got '" + s + "')");
}

json generator_json(const GeneratorConfig& g) {
  json groups = json::array();
  for (const auto& a : g.groups)
    groups.push_back({{"fraction", a.fraction}, {"min_length", a.min_length}, {"max_length", a.max_length}});
  return {{"n_users", g.n_users},
          {"n_items", g.n_items},
          {"n_interests", g.n_interests},
          {"groups", groups},
          {"p_hi", g.p_hi},
          {"p_lo", g.p_lo},
          {"noise", g.noise},
          {"second_interest_rate", g.second_interest_rate},
          {"interest_candidate_rate", g.interest_candidate_rate},
          {"extra_informativeness", g.extra_informativeness},
          {"extra_vocab", g.extra_vocab},
          {"train_tail", g.train_tail},
          {"val_per_user", g.val_per_user},
          {"test_per_user", g.test_per_user},
          {"val_start", g.val_start},
          {"test_start", g.test_start},
          {"end_time", g.end_time}};
}

void read_generator(Reader& r, GeneratorConfig& g) {
  r.get("n_users", g.n_users);
  r.get("n_items", g.n_items);
  r.get("n_interests", g.n_interests);
  r.skip("groups");
  r.get("p_hi", g.p_hi);
  r.get("p_lo", g.p_lo);
  r.get("noise", g.noise);
  r.get("second_interest_rate", g.second_interest_rate);
  r.get("interest_candidate_rate", g.interest_candidate_rate);
  r.get("extra_informativeness", g.extra_informativeness);
  r.get("extra_vocab", g.extra_vocab);
  r.get("train_tail", g.train_tail);
  r.get("val_per_user", g.val_per_user);
  r.get("test_per_user", g.test_per_user);
  r.get("val_start", g.val_start);
  r.get("test_start", g.test_start);
  r.get("end_time", g.end_time);
}

void read_groups(const json& j, GeneratorConfig& g) {
  if (!j.is_array() || j.size() != 3) {
    fail(ErrorCode::Config, "config: 'generator.groups' must list exactly three activity groups");
  }
  for (std::size_t k = 0; k < 3; ++k) {
    Reader r(j[k], "generator.groups[" + std::to_string(k) + "]");
    r.get("fraction", g.groups[k].fraction);
    r.get("min_length", g.groups[k].min_length);
    r.get("max_length", g.groups[k].max_length);
    r.finish();
  }
}

}  // namespace

json model_to_json(const ModelConfig& m, bool with_vocab) {
  json j = {{"embed_dim", m.embed_dim},
            {"hidden_dims", m.hidden_dims},
            {"projector_hidden", m.projector_hidden},
            {"z_dim", m.z_dim},
            {"pooling", pooling_name(m.pooling)},
            {"attention_hidden", m.attention_hidden},
            {"dropout", m.dropout_rate},
            {"leaky_slope", m.leaky_slope}};
  if (with_vocab) {
    j["num_users"] = m.num_users;
    j["num_items"] = m.num_items;
    j["extra_vocab"] = m.extra_vocab;
  }
  return j;
}

namespace {

void read_model(Reader& r, ModelConfig& m, bool with_vocab) {
  r.get("embed_dim", m.embed_dim);
  r.get("hidden_dims", m.hidden_dims);
  r.get("projector_hidden", m.projector_hidden);
  r.get("z_dim", m.z_dim);
  std::string pooling = pooling_name(m.pooling);
  r.get("pooling", pooling);
  m.pooling = parse_pooling(pooling);
  r.get("attention_hidden", m.attention_hidden);
  r.get("dropout", m.dropout_rate);
  r.get("leaky_slope", m.leaky_slope);
  if (with_vocab) {
    r.get("num_users", m.num_users);
    r.get("num_items", m.num_items);
    r.get("extra_vocab", m.extra_vocab);
  }
}

}  // namespace

ModelConfig model_from_json(const json& j, bool with_vocab) {
  ModelConfig m;
  Reader r(j, "model");
  read_model(r, m, with_vocab);
  r.finish();
  return m;
}

void SearchConfig::validate() const {
  if (w1_grid.empty() || w2_grid.empty()) fail(ErrorCode::Config, "search: empty candidate grid");
  for (double v : w1_grid)
    if (!(v > 0.0)) fail(ErrorCode::Config, "search: w1 candidates must be positive");
  for (double v : w2_grid)
    if (!(v > 0.0)) fail(ErrorCode::Config, "search: w2 candidates must be positive");
}

void RunConfig::validate() const {
  if (data.path.empty()) generator.validate();
  if (!(data.schema.max_malformed_fraction >= 0.0))
    fail(ErrorCode::Config, "data.max_malformed_fraction must be >= 0");
  if (data.split && data.split->val_start > data.split->test_start)
    fail(ErrorCode::Config, "data.split: val_start must not exceed test_start");
  if (data.bucket_thresholds && (*data.bucket_thresholds)[0] > (*data.bucket_thresholds)[1])
    fail(ErrorCode::Config, "data.bucket_thresholds must be non-decreasing");
  // Vocabulary sizes are filled from data; validate the shape part only.
  ModelConfig probe = model;
  probe.num_users = probe.num_items = 1;
  probe.validate();
  augment.validate();
  loss.validate(codebook.capacity);
  if (codebook.capacity < 2) fail(ErrorCode::Config, "codebook.capacity must be >= 2");
  if (!(codebook.tau3 > 0.0)) fail(ErrorCode::Config, "codebook.tau3 must be positive");
  sinkhorn.validate();
  AlphaSchedule{alpha_w1, alpha_w2, 1.0}.validate();
  train.validate();
  search.validate();
}

SplitBoundaries RunConfig::boundaries() const {
  if (data.split) return *data.split;
  return {generator.val_start, generator.test_start};
}

GeneratorConfig RunConfig::seeded_generator() const {
  GeneratorConfig g = generator;
  g.seed = seed;
  return g;
}

TrainSetup RunConfig::setup(const Dataset& ds, double mean_length) const {
  TrainSetup s;
  s.model = model;
  s.model.num_users = ds.num_users;
  s.model.num_items = ds.num_items;
  s.model.extra_vocab = ds.extra_vocab;
  s.augment = augment;
  s.loss = loss;
  s.codebook = codebook;
  s.sinkhorn = sinkhorn;
  s.schedule = {alpha_w1, alpha_w2, mean_length};
  s.train = train;
  s.train.seed = seed;
  return s;
}

json to_json(const RunConfig& c) {
  json data = {{"path", c.data.path},
               {"delimiter", std::string(1, c.data.schema.delimiter)},
               {"history_separator", std::string(1, c.data.schema.history_separator)},
               {"max_malformed_fraction", c.data.schema.max_malformed_fraction}};
  const auto b = c.boundaries();
  data["split"] = {{"val_start", b.val_start}, {"test_start", b.test_start}};
  data["bucket_thresholds"] =
      c.data.bucket_thresholds ? json(*c.data.bucket_thresholds) : json(nullptr);
  return {
      {"seed", c.seed},
      {"data", data},
      {"generator", generator_json(c.generator)},
      {"model", model_to_json(c.model, false)},
      {"augment", {{"history_mask_rate", c.augment.history_mask_rate},
                   {"embed_drop_rate", c.augment.embed_drop_rate}}},
      {"loss", {{"tau1", c.loss.tau1},
                {"tau2", c.loss.tau2},
                {"icl_tau", c.loss.icl_tau},
                {"aux_weight", c.loss.aux_weight},
                {"top_k", c.loss.top_k},
                {"alpha_const", c.loss.alpha_const ? json(*c.loss.alpha_const) : json(nullptr)}}},
      {"codebook", {{"capacity", c.codebook.capacity}, {"tau3", c.codebook.tau3}}},
      {"sinkhorn", {{"epsilon", c.sinkhorn.epsilon}, {"n_iters", c.sinkhorn.n_iters}}},
      {"alpha", {{"w1", c.alpha_w1}, {"w2", c.alpha_w2}}},
      {"train", {{"batch_size", c.train.batch_size},
                 {"lr", c.train.adam.lr},
                 {"beta1", c.train.adam.beta1},
                 {"beta2", c.train.adam.beta2},
                 {"adam_eps", c.train.adam.eps},
                 {"max_epochs", c.train.max_epochs},
                 {"patience", c.train.patience},
                 {"embed_l2", c.train.embed_l2},
                 {"aux", aux_mode_name(c.train.aux)},
                 {"codebook_updates", c.train.codebook_updates}}},
      {"search", {{"w1", c.search.w1_grid}, {"w2", c.search.w2_grid}}},
  };
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Reader root(j, "");
  root.get("seed", c.seed);
  root.section("data", [&](Reader& r) {
    r.get("path", c.data.path);
    r.get_char("delimiter", c.data.schema.delimiter);
    r.get_char("history_separator", c.data.schema.history_separator);
    r.get("max_malformed_fraction", c.data.schema.max_malformed_fraction);
    r.section("split", [&](Reader& s) {
      SplitBoundaries b = c.boundaries();
      s.get("val_start", b.val_start);
      s.get("test_start", b.test_start);
      c.data.split = b;
    });
    std::optional<std::array<std::size_t, 2>> thr;
    r.get_optional("bucket_thresholds", thr);
    c.data.bucket_thresholds = thr;
  });
  root.section("generator", [&](Reader& r) {
    read_generator(r, c.generator);
    if (j.at("generator").contains("groups")) read_groups(j.at("generator").at("groups"), c.generator);
  });
  root.section("model", [&](Reader& r) { read_model(r, c.model, false); });
  root.section("augment", [&](Reader& r) {
    r.get("history_mask_rate", c.augment.history_mask_rate);
    r.get("embed_drop_rate", c.augment.embed_drop_rate);
  });
  root.section("loss", [&](Reader& r) {
    r.get("tau1", c.loss.tau1);
    r.get("tau2", c.loss.tau2);
    r.get("icl_tau", c.loss.icl_tau);
    r.get("aux_weight", c.loss.aux_weight);
    r.get("top_k", c.loss.top_k);
    r.get_optional("alpha_const", c.loss.alpha_const);
  });
  root.section("codebook", [&](Reader& r) {
    r.get("capacity", c.codebook.capacity);
    r.get("tau3", c.codebook.tau3);
  });
  root.section("sinkhorn", [&](Reader& r) {
    r.get("epsilon", c.sinkhorn.epsilon);
    r.get("n_iters", c.sinkhorn.n_iters);
  });
  root.section("alpha", [&](Reader& r) {
    r.get("w1", c.alpha_w1);
    r.get("w2", c.alpha_w2);
  });
  root.section("train", [&](Reader& r) {
    r.get("batch_size", c.train.batch_size);
    r.get("lr", c.train.adam.lr);
    r.get("beta1", c.train.adam.beta1);
    r.get("beta2", c.train.adam.beta2);
    r.get("adam_eps", c.train.adam.eps);
    r.get("max_epochs", c.train.max_epochs);
    r.get("patience", c.train.patience);
    r.get("embed_l2", c.train.embed_l2);
    std::string aux = aux_mode_name(c.train.aux);
    r.get("aux", aux);
    c.train.aux = parse_aux_mode(aux);
    r.get("codebook_updates", c.train.codebook_updates);
  });
  root.section("search", [&](Reader& r) {
    r.get("w1", c.search.w1_grid);
    r.get("w2", c.search.w2_grid);
  });
  root.finish();
  c.validate();
  return c;
}

json merge_config(json base, const json& overlay) {
  if (!base.is_object() || !overlay.is_object()) return overlay;
  for (const auto& [k, v] : overlay.items()) {
    if (base.contains(k) && base[k].is_object() && v.is_object()) {
      base[k] = merge_config(base[k], v);
    } else {
      base[k] = v;
    }
  }
  return base;
}

json resolve_config(const json& file, const json& overrides) {
  json merged = to_json(RunConfig{});
  // The split defaults follow the generator windows unless given explicitly.
  merged["data"].erase("split");
  if (!file.is_null()) merged = merge_config(merged, file);
  if (!overrides.is_null()) merged = merge_config(merged, overrides);
  return to_json(config_from_json(merged));
}

}  // namespace aqcl
