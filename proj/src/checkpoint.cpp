#include "aqcl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "aqcl/config.hpp"
#include "aqcl/error.hpp"

namespace aqcl {

namespace {

constexpr char kMagic[8] = {'A', 'Q', 'C', 'L', 'C', 'K', 'P', 'T'};
constexpr const char* kCodebookName = "codebook.codewords";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor& t) {
    str32(name);
    u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) u64(d);
    for (double v : t.data) f64(v);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& b) : b_(b) {}
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) fail(ErrorCode::Parse, "checkpoint: truncated file");
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str32() { return raw(u32()); }
  Tensor tensor() {
    Tensor t;
    const auto rank = u32();
    if (rank > 8) fail(ErrorCode::Parse, "checkpoint: implausible tensor rank");
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      t.shape.push_back(u64());
      n *= t.shape.back();
    }
    need(n * 8);
    t.data.resize(n);
    for (auto& v : t.data) v = f64();
    return t;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json meta;
  meta["run_config"] = ckpt.run_config;
  meta["model"] = model_to_json(ckpt.model.config, true);
  meta["alpha"] = {{"w1", ckpt.schedule.w1},
                   {"w2", ckpt.schedule.w2},
                   {"mean_length", ckpt.schedule.mean_length}};
  meta["codebook"] = ckpt.model.codebook ? nlohmann::json{{"tau3", ckpt.model.codebook->tau3}}
                                         : nlohmann::json(nullptr);
  meta["dataset_digest"] = ckpt.dataset_digest;

  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  const std::string m = meta.dump();
  w.u64(m.size());
  w.bytes(m.data(), m.size());
  const auto named = ckpt.model.params.named();
  w.u32(static_cast<std::uint32_t>(named.size() + (ckpt.model.codebook ? 1 : 0)));
  for (const auto& [name, t] : named) w.tensor(name, *t);
  if (ckpt.model.codebook) w.tensor(kCodebookName, ckpt.model.codebook->codewords);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  ByteReader r(bytes);
  if (r.raw(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    fail(ErrorCode::Parse, "checkpoint: bad magic, not a checkpoint file");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    fail(ErrorCode::Parse, "checkpoint: unsupported version " + std::to_string(version));
  nlohmann::json meta;
  const auto meta_len = r.u64();
  try {
    meta = nlohmann::json::parse(r.raw(meta_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("checkpoint: bad metadata: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.run_config = meta.at("run_config");
    ckpt.model.config = model_from_json(meta.at("model"), true);
    const auto& a = meta.at("alpha");
    ckpt.schedule = {a.at("w1").get<double>(), a.at("w2").get<double>(),
                     a.at("mean_length").get<double>()};
    ckpt.dataset_digest = meta.value("dataset_digest", std::string());
    if (!meta.at("codebook").is_null()) {
      ckpt.model.codebook = Codebook{};
      ckpt.model.codebook->tau3 = meta.at("codebook").at("tau3").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("checkpoint: bad metadata: ") + e.what());
  }

  std::map<std::string, Tensor> tensors;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str32();
    tensors[name] = r.tensor();
  }
  if (!r.done()) fail(ErrorCode::Parse, "checkpoint: trailing bytes");

  // Build a parameter skeleton of the right layout, then fill it by name.
  Rng rng = make_rng(0, Stream::Init);
  ckpt.model.params = init_params(ckpt.model.config, rng);
  if (!tensors.count("projector0.weight")) ckpt.model.params.projector.clear();
  for (auto& [name, t] : ckpt.model.params.named()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail(ErrorCode::Parse, "checkpoint: missing tensor '" + name + "'");
    if (it->second.shape != t->shape)
      fail(ErrorCode::Parse, "checkpoint: tensor '" + name + "' has shape " + it->second.shape_str() +
                                 ", expected " + t->shape_str());
    *t = std::move(it->second);
    tensors.erase(it);
  }
  if (ckpt.model.codebook) {
    auto it = tensors.find(kCodebookName);
    if (it == tensors.end()) fail(ErrorCode::Parse, "checkpoint: missing codebook tensor");
    ckpt.model.codebook->codewords = std::move(it->second);
    tensors.erase(it);
  }
  if (!tensors.empty()) fail(ErrorCode::Parse, "checkpoint: unexpected tensor '" + tensors.begin()->first + "'");
  return ckpt;
}

void strip_auxiliary(Checkpoint& ckpt) {
  ckpt.model.params.projector.clear();
  ckpt.model.codebook.reset();
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace aqcl
