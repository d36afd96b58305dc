#include "aqcl/pipeline.hpp"

#include <cstdio>
#include <sstream>

#include "aqcl/error.hpp"

namespace aqcl {

const std::vector<Sample>& PreparedData::split(const std::string& name) const {
  if (name == "train") return splits.train;
  if (name == "val") return splits.val;
  if (name == "test") return splits.test;
  fail(ErrorCode::InvalidArgument, "split must be train, val or test (got '" + name + "')");
}

Dataset load_dataset(const RunConfig& cfg) {
  if (!cfg.data.path.empty()) return ingest_file(cfg.data.path, cfg.data.schema);
  return generate(cfg.seeded_generator());
}

PreparedData prepare(const Dataset& ds, const RunConfig& cfg) {
  PreparedData p;
  p.splits = split_by_time(ds, cfg.boundaries());
  p.buckets = bucket_users(ds, p.splits, cfg.data.bucket_thresholds);
  p.mean_length = p.buckets.mean_length();
  return p;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string dataset_digest(const Dataset& ds) {
  std::ostringstream os;
  write_dataset(os, ds);
  return hex64(fnv1a64(os.str()));
}

std::vector<long> interest_ids(const TrainedModel& model, const std::vector<Sample>& samples) {
  std::vector<long> ids(samples.size(), -1);
  if (!model.codebook || !model.params.has_projector() || samples.empty()) return ids;
  const Tensor h = latent_codes(model.config, model.params, samples);
  nd::Tape tape;
  BoundParams bp = bind(tape, model.config, model.params, false);
  const Tensor& z = project(bp, tape.constant(h)).value();
  for (std::size_t i = 0; i < samples.size(); ++i)
    ids[i] = static_cast<long>(topk_codewords(model.codebook->codewords, z.row(i), 1)[0]);
  return ids;
}

Checkpoint train_checkpoint(const Dataset& ds, const RunConfig& cfg, const TrainHooks& hooks,
                            TrainTrace* trace) {
  const PreparedData data = prepare(ds, cfg);
  const TrainSetup setup = cfg.setup(ds, data.mean_length);
  TrainResult r = train(setup, data.splits.train, data.splits.val, hooks);
  Checkpoint ckpt;
  ckpt.run_config = to_json(cfg);
  ckpt.model = std::move(r.model);
  ckpt.schedule = setup.schedule;
  ckpt.dataset_digest = dataset_digest(ds);
  if (trace) *trace = std::move(r.trace);
  return ckpt;
}

}  // namespace aqcl
