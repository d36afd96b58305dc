#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "aqcl/alpha.hpp"
#include "aqcl/trainer.hpp"

namespace aqcl {

// On-disk layout, all integers little-endian:
//
//   "AQCLCKPT"                 8-byte magic
//   u32 version                currently 1
//   u64 n, n bytes             UTF-8 JSON metadata: run config, model config
//                              with vocabulary sizes, alpha schedule, tau3
//   u32 count                  number of tensors, then per tensor:
//     u32 n, n bytes           name
//     u32 rank, u64 dims[rank]
//     f64 values[prod(dims)]   IEEE-754 binary64, row-major
//
// Tensor names follow ModelParams::named(); the codebook, when present, is
// stored as "codebook.codewords".
struct Checkpoint {
  nlohmann::json run_config;  // resolved configuration the model was trained with
  TrainedModel model;
  AlphaSchedule schedule;
  std::string dataset_digest;  // of the training data, hex; empty when unknown
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

// Drops the training-only parts (projector, codebook).
void strip_auxiliary(Checkpoint& ckpt);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace aqcl
