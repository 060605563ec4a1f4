#pragma once

#include <string>

#include "adfseg/model.hpp"

namespace adfseg {

/// What training needs to resume bitwise: weights, Adam moments and step
/// counter, the epoch already completed, the frozen MMD bandwidth, and the
/// config hash the run was started with.
struct CheckpointMeta {
  int64_t epoch{0};
  int64_t adam_t{0};
  double sigma{0};  // 0 while still unset (auto mode before the first batch)
  uint64_t config_hash{0};
  std::string config_text;  // canonical config JSON; makes the archive self-contained
};

/// Single binary archive: magic, JSON header (meta + parameter table), then
/// raw little-endian doubles for weights, Adam m, Adam v.
void save_checkpoint(const std::string& path, const nn::ParamStore& params,
                     const std::vector<nn::Tensor>& adam_m, const std::vector<nn::Tensor>& adam_v,
                     const CheckpointMeta& meta);

/// Restores into an already-built model with matching parameter names/shapes;
/// any mismatch or truncation raises IoError describing the corruption.
CheckpointMeta load_checkpoint(const std::string& path, nn::ParamStore& params,
                               std::vector<nn::Tensor>& adam_m, std::vector<nn::Tensor>& adam_v);

/// Reads only the header metadata.
CheckpointMeta peek_checkpoint(const std::string& path);

}  // namespace adfseg
