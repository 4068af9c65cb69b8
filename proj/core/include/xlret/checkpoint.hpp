// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xlret/tensor.hpp"

namespace xlret {

inline constexpr int kCheckpointFormatVersion = 1;

// A checkpoint is two files derived from `base`:
//   <base>.manifest.json  format version, config hash, stage, and for every
//                         tensor its shape, blob offset, and byte length
//   <base>.tensors.bin    per tensor: u32 rank, u32 dims, fp32 values,
//                         all little-endian, at the manifest offset
// Tensors are laid out in name-sorted order; identical inputs produce
// byte-identical files.
void save_checkpoint(const std::filesystem::path& base,
                     const std::string& stage, std::uint64_t config_hash,
                     const std::vector<NamedTensor<float>>& tensors);

struct LoadedCheckpoint {
  int format_version = 0;
  std::string stage;
  std::uint64_t config_hash = 0;
  std::map<std::string, Tensor<float>> tensors;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& base);

bool checkpoint_exists(const std::filesystem::path& base);

// Copies loaded values into live parameters by name. Missing tensors,
// unknown tensors, or shape mismatches are compatibility errors.
void copy_into(const std::vector<NamedTensor<float>>& params,
               const LoadedCheckpoint& checkpoint);

}  // namespace xlret
