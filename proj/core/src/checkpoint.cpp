// SPDX-License-Identifier: Apache-2.0
#include "xlret/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "xlret/errors.hpp"

namespace xlret {

namespace {

std::filesystem::path manifest_path(const std::filesystem::path& base) {
  return base.string() + ".manifest.json";
}

std::filesystem::path blob_path(const std::filesystem::path& base) {
  return base.string() + ".tensors.bin";
}

void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32_le(const std::string& in, std::size_t offset) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + 1]))
             << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + 2]))
             << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + 3]))
             << 24;
}

std::string hash_to_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash));
  return buf;
}

std::uint64_t hex_to_hash(const std::string& hex) {
  return std::stoull(hex, nullptr, 16);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& base,
                     const std::string& stage, std::uint64_t config_hash,
                     const std::vector<NamedTensor<float>>& tensors) {
  std::vector<NamedTensor<float>> sorted = tensors;
  std::sort(sorted.begin(), sorted.end(),
            [](const NamedTensor<float>& a, const NamedTensor<float>& b) {
              return a.name < b.name;
            });

  std::string blob;
  // nlohmann::json orders object keys, so the manifest text is deterministic.
  nlohmann::json entries = nlohmann::json::object();
  for (const NamedTensor<float>& nt : sorted) {
    if (entries.contains(nt.name)) {
      throw ContractError("checkpoint: duplicate tensor name '" + nt.name +
                          "'");
    }
    const std::size_t offset = blob.size();
    put_u32_le(blob, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (std::size_t d = 0; d < nt.tensor.rank(); ++d) {
      put_u32_le(blob, static_cast<std::uint32_t>(nt.tensor.dim(d)));
    }
    for (float v : nt.tensor.values()) {
      put_u32_le(blob, std::bit_cast<std::uint32_t>(v));
    }
    nlohmann::json entry;
    entry["shape"] = nt.tensor.shape();
    entry["offset"] = offset;
    entry["nbytes"] = blob.size() - offset;
    entries[nt.name] = std::move(entry);
  }

  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["config_hash"] = hash_to_hex(config_hash);
  manifest["stage"] = stage;
  manifest["tensors"] = std::move(entries);

  std::filesystem::create_directories(base.parent_path());
  {
    std::ofstream out(manifest_path(base), std::ios::binary);
    if (!out) {
      throw DataError("checkpoint: cannot write " +
                      manifest_path(base).string());
    }
    out << manifest.dump(2) << '\n';
  }
  {
    std::ofstream out(blob_path(base), std::ios::binary);
    if (!out) {
      throw DataError("checkpoint: cannot write " + blob_path(base).string());
    }
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) {
      throw DataError("checkpoint: write failed for " +
                      blob_path(base).string());
    }
  }
}

bool checkpoint_exists(const std::filesystem::path& base) {
  return std::filesystem::exists(manifest_path(base)) &&
         std::filesystem::exists(blob_path(base));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& base) {
  std::ifstream min(manifest_path(base), std::ios::binary);
  if (!min) {
    throw DataError("checkpoint: cannot read " + manifest_path(base).string());
  }
  nlohmann::json manifest;
  try {
    min >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: malformed manifest " +
                    manifest_path(base).string() + ": " + e.what());
  }

  std::ifstream bin(blob_path(base), std::ios::binary);
  if (!bin) {
    throw DataError("checkpoint: cannot read " + blob_path(base).string());
  }
  std::string blob((std::istreambuf_iterator<char>(bin)),
                   std::istreambuf_iterator<char>());

  LoadedCheckpoint out;
  try {
    out.format_version = manifest.at("format_version").get<int>();
    out.stage = manifest.at("stage").get<std::string>();
    out.config_hash = hex_to_hash(manifest.at("config_hash").get<std::string>());
    if (out.format_version != kCheckpointFormatVersion) {
      throw CompatibilityError(
          "checkpoint: format version " + std::to_string(out.format_version) +
          " != supported " + std::to_string(kCheckpointFormatVersion));
    }
    for (const auto& [name, entry] : manifest.at("tensors").items()) {
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto nbytes = entry.at("nbytes").get<std::size_t>();
      const auto shape = entry.at("shape").get<Shape>();
      if (offset + nbytes > blob.size()) {
        throw DataError("checkpoint: tensor '" + name +
                        "' extends past end of blob");
      }
      const std::uint32_t rank = get_u32_le(blob, offset);
      if (rank != shape.size()) {
        throw DataError("checkpoint: tensor '" + name +
                        "' rank disagrees with manifest shape");
      }
      std::size_t numel = 1;
      for (std::size_t d = 0; d < rank; ++d) {
        const std::uint32_t dim = get_u32_le(blob, offset + 4 * (1 + d));
        if (dim != shape[d]) {
          throw DataError("checkpoint: tensor '" + name +
                          "' dimensions disagree with manifest shape");
        }
        numel *= dim;
      }
      if (nbytes != 4 * (1 + rank + numel)) {
        throw DataError("checkpoint: tensor '" + name +
                        "' byte length disagrees with its shape");
      }
      std::vector<float> values(numel);
      const std::size_t data_start = offset + 4 * (1 + rank);
      for (std::size_t i = 0; i < numel; ++i) {
        values[i] = std::bit_cast<float>(get_u32_le(blob, data_start + 4 * i));
      }
      out.tensors.emplace(name,
                          Tensor<float>::from_values(shape, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: malformed manifest " +
                    manifest_path(base).string() + ": " + e.what());
  }
  return out;
}

void copy_into(const std::vector<NamedTensor<float>>& params,
               const LoadedCheckpoint& checkpoint) {
  for (const NamedTensor<float>& nt : params) {
    auto it = checkpoint.tensors.find(nt.name);
    if (it == checkpoint.tensors.end()) {
      throw CompatibilityError("checkpoint: missing tensor '" + nt.name + "'");
    }
    if (it->second.shape() != nt.tensor.shape()) {
      throw CompatibilityError(
          "checkpoint: tensor '" + nt.name + "' has shape " +
          shape_to_string(it->second.shape()) + ", model expects " +
          shape_to_string(nt.tensor.shape()));
    }
    auto src = it->second.values();
    Tensor<float> target = nt.tensor;  // shared handle to the same payload
    auto dst = target.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  if (checkpoint.tensors.size() != params.size()) {
    throw CompatibilityError(
        "checkpoint: holds " + std::to_string(checkpoint.tensors.size()) +
        " tensors, model expects " + std::to_string(params.size()));
  }
}

}  // namespace xlret
