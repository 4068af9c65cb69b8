// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xlret/encoder.hpp"
#include "xlret/optimizer.hpp"

namespace xlret {

// Environment variable that overrides the configured output root.
inline constexpr const char* kOutputRootEnvVar = "XLRET_OUTPUT_ROOT";

struct DatasetSplitConfig {
  std::size_t num_docs = 400;
  std::size_t num_queries = 80;
};

struct DatasetConfig {
  std::size_t num_topics = 8;
  std::size_t vocab_size = 2000;
  std::size_t head_size = 40;
  double head_mass = 0.8;
  std::size_t num_languages = 4;
  std::size_t doc_len = 64;
  std::size_t query_len = 8;
  std::size_t parallel_pairs = 2048;
  DatasetSplitConfig eval_split;                    // scored benchmark
  DatasetSplitConfig train_split{400, 160};         // training-only texts
};

struct TrainStageConfig {
  std::size_t steps = 1;
  std::size_t batch_size = 32;
  double learning_rate = 2e-4;
  LrSchedule::Kind schedule = LrSchedule::Kind::kLinearDecay;
  double temperature = 0.05;       // contrastive stages
  double holdout_fraction = 0.1;   // distillation holdout
  std::size_t log_every = 50;
};

struct ProjectionConfig {
  std::size_t d_hidden = 256;
  bool use_gelu = false;
};

struct PipelineConfig {
  std::filesystem::path output_root = "runs/default";
  std::uint64_t seed = 42;
  DatasetConfig dataset;
  EncoderConfig teacher_encoder;       // also the retrieval head architecture
  EncoderConfig multilingual_encoder;
  ProjectionConfig projection;
  LoraConfig lora;
  TrainStageConfig train_teacher;
  TrainStageConfig train_multilingual;
  TrainStageConfig train_distill;

  // FNV-1a over the canonical config text with output_root removed, so the
  // same model trained into different directories gets the same hash.
  std::uint64_t model_hash = 0;
};

// Parses `file`, applies dotted-path overrides ("train_distill.steps=100";
// values are JSON literals, falling back to strings), honours the output
// root environment variable, validates, and computes the model hash.
// Unknown keys anywhere are configuration errors naming the key.
PipelineConfig load_config(const std::filesystem::path& file,
                           const std::vector<std::string>& overrides = {});

// Same, but from JSON text instead of a file.
PipelineConfig config_from_text(const std::string& json_text,
                                const std::vector<std::string>& overrides = {});

// Same, starting from the built-in default configuration text.
PipelineConfig default_config();

// The built-in default configuration as JSON text (also shipped as a file).
std::string default_config_text();

}  // namespace xlret
