// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xlret/composition.hpp"
#include "xlret/config.hpp"
#include "xlret/synth.hpp"

namespace xlret {

// ==================== step metrics ====================

// One training-log record. wall_ms is elapsed wall time since the stage
// started; it is the only field that is not a pure function of the inputs,
// so log comparisons must strip it (see strip_wall_ms).
struct MetricsEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

// JSONL, one {"step", "loss", "lr", "wall_ms"} object per line.
void write_metrics_jsonl(const std::filesystem::path& file,
                         const std::vector<MetricsEntry>& entries);
std::vector<MetricsEntry> read_metrics_jsonl(const std::filesystem::path& file);

// The same JSONL text with every wall_ms value replaced by 0, for
// determinism checks on logs.
std::string strip_wall_ms(const std::string& jsonl_text);

// ==================== teacher training ====================

// Contrastive retrieval training on language-0 data: batches of (query,
// same-topic document) pairs, symmetric InfoNCE with in-batch negatives,
// Adam with the configured schedule. Mutates `teacher` in place.
struct TeacherTrainResult {
  std::vector<MetricsEntry> metrics;
  std::vector<double> step_losses;  // one entry per optimizer step
};

TeacherTrainResult train_teacher(TeacherModel<float>& teacher,
                                 const RetrievalDataset& train_data,
                                 const TrainStageConfig& config,
                                 std::uint64_t seed);

// ==================== alignment pretraining ====================

// Trains the multilingual encoder so parallel sentences land on nearby
// vectors: pooled source/target embeddings, loss = MSE + InfoNCE (1:1).
// A holdout_fraction slice of the pairs is held out and never trained on;
// the result reports mean cosine over held-out parallel pairs versus
// mismatched (rotated) pairs.
struct AlignResult {
  std::vector<MetricsEntry> metrics;
  std::vector<double> step_losses;
  double holdout_parallel_cosine = 0.0;
  double holdout_random_cosine = 0.0;
};

AlignResult pretrain_multilingual(const Vocabulary& vocab,
                                  EncoderParams<float>& encoder,
                                  const std::vector<ParallelPair>& pairs,
                                  const TrainStageConfig& config,
                                  std::uint64_t seed);

// ==================== distillation ====================

// One distillation text: the student sees it in language 0, and both
// teacher and student embed it under the same retrieval role.
struct DistillItem {
  std::string text;
  InputKind kind = InputKind::kPassage;
};

// Documents (passage role) and queries (query role) of the training split.
std::vector<DistillItem> make_distill_items(const RetrievalDataset& train_data);

// Aligns the student to the teacher by MSE between pooled embeddings on
// language-0 items. Only projection and LoRA tensors train; teacher
// embeddings and the frozen multilingual pass per item are computed once
// and cached. Batches draw half passages, half queries. A holdout slice is
// split off before training and measured before the first and after the
// last step.
struct DistillResult {
  std::vector<MetricsEntry> metrics;
  std::vector<double> step_losses;
  double initial_holdout_mse = 0.0;
  double final_holdout_mse = 0.0;
  double holdout_mean_cosine = 0.0;  // cos(teacher, student) after training
};

DistillResult distill(ComposedStudent<float>& student,
                      const TeacherModel<float>& teacher,
                      const std::vector<DistillItem>& items,
                      const TrainStageConfig& config, std::uint64_t seed);

}  // namespace xlret
