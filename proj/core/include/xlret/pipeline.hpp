// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "xlret/composition.hpp"
#include "xlret/config.hpp"
#include "xlret/metrics.hpp"
#include "xlret/search.hpp"
#include "xlret/train.hpp"

namespace xlret {

// ==================== run layout ====================

// Every artifact of a run lives under one root:
//   datasets/train/              language-0 training split (BEIR layout)
//   datasets/eval/lang<k>/       evaluation split per language
//   datasets/parallel.jsonl      alignment pairs
//   datasets/vocab_teacher.txt   vocabulary files, one token per line
//   datasets/vocab_multilingual.txt
//   checkpoints/<stage>.manifest.json + .tensors.bin
//   logs/metrics_<stage>.jsonl
//   reports/*.json, *.txt
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path datasets() const { return root / "datasets"; }
  std::filesystem::path train_dir() const { return datasets() / "train"; }
  std::filesystem::path eval_dir(std::size_t lang_id) const {
    return datasets() / "eval" / ("lang" + std::to_string(lang_id));
  }
  std::filesystem::path parallel_file() const {
    return datasets() / "parallel.jsonl";
  }
  std::filesystem::path vocab_teacher() const {
    return datasets() / "vocab_teacher.txt";
  }
  std::filesystem::path vocab_multilingual() const {
    return datasets() / "vocab_multilingual.txt";
  }
  std::filesystem::path checkpoint(const std::string& stage) const {
    return root / "checkpoints" / stage;
  }
  std::filesystem::path metrics_log(const std::string& stage) const {
    return root / "logs" / ("metrics_" + stage + ".jsonl");
  }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path report_json(const std::string& model) const {
    return reports() / ("report_" + model + ".json");
  }
  std::filesystem::path report_table(const std::string& model) const {
    return reports() / ("report_" + model + ".txt");
  }
  std::filesystem::path baseline_file() const {
    return reports() / "baseline.json";
  }
  std::filesystem::path align_summary() const {
    return reports() / "align_summary.json";
  }
  std::filesystem::path distill_summary() const {
    return reports() / "distill_summary.json";
  }
};

RunPaths run_paths(const PipelineConfig& config);

// ==================== commands ====================

// Generates datasets, parallel corpus, and vocabulary files. Rerunning with
// the same config produces byte-identical outputs.
void run_gen(const PipelineConfig& config);

// One training stage: "teacher", "multilingual", or "distill" (anything else
// is a config error). Prerequisites: gen artifacts for every stage, plus the
// teacher and multilingual checkpoints for distill (missing prerequisite is
// an ordering error). Writes checkpoint + metrics log (+ summary report for
// multilingual and distill stages).
void run_train_stage(const PipelineConfig& config, const std::string& stage);

// Model reconstruction from checkpoints (ordering error when missing,
// compatibility error when the stored config hash disagrees).
TeacherModel<float> load_teacher_model(const PipelineConfig& config);
ComposedStudent<float> load_student_model(const PipelineConfig& config);

// Assembles the student exactly as the distillation stage first sees it:
// frozen encoders restored from their checkpoints, freshly initialized
// projection and adapters (ordering error when prerequisites are missing).
ComposedStudent<float> assemble_fresh_student(const PipelineConfig& config);

// The deterministic seed a training stage draws from ("teacher",
// "multilingual", or "distill"; anything else is a config error).
std::uint64_t stage_seed(const PipelineConfig& config,
                         const std::string& stage);

// Runs the distillation stage on a caller-held student — so the caller can
// inspect the same parameter tensors before and after — and writes the stage
// artifacts (checkpoint, metrics log, summary). `run_train_stage(config,
// "distill")` is exactly this applied to a freshly assembled student.
DistillResult run_distill_stage(const PipelineConfig& config,
                                ComposedStudent<float>& student);

struct EvalArtifacts {
  MetricReport teacher;  // language 0 only
  MetricReport student;  // every language
  RandomBaseline baseline;
  std::size_t baseline_trials = 0;
};

// Evaluates teacher (language 0) and student (all languages) on the eval
// split, estimates the random-ranking NDCG@10 baseline, and writes JSON +
// text-table reports. Rerunning yields identical files.
EvalArtifacts run_eval(const PipelineConfig& config);

// Renders the written artifacts as one human-readable summary (ordering
// error when eval has not run yet).
std::string run_report(const PipelineConfig& config);

}  // namespace xlret
