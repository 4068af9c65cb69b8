// SPDX-License-Identifier: Apache-2.0
#include "xlret/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "xlret/beir.hpp"
#include "xlret/checkpoint.hpp"
#include "xlret/errors.hpp"
#include "xlret/synth.hpp"

namespace xlret {

namespace {

// Fixed tags mixed into the config seed, one per stochastic stage, so the
// stages draw from independent streams.
enum SeedTag : std::uint64_t {
  kSeedTopics = 1,
  kSeedLanguages = 2,
  kSeedTrainData = 3,
  kSeedEvalData = 4,
  kSeedParallel = 5,
  kSeedTeacherInit = 10,
  kSeedTeacherTrain = 11,
  kSeedMultilingualInit = 12,
  kSeedMultilingualTrain = 13,
  kSeedProjectionInit = 14,
  kSeedLoraInit = 15,
  kSeedDistillTrain = 16,
  kSeedBaseline = 20,
};

constexpr std::size_t kBaselineTrials = 2000;

std::string lowercased(std::string s) {
  for (char& c : s) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return s;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash));
  return buf;
}

TopicModel build_topics(const PipelineConfig& config) {
  TopicModelConfig tc;
  tc.num_topics = config.dataset.num_topics;
  tc.vocab_size = config.dataset.vocab_size;
  tc.head_size = config.dataset.head_size;
  tc.head_mass = config.dataset.head_mass;
  tc.seed = hash_combine(config.seed, kSeedTopics);
  return TopicModel::build(tc);
}

std::vector<CipherLanguage> build_languages(const PipelineConfig& config,
                                            const TopicModel& topics) {
  return make_languages(topics.words(), config.dataset.num_languages,
                        hash_combine(config.seed, kSeedLanguages));
}

void require_gen(const RunPaths& paths) {
  if (!std::filesystem::exists(paths.vocab_teacher()) ||
      !std::filesystem::exists(paths.train_dir() / "corpus.jsonl")) {
    throw OrderingError(
        "pipeline: generated datasets not found under " +
        paths.datasets().string() + " — run `xlret gen` first");
  }
}

LoadedCheckpoint require_checkpoint(const PipelineConfig& config,
                                    const RunPaths& paths,
                                    const std::string& stage) {
  const auto base = paths.checkpoint(stage);
  if (!checkpoint_exists(base)) {
    throw OrderingError("pipeline: missing checkpoint for stage '" + stage +
                        "' (" + base.string() + ") — run `xlret train " +
                        stage + "` first");
  }
  LoadedCheckpoint loaded = load_checkpoint(base);
  if (loaded.stage != stage) {
    throw CompatibilityError("pipeline: checkpoint " + base.string() +
                             " was written by stage '" + loaded.stage +
                             "', expected '" + stage + "'");
  }
  if (loaded.config_hash != config.model_hash) {
    throw CompatibilityError(
        "pipeline: checkpoint " + base.string() + " has config hash " +
        hash_hex(loaded.config_hash) + " but the active config hashes to " +
        hash_hex(config.model_hash));
  }
  return loaded;
}

EncoderConfig resolved_encoder_config(EncoderConfig base,
                                      const Vocabulary& vocab) {
  base.vocab_size = vocab.size();
  base.validate();
  return base;
}

void write_json_file(const std::filesystem::path& file,
                     const nlohmann::json& j) {
  std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("pipeline: cannot write " + file.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw OrderingError("pipeline: missing artifact " + file.string() +
                        " — run the producing command first");
  }
  nlohmann::json j = nlohmann::json::parse(in, nullptr,
                                           /*allow_exceptions=*/false);
  if (j.is_discarded()) {
    throw DataError("pipeline: " + file.string() + " is not valid JSON");
  }
  return j;
}

void write_text_file(const std::filesystem::path& file,
                     const std::string& text) {
  std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("pipeline: cannot write " + file.string());
  out << text;
}

}  // namespace

RunPaths run_paths(const PipelineConfig& config) {
  return RunPaths{config.output_root};
}

// ==================== gen ====================

void run_gen(const PipelineConfig& config) {
  const RunPaths paths = run_paths(config);
  std::filesystem::create_directories(paths.datasets());

  const TopicModel topics = build_topics(config);
  const std::vector<CipherLanguage> languages =
      build_languages(config, topics);

  const RetrievalDataset train_data = generate_dataset(
      topics, config.dataset.train_split.num_docs,
      config.dataset.train_split.num_queries, config.dataset.doc_len,
      config.dataset.query_len, hash_combine(config.seed, kSeedTrainData));
  write_beir(train_data, paths.train_dir());

  const RetrievalDataset eval_base = generate_dataset(
      topics, config.dataset.eval_split.num_docs,
      config.dataset.eval_split.num_queries, config.dataset.doc_len,
      config.dataset.query_len, hash_combine(config.seed, kSeedEvalData));
  for (std::size_t k = 0; k < languages.size(); ++k) {
    write_beir(translate_dataset(eval_base, languages[k]), paths.eval_dir(k));
  }

  write_parallel(
      make_parallel_corpus(topics, languages, config.dataset.parallel_pairs,
                           hash_combine(config.seed, kSeedParallel)),
      paths.parallel_file());

  // Teacher vocabulary: language-0 words. Multilingual vocabulary: every
  // language's surface forms (lowercased, as the tokenizer will see them)
  // plus one [LANG_<k>] tag per language.
  Vocabulary::from_words(topics.words()).save(paths.vocab_teacher());
  std::vector<std::string> surfaces;
  surfaces.reserve(topics.words().size() * languages.size());
  for (const CipherLanguage& lang : languages) {
    for (const std::string& word : topics.words()) {
      surfaces.push_back(lowercased(lang.surface(word)));
    }
  }
  Vocabulary::from_words(surfaces, languages.size())
      .save(paths.vocab_multilingual());
}

// ==================== train ====================

namespace {

void train_teacher_stage(const PipelineConfig& config, const RunPaths& paths) {
  const Vocabulary vocab = Vocabulary::load(paths.vocab_teacher());
  const EncoderConfig enc_cfg =
      resolved_encoder_config(config.teacher_encoder, vocab);
  Rng init_rng(hash_combine(config.seed, kSeedTeacherInit));
  TeacherModel<float> teacher{vocab, init_encoder<float>(enc_cfg, init_rng)};

  const RetrievalDataset train_data = read_beir(paths.train_dir());
  const TeacherTrainResult result = train_teacher(
      teacher, train_data, config.train_teacher, stage_seed(config, "teacher"));

  save_checkpoint(paths.checkpoint("teacher"), "teacher", config.model_hash,
                  named_tensors(teacher.encoder));
  write_metrics_jsonl(paths.metrics_log("teacher"), result.metrics);
}

void train_multilingual_stage(const PipelineConfig& config,
                              const RunPaths& paths) {
  const Vocabulary vocab = Vocabulary::load(paths.vocab_multilingual());
  const EncoderConfig enc_cfg =
      resolved_encoder_config(config.multilingual_encoder, vocab);
  Rng init_rng(hash_combine(config.seed, kSeedMultilingualInit));
  EncoderParams<float> encoder = init_encoder<float>(enc_cfg, init_rng);

  const std::vector<ParallelPair> pairs =
      read_parallel(paths.parallel_file());
  const AlignResult result =
      pretrain_multilingual(vocab, encoder, pairs, config.train_multilingual,
                            stage_seed(config, "multilingual"));

  save_checkpoint(paths.checkpoint("multilingual"), "multilingual",
                  config.model_hash, named_tensors(encoder));
  write_metrics_jsonl(paths.metrics_log("multilingual"), result.metrics);
  nlohmann::json summary;
  summary["holdout_parallel_cosine"] = result.holdout_parallel_cosine;
  summary["holdout_random_cosine"] = result.holdout_random_cosine;
  summary["separation"] =
      result.holdout_parallel_cosine - result.holdout_random_cosine;
  write_json_file(paths.align_summary(), summary);
}

}  // namespace

std::uint64_t stage_seed(const PipelineConfig& config,
                         const std::string& stage) {
  if (stage == "teacher") return hash_combine(config.seed, kSeedTeacherTrain);
  if (stage == "multilingual") {
    return hash_combine(config.seed, kSeedMultilingualTrain);
  }
  if (stage == "distill") return hash_combine(config.seed, kSeedDistillTrain);
  throw ConfigError("train: unknown stage '" + stage +
                    "' (expected teacher, multilingual, or distill)");
}

ComposedStudent<float> assemble_fresh_student(const PipelineConfig& config) {
  const RunPaths paths = run_paths(config);
  require_gen(paths);
  const Vocabulary tvocab = Vocabulary::load(paths.vocab_teacher());
  const Vocabulary mvocab = Vocabulary::load(paths.vocab_multilingual());

  // Check prerequisites in pipeline order so a missing-teacher error comes
  // before a missing-multilingual one.
  const EncoderConfig head_cfg =
      resolved_encoder_config(config.teacher_encoder, tvocab);
  Rng head_rng(0);
  EncoderParams<float> head = init_encoder<float>(head_cfg, head_rng);
  copy_into(named_tensors(head), require_checkpoint(config, paths, "teacher"));

  const EncoderConfig mult_cfg =
      resolved_encoder_config(config.multilingual_encoder, mvocab);
  Rng mult_rng(0);
  EncoderParams<float> multilingual = init_encoder<float>(mult_cfg, mult_rng);
  copy_into(named_tensors(multilingual),
            require_checkpoint(config, paths, "multilingual"));

  Rng proj_rng(hash_combine(config.seed, kSeedProjectionInit));
  ProjectionParams<float> projection = init_projection<float>(
      mult_cfg.d_model, config.projection.d_hidden, head_cfg.d_model,
      config.projection.use_gelu, proj_rng);
  Rng lora_rng(hash_combine(config.seed, kSeedLoraInit));
  LoraParams<float> lora = init_lora<float>(head_cfg, config.lora, lora_rng);

  return assemble_student(mvocab, std::move(multilingual), tvocab,
                          std::move(head), std::move(projection),
                          std::move(lora));
}

DistillResult run_distill_stage(const PipelineConfig& config,
                                ComposedStudent<float>& student) {
  const RunPaths paths = run_paths(config);
  require_gen(paths);
  const TeacherModel<float> teacher = load_teacher_model(config);

  const std::vector<DistillItem> items =
      make_distill_items(read_beir(paths.train_dir()));
  const DistillResult result = distill(student, teacher, items,
                                       config.train_distill,
                                       stage_seed(config, "distill"));

  save_checkpoint(paths.checkpoint("student"), "student", config.model_hash,
                  trainable_parameters(named_tensors(student)));
  write_metrics_jsonl(paths.metrics_log("distill"), result.metrics);
  nlohmann::json summary;
  summary["initial_holdout_mse"] = result.initial_holdout_mse;
  summary["final_holdout_mse"] = result.final_holdout_mse;
  summary["mse_ratio"] = result.initial_holdout_mse > 0.0
                             ? result.final_holdout_mse /
                                   result.initial_holdout_mse
                             : 0.0;
  summary["holdout_mean_cosine"] = result.holdout_mean_cosine;
  write_json_file(paths.distill_summary(), summary);
  return result;
}

void run_train_stage(const PipelineConfig& config, const std::string& stage) {
  stage_seed(config, stage);  // reject unknown stage names before any I/O
  const RunPaths paths = run_paths(config);
  require_gen(paths);
  if (stage == "teacher") {
    train_teacher_stage(config, paths);
  } else if (stage == "multilingual") {
    train_multilingual_stage(config, paths);
  } else {
    ComposedStudent<float> student = assemble_fresh_student(config);
    run_distill_stage(config, student);
  }
}

// ==================== model loading ====================

TeacherModel<float> load_teacher_model(const PipelineConfig& config) {
  const RunPaths paths = run_paths(config);
  require_gen(paths);
  const Vocabulary vocab = Vocabulary::load(paths.vocab_teacher());
  const EncoderConfig enc_cfg =
      resolved_encoder_config(config.teacher_encoder, vocab);
  Rng rng(0);
  TeacherModel<float> teacher{vocab, init_encoder<float>(enc_cfg, rng)};
  copy_into(named_tensors(teacher.encoder),
            require_checkpoint(config, paths, "teacher"));
  return teacher;
}

ComposedStudent<float> load_student_model(const PipelineConfig& config) {
  const RunPaths paths = run_paths(config);
  require_gen(paths);
  const Vocabulary tvocab = Vocabulary::load(paths.vocab_teacher());
  const Vocabulary mvocab = Vocabulary::load(paths.vocab_multilingual());
  const EncoderConfig head_cfg =
      resolved_encoder_config(config.teacher_encoder, tvocab);
  const EncoderConfig mult_cfg =
      resolved_encoder_config(config.multilingual_encoder, mvocab);

  Rng rng(0);
  EncoderParams<float> head = init_encoder<float>(head_cfg, rng);
  copy_into(named_tensors(head), require_checkpoint(config, paths, "teacher"));
  EncoderParams<float> multilingual = init_encoder<float>(mult_cfg, rng);
  copy_into(named_tensors(multilingual),
            require_checkpoint(config, paths, "multilingual"));
  ProjectionParams<float> projection = init_projection<float>(
      mult_cfg.d_model, config.projection.d_hidden, head_cfg.d_model,
      config.projection.use_gelu, rng);
  LoraParams<float> lora = init_lora<float>(head_cfg, config.lora, rng);

  ComposedStudent<float> student = assemble_student(
      mvocab, std::move(multilingual), tvocab, std::move(head),
      std::move(projection), std::move(lora));
  copy_into(trainable_parameters(named_tensors(student)),
            require_checkpoint(config, paths, "student"));
  return student;
}

// ==================== eval / report ====================

EvalArtifacts run_eval(const PipelineConfig& config) {
  const RunPaths paths = run_paths(config);
  const TeacherModel<float> teacher = load_teacher_model(config);
  const ComposedStudent<float> student = load_student_model(config);

  EvalArtifacts artifacts;

  const Embedder teacher_embedder = [&teacher](const std::string& text,
                                               InputKind kind) {
    return teacher_embed(teacher, text, kind);
  };
  const RetrievalDataset eval_lang0 = read_beir(paths.eval_dir(0));
  artifacts.teacher = make_report(
      "teacher", {evaluate_language(teacher_embedder, eval_lang0, 0)});

  std::vector<LanguageMetrics> student_langs;
  for (std::size_t k = 0; k < config.dataset.num_languages; ++k) {
    const Embedder student_embedder = [&student, k](const std::string& text,
                                                    InputKind kind) {
      return student_embed(student, text, k, kind);
    };
    const RetrievalDataset data =
        k == 0 ? eval_lang0 : read_beir(paths.eval_dir(k));
    student_langs.push_back(evaluate_language(student_embedder, data, k));
  }
  artifacts.student = make_report("student", std::move(student_langs));

  artifacts.baseline = random_baseline_ndcg(
      eval_lang0, /*k=*/10, kBaselineTrials,
      hash_combine(config.seed, kSeedBaseline));
  artifacts.baseline_trials = kBaselineTrials;

  write_text_file(paths.report_json("teacher"),
                  report_to_json(artifacts.teacher));
  write_text_file(paths.report_table("teacher"),
                  report_to_table(artifacts.teacher));
  write_text_file(paths.report_json("student"),
                  report_to_json(artifacts.student));
  write_text_file(paths.report_table("student"),
                  report_to_table(artifacts.student));
  nlohmann::json baseline;
  baseline["k"] = 10;
  baseline["mean"] = artifacts.baseline.mean;
  baseline["standard_error"] = artifacts.baseline.standard_error;
  baseline["trials"] = kBaselineTrials;
  write_json_file(paths.baseline_file(), baseline);
  return artifacts;
}

std::string run_report(const PipelineConfig& config) {
  const RunPaths paths = run_paths(config);
  const nlohmann::json teacher = read_json_file(paths.report_json("teacher"));
  const nlohmann::json student = read_json_file(paths.report_json("student"));
  const nlohmann::json baseline = read_json_file(paths.baseline_file());

  std::ostringstream out;
  out << "model hash: " << hash_hex(config.model_hash) << "\n\n";

  std::ifstream teacher_table(paths.report_table("teacher"));
  std::ifstream student_table(paths.report_table("student"));
  out << "teacher (language 0)\n" << teacher_table.rdbuf() << '\n';
  out << "student (zero-shot on languages >= 1)\n"
      << student_table.rdbuf() << '\n';

  const double base_mean = baseline.at("mean").get<double>();
  out << "random-ranking baseline NDCG@10: " << base_mean << " +/- "
      << baseline.at("standard_error").get<double>() << " ("
      << baseline.at("trials").get<std::size_t>() << " trials)\n";

  if (std::filesystem::exists(paths.align_summary())) {
    const nlohmann::json align = read_json_file(paths.align_summary());
    out << "alignment holdout cosine: parallel "
        << align.at("holdout_parallel_cosine").get<double>()
        << ", mismatched " << align.at("holdout_random_cosine").get<double>()
        << "\n";
  }
  if (std::filesystem::exists(paths.distill_summary())) {
    const nlohmann::json d = read_json_file(paths.distill_summary());
    out << "distillation holdout MSE: initial "
        << d.at("initial_holdout_mse").get<double>() << ", final "
        << d.at("final_holdout_mse").get<double>() << ", mean cosine "
        << d.at("holdout_mean_cosine").get<double>() << "\n";
  }

  const auto& langs = student.at("languages");
  const double teacher0 =
      teacher.at("languages").at("lang0").at("ndcg@10").get<double>();
  const double student0 = langs.at("lang0").at("ndcg@10").get<double>();
  out << "\ntransfer ratios\n";
  out << "  student lang0 / teacher lang0: "
      << (teacher0 > 0.0 ? student0 / teacher0 : 0.0) << "\n";
  for (const auto& [name, metrics] : langs.items()) {
    if (name == "lang0") continue;
    const double v = metrics.at("ndcg@10").get<double>();
    out << "  " << name << ": vs baseline "
        << (base_mean > 0.0 ? v / base_mean : 0.0) << ", vs lang0 "
        << (student0 > 0.0 ? v / student0 : 0.0) << "\n";
  }
  return out.str();
}

}  // namespace xlret
