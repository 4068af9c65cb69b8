// SPDX-License-Identifier: Apache-2.0
#include "xlret/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "xlret/errors.hpp"
#include "xlret/losses.hpp"
#include "xlret/optimizer.hpp"
#include "xlret/search.hpp"
#include "xlret/tensor_ops.hpp"

namespace xlret {

namespace {

using ordered_json = nlohmann::ordered_json;

class WallTimer {
 public:
  WallTimer() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    const auto now = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(now - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

bool is_log_step(std::size_t step, std::size_t total, std::size_t log_every) {
  return step == 1 || step == total || step % log_every == 0;
}

void check_finite_loss(double loss, const char* stage, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw DivergenceError(std::string(stage) + ": non-finite loss at step " +
                          std::to_string(step));
  }
}

double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom == 0.0 ? 0.0 : dot / denom;
}

double mean_squared_diff(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return a.empty() ? 0.0 : acc / static_cast<double>(a.size());
}

// Holdout size: at least `minimum`, at most n - minimum.
std::size_t holdout_count(std::size_t n, double fraction, std::size_t minimum) {
  if (n < 2 * minimum) {
    throw ContractError("train: need at least " +
                        std::to_string(2 * minimum) +
                        " examples to split off a holdout, got " +
                        std::to_string(n));
  }
  const auto raw = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(n)));
  return std::clamp(raw, minimum, n - minimum);
}

}  // namespace

// ==================== step metrics ====================

void write_metrics_jsonl(const std::filesystem::path& file,
                         const std::vector<MetricsEntry>& entries) {
  if (file.has_parent_path()) {
    std::filesystem::create_directories(file.parent_path());
  }
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("metrics: cannot write " + file.string());
  for (const MetricsEntry& e : entries) {
    ordered_json j;
    j["step"] = e.step;
    j["loss"] = e.loss;
    j["lr"] = e.lr;
    j["wall_ms"] = e.wall_ms;
    out << j.dump() << '\n';
  }
}

std::vector<MetricsEntry> read_metrics_jsonl(
    const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("metrics: cannot read " + file.string());
  std::vector<MetricsEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr,
                                         /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object() || !j.contains("step") ||
        !j.contains("loss") || !j.contains("lr") || !j.contains("wall_ms")) {
      throw DataError("metrics: " + file.string() + " line " +
                      std::to_string(line_no) + " is not a metrics record");
    }
    MetricsEntry e;
    e.step = j.at("step").get<std::size_t>();
    e.loss = j.at("loss").get<double>();
    e.lr = j.at("lr").get<double>();
    e.wall_ms = j.at("wall_ms").get<double>();
    entries.push_back(e);
  }
  return entries;
}

std::string strip_wall_ms(const std::string& jsonl_text) {
  std::istringstream in(jsonl_text);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr,
                                         /*allow_exceptions=*/false);
    if (j.is_discarded()) {
      throw DataError("metrics: cannot parse log line '" + line + "'");
    }
    if (j.contains("wall_ms")) j["wall_ms"] = 0;
    out << j.dump() << '\n';
  }
  return out.str();
}

// ==================== teacher training ====================

TeacherTrainResult train_teacher(TeacherModel<float>& teacher,
                                 const RetrievalDataset& train_data,
                                 const TrainStageConfig& config,
                                 std::uint64_t seed) {
  if (config.batch_size < 2) {
    throw ContractError(
        "train_teacher: contrastive training needs batch_size >= 2");
  }
  if (train_data.corpus.empty() || train_data.queries.empty()) {
    throw DataError("train_teacher: empty corpus or query set");
  }

  std::unordered_map<std::string, std::size_t> doc_index;
  for (std::size_t i = 0; i < train_data.corpus.size(); ++i) {
    doc_index.emplace(train_data.corpus[i].id, i);
  }
  std::unordered_map<std::string, std::vector<std::size_t>> positives_by_query;
  for (const QrelRecord& q : train_data.qrels) {
    if (q.relevance <= 0) continue;
    auto it = doc_index.find(q.doc_id);
    if (it == doc_index.end()) {
      throw DataError("train_teacher: qrel references unknown document '" +
                      q.doc_id + "'");
    }
    positives_by_query[q.query_id].push_back(it->second);
  }
  struct Pair {
    std::size_t query;
    const std::vector<std::size_t>* positives;
  };
  std::vector<Pair> pool;
  for (std::size_t i = 0; i < train_data.queries.size(); ++i) {
    auto it = positives_by_query.find(train_data.queries[i].id);
    if (it != positives_by_query.end() && !it->second.empty()) {
      pool.push_back({i, &it->second});
    }
  }
  if (pool.empty()) {
    throw DataError("train_teacher: no query has a relevant document");
  }

  AdamOptimizer<float> opt(trainable_parameters(named_tensors(teacher.encoder)));
  const LrSchedule schedule{config.schedule, config.learning_rate,
                            config.steps};
  Rng rng(hash_combine(seed, 0x7ea17e41ull));
  WallTimer timer;
  TeacherTrainResult result;
  result.step_losses.reserve(config.steps);

  for (std::size_t step = 1; step <= config.steps; ++step) {
    const double lr = schedule.lr_at(step - 1);
    double step_loss = 0.0;
    {
      Tape<float> tape;
      ForwardOptions opts{.training = true, .dropout_stream = step};
      std::vector<Tensor<float>> query_embs, doc_embs;
      query_embs.reserve(config.batch_size);
      doc_embs.reserve(config.batch_size);
      for (std::size_t b = 0; b < config.batch_size; ++b) {
        const Pair& pair = pool[rng.uniform_index(pool.size())];
        const std::size_t doc =
            (*pair.positives)[rng.uniform_index(pair.positives->size())];
        query_embs.push_back(teacher_embed(
            teacher, train_data.queries[pair.query].text, InputKind::kQuery,
            opts));
        doc_embs.push_back(
            teacher_embed(teacher, doc_embedding_text(train_data.corpus[doc]),
                          InputKind::kPassage, opts));
      }
      Tensor<float> q = ops::stack_rows<float>(query_embs);
      Tensor<float> d = ops::stack_rows<float>(doc_embs);
      Tensor<float> loss =
          infonce_loss(q, d, static_cast<float>(config.temperature));
      step_loss = loss.values()[0];
      check_finite_loss(step_loss, "train_teacher", step);
      tape.backward(loss);
    }
    opt.step(static_cast<float>(lr));
    opt.zero_grad();
    result.step_losses.push_back(step_loss);
    if (is_log_step(step, config.steps, config.log_every)) {
      result.metrics.push_back({step, step_loss, lr, timer.elapsed_ms()});
    }
  }
  return result;
}

// ==================== alignment pretraining ====================

namespace {

Tensor<float> pooled_multilingual(const Vocabulary& vocab,
                                  const EncoderParams<float>& encoder,
                                  const std::string& text, std::size_t lang_id,
                                  const ForwardOptions& opts) {
  const TokenSequence seq = tokenize_multilingual(
      vocab, text, lang_id, encoder.config.max_positions);
  Tensor<float> h =
      encoder_forward<float>(encoder, &seq.ids, nullptr, seq.mask, nullptr,
                             opts);
  return ops::masked_mean_pool(h, ops::mask_tensor<float>(seq.mask));
}

}  // namespace

AlignResult pretrain_multilingual(const Vocabulary& vocab,
                                  EncoderParams<float>& encoder,
                                  const std::vector<ParallelPair>& pairs,
                                  const TrainStageConfig& config,
                                  std::uint64_t seed) {
  if (config.batch_size < 2) {
    throw ContractError(
        "pretrain_multilingual: contrastive training needs batch_size >= 2");
  }
  const std::size_t held =
      holdout_count(pairs.size(), config.holdout_fraction, 2);

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(hash_combine(seed, 0x5a117ull));
  split_rng.shuffle(order);
  const std::vector<std::size_t> holdout(order.begin(), order.begin() + held);
  const std::vector<std::size_t> train(order.begin() + held, order.end());

  AdamOptimizer<float> opt(trainable_parameters(named_tensors(encoder)));
  const LrSchedule schedule{config.schedule, config.learning_rate,
                            config.steps};
  Rng rng(hash_combine(seed, 0xa114711ull));
  WallTimer timer;
  AlignResult result;
  result.step_losses.reserve(config.steps);

  for (std::size_t step = 1; step <= config.steps; ++step) {
    const double lr = schedule.lr_at(step - 1);
    double step_loss = 0.0;
    {
      Tape<float> tape;
      ForwardOptions opts{.training = true, .dropout_stream = step};
      std::vector<Tensor<float>> src_embs, tgt_embs;
      src_embs.reserve(config.batch_size);
      tgt_embs.reserve(config.batch_size);
      for (std::size_t b = 0; b < config.batch_size; ++b) {
        const ParallelPair& pair = pairs[train[rng.uniform_index(train.size())]];
        src_embs.push_back(
            pooled_multilingual(vocab, encoder, pair.source, 0, opts));
        tgt_embs.push_back(pooled_multilingual(vocab, encoder, pair.target,
                                               pair.lang_id, opts));
      }
      Tensor<float> s = ops::stack_rows<float>(src_embs);
      Tensor<float> t = ops::stack_rows<float>(tgt_embs);
      Tensor<float> loss =
          align_loss(s, t, static_cast<float>(config.temperature));
      step_loss = loss.values()[0];
      check_finite_loss(step_loss, "pretrain_multilingual", step);
      tape.backward(loss);
    }
    opt.step(static_cast<float>(lr));
    opt.zero_grad();
    result.step_losses.push_back(step_loss);
    if (is_log_step(step, config.steps, config.log_every)) {
      result.metrics.push_back({step, step_loss, lr, timer.elapsed_ms()});
    }
  }

  // Held-out separation: parallel pairs versus deliberately mismatched ones
  // (each source against the next holdout pair's target).
  std::vector<Tensor<float>> src, tgt;
  src.reserve(holdout.size());
  tgt.reserve(holdout.size());
  const ForwardOptions eval_opts{};
  for (std::size_t idx : holdout) {
    src.push_back(
        pooled_multilingual(vocab, encoder, pairs[idx].source, 0, eval_opts));
    tgt.push_back(pooled_multilingual(vocab, encoder, pairs[idx].target,
                                      pairs[idx].lang_id, eval_opts));
  }
  double parallel = 0.0, random = 0.0;
  for (std::size_t i = 0; i < holdout.size(); ++i) {
    parallel += cosine(src[i].values(), tgt[i].values());
    random += cosine(src[i].values(), tgt[(i + 1) % holdout.size()].values());
  }
  result.holdout_parallel_cosine = parallel / static_cast<double>(holdout.size());
  result.holdout_random_cosine = random / static_cast<double>(holdout.size());
  return result;
}

// ==================== distillation ====================

std::vector<DistillItem> make_distill_items(
    const RetrievalDataset& train_data) {
  std::vector<DistillItem> items;
  items.reserve(train_data.corpus.size() + train_data.queries.size());
  for (const DocRecord& doc : train_data.corpus) {
    items.push_back({doc_embedding_text(doc), InputKind::kPassage});
  }
  for (const QueryRecord& query : train_data.queries) {
    items.push_back({query.text, InputKind::kQuery});
  }
  return items;
}

DistillResult distill(ComposedStudent<float>& student,
                      const TeacherModel<float>& teacher,
                      const std::vector<DistillItem>& items,
                      const TrainStageConfig& config, std::uint64_t seed) {
  const std::size_t held =
      holdout_count(items.size(), config.holdout_fraction, 1);

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(hash_combine(seed, 0xd1571ull));
  split_rng.shuffle(order);
  const std::vector<std::size_t> holdout(order.begin(), order.begin() + held);
  std::vector<std::size_t> passage_pool, query_pool;
  for (auto it = order.begin() + held; it != order.end(); ++it) {
    (items[*it].kind == InputKind::kPassage ? passage_pool : query_pool)
        .push_back(*it);
  }
  if (passage_pool.empty() && query_pool.empty()) {
    throw ContractError("distill: no training items left after the holdout");
  }

  // Teacher targets and the frozen multilingual pass never change; compute
  // them once per item (outside any tape, so they are constants).
  const ForwardOptions frozen_opts{};
  std::vector<Tensor<float>> teacher_emb(items.size());
  std::vector<MultilingualEncoding<float>> encodings(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    teacher_emb[i] =
        teacher_embed(teacher, items[i].text, items[i].kind, frozen_opts);
    encodings[i] = encode_multilingual(student, items[i].text, /*lang_id=*/0,
                                       frozen_opts);
  }

  auto holdout_stats = [&](double* out_mse, double* out_cosine) {
    double mse_acc = 0.0, cos_acc = 0.0;
    for (std::size_t idx : holdout) {
      Tensor<float> s = student_embed_encoded(student, encodings[idx],
                                              items[idx].kind, frozen_opts);
      mse_acc += mean_squared_diff(teacher_emb[idx].values(), s.values());
      cos_acc += cosine(teacher_emb[idx].values(), s.values());
    }
    *out_mse = mse_acc / static_cast<double>(holdout.size());
    *out_cosine = cos_acc / static_cast<double>(holdout.size());
  };

  DistillResult result;
  double unused = 0.0;
  holdout_stats(&result.initial_holdout_mse, &unused);

  std::vector<NamedTensor<float>> trainable =
      trainable_parameters(named_tensors(student));
  AdamOptimizer<float> opt(std::move(trainable));
  const LrSchedule schedule{config.schedule, config.learning_rate,
                            config.steps};
  Rng rng(hash_combine(seed, 0xd157111ull));
  WallTimer timer;
  result.step_losses.reserve(config.steps);

  for (std::size_t step = 1; step <= config.steps; ++step) {
    const double lr = schedule.lr_at(step - 1);
    double step_loss = 0.0;
    {
      Tape<float> tape;
      ForwardOptions opts{.training = true, .dropout_stream = step};
      std::vector<Tensor<float>> student_rows, teacher_rows;
      student_rows.reserve(config.batch_size);
      teacher_rows.reserve(config.batch_size);
      for (std::size_t b = 0; b < config.batch_size; ++b) {
        // Alternate roles so every batch is half passages, half queries
        // (all from one pool if the other has no items).
        const std::vector<std::size_t>* from =
            (b % 2 == 0) ? &passage_pool : &query_pool;
        if (from->empty()) {
          from = from == &passage_pool ? &query_pool : &passage_pool;
        }
        const std::size_t idx = (*from)[rng.uniform_index(from->size())];
        student_rows.push_back(
            student_embed_encoded(student, encodings[idx], items[idx].kind,
                                  opts));
        teacher_rows.push_back(teacher_emb[idx]);
      }
      Tensor<float> s = ops::stack_rows<float>(student_rows);
      Tensor<float> t = ops::stack_rows<float>(teacher_rows);
      Tensor<float> loss = ops::mse(s, t);
      step_loss = loss.values()[0];
      check_finite_loss(step_loss, "distill", step);
      tape.backward(loss);
    }
    opt.step(static_cast<float>(lr));
    opt.zero_grad();
    result.step_losses.push_back(step_loss);
    if (is_log_step(step, config.steps, config.log_every)) {
      result.metrics.push_back({step, step_loss, lr, timer.elapsed_ms()});
    }
  }

  holdout_stats(&result.final_holdout_mse, &result.holdout_mean_cosine);
  return result;
}

}  // namespace xlret
