// SPDX-License-Identifier: Apache-2.0
#include "xlret/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "xlret/errors.hpp"

namespace xlret {

namespace {

using json = nlohmann::json;

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

void check_keys(const json& j, const std::string& path,
                const std::set<std::string>& allowed) {
  if (!j.is_object()) {
    throw ConfigError("config: '" + path + "' must be an object");
  }
  for (const auto& [key, value] : j.items()) {
    if (allowed.count(key) == 0) {
      throw ConfigError("config: unknown key '" +
                        (path.empty() ? key : path + "." + key) + "'");
    }
  }
}

template <typename T>
void read_field(const json& j, const char* key, const std::string& path,
                T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: '" + path + "." + key +
                      "' has the wrong type");
  }
}

void read_encoder(const json& j, const std::string& path, EncoderConfig& out) {
  check_keys(j, path, {"d_model", "num_layers", "num_heads", "d_ff",
                       "max_positions", "dropout_rate"});
  read_field(j, "d_model", path, out.d_model);
  read_field(j, "num_layers", path, out.num_layers);
  read_field(j, "num_heads", path, out.num_heads);
  read_field(j, "d_ff", path, out.d_ff);
  read_field(j, "max_positions", path, out.max_positions);
  read_field(j, "dropout_rate", path, out.dropout_rate);
  // vocab_size is derived from the generated vocabulary at stage start, so
  // full validation happens there; check what is knowable now.
  EncoderConfig probe = out;
  probe.vocab_size = 1;
  probe.validate();
}

void read_train_stage(const json& j, const std::string& path,
                      TrainStageConfig& out) {
  check_keys(j, path, {"steps", "batch_size", "learning_rate", "schedule",
                       "temperature", "holdout_fraction", "log_every"});
  read_field(j, "steps", path, out.steps);
  read_field(j, "batch_size", path, out.batch_size);
  read_field(j, "learning_rate", path, out.learning_rate);
  read_field(j, "temperature", path, out.temperature);
  read_field(j, "holdout_fraction", path, out.holdout_fraction);
  read_field(j, "log_every", path, out.log_every);
  if (j.contains("schedule")) {
    std::string s;
    read_field(j, "schedule", path, s);
    if (s == "constant") {
      out.schedule = LrSchedule::Kind::kConstant;
    } else if (s == "linear-decay") {
      out.schedule = LrSchedule::Kind::kLinearDecay;
    } else {
      throw ConfigError("config: '" + path + ".schedule' must be " +
                        "\"constant\" or \"linear-decay\", got \"" + s + "\"");
    }
  }
  if (out.steps == 0) {
    throw ConfigError("config: '" + path + ".steps' must be >= 1");
  }
  if (out.batch_size == 0) {
    throw ConfigError("config: '" + path + ".batch_size' must be >= 1");
  }
  if (!(out.learning_rate > 0.0)) {
    throw ConfigError("config: '" + path + ".learning_rate' must be > 0");
  }
  if (!(out.temperature > 0.0)) {
    throw ConfigError("config: '" + path + ".temperature' must be > 0");
  }
  if (out.holdout_fraction <= 0.0 || out.holdout_fraction >= 1.0) {
    throw ConfigError("config: '" + path +
                      ".holdout_fraction' must lie in (0, 1)");
  }
  if (out.log_every == 0) {
    throw ConfigError("config: '" + path + ".log_every' must be >= 1");
  }
}

PipelineConfig parse_config(const json& j) {
  check_keys(j, "",
             {"output_root", "seed", "dataset", "teacher_encoder",
              "multilingual_encoder", "projection", "lora", "train_teacher",
              "train_multilingual", "train_distill"});
  PipelineConfig cfg;

  std::string root = cfg.output_root.string();
  read_field(j, "output_root", "", root);
  cfg.output_root = root;
  read_field(j, "seed", "", cfg.seed);

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset",
               {"num_topics", "vocab_size", "head_size", "head_mass",
                "num_languages", "doc_len", "query_len", "parallel_pairs",
                "eval", "train"});
    read_field(d, "num_topics", "dataset", cfg.dataset.num_topics);
    read_field(d, "vocab_size", "dataset", cfg.dataset.vocab_size);
    read_field(d, "head_size", "dataset", cfg.dataset.head_size);
    read_field(d, "head_mass", "dataset", cfg.dataset.head_mass);
    read_field(d, "num_languages", "dataset", cfg.dataset.num_languages);
    read_field(d, "doc_len", "dataset", cfg.dataset.doc_len);
    read_field(d, "query_len", "dataset", cfg.dataset.query_len);
    read_field(d, "parallel_pairs", "dataset", cfg.dataset.parallel_pairs);
    auto read_split = [&d](const char* key, DatasetSplitConfig& split) {
      if (!d.contains(key)) return;
      const std::string path = std::string("dataset.") + key;
      check_keys(d.at(key), path, {"num_docs", "num_queries"});
      read_field(d.at(key), "num_docs", path, split.num_docs);
      read_field(d.at(key), "num_queries", path, split.num_queries);
    };
    read_split("eval", cfg.dataset.eval_split);
    read_split("train", cfg.dataset.train_split);
    if (cfg.dataset.num_languages < 2) {
      throw ConfigError(
          "config: 'dataset.num_languages' must be >= 2 (language 0 plus at "
          "least one cipher language)");
    }
  }

  if (j.contains("teacher_encoder")) {
    read_encoder(j.at("teacher_encoder"), "teacher_encoder",
                 cfg.teacher_encoder);
  }
  if (j.contains("multilingual_encoder")) {
    read_encoder(j.at("multilingual_encoder"), "multilingual_encoder",
                 cfg.multilingual_encoder);
  }

  if (j.contains("projection")) {
    const json& p = j.at("projection");
    check_keys(p, "projection", {"d_hidden", "use_gelu"});
    read_field(p, "d_hidden", "projection", cfg.projection.d_hidden);
    read_field(p, "use_gelu", "projection", cfg.projection.use_gelu);
    if (cfg.projection.d_hidden == 0) {
      throw ConfigError("config: 'projection.d_hidden' must be >= 1");
    }
  }

  if (j.contains("lora")) {
    const json& l = j.at("lora");
    check_keys(l, "lora", {"rank", "alpha", "dropout_rate", "targets"});
    read_field(l, "rank", "lora", cfg.lora.rank);
    read_field(l, "alpha", "lora", cfg.lora.alpha);
    read_field(l, "dropout_rate", "lora", cfg.lora.dropout_rate);
    if (l.contains("targets")) {
      std::vector<std::string> targets;
      read_field(l, "targets", "lora", targets);
      cfg.lora.on_query = false;
      cfg.lora.on_key = false;
      cfg.lora.on_value = false;
      for (const std::string& t : targets) {
        if (t == "query") {
          cfg.lora.on_query = true;
        } else if (t == "key") {
          cfg.lora.on_key = true;
        } else if (t == "value") {
          cfg.lora.on_value = true;
        } else {
          throw ConfigError("config: 'lora.targets' entry \"" + t +
                            "\" is not one of query/key/value");
        }
      }
    }
    cfg.lora.validate();
  }

  if (j.contains("train_teacher")) {
    read_train_stage(j.at("train_teacher"), "train_teacher",
                     cfg.train_teacher);
  }
  if (j.contains("train_multilingual")) {
    read_train_stage(j.at("train_multilingual"), "train_multilingual",
                     cfg.train_multilingual);
  }
  if (j.contains("train_distill")) {
    read_train_stage(j.at("train_distill"), "train_distill",
                     cfg.train_distill);
  }
  return cfg;
}

// Canonical text rebuilt from the parsed values (so a config file that spells
// out a default and one that omits it hash identically); output_root is
// deliberately absent.
std::string canonical_text(const PipelineConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["dataset"] = {{"num_topics", c.dataset.num_topics},
                  {"vocab_size", c.dataset.vocab_size},
                  {"head_size", c.dataset.head_size},
                  {"head_mass", c.dataset.head_mass},
                  {"num_languages", c.dataset.num_languages},
                  {"doc_len", c.dataset.doc_len},
                  {"query_len", c.dataset.query_len},
                  {"parallel_pairs", c.dataset.parallel_pairs},
                  {"eval",
                   {{"num_docs", c.dataset.eval_split.num_docs},
                    {"num_queries", c.dataset.eval_split.num_queries}}},
                  {"train",
                   {{"num_docs", c.dataset.train_split.num_docs},
                    {"num_queries", c.dataset.train_split.num_queries}}}};
  auto encoder_json = [](const EncoderConfig& e) {
    return json{{"d_model", e.d_model},         {"num_layers", e.num_layers},
                {"num_heads", e.num_heads},     {"d_ff", e.d_ff},
                {"max_positions", e.max_positions},
                {"dropout_rate", e.dropout_rate}};
  };
  j["teacher_encoder"] = encoder_json(c.teacher_encoder);
  j["multilingual_encoder"] = encoder_json(c.multilingual_encoder);
  j["projection"] = {{"d_hidden", c.projection.d_hidden},
                     {"use_gelu", c.projection.use_gelu}};
  j["lora"] = {{"rank", c.lora.rank},
               {"alpha", c.lora.alpha},
               {"dropout_rate", c.lora.dropout_rate},
               {"on_query", c.lora.on_query},
               {"on_key", c.lora.on_key},
               {"on_value", c.lora.on_value}};
  auto stage_json = [](const TrainStageConfig& t) {
    return json{{"steps", t.steps},
                {"batch_size", t.batch_size},
                {"learning_rate", t.learning_rate},
                {"schedule", t.schedule == LrSchedule::Kind::kConstant
                                 ? "constant"
                                 : "linear-decay"},
                {"temperature", t.temperature},
                {"holdout_fraction", t.holdout_fraction}};
  };
  j["train_teacher"] = stage_json(c.train_teacher);
  j["train_multilingual"] = stage_json(c.train_multilingual);
  j["train_distill"] = stage_json(c.train_distill);
  return j.dump();
}

json apply_overrides(json j, const std::vector<std::string>& overrides) {
  for (const std::string& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("config: override '" + ov +
                        "' is not of the form key.path=value");
    }
    std::string path = ov.substr(0, eq);
    const std::string value = ov.substr(eq + 1);
    for (char& ch : path) {
      if (ch == '.') ch = '/';
    }
    json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded()) parsed = value;  // plain string
    try {
      j[json::json_pointer("/" + path)] = std::move(parsed);
    } catch (const json::exception& e) {
      throw ConfigError("config: cannot apply override '" + ov +
                        "': " + e.what());
    }
  }
  return j;
}

PipelineConfig finish_config(json j, const std::vector<std::string>& overrides) {
  j = apply_overrides(std::move(j), overrides);
  PipelineConfig cfg = parse_config(j);
  if (const char* env = std::getenv(kOutputRootEnvVar);
      env != nullptr && *env != '\0') {
    cfg.output_root = env;
  }
  cfg.model_hash = fnv1a(canonical_text(cfg));
  return cfg;
}

}  // namespace

PipelineConfig load_config(const std::filesystem::path& file,
                           const std::vector<std::string>& overrides) {
  std::ifstream in(file);
  if (!in) throw ConfigError("config: cannot read " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: " + file.string() + " is not valid JSON: " +
                      e.what());
  }
  return finish_config(std::move(j), overrides);
}

PipelineConfig config_from_text(const std::string& json_text,
                                const std::vector<std::string>& overrides) {
  json j = json::parse(json_text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) {
    throw ConfigError("config: text is not valid JSON");
  }
  return finish_config(std::move(j), overrides);
}

PipelineConfig default_config() {
  return config_from_text(default_config_text());
}

std::string default_config_text() {
  return R"({
  "output_root": "runs/default",
  "seed": 42,
  "dataset": {
    "num_topics": 8,
    "vocab_size": 2000,
    "head_size": 40,
    "head_mass": 0.8,
    "num_languages": 4,
    "doc_len": 64,
    "query_len": 8,
    "parallel_pairs": 2048,
    "eval": { "num_docs": 400, "num_queries": 80 },
    "train": { "num_docs": 400, "num_queries": 160 }
  },
  "teacher_encoder": {
    "d_model": 64, "num_layers": 2, "num_heads": 4, "d_ff": 256,
    "max_positions": 512, "dropout_rate": 0.0
  },
  "multilingual_encoder": {
    "d_model": 64, "num_layers": 2, "num_heads": 4, "d_ff": 256,
    "max_positions": 512, "dropout_rate": 0.0
  },
  "projection": { "d_hidden": 256, "use_gelu": false },
  "lora": {
    "rank": 32, "alpha": 64.0, "dropout_rate": 0.05,
    "targets": ["query", "key", "value"]
  },
  "train_teacher": {
    "steps": 600, "batch_size": 32, "learning_rate": 0.001,
    "schedule": "linear-decay", "temperature": 0.05, "log_every": 50
  },
  "train_multilingual": {
    "steps": 1000, "batch_size": 32, "learning_rate": 0.001,
    "schedule": "linear-decay", "temperature": 0.05, "log_every": 50
  },
  "train_distill": {
    "steps": 2000, "batch_size": 32, "learning_rate": 0.0002,
    "schedule": "linear-decay", "holdout_fraction": 0.1, "log_every": 50
  }
}
)";
}

}  // namespace xlret
