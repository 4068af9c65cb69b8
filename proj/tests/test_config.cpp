// SPDX-License-Identifier: Apache-2.0
// Configuration loading: strict key checking, typed errors, dotted-path
// overrides, the output-root environment variable, and a model hash that
// identifies the trained model rather than where it lives on disk.
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "test_support.hpp"
#include "xlret/config.hpp"
#include "xlret/errors.hpp"

using namespace xlret;

namespace {

// Guards the output-root environment variable so tests cannot leak state.
struct EnvGuard {
  explicit EnvGuard(const char* name) : name_(name) {
    if (const char* v = std::getenv(name)) saved_ = v;
  }
  ~EnvGuard() {
    if (saved_.empty()) {
      unsetenv(name_);
    } else {
      setenv(name_, saved_.c_str(), 1);
    }
  }
  const char* name_;
  std::string saved_;
};

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("the built-in defaults parse and match the shipped file byte for byte") {
  EnvGuard guard(kOutputRootEnvVar);
  unsetenv(kOutputRootEnvVar);

  const PipelineConfig cfg = default_config();
  CHECK(cfg.output_root == std::filesystem::path("runs/default"));
  CHECK(cfg.seed == 42);
  CHECK(cfg.dataset.num_languages == 4);
  CHECK(cfg.dataset.vocab_size == 2000);
  CHECK(cfg.teacher_encoder.max_positions == 512);
  CHECK(cfg.multilingual_encoder.d_model == 64);
  CHECK(cfg.lora.rank == 32);
  CHECK(cfg.lora.on_query);
  CHECK(cfg.lora.on_key);
  CHECK(cfg.lora.on_value);
  CHECK(cfg.train_distill.steps == 2000);
  CHECK(cfg.train_distill.schedule == LrSchedule::Kind::kLinearDecay);
  CHECK(cfg.model_hash != 0);

  std::ifstream in(XLRET_DEFAULT_CONFIG, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == default_config_text());
}

TEST_CASE("unknown keys are rejected by name") {
  EnvGuard guard(kOutputRootEnvVar);
  unsetenv(kOutputRootEnvVar);

  CHECK_THROWS_AS(config_from_text(R"({"sede": 1})"), ConfigError);
  CHECK(message_of([] { config_from_text(R"({"sede": 1})"); }).find("sede") !=
        std::string::npos);

  const std::string nested = R"({"dataset": {"vocabsize": 10}})";
  CHECK_THROWS_AS(config_from_text(nested), ConfigError);
  CHECK(message_of([&] { config_from_text(nested); })
            .find("dataset.vocabsize") != std::string::npos);

  CHECK_THROWS_AS(config_from_text(R"({"train_teacher": {"step": 5}})"),
                  ConfigError);
  CHECK_THROWS_AS(config_from_text(R"({"lora": {"r": 4}})"), ConfigError);
}

TEST_CASE("wrong types are reported with the dotted path") {
  EnvGuard guard(kOutputRootEnvVar);
  unsetenv(kOutputRootEnvVar);

  const std::string bad = R"({"dataset": {"vocab_size": "many"}})";
  CHECK_THROWS_AS(config_from_text(bad), ConfigError);
  const std::string msg = message_of([&] { config_from_text(bad); });
  CHECK(msg.find("dataset.vocab_size") != std::string::npos);
  CHECK(msg.find("wrong type") != std::string::npos);

  CHECK_THROWS_AS(config_from_text(R"({"seed": "abc"})"), ConfigError);
  CHECK_THROWS_AS(config_from_text(R"({"dataset": 7})"), ConfigError);
}

TEST_CASE("dotted-path overrides accept JSON literals and plain strings") {
  EnvGuard guard(kOutputRootEnvVar);
  unsetenv(kOutputRootEnvVar);

  const PipelineConfig cfg = config_from_text(
      default_config_text(),
      {"train_distill.steps=123", "projection.use_gelu=true",
       "dataset.eval.num_docs=50", "output_root=runs/elsewhere",
       "lora.targets=[\"value\"]", "train_teacher.learning_rate=5e-4"});
  CHECK(cfg.train_distill.steps == 123);
  CHECK(cfg.projection.use_gelu);
  CHECK(cfg.dataset.eval_split.num_docs == 50);
  CHECK(cfg.output_root == std::filesystem::path("runs/elsewhere"));
  CHECK(!cfg.lora.on_query);
  CHECK(!cfg.lora.on_key);
  CHECK(cfg.lora.on_value);
  CHECK(cfg.train_teacher.learning_rate == doctest::Approx(5e-4));

  // Overridden values still go through validation.
  CHECK_THROWS_AS(
      config_from_text(default_config_text(), {"train_distill.steps=0"}),
      ConfigError);
  // An override naming an unknown key is caught like any other unknown key.
  CHECK_THROWS_AS(
      config_from_text(default_config_text(), {"train_distill.stepz=9"}),
      ConfigError);
  // Missing '=' is malformed.
  CHECK_THROWS_AS(config_from_text(default_config_text(), {"no_equals"}),
                  ConfigError);
}

TEST_CASE("the environment variable overrides the output root") {
  EnvGuard guard(kOutputRootEnvVar);

  setenv(kOutputRootEnvVar, "/tmp/elsewhere_root", 1);
  const PipelineConfig cfg = default_config();
  CHECK(cfg.output_root == std::filesystem::path("/tmp/elsewhere_root"));

  // It wins over explicit overrides too: the variable is the outermost layer.
  const PipelineConfig cfg2 =
      config_from_text(default_config_text(), {"output_root=runs/x"});
  CHECK(cfg2.output_root == std::filesystem::path("/tmp/elsewhere_root"));

  unsetenv(kOutputRootEnvVar);
  const PipelineConfig cfg3 = default_config();
  CHECK(cfg3.output_root == std::filesystem::path("runs/default"));
}

TEST_CASE("the model hash names the model, not its directory") {
  EnvGuard guard(kOutputRootEnvVar);
  unsetenv(kOutputRootEnvVar);

  const PipelineConfig base = default_config();

  // Different output directories, identical model.
  const PipelineConfig moved =
      config_from_text(default_config_text(), {"output_root=runs/other"});
  CHECK(moved.model_hash == base.model_hash);

  // Spelling out a value that already equals its default changes nothing:
  // the hash is over the parsed values, not the input text.
  const PipelineConfig spelled = config_from_text(
      default_config_text(), {"train_teacher.holdout_fraction=0.1"});
  CHECK(spelled.model_hash == base.model_hash);
  CHECK(config_from_text(R"({"seed": 42})").model_hash ==
        config_from_text("{}").model_hash);

  // Any training-relevant change moves the hash.
  CHECK(config_from_text(default_config_text(), {"seed=43"}).model_hash !=
        base.model_hash);
  CHECK(config_from_text(default_config_text(), {"train_distill.steps=10"})
            .model_hash != base.model_hash);
  CHECK(config_from_text(default_config_text(), {"lora.rank=8"}).model_hash !=
        base.model_hash);
}

TEST_CASE("schedule names are constant and linear-decay only") {
  EnvGuard guard(kOutputRootEnvVar);
  unsetenv(kOutputRootEnvVar);

  const PipelineConfig c = config_from_text(
      R"({"train_teacher": {"schedule": "constant"}})");
  CHECK(c.train_teacher.schedule == LrSchedule::Kind::kConstant);
  const PipelineConfig d = config_from_text(
      R"({"train_teacher": {"schedule": "linear-decay"}})");
  CHECK(d.train_teacher.schedule == LrSchedule::Kind::kLinearDecay);

  const std::string bad = R"({"train_teacher": {"schedule": "cosine"}})";
  CHECK_THROWS_AS(config_from_text(bad), ConfigError);
  CHECK(message_of([&] { config_from_text(bad); }).find("cosine") !=
        std::string::npos);
}

TEST_CASE("field validation rejects out-of-range values") {
  EnvGuard guard(kOutputRootEnvVar);
  unsetenv(kOutputRootEnvVar);

  CHECK_THROWS_AS(config_from_text(R"({"dataset": {"num_languages": 1}})"),
                  ConfigError);
  CHECK_THROWS_AS(
      config_from_text(R"({"train_multilingual": {"batch_size": 0}})"),
      ConfigError);
  CHECK_THROWS_AS(
      config_from_text(R"({"train_distill": {"learning_rate": 0.0}})"),
      ConfigError);
  CHECK_THROWS_AS(
      config_from_text(R"({"train_distill": {"holdout_fraction": 1.0}})"),
      ConfigError);
  CHECK_THROWS_AS(
      config_from_text(R"({"train_distill": {"holdout_fraction": 0.0}})"),
      ConfigError);
  CHECK_THROWS_AS(config_from_text(R"({"train_teacher": {"log_every": 0}})"),
                  ConfigError);
  CHECK_THROWS_AS(config_from_text(R"({"train_teacher": {"temperature": 0}})"),
                  ConfigError);
  CHECK_THROWS_AS(config_from_text(R"({"projection": {"d_hidden": 0}})"),
                  ConfigError);
  CHECK_THROWS_AS(config_from_text(R"({"lora": {"targets": ["qkv"]}})"),
                  ConfigError);
  CHECK_THROWS_AS(
      config_from_text(R"({"teacher_encoder": {"d_model": 30, "num_heads": 4}})"),
      ConfigError);
}

TEST_CASE("files load like text and missing or broken files are config errors") {
  EnvGuard guard(kOutputRootEnvVar);
  unsetenv(kOutputRootEnvVar);
  xlret::testing::TempDir dir("config_files");

  const auto file = dir.path() / "pipeline.json";
  {
    std::ofstream out(file);
    out << R"({"seed": 7, "train_teacher": {"steps": 12}})";
  }
  const PipelineConfig cfg = load_config(file, {"train_teacher.steps=13"});
  CHECK(cfg.seed == 7);
  CHECK(cfg.train_teacher.steps == 13);
  CHECK(cfg.model_hash ==
        config_from_text(R"({"seed": 7, "train_teacher": {"steps": 13}})")
            .model_hash);

  CHECK_THROWS_AS(load_config(dir.path() / "absent.json"), ConfigError);

  const auto broken = dir.path() / "broken.json";
  {
    std::ofstream out(broken);
    out << "{ nope";
  }
  CHECK_THROWS_AS(load_config(broken), ConfigError);
  CHECK_THROWS_AS(config_from_text("not json at all"), ConfigError);
}
