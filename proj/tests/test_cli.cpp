// SPDX-License-Identifier: Apache-2.0
// The command-line binary, driven as a subprocess: documented exit codes
// (0 ok, 2 config, 3 ordering, 4 divergence, 5 compatibility), stdout/stderr
// contracts, rerun safety, and the output-root environment variable.
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "test_support.hpp"
#include "xlret/config.hpp"

using namespace xlret;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run_cli(const std::string& args, const std::filesystem::path& dir,
                  const std::string& env_prefix = "") {
  unsetenv(kOutputRootEnvVar);  // only the explicit prefix may set it
  const auto out_file = dir / "cli_stdout.txt";
  const auto err_file = dir / "cli_stderr.txt";
  const std::string cmd = (env_prefix.empty() ? "" : env_prefix + " ") +
                          "\"" XLRET_CLI_PATH "\" " + args + " > \"" +
                          out_file.string() + "\" 2> \"" + err_file.string() +
                          "\"";
  const int status = std::system(cmd.c_str());
  CliResult result;
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.out = slurp(out_file);
  result.err = slurp(err_file);
  return result;
}

// Miniature configuration (seconds per stage) written next to the run.
std::filesystem::path write_tiny_config(const std::filesystem::path& dir) {
  nlohmann::json j;
  j["output_root"] = (dir / "run").string();
  j["seed"] = 11;
  j["dataset"] = {{"num_topics", 4},      {"vocab_size", 60},
                  {"head_size", 6},       {"head_mass", 0.8},
                  {"num_languages", 3},   {"doc_len", 12},
                  {"query_len", 4},       {"parallel_pairs", 64},
                  {"eval", {{"num_docs", 24}, {"num_queries", 8}}},
                  {"train", {{"num_docs", 24}, {"num_queries", 12}}}};
  j["teacher_encoder"] = {{"d_model", 16},       {"num_layers", 1},
                          {"num_heads", 2},      {"d_ff", 32},
                          {"max_positions", 64}, {"dropout_rate", 0.0}};
  j["multilingual_encoder"] = j["teacher_encoder"];
  j["projection"] = {{"d_hidden", 24}, {"use_gelu", false}};
  j["lora"] = {{"rank", 2},
               {"alpha", 4.0},
               {"dropout_rate", 0.0},
               {"targets", {"query", "key", "value"}}};
  j["train_teacher"] = {{"steps", 30},           {"batch_size", 8},
                        {"learning_rate", 2e-3}, {"log_every", 10}};
  j["train_multilingual"] = j["train_teacher"];
  j["train_distill"] = {{"steps", 40},
                        {"batch_size", 8},
                        {"learning_rate", 2e-3},
                        {"holdout_fraction", 0.2},
                        {"log_every", 10}};
  const auto file = dir / "config.json";
  std::ofstream out(file);
  out << j.dump(2) << '\n';
  return file;
}

// One directory with the whole pipeline already run through the binary.
struct TrainedCli {
  xlret::testing::TempDir dir{"cli_full"};
  std::filesystem::path config;
  TrainedCli() {
    config = write_tiny_config(dir.path());
    const std::string c = "-c \"" + config.string() + "\" ";
    REQUIRE(run_cli(c + "gen", dir.path()).code == 0);
    REQUIRE(run_cli(c + "train teacher", dir.path()).code == 0);
    REQUIRE(run_cli(c + "train multilingual", dir.path()).code == 0);
    REQUIRE(run_cli(c + "train distill", dir.path()).code == 0);
  }
  std::string flag() const { return "-c \"" + config.string() + "\" "; }
};

TrainedCli& trained_cli() {
  static TrainedCli instance;
  return instance;
}

}  // namespace

TEST_CASE("gen succeeds, reports its output, and reruns byte-identically") {
  xlret::testing::TempDir dir("cli_gen");
  const auto config = write_tiny_config(dir.path());
  const std::string c = "-c \"" + config.string() + "\" ";

  const CliResult first = run_cli(c + "gen", dir.path());
  CHECK(first.code == 0);
  CHECK(first.out.find("generated datasets") != std::string::npos);

  const auto corpus = dir.path() / "run" / "datasets" / "train" / "corpus.jsonl";
  const std::string bytes = slurp(corpus);
  CHECK(!bytes.empty());

  const CliResult second = run_cli(c + "gen", dir.path());
  CHECK(second.code == 0);
  CHECK(slurp(corpus) == bytes);
}

TEST_CASE("configuration problems exit with code 2 and name the key") {
  xlret::testing::TempDir dir("cli_config");
  const auto config = write_tiny_config(dir.path());
  const std::string c = "-c \"" + config.string() + "\" ";

  const CliResult unknown =
      run_cli(c + "--set train_teacher.stepz=9 gen", dir.path());
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("train_teacher.stepz") != std::string::npos);

  const CliResult invalid =
      run_cli(c + "--set train_distill.steps=0 gen", dir.path());
  CHECK(invalid.code == 2);
  CHECK(invalid.err.find("train_distill.steps") != std::string::npos);

  const CliResult missing =
      run_cli("-c /nonexistent/config.json gen", dir.path());
  CHECK(missing.code == 2);

  const auto broken = dir.path() / "broken.json";
  {
    std::ofstream out(broken);
    out << "{ nope";
  }
  CHECK(run_cli("-c \"" + broken.string() + "\" gen", dir.path()).code == 2);

  const CliResult bad_stage = run_cli(c + "train warmup", dir.path());
  CHECK(bad_stage.code == 2);
  CHECK(bad_stage.err.find("warmup") != std::string::npos);
}

TEST_CASE("a missing stage argument is a usage error") {
  xlret::testing::TempDir dir("cli_usage");
  const auto config = write_tiny_config(dir.path());
  const CliResult r =
      run_cli("-c \"" + config.string() + "\" train", dir.path());
  CHECK(r.code != 0);
  CHECK(r.err.find("stage") != std::string::npos);
}

TEST_CASE("out-of-order stages exit with code 3 naming the missing stage") {
  xlret::testing::TempDir dir("cli_order");
  const auto config = write_tiny_config(dir.path());
  const std::string c = "-c \"" + config.string() + "\" ";

  // Nothing generated yet.
  CHECK(run_cli(c + "train teacher", dir.path()).code == 3);

  REQUIRE(run_cli(c + "gen", dir.path()).code == 0);
  const CliResult distill = run_cli(c + "train distill", dir.path());
  CHECK(distill.code == 3);
  CHECK(distill.err.find("teacher") != std::string::npos);

  REQUIRE(run_cli(c + "train teacher", dir.path()).code == 0);
  const CliResult distill2 = run_cli(c + "train distill", dir.path());
  CHECK(distill2.code == 3);
  CHECK(distill2.err.find("multilingual") != std::string::npos);

  CHECK(run_cli(c + "eval", dir.path()).code == 3);
  CHECK(run_cli(c + "report", dir.path()).code == 3);
}

TEST_CASE("training divergence exits with code 4") {
  xlret::testing::TempDir dir("cli_diverge");
  const auto config = write_tiny_config(dir.path());
  const std::string c = "-c \"" + config.string() + "\" ";
  REQUIRE(run_cli(c + "gen", dir.path()).code == 0);

  // A denormal temperature overflows the contrastive logits immediately.
  const CliResult r = run_cli(
      c + "--set train_teacher.temperature=1e-45 train teacher", dir.path());
  CHECK(r.code == 4);
  CHECK(r.err.find("non-finite") != std::string::npos);
}

TEST_CASE("the full pipeline runs through the binary with exit code 0") {
  TrainedCli& run = trained_cli();

  const CliResult eval = run_cli(run.flag() + "eval", run.dir.path());
  CHECK(eval.code == 0);
  CHECK(eval.out.find("lang0") != std::string::npos);
  CHECK(eval.out.find("lang2") != std::string::npos);
  CHECK(eval.out.find("NDCG@10") != std::string::npos);

  const auto report_json = run.dir.path() / "run" / "reports" /
                           "report_student.json";
  const std::string bytes = slurp(report_json);
  CHECK(!bytes.empty());

  // Evaluation is rerun-safe.
  CHECK(run_cli(run.flag() + "eval", run.dir.path()).code == 0);
  CHECK(slurp(report_json) == bytes);

  const CliResult report = run_cli(run.flag() + "report", run.dir.path());
  CHECK(report.code == 0);
  CHECK(report.out.find("model hash:") != std::string::npos);
  CHECK(report.out.find("transfer ratios") != std::string::npos);
  CHECK(report.out.find("random-ranking baseline") != std::string::npos);
}

TEST_CASE("checkpoints from a different configuration exit with code 5") {
  TrainedCli& run = trained_cli();
  // Changing the seed changes the model hash; stored checkpoints no longer
  // match the active configuration.
  const CliResult r =
      run_cli(run.flag() + "--set seed=999 eval", run.dir.path());
  CHECK(r.code == 5);
  CHECK(r.err.find("hash") != std::string::npos);
}

TEST_CASE("the output-root environment variable redirects the run") {
  xlret::testing::TempDir dir("cli_env");
  const auto config = write_tiny_config(dir.path());
  const auto elsewhere = dir.path() / "elsewhere";

  const CliResult r =
      run_cli("-c \"" + config.string() + "\" gen", dir.path(),
              std::string(kOutputRootEnvVar) + "=\"" + elsewhere.string() +
                  "\"");
  CHECK(r.code == 0);
  CHECK(std::filesystem::exists(elsewhere / "datasets" / "train" /
                                "corpus.jsonl"));
  CHECK(!std::filesystem::exists(dir.path() / "run"));
}
