// SPDX-License-Identifier: Apache-2.0
//
// Command line front end for the cross-lingual retrieval pipeline:
//   xlret gen                          generate datasets + vocabularies
//   xlret train {teacher|multilingual|distill}
//   xlret eval                         score teacher + student, write reports
//   xlret report                       render the written artifacts
//
// Exit codes: 0 ok, 1 unexpected failure, 2 configuration, 3 stage ordering,
// 4 training divergence, 5 checkpoint/config compatibility.
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xlret/config.hpp"
#include "xlret/errors.hpp"
#include "xlret/pipeline.hpp"
#include "xlret/search.hpp"

namespace {

xlret::PipelineConfig resolve_config(const std::string& config_file,
                                     const std::vector<std::string>& sets) {
  if (config_file.empty()) {
    return xlret::config_from_text(xlret::default_config_text(), sets);
  }
  return xlret::load_config(config_file, sets);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot cross-lingual dense retrieval pipeline"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> sets;
  app.add_option("-c,--config", config_file,
                 "JSON config file (built-in defaults when omitted)");
  app.add_option("--set", sets,
                 "Dotted-path override, e.g. --set train_distill.steps=100")
      ->take_all();

  CLI::App* cmd_gen = app.add_subcommand("gen", "Generate datasets");
  CLI::App* cmd_train = app.add_subcommand("train", "Run one training stage");
  std::string stage;
  cmd_train->add_option("stage", stage, "teacher | multilingual | distill")
      ->required();
  CLI::App* cmd_eval = app.add_subcommand("eval", "Evaluate and write reports");
  CLI::App* cmd_report = app.add_subcommand("report", "Render run artifacts");

  CLI11_PARSE(app, argc, argv);

  try {
    const xlret::PipelineConfig config = resolve_config(config_file, sets);
    if (cmd_gen->parsed()) {
      xlret::run_gen(config);
      std::cout << "generated datasets under "
                << xlret::run_paths(config).datasets().string() << "\n";
    } else if (cmd_train->parsed()) {
      xlret::run_train_stage(config, stage);
      std::cout << "stage '" << stage << "' finished; checkpoint at "
                << xlret::run_paths(config).checkpoint(stage == "distill"
                                                           ? "student"
                                                           : stage)
                       .string()
                << "\n";
    } else if (cmd_eval->parsed()) {
      const xlret::EvalArtifacts artifacts = xlret::run_eval(config);
      std::cout << xlret::report_to_table(artifacts.teacher) << "\n"
                << xlret::report_to_table(artifacts.student);
    } else if (cmd_report->parsed()) {
      std::cout << xlret::run_report(config);
    }
    return 0;
  } catch (const xlret::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const xlret::OrderingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const xlret::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const xlret::CompatibilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
