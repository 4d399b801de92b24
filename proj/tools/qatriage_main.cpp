#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qatriage/data.hpp"
#include "qatriage/error.hpp"
#include "qatriage/experiment.hpp"

namespace {

// Config text assembled from an optional file plus --set key=value
// overrides; the strict parser then sees one coherent document.
std::string merge_config_sources(const std::string& config_path,
                                 const std::vector<std::string>& overrides) {
  std::vector<std::string> order;
  std::map<std::string, std::string> values;
  const auto put = [&](const std::string& key, const std::string& value, bool allow_replace) {
    if (values.count(key) == 0) {
      order.push_back(key);
    } else if (!allow_replace) {
      throw qatriage::Error("duplicate key '" + key + "'");
    }
    values[key] = value;
  };

  if (!config_path.empty()) {
    std::ifstream input(config_path);
    if (!input) {
      throw qatriage::Error("cannot open '" + config_path + "'");
    }
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(input, line)) {
      ++line_number;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::string stripped = line;
      const auto first = stripped.find_first_not_of(" \t");
      stripped = first == std::string::npos ? "" : stripped.substr(first);
      if (stripped.empty() || stripped.front() == '#') continue;
      const auto eq = stripped.find('=');
      if (eq == std::string::npos) {
        throw qatriage::ParseError(config_path, line_number, "expected key=value");
      }
      put(stripped.substr(0, eq), stripped.substr(eq + 1), false);
    }
  }
  for (const std::string& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw qatriage::Error("--set expects key=value, got '" + item + "'");
    }
    put(item.substr(0, eq), item.substr(eq + 1), true);
  }

  std::string text;
  for (const std::string& key : order) {
    text += key + "=" + values.at(key) + "\n";
  }
  return text;
}

int cmd_gen_data(const qatriage::SynthConfig& cfg, const std::string& out) {
  const qatriage::Dataset dataset = qatriage::synth_generate(cfg);
  qatriage::save_csv(out, dataset);
  const qatriage::SynthModel model = qatriage::make_synth_model(cfg);
  qatriage::write_synth_sidecar(out + ".meta", cfg, model);
  std::cout << "wrote " << dataset.size() << " records to " << out << " (+ " << out
            << ".meta)\n";
  return 0;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            const std::string& output_dir_flag) {
  qatriage::ExperimentConfig config =
      qatriage::parse_config_text(merge_config_sources(config_path, overrides));
  if (!output_dir_flag.empty()) {
    config.output_dir = output_dir_flag;
  }
  const qatriage::RunArtifact artifact = qatriage::run_experiment(config);
  qatriage::write_run_outputs(artifact, config.output_dir);

  std::size_t failed = 0;
  for (const qatriage::RepeatResult& result : artifact.repeats) {
    if (result.failed) {
      ++failed;
      std::cerr << "repeat " << result.repeat << " failed: " << result.error << "\n";
    } else {
      std::cout << "repeat " << result.repeat << " done in " << result.seconds << " s\n";
    }
  }
  std::cout << "\n== Prospective (threshold " << config.safety_threshold << ") ==\n"
            << qatriage::render_table(artifact.summaries, false)
            << "\n== Retrospective ==\n"
            << qatriage::render_table(artifact.summaries, true) << "\noutputs in "
            << config.output_dir << "\n";
  if (failed != 0) {
    std::cerr << "error: " << failed << " of " << artifact.repeats.size()
              << " repeats failed\n";
    return 2;
  }
  return 0;
}

int cmd_check_guarantees(const std::string& method_name, std::size_t trials, double alpha,
                         std::size_t n_cal, std::size_t n_test,
                         const qatriage::SynthConfig& generator, const std::string& out) {
  const qatriage::Method method = qatriage::parse_method(method_name);
  const qatriage::GuaranteeCheck check =
      qatriage::check_guarantees(method, trials, generator, alpha, n_cal, n_test);
  const std::string text = qatriage::format_guarantees(check);
  std::ofstream file(out);
  if (!file) {
    throw qatriage::Error("cannot write '" + out + "'");
  }
  file << text;
  std::cout << text;
  if (!check.pass) {
    std::cerr << "error: guarantee check FAIL\n";
    return 2;
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& directories, const std::string& out) {
  std::vector<qatriage::RunArtifact> artifacts;
  artifacts.reserve(directories.size());
  for (const std::string& directory : directories) {
    artifacts.push_back(qatriage::load_run_outputs(directory));
  }
  const std::string table = qatriage::merge_report(artifacts);
  if (out.empty()) {
    std::cout << table;
  } else {
    std::ofstream file(out);
    if (!file) {
      throw qatriage::Error("cannot write '" + out + "'");
    }
    file << table;
    std::cout << "wrote " << out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal triage of IMRT QA plans"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic plan dataset CSV");
  qatriage::SynthConfig gen_cfg;
  gen_cfg.n = 1000;
  std::string gen_out;
  gen->add_option("--n", gen_cfg.n, "Number of records")->capture_default_str();
  gen->add_option("--unsafe-rate", gen_cfg.unsafe_rate, "Target fraction with gpr < 95")
      ->capture_default_str();
  gen->add_option("--noise-sd", gen_cfg.noise_sd, "Label noise standard deviation")
      ->capture_default_str();
  gen->add_option("--seed", gen_cfg.seed, "Generator seed")->capture_default_str();
  gen->add_option("--dim", gen_cfg.dim, "Feature count")->capture_default_str();
  gen->add_option("--out", gen_out, "Output CSV path")->required();

  // run
  auto* run = app.add_subcommand("run", "Run the method-comparison experiment");
  std::string run_config;
  std::string run_output_dir;
  std::vector<std::string> run_sets;
  run->add_option("--config", run_config, "Config file (key=value lines)");
  run->add_option("--set", run_sets, "Override a config key, e.g. --set repeats=5");
  run->add_option("--output-dir", run_output_dir, "Where to write metrics and tables");

  // check-guarantees
  auto* check = app.add_subcommand("check-guarantees",
                                   "Monte-Carlo check of the coverage/risk guarantees");
  std::string check_method = "cp";
  std::size_t check_trials = 500;
  double check_alpha = 0.1;
  std::size_t check_n_cal = 100;
  std::size_t check_n_test = 500;
  qatriage::SynthConfig check_gen;
  check_gen.unsafe_rate = 0.3;
  check_gen.seed = 1;
  std::string check_out = "guarantees.txt";
  check->add_option("--method", check_method, "cp or crc")->capture_default_str();
  check->add_option("--trials", check_trials, "Resampling trials (>= 100)")
      ->capture_default_str();
  check->add_option("--alpha", check_alpha, "Miscoverage / risk level")->capture_default_str();
  check->add_option("--n-cal", check_n_cal, "Calibration size per trial")
      ->capture_default_str();
  check->add_option("--n-test", check_n_test, "Test size per trial")->capture_default_str();
  check->add_option("--unsafe-rate", check_gen.unsafe_rate, "Generator unsafe fraction")
      ->capture_default_str();
  check->add_option("--noise-sd", check_gen.noise_sd, "Generator noise")
      ->capture_default_str();
  check->add_option("--seed", check_gen.seed, "Base generator seed")->capture_default_str();
  check->add_option("--dim", check_gen.dim, "Feature count")->capture_default_str();
  check->add_option("--out", check_out, "Summary output path")->capture_default_str();

  // report
  auto* report = app.add_subcommand("report", "Merge run artifacts into one table");
  std::vector<std::string> report_dirs;
  std::string report_out;
  report->add_option("dirs", report_dirs, "Run output directories")->required();
  report->add_option("--out", report_out, "Write the merged table here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen_data(gen_cfg, gen_out);
    }
    if (run->parsed()) {
      return cmd_run(run_config, run_sets, run_output_dir);
    }
    if (check->parsed()) {
      return cmd_check_guarantees(check_method, check_trials, check_alpha, check_n_cal,
                                  check_n_test, check_gen, check_out);
    }
    if (report->parsed()) {
      return cmd_report(report_dirs, report_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
