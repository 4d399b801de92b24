#include <filesystem>
#include <map>
#include <sstream>

#include "doctest.h"
#include "qatriage/error.hpp"
#include "qatriage/experiment.hpp"

using namespace qatriage;

namespace {

std::map<std::string, std::string> config_map(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

ExperimentConfig smoke_config() {
  ExperimentConfig cfg;
  cfg.synth = {120, 0.2, 2.0, 11, 3};
  cfg.ensemble_size = 2;
  cfg.repeats = 2;
  cfg.train.hidden = 4;
  cfg.train.epochs = 8;
  cfg.train.learning_rate = 0.05;
  cfg.train.minibatch_size = 16;
  cfg.master_seed = 5;
  return cfg;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("method names round trip") {
  CHECK(all_methods().size() == 6);
  for (Method m : all_methods()) {
    CHECK(parse_method(method_name(m)) == m);
  }
  CHECK(method_name(Method::ta_crc) == "ta_crc");
  CHECK_THROWS_AS(parse_method("bogus"), Error);
}

TEST_CASE("default config serializes the pinned settings") {
  const auto kv = config_map(serialize_config(ExperimentConfig{}));
  CHECK(kv.at("train.hidden") == "100");
  CHECK(kv.at("train.activation") == "sigmoid");
  CHECK(kv.at("train.epochs") == "1500");
  CHECK(kv.at("train.learning_rate") == "0.01");
  CHECK(kv.at("alpha") == "0.1");
  CHECK(kv.at("cqr.low_percentile") == "5");
  CHECK(kv.at("cqr.high_percentile") == "95");
  CHECK(kv.at("safety_threshold") == "95");
  CHECK(kv.at("methods") == "base,cp,cqr,crc,ct,ta_crc");
  CHECK(kv.at("synth.n") == "2000");
  CHECK(kv.at("ensemble_size") == "5");
  CHECK(kv.at("repeats") == "3");
  CHECK(kv.at("lambda_grid.points") == "201");
  CHECK(kv.at("balance.enabled") == "true");
  CHECK(kv.at("warmup.frac") == "0.1");
}

TEST_CASE("config serialization round trips") {
  ExperimentConfig cfg = smoke_config();
  cfg.alpha = 0.2;
  cfg.methods = {Method::cp, Method::crc};
  cfg.shift.enabled = true;
  cfg.shift.unsafe_rate = 0.4;
  cfg.feature_selection = true;
  const std::string text = serialize_config(cfg);
  const ExperimentConfig back = parse_config_text(text);
  CHECK(serialize_config(back) == text);
  CHECK(back.alpha == 0.2);
  CHECK(back.methods == std::vector<Method>{Method::cp, Method::crc});
  CHECK(back.shift.enabled);
  CHECK(back.synth.n == 120);
}

TEST_CASE("config parsing rejects malformed input") {
  CHECK_THROWS_AS(parse_config_text("bogus=1\n"), ParseError);
  CHECK_THROWS_AS(parse_config_text("alpha=0.1\nalpha=0.2\n"), ParseError);
  CHECK_THROWS_AS(parse_config_text("alpha\n"), ParseError);
  CHECK_THROWS_AS(parse_config_text("alpha=zebra\n"), Error);
  CHECK_THROWS_AS(parse_config_text("methods=cp,cp\n"), Error);
  CHECK_THROWS_AS(parse_config_text("alpha=1.5\n"), Error);
  CHECK_THROWS_AS(parse_config_text("repeats=0\n"), Error);
  CHECK_THROWS_AS(parse_config_text("data.csv=plans.csv\nshift.enabled=true\n"), Error);
  try {
    parse_config_text("alpha=0.1\nwhat=ever\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("cqr percentiles must match alpha when given explicitly") {
  CHECK_THROWS_AS(parse_config_text("alpha=0.2\ncqr.low_percentile=5\n"), Error);
  CHECK_THROWS_AS(parse_config_text("alpha=0.2\ncqr.high_percentile=95\n"), Error);
  const ExperimentConfig ok =
      parse_config_text("alpha=0.2\ncqr.low_percentile=10\ncqr.high_percentile=90\n");
  CHECK(ok.cqr_low_percentile() == 10.0);
  CHECK(ok.cqr_high_percentile() == 90.0);
}

TEST_CASE("comments and blank lines are ignored") {
  const ExperimentConfig cfg = parse_config_text("# header\n\nalpha=0.3\n  # indented\n");
  CHECK(cfg.alpha == 0.3);
}

TEST_CASE("experiment smoke run covers every method") {
  const ExperimentConfig cfg = smoke_config();
  const RunArtifact artifact = run_experiment(cfg);
  REQUIRE(artifact.repeats.size() == 2);
  for (const RepeatResult& repeat : artifact.repeats) {
    CHECK_FALSE(repeat.failed);
    CHECK(repeat.prospective.size() == 6);
    CHECK(repeat.retrospective.size() == 6);
    CHECK_FALSE(repeat.prospective.at(Method::base).coverage.has_value());
    CHECK(repeat.prospective.at(Method::cp).coverage.has_value());
    CHECK(repeat.prospective.at(Method::cp).n_test == 24);
    CHECK(repeat.prospective.at(Method::ta_crc).mean_interval_width.has_value());
  }
  REQUIRE(artifact.summaries.size() == 6);
  for (const MethodSummary& summary : artifact.summaries) {
    CHECK(summary.prospective.runs == 2);
    CHECK(summary.retrospective.runs == 2);
  }
}

TEST_CASE("experiment runs are deterministic") {
  const ExperimentConfig cfg = smoke_config();
  const RunArtifact a = run_experiment(cfg);
  const RunArtifact b = run_experiment(cfg);
  for (std::size_t r = 0; r < a.repeats.size(); ++r) {
    for (Method m : cfg.methods) {
      const MetricsReport& x = a.repeats[r].prospective.at(m);
      const MetricsReport& y = b.repeats[r].prospective.at(m);
      CHECK(x.sensitivity == y.sensitivity);
      CHECK(x.specificity == y.specificity);
      CHECK(x.reduction_in_measurement == y.reduction_in_measurement);
      CHECK(x.coverage == y.coverage);
      CHECK(x.mean_interval_width == y.mean_interval_width);
      CHECK(a.repeats[r].retrospective.at(m).threshold_used ==
            b.repeats[r].retrospective.at(m).threshold_used);
    }
  }
}

TEST_CASE("run outputs round trip through the filesystem") {
  const ExperimentConfig cfg = smoke_config();
  const RunArtifact artifact = run_experiment(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "qatriage_run_artifact";
  std::filesystem::remove_all(dir);
  write_run_outputs(artifact, dir.string());
  CHECK(std::filesystem::exists(dir / "run_config.txt"));
  CHECK(std::filesystem::exists(dir / "table_prospective.txt"));
  CHECK(std::filesystem::exists(dir / "table_retrospective.txt"));
  for (Method m : cfg.methods) {
    CHECK(std::filesystem::exists(dir / ("metrics_" + method_name(m) + ".csv")));
  }
  const RunArtifact loaded = load_run_outputs(dir.string());
  REQUIRE(loaded.repeats.size() == artifact.repeats.size());
  for (std::size_t r = 0; r < artifact.repeats.size(); ++r) {
    for (Method m : cfg.methods) {
      CHECK(loaded.repeats[r].prospective.at(m).sensitivity ==
            artifact.repeats[r].prospective.at(m).sensitivity);
      CHECK(loaded.repeats[r].retrospective.at(m).threshold_used ==
            artifact.repeats[r].retrospective.at(m).threshold_used);
      CHECK(loaded.repeats[r].prospective.at(m).coverage ==
            artifact.repeats[r].prospective.at(m).coverage);
    }
  }
}

TEST_CASE("tables list every method with the expected columns") {
  const ExperimentConfig cfg = smoke_config();
  const RunArtifact artifact = run_experiment(cfg);
  const std::string table = render_table(artifact.summaries, false);
  CHECK(table.find("Method") != std::string::npos);
  CHECK(table.find("Sensitivity") != std::string::npos);
  CHECK(table.find("Specificity") != std::string::npos);
  CHECK(table.find("Reduction in Measurement") != std::string::npos);
  CHECK(table.find("Coverage") != std::string::npos);
  CHECK(table.find("Interval Width") != std::string::npos);
  for (Method m : cfg.methods) {
    CHECK(table.find(method_name(m)) != std::string::npos);
  }
  CHECK(table.find("NA") != std::string::npos);  // base row has no coverage
}

TEST_CASE("merge pools repeats across artifacts") {
  ExperimentConfig cfg = smoke_config();
  cfg.methods = {Method::base, Method::cp};
  cfg.repeats = 1;
  const RunArtifact one = run_experiment(cfg);
  const std::string merged = merge_report({one, one});
  CHECK(merged.find("== Prospective") != std::string::npos);
  CHECK(merged.find("== Retrospective ==") != std::string::npos);
  CHECK(merged.find("cp") != std::string::npos);

  RunArtifact other = one;
  other.config.alpha = 0.2;
  CHECK_THROWS_AS(merge_report({one, other}), Error);
  CHECK_THROWS_AS(merge_report({}), Error);
}

TEST_CASE("distribution shift swaps in a perturbed test split") {
  ExperimentConfig cfg = smoke_config();
  cfg.methods = {Method::cp};
  cfg.repeats = 1;
  cfg.shift.enabled = true;
  cfg.shift.unsafe_rate = 0.5;
  cfg.shift.noise_sd = 3.0;
  cfg.shift.n_test = 40;
  const RunArtifact artifact = run_experiment(cfg);
  REQUIRE_FALSE(artifact.repeats.front().failed);
  CHECK(artifact.repeats.front().prospective.at(Method::cp).n_test == 40);

  cfg.shift.n_test = 0;  // keep the discarded split's size
  const RunArtifact kept = run_experiment(cfg);
  CHECK(kept.repeats.front().prospective.at(Method::cp).n_test == 24);
}

TEST_CASE("a run where every repeat fails reports the first error") {
  ExperimentConfig cfg = smoke_config();
  cfg.methods = {Method::cp};
  cfg.train.learning_rate = 1e12;  // guaranteed divergence
  CHECK_THROWS_AS(run_experiment(cfg), Error);
}

TEST_CASE("guarantee checks validate their arguments") {
  SynthConfig gen;
  gen.n = 100;
  gen.unsafe_rate = 0.3;
  gen.noise_sd = 2.0;
  gen.seed = 1;
  CHECK_THROWS_AS(check_guarantees(Method::cp, 99, gen, 0.1, 20, 50), Error);
  CHECK_THROWS_AS(check_guarantees(Method::base, 100, gen, 0.1, 20, 50), Error);
  CHECK_THROWS_AS(check_guarantees(Method::cp, 100, gen, 0.0, 20, 50), Error);
  CHECK_THROWS_AS(check_guarantees(Method::cp, 100, gen, 0.1, 0, 50), Error);
}

TEST_CASE("small monte-carlo guarantee checks pass") {
  SynthConfig gen;
  gen.n = 100;  // overwritten per trial with n_cal + n_test
  gen.unsafe_rate = 0.3;
  gen.noise_sd = 2.0;
  gen.seed = 4;
  const GuaranteeCheck cp = check_guarantees(Method::cp, 100, gen, 0.1, 20, 50);
  CHECK(cp.trials == 100);
  CHECK(cp.pass);
  const std::string rendered = format_guarantees(cp);
  CHECK(rendered.find("mean_coverage=") != std::string::npos);
  CHECK(rendered.find("result=PASS") != std::string::npos);

  const GuaranteeCheck crc = check_guarantees(Method::crc, 100, gen, 0.2, 30, 40);
  CHECK(crc.pass);
  CHECK(crc.curve_monotone);
  CHECK(format_guarantees(crc).find("mean_risk=") != std::string::npos);
}

}  // TEST_SUITE
