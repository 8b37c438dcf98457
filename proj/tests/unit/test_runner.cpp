#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "iccl/error.hpp"
#include "iccl/runner.hpp"

using namespace iccl;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("iccl_runner_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config(Method m) {
  ExperimentConfig c;
  c.method = m;
  c.phi = 20;
  c.k = 3;
  c.phi_i_grid = {5, 30};
  c.phi_d_grid = {0, 20, 60};
  c.repeats = 3;
  c.seed = 4;
  c.hidden1 = 16;
  c.hidden2 = 8;
  c.replay_batch = 4;
  return c;
}

RetentionMeasurement row(int phi_i, int phi_d, std::uint64_t seed, double value) {
  RetentionMeasurement r;
  r.method = "x";
  r.n_states = 4;
  r.phi = 10;
  r.k = 2;
  r.phi_i = phi_i;
  r.phi_d = phi_d;
  r.t_eval = 20 + phi_i + phi_d;
  r.seed = seed;
  r.value = value;
  return r;
}

}  // namespace

TEST_CASE("method names") {
  for (auto m : {Method::Sgd, Method::Er, Method::Ewc, Method::Bigram, Method::BigramAware, Method::BigramDecay,
                 Method::Llm})
    CHECK(method_from_string(to_string(m)) == m);
  CHECK(to_string(Method::BigramDecay) == "bigram-decay");
  CHECK_FALSE(is_local(Method::Llm));
  CHECK(is_local(Method::Ewc));
  CHECK_THROWS_AS(method_from_string("gpt"), ConfigError);
}

TEST_CASE("config JSON round trip, hashing and validation") {
  auto c = small_config(Method::Ewc);
  c.fixed_interference_seed = 77;
  nlohmann::json j = c;
  CHECK(j.contains("K"));
  const auto back = j.get<ExperimentConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(config_hash(back) == config_hash(c));
  auto other = c;
  other.lambda_ewc = 701;
  CHECK(config_hash(other) != config_hash(c));

  j["surprise"] = 1;
  CHECK_THROWS_AS(j.get<ExperimentConfig>(), ConfigError);

  auto bad = c;
  bad.repeats = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.phi_d_grid = {-1};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.n_states = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_NOTHROW(c.validate());

  auto sp = c;
  sp.schedule = ScheduleKind::SP;
  CHECK(sp.effective_phi_i_grid() == std::vector<int>{0});
  CHECK(c.effective_phi_i_grid() == c.phi_i_grid);
}

TEST_CASE("cell seeds are shared across methods and phi_d") {
  const auto a = derive_cell_seeds(small_config(Method::Sgd), 5, 1);
  const auto b = derive_cell_seeds(small_config(Method::BigramAware), 5, 1);
  CHECK(a.sequence == b.sequence);
  CHECK(a.target_task == b.target_task);
  CHECK(a.learner == b.learner);
  const auto c = derive_cell_seeds(small_config(Method::Sgd), 5, 2);
  CHECK(a.sequence != c.sequence);
  CHECK(a.target_task != c.target_task);
  // the target task does not depend on phi_i
  CHECK(derive_cell_seeds(small_config(Method::Sgd), 30, 1).target_task == a.target_task);

  auto fixed = small_config(Method::Sgd);
  fixed.fixed_interference_seed = 5;
  CHECK(derive_cell_seeds(fixed, 5, 0).interference_tasks == derive_cell_seeds(fixed, 5, 2).interference_tasks);
}

TEST_CASE("run_experiment is deterministic across job counts and reloads from its manifest") {
  auto c = small_config(Method::Er);
  c.out = scratch_dir("det1").string();
  const auto r1 = run_experiment(c, {1, false, true});
  REQUIRE(r1.rows.size() == 2 * 3 * 3);
  CHECK(r1.rows[0].phi_i == 5);
  CHECK(r1.rows[0].phi_d == 0);
  CHECK(r1.rows[1].phi_d == 0);
  CHECK(r1.rows[3].phi_d == 20);
  CHECK(r1.rows[0].t_eval == 3 * 20 + 2 * 5);
  CHECK(r1.rows[3].t_eval == 3 * 20 + 2 * 5 + 20);

  auto reloaded = load_config(fs::path(c.out) / "manifest.json");
  reloaded.out = scratch_dir("det3").string();
  run_experiment(reloaded, {3, false, true});
  CHECK(slurp(fs::path(c.out) / "results.csv") == slurp(fs::path(reloaded.out) / "results.csv"));
  CHECK(slurp(fs::path(c.out) / "summary.csv") == slurp(fs::path(reloaded.out) / "summary.csv"));

  const auto manifest = nlohmann::json::parse(slurp(fs::path(c.out) / "manifest.json"));
  CHECK(manifest["config_hash"] == config_hash(c));
  CHECK(manifest["complete"] == true);
  CHECK(manifest["tool"] == "iccl-bench");
  CHECK(manifest["version"] == kToolVersion);
}

TEST_CASE("run_cell agrees with the batched runner") {
  for (auto m : {Method::Sgd, Method::Ewc, Method::BigramDecay}) {
    auto c = small_config(m);
    c.repeats = 2;
    const auto r = run_experiment(c, {2, false, false});
    for (const auto& row : r.rows) {
      int repeat = -1;
      for (int i = 0; i < c.repeats; ++i)
        if (derive_cell_seeds(c, row.phi_i, i).sequence == row.seed) repeat = i;
      REQUIRE(repeat >= 0);
      CHECK(run_cell(c, row.phi_i, row.phi_d, repeat) == row.value);
    }
  }
}

TEST_CASE("SP and MP runs use phi_i = 0") {
  for (auto kind : {ScheduleKind::SP, ScheduleKind::MP}) {
    auto c = small_config(Method::BigramDecay);
    c.schedule = kind;
    const auto r = run_experiment(c, {1, false, false});
    REQUIRE(r.rows.size() == 3 * 3);
    for (const auto& row : r.rows) CHECK(row.phi_i == 0);
    CHECK(r.rows[0].t_eval == (kind == ScheduleKind::SP ? 20 : 60));
  }
}

TEST_CASE("summarize groups by condition and phi_d") {
  const std::vector<RetentionMeasurement> rows{row(5, 0, 1, 0.2), row(5, 0, 2, 0.4), row(5, 10, 1, 0.1),
                                               row(5, 10, 2, 0.3), row(9, 0, 1, 0.5)};
  const auto s = summarize(rows);
  REQUIRE(s.size() == 3);
  CHECK(s[0].summary.mean == doctest::Approx(0.3));
  CHECK(s[0].summary.n == 2);
  CHECK(s[2].summary.n == 1);
  const std::string single = to_csv_row(s[2]);
  CHECK(single.substr(single.size() - 1) == ",");
}

TEST_CASE("summarize_sweep argmax and interior rule") {
  auto rows_for = [](std::vector<double> per_seed) {
    std::vector<RetentionMeasurement> out;
    for (std::size_t i = 0; i < per_seed.size(); ++i) out.push_back(row(5, 0, 100 + i, per_seed[i]));
    return out;
  };
  SUBCASE("interior peak on every seed") {
    const auto r = summarize_sweep(SweepDimension::PhiI, {1, 2, 3},
                                   {rows_for({0.1, 0.2, 0.3, 0.1}), rows_for({0.5, 0.6, 0.7, 0.5}),
                                    rows_for({0.2, 0.2, 0.2, 0.2})});
    CHECK(r.argmax == 1);
    CHECK(r.interior_wins == 4);
    CHECK(r.interior_optimum);
    CHECK(r.points[1].is_argmax);
  }
  SUBCASE("interior mean peak carried by one seed") {
    const auto r = summarize_sweep(SweepDimension::PhiI, {1, 2, 3},
                                   {rows_for({0.3, 0.3, 0.3, 0.3}), rows_for({0.2, 0.2, 0.2, 0.9}),
                                    rows_for({0.3, 0.3, 0.3, 0.3})});
    CHECK(r.argmax == 1);
    CHECK(r.interior_wins == 1);
    CHECK_FALSE(r.interior_optimum);
  }
  SUBCASE("ties go to the first value") {
    const auto r = summarize_sweep(SweepDimension::RhoDecay, {0.9, 0.99},
                                   {rows_for({0.4, 0.4}), rows_for({0.4, 0.4})});
    CHECK(r.argmax == 0);
    CHECK_FALSE(r.interior_optimum);
  }
  CHECK_THROWS_AS(summarize_sweep(SweepDimension::PhiI, {1}, {}), InvalidArgument);
}

TEST_CASE("sweep validates its dimension") {
  auto c = small_config(Method::Sgd);
  CHECK_THROWS_AS(sweep(c, SweepDimension::LambdaEwc, {1.0}, {1, false, false}), ConfigError);
  CHECK_THROWS_AS(sweep(c, SweepDimension::RhoDecay, {0.9}, {1, false, false}), ConfigError);
  c.schedule = ScheduleKind::SP;
  CHECK_THROWS_AS(sweep(c, SweepDimension::PhiI, {1.0}, {1, false, false}), ConfigError);
}

TEST_CASE("sweep over decay writes its summary") {
  auto c = small_config(Method::BigramDecay);
  c.out = scratch_dir("sweep").string();
  const auto r = sweep(c, SweepDimension::RhoDecay, {0.9, 0.99, 1.0}, {2, false, true});
  CHECK(r.points.size() == 3);
  CHECK(fs::exists(fs::path(c.out) / "sweep_summary.csv"));
  CHECK(fs::exists(fs::path(c.out) / "sweep.json"));
  CHECK(slurp(fs::path(c.out) / "sweep_summary.csv").rfind("dimension,value,n,mean,ci95,is_argmax\n", 0) == 0);
}

TEST_CASE("curves_from_rows drops points at or before the last practice") {
  auto c = small_config(Method::BigramDecay);
  const auto r = run_experiment(c, {1, false, false});
  const auto curves = curves_from_rows(r.rows, "bigram-decay");
  REQUIRE(curves.size() == 2);
  for (const auto& curve : curves) {
    CHECK(curve.points.size() == 2);
    for (const auto& [t, v] : curve.points) CHECK(t > static_cast<double>(curve.practice.times.back()));
  }
  CHECK(curves_from_rows(r.rows, "sgd").empty());
}

TEST_CASE("fit_actr and report write their outputs") {
  auto c = small_config(Method::BigramDecay);
  c.phi_d_grid = {0, 20, 40, 60};
  c.out = scratch_dir("report_in").string();
  run_experiment(c, {2, false, true});
  const fs::path results = fs::path(c.out) / "results.csv";
  ActrFitOptions o;
  o.fit.starts = 4;
  const auto fitted = fit_actr({results}, "", o);
  CHECK(fitted["method"] == "bigram-decay");
  CHECK(fitted["mse"].get<double>() >= 0.0);
  CHECK(fitted.contains("practice_convention"));
  const auto fit_path = fs::path(c.out) / "fit.json";
  std::ofstream(fit_path) << fitted.dump(2);
  CHECK_THROWS(fit_actr({results}, "sgd", o));

  const auto out = scratch_dir("report_out");
  report({results}, {fit_path}, out);
  for (const char* f : {"retention_curves.csv", "retention_blocks.csv", "identifier_diff.csv", "sweet_spot.csv",
                        "actr_overlay.csv"})
    CHECK(fs::exists(out / f));
  const auto blocks = slurp(out / "retention_blocks.csv");
  CHECK(blocks.rfind("n_states,schedule,with_identifiers,phi,K,phi_i,role,start,end\n", 0) == 0);
}
