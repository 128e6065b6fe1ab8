#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "ehrlich/harness.hpp"

using namespace ehrlich;

namespace {

EhrlichFunction instance(const std::string& name, std::uint64_t seed) {
  auto p = parse_name(name);
  p.seed = seed;
  return EhrlichFunction::generate(p);
}

GAConfig small_ga(std::uint64_t seed) {
  GAConfig g;
  g.num_particles = 200;
  g.seed = seed;
  return g;
}

RunRecord toy_record() {
  RunRecord rec;
  rec.run_id = "toy";
  rec.instance = "Ehr(4,4)-1-2-2";
  rec.solver = "manual";
  RunRecorder r(rec);
  r.add(0, {0, 1}, 0.25, std::nan(""));
  r.add(0, {0, 2}, kInfeasible, std::nan(""));
  r.add(1, {1, 1}, 0.5, 0.25);
  r.add(1, {1, 1}, 0.5, 0.25);
  r.add(1, {0, 1}, 0.25, 0.0);
  r.add(2, {3, 3}, 1.0, 0.5);
  return rec;
}

}  // namespace

TEST_CASE("recorder assigns indices and unique flags") {
  const auto rec = toy_record();
  REQUIRE(rec.rows.size() == 6);
  for (std::size_t i = 0; i < rec.rows.size(); ++i)
    CHECK(rec.rows[i].eval_index == static_cast<std::int64_t>(i));
  CHECK(rec.rows[0].unique);
  CHECK(rec.rows[2].unique);
  CHECK_FALSE(rec.rows[3].unique);
  CHECK_FALSE(rec.rows[4].unique);
  CHECK_FALSE(rec.rows[1].feasible);
  CHECK_NOTHROW(validate_record(rec));
}

TEST_CASE("run csv round trip") {
  auto rec = toy_record();
  rec.instance_seed = 12;
  rec.config_hash = config_hash("x");
  rec.budget = 6;
  rec.duration_seconds = 0.125;
  rec.evals_per_second = 1e6;
  std::stringstream s;
  write_run_csv(s, rec);
  const auto text = s.str();
  CHECK(text.rfind("# ehrlich-run v1 run_id=toy instance=Ehr(4,4)-1-2-2 seed=12", 0) == 0);
  CHECK(text.find(std::string("\n") + kRunColumns + "\n") != std::string::npos);

  const auto back = read_run_csv(s);
  CHECK(back.run_id == "toy");
  CHECK(back.instance_seed == 12);
  CHECK(back.config_hash == rec.config_hash);
  CHECK(back.budget == 6);
  CHECK(back.duration_seconds == 0.125);
  REQUIRE(back.rows.size() == rec.rows.size());
  for (std::size_t i = 0; i < rec.rows.size(); ++i) {
    CHECK(back.rows[i].value == rec.rows[i].value);
    CHECK(back.rows[i].feasible == rec.rows[i].feasible);
    CHECK(back.rows[i].unique == rec.rows[i].unique);
    CHECK(back.rows[i].seq_hash == rec.rows[i].seq_hash);
    CHECK(std::isnan(back.rows[i].margin) == std::isnan(rec.rows[i].margin));
  }
  std::stringstream again;
  write_run_csv(again, back);
  CHECK(again.str() == text);
}

TEST_CASE("malformed run csv names the line") {
  std::istringstream bad_version("# ehrlich-run v9 run_id=a\n");
  CHECK_THROWS_WITH_AS(read_run_csv(bad_version), doctest::Contains("line 1"), InvariantError);
  std::istringstream bad_row(std::string("# ehrlich-run v1 run_id=a\n") + kRunColumns +
                             "\n0,0,0.5,1,1,nan,00000000000000ab\n1,0,zz,1,1,nan,0\n");
  CHECK_THROWS_WITH_AS(read_run_csv(bad_row), doctest::Contains("line 4"), InvariantError);
  std::istringstream flag(std::string("# ehrlich-run v1 run_id=a\n") + kRunColumns +
                          "\n0,0,-inf,1,1,nan,0\n");
  CHECK_THROWS_AS(read_run_csv(flag), InvariantError);
  std::istringstream order(std::string("# ehrlich-run v1 run_id=a\n") + kRunColumns +
                           "\n1,0,0.5,1,1,nan,0\n1,0,0.5,1,1,nan,0\n");
  CHECK_THROWS_AS(read_run_csv(order), InvariantError);
}

TEST_CASE("regret curve from the raw log") {
  const auto rec = toy_record();
  const auto curve = regret_curve(rec);
  const RegretCurve want = {{1, 0.75}, {3, 0.5}, {6, 0.0}};
  REQUIRE(curve.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(curve[i].evals == want[i].evals);
    CHECK(curve[i].min_regret == want[i].min_regret);
  }
  CHECK(curve_at(curve, 0) == 1.0);
  CHECK(curve_at(curve, 2) == 0.75);
  CHECK(curve_at(curve, 5) == 0.5);

  std::stringstream s;
  write_curve_csv(s, curve);
  const auto back = read_curve_csv(s);
  REQUIRE(back.size() == curve.size());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i].min_regret == curve[i].min_regret);
}

TEST_CASE("infeasible-only log keeps regret at one") {
  RunRecord rec;
  RunRecorder r(rec);
  for (int i = 0; i < 3; ++i) r.add(0, {i}, kInfeasible, std::nan(""));
  const auto curve = regret_curve(rec);
  REQUIRE(curve.size() == 1);
  CHECK(curve[0].evals == 3);
  CHECK(curve[0].min_regret == 1.0);
}

TEST_CASE("round report") {
  const auto rounds = summarize_rounds(toy_record());
  REQUIRE(rounds.size() == 3);
  CHECK(rounds[0].feasible_fraction == 0.5);
  CHECK(std::isnan(rounds[0].mean_margin));
  CHECK(rounds[1].evals == 3);
  CHECK(rounds[1].unique_fraction == doctest::Approx(2.0 / 3.0));
  CHECK(rounds[1].feasible_fraction == 1.0);
  CHECK(rounds[1].mean_margin == doctest::Approx(0.5 / 3.0));
  CHECK(rounds[1].max_margin == 0.25);
  CHECK(rounds[1].min_regret == 0.5);
  CHECK(rounds[2].min_regret == 0.0);

  std::ostringstream csv;
  write_report_csv(csv, rounds);
  CHECK(csv.str().find("1,3,0.6666666666666666,1,") != std::string::npos);
  const auto json = report_json(toy_record(), rounds);
  CHECK(json.find("\"unique_fraction\"") != std::string::npos);
}

TEST_CASE("all-feasible and duplicate-only rounds") {
  RunRecord rec;
  RunRecorder r(rec);
  for (int i = 0; i < 4; ++i) r.add(1, {i, i}, 0.5, 0.0);
  for (int i = 0; i < 5; ++i) r.add(2, {7, 7}, 0.25, 0.0);
  const auto rounds = summarize_rounds(rec);
  CHECK(rounds[0].feasible_fraction == 1.0);
  CHECK(rounds[0].unique_fraction == 1.0);
  CHECK(rounds[1].unique_fraction == doctest::Approx(1.0 / 5.0));
}

TEST_CASE("hypervolume arithmetic") {
  const std::vector<CurvePoint> pinned = {{100, 1.0}, {1000, 1.0}, {10000, 1.0}};
  CHECK(hypervolume(pinned) == doctest::Approx((100.0 + 1000.0 + 10000.0) / 3.0));
  CHECK(hypervolume({{10, 0.0}, {20, 0.0}}) == 0.0);
  CHECK(hypervolume({}) == 0.0);
  CHECK(hypervolume({{10, 0.5}, {20, 0.25}}) == doctest::Approx(5.0));
}

TEST_CASE("checkpoints and median") {
  const auto c = default_checkpoints(101, 100000, 10);
  CHECK(c.front() == 101);
  CHECK(c.back() == 100000);
  CHECK(std::is_sorted(c.begin(), c.end()));
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("config hash is stable and sensitive") {
  GAConfig a;
  GAConfig b = a;
  CHECK(config_hash(canonical_config(a)) == config_hash(canonical_config(b)));
  b.mutation_prob = 0.01;
  CHECK(config_hash(canonical_config(a)) != config_hash(canonical_config(b)));
  CHECK(config_hash("").size() == 16);
  CHECK(config_hash("") == "cbf29ce484222325");
}

TEST_CASE("ga run record is budget exact and reproducible") {
  const auto f = instance("Ehr(4,16)-2-2-2", 0);
  const auto ga = small_ga(3);
  const auto a = record_ga_run(f, ga, 2001, "ga-a");
  CHECK(static_cast<std::int64_t>(a.record.rows.size()) == a.state.evals_used);
  CHECK(a.state.evals_used <= 2001);
  CHECK_NOTHROW(validate_record(a.record));
  const auto curve = regret_curve(a.record);
  for (std::size_t i = 1; i < curve.size(); ++i)
    CHECK(curve[i].min_regret <= curve[i - 1].min_regret);
  CHECK(curve.back().min_regret == doctest::Approx(regret(f, a.state.incumbent.sequence)));
  CHECK(a.record.evals_per_second > 0);

  const auto b = record_ga_run(f, ga, 2001, "ga-b");
  REQUIRE(a.record.rows.size() == b.record.rows.size());
  for (std::size_t i = 0; i < a.record.rows.size(); ++i) {
    CHECK(a.record.rows[i].seq_hash == b.record.rows[i].seq_hash);
    CHECK(a.record.rows[i].value == b.record.rows[i].value);
  }
}

TEST_CASE("llome run record rounds and accounting") {
  const auto f = instance("Ehr(4,16)-2-2-2", 1);
  LoopConfig loop;
  loop.rounds = 2;
  loop.presolver_rounds = 2;
  loop.evals_per_round = 100;
  loop.seeds_per_round = 20;
  const auto ga = small_ga(1);
  const auto run = record_llome_run(f, ga, loop, default_mutation_rate(16), "llome");
  const auto& rec = run.record;
  CHECK(static_cast<std::int64_t>(rec.rows.size()) == run.result.total_evals);
  CHECK(run.result.total_evals <= rec.budget);
  const auto rounds = summarize_rounds(rec);
  REQUIRE(rounds.size() == 3);
  CHECK(rounds[0].round == 0);
  CHECK(rounds[0].evals == 1 + 2 * ga.num_particles);
  for (std::size_t i = 1; i < rounds.size(); ++i) {
    const auto& s = run.result.rounds[i - 1];
    CHECK(rounds[i].evals == s.evals);
    CHECK(rounds[i].feasible_fraction == doctest::Approx(s.feasible_fraction));
    CHECK(rounds[i].mean_margin == doctest::Approx(s.mean_margin));
    CHECK(rounds[i].min_regret == doctest::Approx(s.min_regret));
  }
}

TEST_CASE("sweep cells and single-value reduction") {
  SweepConfig config;
  config.axis = SweepAxis::kQ;
  config.values = {1, 2};
  config.base = parse_name("Ehr(4,16)-2-2-2");
  config.ga = small_ga(0);
  config.budget = 3001;
  config.seeds = {0, 1, 2};
  const auto report = run_sweep(config);
  REQUIRE(report.cells.size() == 2);
  CHECK(report.cells[0].instance == "Ehr(4,16)-2-2-1");
  for (const auto& cell : report.cells) {
    CHECK(cell.final_regret.size() == 3);
    CHECK(cell.hypervolume >= 0.0);
    for (std::size_t i = 1; i < cell.median_curve.size(); ++i)
      CHECK(cell.median_curve[i].min_regret <= cell.median_curve[i - 1].min_regret);
  }

  // One value and one seed gives the plain run's final regret.
  config.values = {2};
  config.seeds = {1};
  const auto one = run_sweep(config);
  auto p = config.base;
  p.seed = 1;
  GAConfig ga = config.ga;
  ga.seed = 1;
  const auto f = EhrlichFunction::generate(p);
  const auto run = record_ga_run(f, ga, config.budget, "single");
  CHECK(one.cells[0].median_final_regret == regret_curve(run.record).back().min_regret);

  std::ostringstream csv;
  write_sweep_csv(csv, report);
  CHECK(csv.str().rfind("# ehrlich-sweep v1 axis=q\n", 0) == 0);
  CHECK_THROWS_AS(parse_axis("z"), InvariantError);
  CHECK(axis_name(parse_axis("L")) == "L");
}

TEST_CASE("loss batch csv round trip") {
  const LossBatch batch = {{0, 1, -0.5, -0.7, 0.25, 3.0}, {1, 0, -1.25, -1.0, 0.0, 1.0}};
  std::stringstream s;
  write_loss_batch_csv(s, batch);
  const auto back = read_loss_batch_csv(s);
  REQUIRE(back.size() == 2);
  CHECK(back[0].log_pi_theta == -0.5);
  CHECK(back[1].length == 1.0);
  std::istringstream bad("x_id,y_id,log_pi_theta,log_pi_ref,reward,length\n0,1,a,0,0,1\n");
  CHECK_THROWS_WITH_AS(read_loss_batch_csv(bad), doctest::Contains("line 2"), InvariantError);
}
