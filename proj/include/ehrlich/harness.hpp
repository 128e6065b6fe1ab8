#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_set>
#include <vector>

#include "ehrlich/ehrlich.hpp"
#include "ehrlich/ga.hpp"
#include "ehrlich/llome.hpp"
#include "ehrlich/losses.hpp"

namespace ehrlich {

inline constexpr int kRunSchemaVersion = 1;
inline constexpr const char* kRunColumns = "eval_index,round,value,feasible,unique,margin,seq_hash";

struct EvalRow {
  std::int64_t eval_index = 0;
  std::int64_t round = 0;
  double value = kInfeasible;
  bool feasible = false;
  bool unique = false;  // first time this sequence appears in the run
  double margin = 0.0;  // NaN when not defined
  std::uint64_t seq_hash = 0;
};

struct RunRecord {
  std::string run_id;
  std::string instance;
  std::uint64_t instance_seed = 0;
  std::string solver;
  std::string config_hash;
  std::int64_t budget = 0;
  double duration_seconds = 0.0;
  double evals_per_second = 0.0;  // single-threaded evaluation rate
  std::vector<EvalRow> rows;
};

/// Appends rows with consecutive eval indices and run-wide unique flags.
class RunRecorder {
 public:
  explicit RunRecorder(RunRecord& record) : record_(record) {}
  void add(std::int64_t round, const Sequence& s, double value, double margin);

 private:
  RunRecord& record_;
  std::unordered_set<std::uint64_t> seen_;
};

/// Checks eval_index strictly increasing and value = -inf iff infeasible.
void validate_record(const RunRecord& record);

/// "# ehrlich-run v1 key=value ..." then the column header, then rows.
void write_run_csv(std::ostream& out, const RunRecord& record);
/// Throws InvariantError("run-csv", ...) naming the line on malformed input.
RunRecord read_run_csv(std::istream& in);
std::string run_summary_json(const RunRecord& record);

/// FNV-1a of a canonical config string, as 16 hex digits.
std::string config_hash(const std::string& canonical);
std::string canonical_config(const GAConfig& ga);
std::string canonical_config(const GAConfig& ga, const LoopConfig& loop,
                             const std::string& generator_config);

struct CurvePoint {
  std::int64_t evals = 0;
  double min_regret = 1.0;
};
/// Step points where the feasible min regret drops, plus the final count.
/// Starts at regret 1 before any feasible evaluation.
using RegretCurve = std::vector<CurvePoint>;

RegretCurve regret_curve(const RunRecord& record);
/// Min regret after `evals` evaluations.
double curve_at(const RegretCurve& curve, std::int64_t evals);
void write_curve_csv(std::ostream& out, const RegretCurve& curve);
RegretCurve read_curve_csv(std::istream& in);

struct RoundSummary {
  std::int64_t round = 0;
  std::int64_t evals = 0;
  double unique_fraction = 0.0;  // distinct sequences / evaluations in the round
  double feasible_fraction = 0.0;
  double mean_margin = 0.0;  // NaN without margins
  double max_margin = 0.0;
  double batch_min_regret = 1.0;
  double min_regret = 1.0;  // cumulative
};

std::vector<RoundSummary> summarize_rounds(const RunRecord& record);
void write_report_csv(std::ostream& out, const std::vector<RoundSummary>& rounds);
std::string report_json(const RunRecord& record, const std::vector<RoundSummary>& rounds);

/// Mean over points of budget * min_regret.
double hypervolume(const std::vector<CurvePoint>& points);

/// Single-threaded evaluations per second on random sequences.
double measure_throughput(const EhrlichFunction& function, std::int64_t count,
                          std::uint64_t seed = 0);

struct GaRun {
  RunRecord record;
  GAState state;
};
GaRun record_ga_run(const EhrlichFunction& function, const GAConfig& ga, std::int64_t budget,
                    const std::string& run_id);

struct LlomeRun {
  RunRecord record;
  LlomeResult result;
};
/// Presolver with `ga` followed by the outer loop with the baseline proposer.
LlomeRun record_llome_run(const EhrlichFunction& function, const GAConfig& ga,
                          const LoopConfig& loop, double mutation_rate, const std::string& run_id);
/// Same with any generator; `solver` and `generator_config` go into the record.
LlomeRun record_llome_run(const EhrlichFunction& function, const GAConfig& ga,
                          const LoopConfig& loop, const ProposalGenerator& generator,
                          const std::string& solver, const std::string& generator_config,
                          const std::string& run_id);

enum class SweepAxis { kV, kL, kC, kK, kQ };
SweepAxis parse_axis(const std::string& name);
std::string axis_name(SweepAxis axis);

struct SweepConfig {
  SweepAxis axis = SweepAxis::kQ;
  std::vector<int> values;
  EhrlichParams base;
  GAConfig ga;
  std::int64_t budget = 100000;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<std::int64_t> checkpoints;  // empty: 10 log-spaced budgets
};

struct SweepCell {
  int value = 0;
  std::string instance;
  std::vector<double> final_regret;  // per seed
  double median_final_regret = 1.0;
  std::vector<CurvePoint> median_curve;  // at the checkpoints
  double hypervolume = 0.0;
};

struct SweepReport {
  SweepAxis axis = SweepAxis::kQ;
  std::vector<std::int64_t> checkpoints;
  std::vector<SweepCell> cells;
};

std::vector<std::int64_t> default_checkpoints(std::int64_t first, std::int64_t budget, int count);
SweepReport run_sweep(const SweepConfig& config);
void write_sweep_csv(std::ostream& out, const SweepReport& report);

/// Loss batch rows: x_id,y_id,log_pi_theta,log_pi_ref,reward,length.
void write_loss_batch_csv(std::ostream& out, const LossBatch& batch);
LossBatch read_loss_batch_csv(std::istream& in);

double median(std::vector<double> values);

}  // namespace ehrlich
