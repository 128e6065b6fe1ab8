#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ehrlich/ehrlich.hpp"

namespace ehrlich {

struct GAConfig {
  int num_particles = 1000;
  double survival_quantile = 0.1;
  double mutation_prob = 0.005;
  double recombination_prob = 0.0882;
  std::uint64_t seed = 0;
  int threads = 1;

  /// Throws InvariantError ("ga-particles", "ga-alpha", "ga-pm", "ga-pr").
  void validate() const;
};

struct HistoryEntry {
  std::int64_t eval_index = 0;
  double best_value = kInfeasible;
};

struct GAState {
  std::vector<Sequence> population;
  ScoredSequence incumbent;
  std::int64_t evals_used = 0;
  std::int64_t steps = 0;
  std::vector<HistoryEntry> history;
};

/// Called once per oracle evaluation, in evaluation order. `round` is 0 for
/// the initial solution and the step number afterwards.
using EvalObserver =
    std::function<void(std::int64_t eval_index, std::int64_t round, const Sequence&, double)>;

/// n_per variants of each input; each position is replaced with probability
/// p_m by a uniform token in [0, v), which may equal the original.
/// Randomness is keyed by (seed, step, output index).
std::vector<Sequence> mutate(std::span<const Sequence> sequences, double p_m, int n_per, int v,
                             std::uint64_t seed, std::uint64_t step = 0);

/// count children; each draws two parents with replacement and takes parent
/// one's token where a Bernoulli(p_r) mask fires, else parent two's.
std::vector<Sequence> recombine(std::span<const Sequence> survivors, double p_r, int count,
                                std::uint64_t seed, std::uint64_t step = 0);

/// Nearest-rank quantile: sorted ascending value at rank ceil(level * n).
double quantile_nearest_rank(std::span<const double> values, double level);

/// Indices kept by the survival rule: value >= quantile(values, 1 - alpha).
/// With a -inf threshold, feasible particles dominate when any exist.
std::vector<std::size_t> select_survivors(std::span<const double> values, double alpha);

/// Scores x0 (one evaluation) and builds the initial mutated population.
GAState ga_init(const EhrlichFunction& function, const GAConfig& config, const Sequence& x0,
                const EvalObserver& observer = {});

/// One generation: score (n evaluations), update incumbent, select, refill,
/// mutate everything.
void ga_step(GAState& state, const EhrlichFunction& function, const GAConfig& config,
             const EvalObserver& observer = {});

/// Steps while another full generation fits in the budget and regret > 0.
/// Starts from initial_solution(function).
GAState run_ga(const EhrlichFunction& function, const GAConfig& config, std::int64_t budget,
               const EvalObserver& observer = {});
GAState run_ga(const EhrlichFunction& function, const GAConfig& config, std::int64_t budget,
               const Sequence& x0, const EvalObserver& observer = {});

}  // namespace ehrlich
