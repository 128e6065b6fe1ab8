#include "ehrlich/ga.hpp"

#include <algorithm>
#include <cmath>

namespace ehrlich {

void GAConfig::validate() const {
  if (num_particles < 2) throw InvariantError("ga-particles", "num_particles must be >= 2");
  if (!(survival_quantile > 0.0 && survival_quantile < 1.0) ||
      survival_quantile * num_particles < 2.0)
    throw InvariantError("ga-alpha", "survival_quantile must lie in (2/n, 1)");
  if (!(mutation_prob >= 0.0 && mutation_prob <= 1.0))
    throw InvariantError("ga-pm", "mutation_prob must lie in [0, 1]");
  if (!(recombination_prob >= 0.0 && recombination_prob <= 1.0))
    throw InvariantError("ga-pr", "recombination_prob must lie in [0, 1]");
  if (threads < 1) throw InvariantError("ga-threads", "threads must be >= 1");
}

std::vector<Sequence> mutate(std::span<const Sequence> sequences, double p_m, int n_per, int v,
                             std::uint64_t seed, std::uint64_t step) {
  std::vector<Sequence> out;
  out.reserve(sequences.size() * static_cast<std::size_t>(std::max(n_per, 0)));
  std::uint64_t index = 0;
  for (const auto& x : sequences) {
    for (int i = 0; i < n_per; ++i, ++index) {
      RandomStream rng(seed, StreamTag::kMutation, {step, index});
      Sequence child = x;
      for (auto& t : child) {
        const bool fire = rng.uniform() < p_m;
        const auto sub = static_cast<Token>(rng.below(static_cast<std::uint64_t>(v)));
        if (fire) t = sub;
      }
      out.push_back(std::move(child));
    }
  }
  return out;
}

std::vector<Sequence> recombine(std::span<const Sequence> survivors, double p_r, int count,
                                std::uint64_t seed, std::uint64_t step) {
  if (survivors.empty()) throw std::invalid_argument("recombine: survivors must be nonempty");
  std::vector<Sequence> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    RandomStream rng(seed, StreamTag::kRecombination, {step, static_cast<std::uint64_t>(i)});
    const auto& p1 = survivors[rng.below(survivors.size())];
    const auto& p2 = survivors[rng.below(survivors.size())];
    Sequence child(p2.size());
    for (std::size_t pos = 0; pos < child.size(); ++pos)
      child[pos] = rng.uniform() < p_r ? p1[pos] : p2[pos];
    out.push_back(std::move(child));
  }
  return out;
}

double quantile_nearest_rank(std::span<const double> values, double level) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty set");
  std::vector<double> sorted(values.begin(), values.end());
  const auto n = sorted.size();
  // Guard against 1 - alpha rounding just above a whole rank.
  auto rank = static_cast<std::size_t>(std::ceil(level * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(sorted.begin(), sorted.begin() + (rank - 1), sorted.end());
  return sorted[rank - 1];
}

std::vector<std::size_t> select_survivors(std::span<const double> values, double alpha) {
  const double tau = quantile_nearest_rank(values, 1.0 - alpha);
  const bool any_feasible =
      std::any_of(values.begin(), values.end(), [](double v) { return v != kInfeasible; });
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < tau) continue;
    if (tau == kInfeasible && any_feasible && values[i] == kInfeasible) continue;
    keep.push_back(i);
  }
  return keep;
}

GAState ga_init(const EhrlichFunction& f, const GAConfig& config, const Sequence& x0,
                const EvalObserver& observer) {
  config.validate();
  GAState state;
  const double v0 = f.evaluate(x0);
  state.evals_used = 1;
  if (observer) observer(0, 0, x0, v0);
  state.incumbent = {x0, v0};
  const Sequence seed_set[] = {x0};
  state.population = mutate(seed_set, config.mutation_prob, config.num_particles,
                            f.vocab_size(), config.seed, 0);
  return state;
}

void ga_step(GAState& state, const EhrlichFunction& f, const GAConfig& config,
             const EvalObserver& observer) {
  const auto values = f.evaluate_batch(state.population, config.threads);
  ++state.steps;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (observer) observer(state.evals_used + static_cast<std::int64_t>(i), state.steps,
                           state.population[i], values[i]);
  state.evals_used += static_cast<std::int64_t>(values.size());

  const auto best = std::max_element(values.begin(), values.end());
  if (*best > state.incumbent.value)
    state.incumbent = {state.population[best - values.begin()], *best};
  state.history.push_back({state.evals_used, state.incumbent.value});

  const auto keep = select_survivors(values, config.survival_quantile);
  std::vector<Sequence> next;
  next.reserve(state.population.size());
  for (const auto i : keep) next.push_back(std::move(state.population[i]));
  const int refill = config.num_particles - static_cast<int>(next.size());
  auto children = recombine(next, config.recombination_prob, refill, config.seed,
                            static_cast<std::uint64_t>(state.steps));
  for (auto& c : children) next.push_back(std::move(c));
  state.population = mutate(next, config.mutation_prob, 1, f.vocab_size(), config.seed,
                            static_cast<std::uint64_t>(state.steps));
}

GAState run_ga(const EhrlichFunction& f, const GAConfig& config, std::int64_t budget,
               const Sequence& x0, const EvalObserver& observer) {
  auto state = ga_init(f, config, x0, observer);
  while (state.evals_used + config.num_particles <= budget && state.incumbent.value < 1.0)
    ga_step(state, f, config, observer);
  return state;
}

GAState run_ga(const EhrlichFunction& f, const GAConfig& config, std::int64_t budget,
               const EvalObserver& observer) {
  return run_ga(f, config, budget, initial_solution(f), observer);
}

}  // namespace ehrlich
