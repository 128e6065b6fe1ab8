#include "ehrlich/llome.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "ehrlich/losses.hpp"

namespace ehrlich {

namespace {

constexpr double kMaxEditProb = 0.95;

std::uint64_t chain_seed(std::uint64_t seed, std::uint64_t round, std::uint64_t s,
                         std::uint64_t temp, std::uint64_t iter) {
  return RandomStream(seed, StreamTag::kProposal, {round, s, temp, iter}).key();
}

}  // namespace

// Proposers

MutationProposer::MutationProposer(int vocab_size, int length, double mutation_rate)
    : vocab_size_(vocab_size),
      length_(length),
      base_rate_(mutation_rate),
      rates_(static_cast<std::size_t>(length), mutation_rate),
      token_weights_(static_cast<std::size_t>(length) * vocab_size, 1.0) {
  if (vocab_size < 2) throw InvariantError("v>=2", "proposer needs at least two tokens");
  if (length < 1) throw InvariantError("L>=2", "proposer needs a positive length");
  if (!(mutation_rate > 0.0 && mutation_rate < 1.0))
    throw InvariantError("mutation-rate", "mutation_rate must lie in (0, 1)");
}

double MutationProposer::edit_prob(int pos, double temperature) const {
  return std::min(rates_[static_cast<std::size_t>(pos)] * temperature, kMaxEditProb);
}

double MutationProposer::token_prob(int pos, Token current, Token target) const {
  const double* w = token_weights_.data() + static_cast<std::size_t>(pos) * vocab_size_;
  double total = 0.0;
  for (int y = 0; y < vocab_size_; ++y)
    if (y != current) total += w[y];
  return w[target] / total;
}

double MutationProposer::score_likelihood(const Sequence& input, const Sequence& output,
                                          double temperature) const {
  if (input.size() != output.size() || static_cast<int>(input.size()) != length_)
    throw InvariantError("sequence-length", "proposer length mismatch");
  double ll = 0.0;
  for (int p = 0; p < length_; ++p) {
    const double rho = edit_prob(p, temperature);
    if (input[p] == output[p])
      ll += std::log1p(-rho);
    else
      ll += std::log(rho * token_prob(p, input[p], output[p]));
  }
  return ll;
}

double MutationProposer::score_likelihood(const Sequence& input, const Sequence& output) const {
  return score_likelihood(input, output, 1.0);
}

Proposal MutationProposer::greedy(const Sequence& input) const {
  Proposal out{input, 0.0};
  for (int p = 0; p < length_; ++p) {
    const double rho = edit_prob(p, 1.0);
    double best = 1.0 - rho;
    for (int y = 0; y < vocab_size_; ++y) {
      if (y == input[p]) continue;
      const double q = rho * token_prob(p, input[p], y);
      if (q > best) {
        best = q;
        out.sequence[p] = y;
      }
    }
    out.log_likelihood += std::log(best);
  }
  return out;
}

std::vector<Proposal> MutationProposer::propose(const Sequence& input, double temperature,
                                                int count, std::uint64_t seed) const {
  if (static_cast<int>(input.size()) != length_)
    throw InvariantError("sequence-length", "proposer length mismatch");
  std::vector<Proposal> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    RandomStream rng(seed, StreamTag::kProposal, {static_cast<std::uint64_t>(i)});
    Proposal prop{input, 0.0};
    for (int p = 0; p < length_; ++p) {
      const double rho = edit_prob(p, temperature);
      if (rng.uniform() >= rho) {
        prop.log_likelihood += std::log1p(-rho);
        continue;
      }
      const Token current = input[p];
      const double* w = token_weights_.data() + static_cast<std::size_t>(p) * vocab_size_;
      double total = 0.0;
      for (int y = 0; y < vocab_size_; ++y)
        if (y != current) total += w[y];
      double u = rng.uniform() * total;
      Token chosen = current == 0 ? 1 : 0;
      for (int y = 0; y < vocab_size_; ++y) {
        if (y == current) continue;
        chosen = y;
        if (u < w[y]) break;
        u -= w[y];
      }
      prop.sequence[p] = chosen;
      prop.log_likelihood += std::log(rho * (w[chosen] / total));
    }
    out.push_back(std::move(prop));
  }
  return out;
}

std::unique_ptr<ProposalGenerator> MutationProposer::train(const RefinementDataset& dataset) const {
  std::vector<std::array<int, 2>> pairs = dataset.pairs;
  for (const auto& t : dataset.triples) pairs.push_back({t[0], t[1]});
  if (pairs.empty()) return nullptr;
  std::vector<double> edits(static_cast<std::size_t>(length_), 1.0);
  std::vector<double> weights(token_weights_.size(), 1.0);
  for (const auto& [a, b] : pairs) {
    const auto& x = dataset.items[static_cast<std::size_t>(a)].sequence;
    const auto& y = dataset.items[static_cast<std::size_t>(b)].sequence;
    for (int p = 0; p < length_; ++p) {
      if (x[p] == y[p]) continue;
      edits[static_cast<std::size_t>(p)] += 1.0;
      weights[static_cast<std::size_t>(p) * vocab_size_ + y[p]] += 1.0;
    }
  }
  const double total = std::accumulate(edits.begin(), edits.end(), 0.0);
  auto next = std::make_unique<MutationProposer>(*this);
  for (int p = 0; p < length_; ++p)
    next->rates_[static_cast<std::size_t>(p)] =
        std::min(base_rate_ * length_ * edits[static_cast<std::size_t>(p)] / total, kMaxEditProb);
  next->token_weights_ = std::move(weights);
  return next;
}

double default_mutation_rate(int length) {
  return std::min(4.0 / static_cast<double>(length), 0.5);
}

// Loop components

void LoopConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw InvariantError("loop-config", std::string(name) + " must be positive");
  };
  positive(rounds, "rounds");
  positive(evals_per_round, "evals_per_round");
  positive(presolver_rounds, "presolver_rounds");
  positive(seeds_per_round, "seeds_per_round");
  positive(refine_iters, "refine_iters");
  positive(samples_per_iter, "samples_per_iter");
  positive(num_neighbors, "num_neighbors");
  if (base_temperatures.empty())
    throw InvariantError("loop-config", "base_temperatures must be nonempty");
  for (const double t : base_temperatures)
    if (!(t > 0)) throw InvariantError("loop-config", "temperatures must be positive");
  if (!(max_infeasible_fraction >= 0.0 && max_infeasible_fraction < 1.0))
    throw InvariantError("loop-config", "max_infeasible_fraction must lie in [0, 1)");
  if (!(distance_threshold >= 0.0 && distance_threshold <= 1.0))
    throw InvariantError("loop-config", "distance_threshold must lie in [0, 1]");
}

RefinementDataset format_dataset(const std::vector<ScoredSequence>& scored, DatasetMode mode,
                                 double delta_x, int k_n) {
  RefinementDataset out;
  out.distance_threshold = delta_x;
  out.num_neighbors = k_n;
  std::unordered_set<Sequence, SequenceHash> seen;
  for (const auto& s : scored)
    if (seen.insert(s.sequence).second) out.items.push_back(s);

  const int n = static_cast<int>(out.items.size());
  if (n < 2) return out;
  const int length = static_cast<int>(out.items.front().sequence.size());
  // Largest whole number of differing positions within the threshold.
  const int max_diff = static_cast<int>(std::floor(delta_x * length + 1e-9));

  std::vector<std::pair<int, int>> neigh;  // (differing positions, index)
  for (int i = 0; i < n; ++i) {
    const auto& xi = out.items[static_cast<std::size_t>(i)];
    neigh.clear();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto& xj = out.items[static_cast<std::size_t>(j)].sequence;
      int d = 0;
      for (int p = 0; p < length; ++p) d += xi.sequence[p] != xj[p];
      neigh.emplace_back(d, j);
    }
    auto closer = [&](const std::pair<int, int>& a, const std::pair<int, int>& b) {
      if (a.first != b.first) return a.first < b.first;
      return out.items[static_cast<std::size_t>(a.second)].sequence <
             out.items[static_cast<std::size_t>(b.second)].sequence;
    };
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(k_n), neigh.size());
    std::partial_sort(neigh.begin(), neigh.begin() + static_cast<std::ptrdiff_t>(k), neigh.end(),
                      closer);
    neigh.resize(k);

    std::vector<int> better, worse;
    for (const auto& [d, j] : neigh) {
      if (d > max_diff) continue;
      const double fj = out.items[static_cast<std::size_t>(j)].value;
      if (fj > xi.value)
        better.push_back(j);
      else
        worse.push_back(j);
    }
    if (mode == DatasetMode::kPairs) {
      for (const int j : better) out.pairs.push_back({i, j});
    } else {
      for (const int j : better)
        for (const int l : worse) out.triples.push_back({i, j, l});
    }
  }
  return out;
}

RefinementResult iterative_refinement(const ProposalGenerator& generator,
                                      const std::vector<ScoredSequence>& scored,
                                      const LoopConfig& config,
                                      const std::vector<double>& temperatures,
                                      std::uint64_t round) {
  const bool any_feasible = std::any_of(scored.begin(), scored.end(),
                                        [](const ScoredSequence& s) { return s.feasible(); });
  if (!any_feasible)
    throw SolverAbort("iterative_refinement: the scored set has no feasible sequence");

  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scored[a].value > scored[b].value;
  });
  // Top n_s distinct sequences.
  std::vector<std::size_t> seeds;
  std::unordered_set<Sequence, SequenceHash> picked;
  for (const auto i : order) {
    if (static_cast<int>(seeds.size()) >= config.seeds_per_round) break;
    if (picked.insert(scored[i].sequence).second) seeds.push_back(i);
  }

  RefinementResult out;
  std::unordered_map<Sequence, std::size_t, SequenceHash> index;
  auto add = [&](const Proposal& p, const Sequence& source, double seed_value) {
    ++out.generated;
    const auto [it, inserted] = index.emplace(p.sequence, out.candidates.size());
    if (inserted) {
      out.candidates.push_back({p.sequence, source, p.log_likelihood, seed_value});
    } else if (p.log_likelihood > out.candidates[it->second].log_likelihood) {
      auto& c = out.candidates[it->second];
      c.source = source;
      c.log_likelihood = p.log_likelihood;
      c.seed_value = seed_value;
    }
  };

  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const auto& seed = scored[seeds[s]];
    Sequence x = seed.sequence;
    for (int i = 0; i < config.refine_iters; ++i) {
      auto p = generator.greedy(x);
      add(p, x, seed.value);
      x = std::move(p.sequence);
    }
    for (std::size_t ti = 0; ti < temperatures.size(); ++ti) {
      x = seed.sequence;
      for (int i = 0; i < config.refine_iters; ++i) {
        const auto props =
            generator.propose(x, temperatures[ti], config.samples_per_iter,
                              chain_seed(config.seed, round, s, ti, static_cast<std::uint64_t>(i)));
        if (props.empty()) break;
        std::size_t best = 0;
        for (std::size_t k = 0; k < props.size(); ++k) {
          add(props[k], x, seed.value);
          if (props[k].log_likelihood > props[best].log_likelihood) best = k;
        }
        x = props[best].sequence;
      }
    }
  }
  return out;
}

std::vector<double> adjust_temperatures(const std::vector<double>& base, double mean_hamming) {
  double shift = 0.0;
  if (mean_hamming < 0.075)
    shift = 0.6;
  else if (mean_hamming < 0.1)
    shift = 0.4;
  else if (mean_hamming < 0.125)
    shift = 0.2;
  std::vector<double> out(base);
  for (auto& t : out) t += shift;
  return out;
}

FilterResult filter_candidates(const ProposalGenerator& generator,
                               std::vector<Candidate> candidates, const TransitionMatrix& transition,
                               int j, double min_loglik_per_token, double max_infeasible_fraction,
                               std::uint64_t seed, std::uint64_t round) {
  FilterResult out;
  std::vector<Candidate> feasible, infeasible;
  for (auto& c : candidates) {
    const double ll = generator.score_likelihood(c.source, c.sequence);
    if (!(ll / static_cast<double>(c.sequence.size()) > min_loglik_per_token)) {
      ++out.below_likelihood;
      continue;
    }
    (is_feasible(c.sequence, transition) ? feasible : infeasible).push_back(std::move(c));
  }

  const double ratio = max_infeasible_fraction / (1.0 - max_infeasible_fraction);
  const auto cap = static_cast<std::size_t>(
      std::floor(static_cast<double>(feasible.size()) * ratio + 1e-9));
  if (infeasible.size() > cap) {
    RandomStream rng(seed, StreamTag::kFilter, {round, 0});
    shuffle(std::span<Candidate>(infeasible), rng);
    out.infeasible_dropped = static_cast<std::int64_t>(infeasible.size() - cap);
    infeasible.resize(cap);
  }

  auto pool = std::move(feasible);
  for (auto& c : infeasible) pool.push_back(std::move(c));
  const auto limit = static_cast<std::size_t>(std::max(j, 0));
  if (pool.size() > limit) {
    RandomStream rng(seed, StreamTag::kFilter, {round, 1});
    shuffle(std::span<Candidate>(pool), rng);
    out.subsampled_out = static_cast<std::int64_t>(pool.size() - limit);
    pool.resize(limit);
  }
  out.selected = std::move(pool);
  return out;
}

PresolverResult run_presolver(const EhrlichFunction& f, const GAConfig& ga, int rounds,
                              const Sequence& x0, const EvalObserver& observer) {
  PresolverResult out;
  out.x0 = x0;
  auto record = [&](std::int64_t idx, std::int64_t round, const Sequence& s, double v) {
    out.evaluated.push_back({s, v});
    if (observer) observer(idx, round, s, v);
  };
  auto state = ga_init(f, ga, x0, record);
  for (int r = 0; r < rounds; ++r) ga_step(state, f, ga, record);
  out.best = state.incumbent;
  return out;
}

LlomeResult run_llome(const EhrlichFunction& f, const ProposalGenerator& generator,
                      const LoopConfig& config, const PresolverResult& presolver,
                      const LlomeObserver& observer) {
  config.validate();
  if (presolver.evaluated.empty()) throw InvariantError("presolver", "presolver data is empty");

  LlomeResult result;
  result.presolver_evals = static_cast<std::int64_t>(presolver.evaluated.size());
  result.best = {{}, kInfeasible};
  double min_regret = std::numeric_limits<double>::infinity();
  std::unordered_set<Sequence, SequenceHash> evaluated;
  for (const auto& s : presolver.evaluated) {
    evaluated.insert(s.sequence);
    if (s.value > result.best.value || result.best.sequence.empty()) result.best = s;
    if (s.feasible()) min_regret = std::min(min_regret, 1.0 - s.value);
  }
  result.presolver_min_regret = min_regret;
  std::int64_t eval_index = result.presolver_evals;

  std::unique_ptr<ProposalGenerator> owned;
  const ProposalGenerator* current = &generator;
  std::vector<ScoredSequence> latest = presolver.evaluated;
  auto temperatures = config.base_temperatures;
  double shift = 0.0;

  for (int round = 1; round <= config.rounds; ++round) {
    RoundStats stats;
    stats.round = round;
    stats.temperature_shift = shift;

    const auto dataset = format_dataset(latest, config.dataset_mode, config.distance_threshold,
                                        config.num_neighbors);
    stats.train_pairs = static_cast<std::int64_t>(dataset.pairs.size());
    stats.train_triples = static_cast<std::int64_t>(dataset.triples.size());
    if (auto trained = current->train(dataset)) {
      owned = std::move(trained);
      current = owned.get();
    }

    auto refined = iterative_refinement(*current, latest, config, temperatures,
                                        static_cast<std::uint64_t>(round));
    stats.candidates_generated = refined.generated;
    stats.candidates_unique = static_cast<std::int64_t>(refined.candidates.size());
    stats.unique_fraction = refined.generated > 0
                                ? static_cast<double>(refined.candidates.size()) /
                                      static_cast<double>(refined.generated)
                                : 0.0;

    auto filtered = filter_candidates(*current, std::move(refined.candidates), f.transition(),
                                      config.evals_per_round, config.min_loglik_per_token,
                                      config.max_infeasible_fraction, config.seed,
                                      static_cast<std::uint64_t>(round));
    stats.below_likelihood = filtered.below_likelihood;
    stats.infeasible_dropped = filtered.infeasible_dropped;
    if (filtered.selected.empty())
      throw SolverAbort("run_llome: round " + std::to_string(round) +
                        " selected no candidates (generated " +
                        std::to_string(stats.candidates_generated) + ", unique " +
                        std::to_string(stats.candidates_unique) + ", below likelihood floor " +
                        std::to_string(stats.below_likelihood) + ")");

    std::vector<ScoredSequence> batch;
    batch.reserve(filtered.selected.size());
    double regret_sum = 0.0, margin_sum = 0.0, hamming_sum = 0.0;
    std::int64_t feasible = 0, novel = 0;
    double batch_min = std::numeric_limits<double>::infinity();
    for (const auto& c : filtered.selected) {
      const double v = f.evaluate(c.sequence);
      const double margin = margin_reward(c.seed_value, v);
      if (observer) observer(eval_index, round, c.sequence, v, margin);
      ++eval_index;
      novel += evaluated.insert(c.sequence).second;
      margin_sum += margin;
      stats.max_margin = std::max(stats.max_margin, margin);
      hamming_sum += hamming_fraction(c.sequence, c.source);
      if (v != kInfeasible) {
        ++feasible;
        regret_sum += 1.0 - v;
        batch_min = std::min(batch_min, 1.0 - v);
      }
      if (v > result.best.value) result.best = {c.sequence, v};
      batch.push_back({c.sequence, v});
    }
    const double n = static_cast<double>(batch.size());
    min_regret = std::min(min_regret, batch_min);
    stats.evals = static_cast<std::int64_t>(batch.size());
    stats.total_evals = eval_index;
    stats.min_regret = min_regret;
    stats.batch_min_regret = batch_min;
    stats.mean_regret = feasible > 0 ? regret_sum / static_cast<double>(feasible)
                                     : std::numeric_limits<double>::infinity();
    stats.feasible_fraction = static_cast<double>(feasible) / n;
    stats.novel_fraction = static_cast<double>(novel) / n;
    stats.mean_margin = margin_sum / n;
    stats.mean_hamming = hamming_sum / n;
    result.rounds.push_back(stats);

    if (config.adjust_temperature) {
      temperatures = adjust_temperatures(config.base_temperatures, stats.mean_hamming);
      shift = temperatures.front() - config.base_temperatures.front();
    }
    latest = std::move(batch);
  }
  result.total_evals = eval_index;
  return result;
}

}  // namespace ehrlich
