#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "ehrlich/ehrlich.hpp"
#include "ehrlich/ga.hpp"

namespace ehrlich {

struct Proposal {
  Sequence sequence;
  double log_likelihood = 0.0;
};

enum class DatasetMode { kPairs, kTriples };

/// PropEn-style matched data over a scored set. Pairs and triples hold
/// indices into `items`: (x, y) with f(y) > f(x); (x, y_w, y_l) with
/// f(y_w) > f(x) >= f(y_l).
struct RefinementDataset {
  std::vector<ScoredSequence> items;
  std::vector<std::array<int, 2>> pairs;
  std::vector<std::array<int, 3>> triples;
  double distance_threshold = 0.25;
  int num_neighbors = 30;
};

/// Stand-in for the language model of the outer loop.
class ProposalGenerator {
 public:
  virtual ~ProposalGenerator() = default;

  virtual std::string name() const = 0;

  /// Most likely output for `input`.
  virtual Proposal greedy(const Sequence& input) const = 0;

  /// `count` samples at `temperature`; deterministic in `seed`. Returned
  /// log-likelihoods are finite.
  virtual std::vector<Proposal> propose(const Sequence& input, double temperature, int count,
                                        std::uint64_t seed) const = 0;

  /// log pi(output | input) at temperature 1.
  virtual double score_likelihood(const Sequence& input, const Sequence& output) const = 0;

  /// Fits a new generator on the dataset; nullptr keeps the current one.
  virtual std::unique_ptr<ProposalGenerator> train(const RefinementDataset& dataset) const {
    (void)dataset;
    return nullptr;
  }
};

/// Per-position substitution proposer. At temperature t position p is edited
/// with probability min(rate_p * t, 0.95); an edited position takes a token
/// other than the current one, drawn from per-position weights. Likelihoods
/// are exact.
class MutationProposer final : public ProposalGenerator {
 public:
  MutationProposer(int vocab_size, int length, double mutation_rate);

  std::string name() const override { return "mutation"; }
  Proposal greedy(const Sequence& input) const override;
  std::vector<Proposal> propose(const Sequence& input, double temperature, int count,
                                std::uint64_t seed) const override;
  double score_likelihood(const Sequence& input, const Sequence& output) const override;
  double score_likelihood(const Sequence& input, const Sequence& output, double temperature) const;

  /// Refits per-position edit rates (Laplace-smoothed, mean rate preserved)
  /// and target-token weights from the pairs (or the (x, y_w) part of
  /// triples). Returns nullptr when there is nothing to fit.
  std::unique_ptr<ProposalGenerator> train(const RefinementDataset& dataset) const override;

  const std::vector<double>& position_rates() const { return rates_; }
  double mutation_rate() const { return base_rate_; }

 private:
  double edit_prob(int pos, double temperature) const;
  double token_prob(int pos, Token current, Token target) const;

  int vocab_size_;
  int length_;
  double base_rate_;
  std::vector<double> rates_;
  std::vector<double> token_weights_;  // length x vocab
};

/// Baseline per-position rate, min(4 / L, 0.5).
double default_mutation_rate(int length);

/// Returns its input; every proposal has likelihood 1.
class EchoProposer final : public ProposalGenerator {
 public:
  std::string name() const override { return "echo"; }
  Proposal greedy(const Sequence& input) const override { return {input, 0.0}; }
  std::vector<Proposal> propose(const Sequence& input, double, int count,
                                std::uint64_t) const override {
    return std::vector<Proposal>(static_cast<std::size_t>(count), Proposal{input, 0.0});
  }
  double score_likelihood(const Sequence& input, const Sequence& output) const override {
    return input == output ? 0.0 : -std::numeric_limits<double>::infinity();
  }
};

struct LoopConfig {
  int rounds = 10;
  int evals_per_round = 2000;
  int presolver_rounds = 10;
  int seeds_per_round = 200;
  int refine_iters = 10;
  int samples_per_iter = 10;
  std::vector<double> base_temperatures = {0.6, 0.8, 1.0, 1.2, 1.4, 1.6};
  /// Filter keeps candidates with log-likelihood / L above this value,
  /// i.e. p_min = exp(floor * L).
  double min_loglik_per_token = -2.0;
  double max_infeasible_fraction = 0.25;
  double distance_threshold = 0.25;
  int num_neighbors = 30;
  DatasetMode dataset_mode = DatasetMode::kPairs;
  bool adjust_temperature = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Deduplicates the scored set, then for each x searches its k_n nearest
/// neighbours (fractional Hamming, ties by lexicographic order) and emits
/// matched pairs or triples within delta_x.
RefinementDataset format_dataset(const std::vector<ScoredSequence>& scored, DatasetMode mode,
                                 double delta_x, int k_n);

/// Candidate produced by refinement, remembering the input that produced it
/// and the chain's seed score.
struct Candidate {
  Sequence sequence;
  Sequence source;
  double log_likelihood = 0.0;
  double seed_value = kInfeasible;
};

struct RefinementResult {
  std::vector<Candidate> candidates;  // deduplicated
  std::int64_t generated = 0;         // before deduplication
};

RefinementResult iterative_refinement(const ProposalGenerator& generator,
                                      const std::vector<ScoredSequence>& scored,
                                      const LoopConfig& config,
                                      const std::vector<double>& temperatures,
                                      std::uint64_t round);

/// base + 0.6 / 0.4 / 0.2 for mean Hamming below 0.075 / 0.1 / 0.125.
std::vector<double> adjust_temperatures(const std::vector<double>& base, double mean_hamming);

struct FilterResult {
  std::vector<Candidate> selected;
  std::int64_t below_likelihood = 0;
  std::int64_t infeasible_dropped = 0;
  std::int64_t subsampled_out = 0;
};

/// Likelihood floor (generator.score_likelihood(source, candidate) / L),
/// infeasible cap, uniform subsample to j. Feasibility is the structural
/// mask check; no objective evaluations happen here.
FilterResult filter_candidates(const ProposalGenerator& generator,
                               std::vector<Candidate> candidates, const TransitionMatrix& transition,
                               int j, double min_loglik_per_token, double max_infeasible_fraction,
                               std::uint64_t seed, std::uint64_t round);

struct PresolverResult {
  Sequence x0;
  std::vector<ScoredSequence> evaluated;  // in evaluation order, x0 first
  ScoredSequence best;
};

/// n0 GA generations from x0; every evaluation is kept.
PresolverResult run_presolver(const EhrlichFunction& function, const GAConfig& ga, int rounds,
                              const Sequence& x0, const EvalObserver& observer = {});

struct RoundStats {
  int round = 0;
  std::int64_t evals = 0;
  std::int64_t total_evals = 0;
  double min_regret = 1.0;        // cumulative, feasible evaluations only
  double batch_min_regret = 1.0;  // this round only
  double mean_regret = 1.0;       // over feasible evaluations this round
  double feasible_fraction = 0.0;
  double novel_fraction = 0.0;  // selected sequences not evaluated before
  std::int64_t candidates_generated = 0;
  std::int64_t candidates_unique = 0;
  double unique_fraction = 0.0;
  double mean_margin = 0.0;
  double max_margin = 0.0;
  double mean_hamming = 0.0;
  double temperature_shift = 0.0;
  std::int64_t train_pairs = 0;
  std::int64_t train_triples = 0;
  std::int64_t below_likelihood = 0;
  std::int64_t infeasible_dropped = 0;
};

struct LlomeResult {
  ScoredSequence best;
  std::int64_t presolver_evals = 0;
  double presolver_min_regret = 1.0;
  std::int64_t total_evals = 0;
  std::vector<RoundStats> rounds;
};

/// eval_index, round (0 = presolver), sequence, value, margin reward of the
/// sequence over its refinement seed (NaN for presolver evaluations).
using LlomeObserver =
    std::function<void(std::int64_t, std::int64_t, const Sequence&, double, double)>;

/// Outer loop: format, train, refine, filter, label. Throws SolverAbort when
/// a round selects no candidates.
LlomeResult run_llome(const EhrlichFunction& function, const ProposalGenerator& generator,
                      const LoopConfig& config, const PresolverResult& presolver,
                      const LlomeObserver& observer = {});

}  // namespace ehrlich
