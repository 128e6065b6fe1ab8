#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "ehrlich/llome.hpp"
#include "ehrlich/losses.hpp"
#include "oracles.hpp"

using namespace ehrlich;

namespace {

std::vector<std::vector<int>> as_sorted(const std::vector<std::array<int, 2>>& xs) {
  std::vector<std::vector<int>> out;
  for (const auto& x : xs) out.push_back({x[0], x[1]});
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::vector<int>> as_sorted(const std::vector<std::array<int, 3>>& xs) {
  std::vector<std::vector<int>> out;
  for (const auto& x : xs) out.push_back({x[0], x[1], x[2]});
  std::sort(out.begin(), out.end());
  return out;
}

EhrlichFunction instance(const std::string& name, std::uint64_t seed) {
  auto p = parse_name(name);
  p.seed = seed;
  return EhrlichFunction::generate(p);
}

LoopConfig small_loop(std::uint64_t seed = 0) {
  LoopConfig c;
  c.rounds = 3;
  c.evals_per_round = 50;
  c.seeds_per_round = 10;
  c.refine_iters = 3;
  c.samples_per_iter = 4;
  c.seed = seed;
  return c;
}

GAConfig small_ga(std::uint64_t seed = 0) {
  GAConfig g;
  g.num_particles = 100;
  g.seed = seed;
  return g;
}

// Every proposal falls below any likelihood floor.
class UnlikelyProposer final : public ProposalGenerator {
 public:
  std::string name() const override { return "unlikely"; }
  Proposal greedy(const Sequence& input) const override { return {input, -1e3}; }
  std::vector<Proposal> propose(const Sequence& input, double, int count,
                                std::uint64_t) const override {
    return std::vector<Proposal>(static_cast<std::size_t>(count), Proposal{input, -1e3});
  }
  double score_likelihood(const Sequence&, const Sequence&) const override { return -1e3; }
};

}  // namespace

TEST_CASE("toy dataset matches hand enumeration") {
  const double ninf = kInfeasible;
  const std::vector<ScoredSequence> scored = {
      {{0, 0, 0, 0}, 0.1}, {{0, 0, 0, 1}, 0.2}, {{0, 0, 1, 1}, 0.5}, {{1, 0, 0, 0}, ninf}};
  const auto pairs = format_dataset(scored, DatasetMode::kPairs, 0.25, 30);
  const std::vector<std::vector<int>> want_pairs = {{0, 1}, {1, 2}, {3, 0}};
  CHECK(as_sorted(pairs.pairs) == want_pairs);
  CHECK(pairs.triples.empty());

  const auto triples = format_dataset(scored, DatasetMode::kTriples, 0.25, 30);
  const std::vector<std::vector<int>> want_triples = {{0, 1, 3}, {1, 2, 0}};
  CHECK(as_sorted(triples.triples) == want_triples);
  CHECK(triples.pairs.empty());

  std::vector<oracle::Seq> xs;
  std::vector<double> f;
  for (const auto& s : scored) {
    xs.emplace_back(s.sequence.begin(), s.sequence.end());
    f.push_back(s.value);
  }
  const auto ref = oracle::all_pairs_dataset(xs, f, 0.25);
  CHECK(as_sorted(pairs.pairs) == ref.pairs);
  CHECK(as_sorted(triples.triples) == ref.triples);
}

TEST_CASE("random small sets agree with all-pairs reference") {
  for (std::uint64_t trial = 0; trial < 200; ++trial) {
    RandomStream rng(trial, StreamTag::kSampling);
    const int n = 2 + static_cast<int>(rng.below(7));
    const int length = 4 + static_cast<int>(rng.below(3));
    std::vector<ScoredSequence> scored;
    std::set<Sequence> seen;
    while (static_cast<int>(scored.size()) < n) {
      Sequence x(static_cast<std::size_t>(length));
      for (auto& t : x) t = static_cast<Token>(rng.below(2));
      if (!seen.insert(x).second) continue;
      const auto level = rng.below(5);
      scored.push_back({x, level == 0 ? kInfeasible : 0.25 * static_cast<double>(level)});
    }
    const double delta = (trial % 2 == 0) ? 0.25 : 0.5;
    std::vector<oracle::Seq> xs;
    std::vector<double> f;
    for (const auto& s : scored) {
      xs.emplace_back(s.sequence.begin(), s.sequence.end());
      f.push_back(s.value);
    }
    const auto ref = oracle::all_pairs_dataset(xs, f, delta);
    CHECK(as_sorted(format_dataset(scored, DatasetMode::kPairs, delta, 30).pairs) == ref.pairs);
    CHECK(as_sorted(format_dataset(scored, DatasetMode::kTriples, delta, 30).triples) ==
          ref.triples);
  }
}

TEST_CASE("dataset edge cases") {
  const std::vector<ScoredSequence> one = {{{0, 1, 0, 1}, 0.3}};
  const auto single = format_dataset(one, DatasetMode::kPairs, 0.25, 30);
  CHECK(single.pairs.empty());
  CHECK(single.triples.empty());

  const std::vector<ScoredSequence> equal = {
      {{0, 0, 0, 0}, 0.5}, {{0, 0, 0, 1}, 0.5}, {{0, 0, 1, 1}, 0.5}};
  CHECK(format_dataset(equal, DatasetMode::kPairs, 0.5, 30).pairs.empty());

  // Duplicates collapse to their first occurrence.
  const std::vector<ScoredSequence> dup = {{{0, 0}, 0.1}, {{0, 0}, 0.9}, {{0, 1}, 0.5}};
  const auto d = format_dataset(dup, DatasetMode::kPairs, 0.5, 30);
  REQUIRE(d.items.size() == 2);
  CHECK(d.items[0].value == 0.1);
  CHECK(as_sorted(d.pairs) == std::vector<std::vector<int>>{{0, 1}});
}

TEST_CASE("nearest neighbour cut with ties broken lexicographically") {
  // Both neighbours at distance 1 improve; k_n = 1 keeps the smaller sequence.
  const std::vector<ScoredSequence> scored = {
      {{1, 1, 1, 1}, 0.1}, {{1, 1, 1, 0}, 0.4}, {{0, 1, 1, 1}, 0.3}};
  const auto d = format_dataset(scored, DatasetMode::kPairs, 0.25, 1);
  CHECK(as_sorted(d.pairs) == std::vector<std::vector<int>>{{0, 2}});
}

TEST_CASE("dataset predicates hold on a GA batch") {
  const auto f = instance("Ehr(4,16)-2-2-2", 3);
  const auto pre = run_presolver(f, small_ga(3), 3, initial_solution(f));
  const auto d = format_dataset(pre.evaluated, DatasetMode::kTriples, 0.25, 30);
  CHECK_FALSE(d.triples.empty());
  for (const auto& [i, j, k] : d.triples) {
    const auto& x = d.items[static_cast<std::size_t>(i)];
    const auto& yw = d.items[static_cast<std::size_t>(j)];
    const auto& yl = d.items[static_cast<std::size_t>(k)];
    CHECK(yw.value > x.value);
    CHECK(x.value >= yl.value);
    CHECK(hamming_fraction(x.sequence, yw.sequence) <= 0.25);
    CHECK(hamming_fraction(x.sequence, yl.sequence) <= 0.25);
  }
}

TEST_CASE("echo generator collapses to the seed set") {
  const auto f = instance("Ehr(4,16)-2-2-2", 1);
  const auto pre = run_presolver(f, small_ga(1), 2, initial_solution(f));
  auto config = small_loop();
  EchoProposer echo;
  const auto r = iterative_refinement(echo, pre.evaluated, config, config.base_temperatures, 1);

  std::vector<std::size_t> order(pre.evaluated.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return pre.evaluated[a].value > pre.evaluated[b].value;
  });
  std::set<Sequence> seeds;
  for (const auto i : order) {
    if (static_cast<int>(seeds.size()) == config.seeds_per_round) break;
    seeds.insert(pre.evaluated[i].sequence);
  }
  std::set<Sequence> got;
  for (const auto& c : r.candidates) got.insert(c.sequence);
  CHECK(got == seeds);
  CHECK(got.size() == r.candidates.size());
}

TEST_CASE("refinement count bound and dedup") {
  const auto f = instance("Ehr(4,16)-2-2-2", 2);
  const auto pre = run_presolver(f, small_ga(2), 2, initial_solution(f));
  const auto config = small_loop();
  MutationProposer gen(4, 16, default_mutation_rate(16));
  const auto r = iterative_refinement(gen, pre.evaluated, config, config.base_temperatures, 1);
  const auto nt = static_cast<std::int64_t>(config.base_temperatures.size());
  const std::int64_t bound =
      config.seeds_per_round *
      (config.refine_iters + nt * config.refine_iters * config.samples_per_iter);
  CHECK(r.generated <= bound);
  CHECK(static_cast<std::int64_t>(r.candidates.size()) <= r.generated);
  std::set<Sequence> uniq;
  for (const auto& c : r.candidates) uniq.insert(c.sequence);
  CHECK(uniq.size() == r.candidates.size());
}

TEST_CASE("refinement needs a feasible entry") {
  EchoProposer echo;
  const std::vector<ScoredSequence> none = {{{0, 1}, kInfeasible}};
  const auto config = small_loop();
  CHECK_THROWS_AS(iterative_refinement(echo, none, config, config.base_temperatures, 1),
                  SolverAbort);
}

TEST_CASE("baseline proposer candidate uniqueness on a fresh instance") {
  const auto f = instance("Ehr(32,32)-4-4-4", 0);
  GAConfig ga;
  const auto pre = run_presolver(f, ga, 10, initial_solution(f));
  const LoopConfig config;
  MutationProposer gen(32, 32, default_mutation_rate(32));
  const auto r = iterative_refinement(gen, pre.evaluated, config, config.base_temperatures, 1);
  const double uniq = static_cast<double>(r.candidates.size()) / static_cast<double>(r.generated);
  MESSAGE("uniqueness " << uniq);
  CHECK(uniq > 0.9);
}

TEST_CASE("temperature adjustment thresholds") {
  const std::vector<double> base = {0.6, 1.0};
  auto near = [](const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (std::abs(a[i] - b[i]) > 1e-12) return false;
    return true;
  };
  CHECK(near(adjust_temperatures(base, 0.05), {1.2, 1.6}));
  CHECK(near(adjust_temperatures(base, 0.075), {1.0, 1.4}));
  CHECK(near(adjust_temperatures(base, 0.09), {1.0, 1.4}));
  CHECK(near(adjust_temperatures(base, 0.1), {0.8, 1.2}));
  CHECK(near(adjust_temperatures(base, 0.125), base));
  CHECK(near(adjust_temperatures(base, 0.5), base));
}

TEST_CASE("filter caps infeasible candidates") {
  const auto f = instance("Ehr(4,16)-2-2-2", 0);
  const auto& t = f.transition();
  int a = -1, b = -1;
  for (int i = 0; i < t.size && a < 0; ++i)
    for (int j = 0; j < t.size; ++j)
      if (!t.allowed(i, j)) {
        a = i;
        b = j;
        break;
      }
  REQUIRE(a >= 0);

  std::vector<Candidate> cands;
  std::set<Sequence> seen;
  for (std::uint64_t s = 0; cands.size() < 100; ++s) {
    auto x = sample_dmp(t, 16, s);
    if (seen.insert(x).second) cands.push_back({x, x, 0.0, 0.0});
  }
  for (std::uint64_t s = 0; cands.size() < 200; ++s) {
    auto x = sample_dmp(t, 16, 1000 + s);
    x[s % 15] = static_cast<Token>(a);
    x[s % 15 + 1] = static_cast<Token>(b);
    if (seen.insert(x).second) cands.push_back({x, x, 0.0, 0.0});
  }
  EchoProposer echo;
  auto count_infeasible = [&](const FilterResult& r) {
    return std::count_if(r.selected.begin(), r.selected.end(),
                         [&](const Candidate& c) { return !is_feasible(c.sequence, t); });
  };

  const auto r = filter_candidates(echo, cands, t, 1000, -2.0, 0.2, 7, 1);
  CHECK(count_infeasible(r) <= 25);
  CHECK(count_infeasible(r) == 25);
  CHECK(r.selected.size() == 125);
  CHECK(r.infeasible_dropped == 75);

  const auto zero = filter_candidates(echo, cands, t, 1000, -2.0, 0.0, 7, 1);
  CHECK(count_infeasible(zero) == 0);

  const auto sub = filter_candidates(echo, cands, t, 40, -2.0, 0.2, 7, 1);
  CHECK(sub.selected.size() == 40);
  CHECK(sub.subsampled_out == 85);

  UnlikelyProposer unlikely;
  const auto empty = filter_candidates(unlikely, cands, t, 1000, -2.0, 0.2, 7, 1);
  CHECK(empty.selected.empty());
  CHECK(empty.below_likelihood == 200);
}

TEST_CASE("proposal likelihood equals score_likelihood") {
  MutationProposer gen(5, 12, 0.2);
  const Sequence x = {0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0, 1};
  for (const double t : {0.5, 1.0, 1.6}) {
    const auto props = gen.propose(x, t, 50, 11);
    REQUIRE(props.size() == 50);
    for (const auto& p : props) {
      CHECK(std::isfinite(p.log_likelihood));
      CHECK(p.log_likelihood == gen.score_likelihood(x, p.sequence, t));
    }
  }
  // Deterministic in the seed.
  const auto a = gen.propose(x, 1.0, 20, 5);
  const auto b = gen.propose(x, 1.0, 20, 5);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].sequence == b[i].sequence);
}

TEST_CASE("likelihoods sum to one over the neighbourhood") {
  MutationProposer gen(3, 3, 0.3);
  const Sequence x = {0, 1, 2};
  double total = 0.0;
  for (int i = 0; i < 27; ++i) {
    const Sequence y = {static_cast<Token>(i % 3), static_cast<Token>(i / 3 % 3),
                        static_cast<Token>(i / 9)};
    total += std::exp(gen.score_likelihood(x, y, 1.3));
  }
  CHECK(std::abs(total - 1.0) < 1e-12);
}

TEST_CASE("temperature to zero returns the input") {
  MutationProposer gen(4, 16, 0.25);
  const Sequence x(16, 2);
  for (const auto& p : gen.propose(x, 1e-12, 20, 3)) {
    CHECK(p.sequence == x);
    CHECK(std::abs(p.log_likelihood) < 1e-9);
  }
  CHECK(gen.greedy(x).sequence == x);
}

TEST_CASE("training concentrates edits on changed positions") {
  const int v = 4, length = 12;
  RefinementDataset d;
  // Improvements only ever edit positions 2 and 7.
  for (int i = 0; i < 20; ++i) {
    Sequence x(length, static_cast<Token>(i % 4));
    Sequence y = x;
    y[2] = static_cast<Token>((x[2] + 1) % 4);
    y[7] = static_cast<Token>((x[7] + 2) % 4);
    d.items.push_back({x, 0.1});
    d.items.push_back({y, 0.5});
    d.pairs.push_back({2 * i, 2 * i + 1});
  }
  std::vector<double> target(length, 0.0);
  for (const auto& [a, b] : d.pairs)
    for (int p = 0; p < length; ++p)
      target[p] += d.items[a].sequence[p] != d.items[b].sequence[p];

  auto histogram = [&](const ProposalGenerator& g) {
    std::vector<double> h(length, 1e-9);
    const Sequence x(length, 1);
    for (const auto& p : g.propose(x, 1.0, 4000, 17))
      for (int i = 0; i < length; ++i) h[i] += p.sequence[i] != x[i];
    return h;
  };
  auto normalize = [](std::vector<double> h) {
    double s = 0.0;
    for (const double x : h) s += x;
    for (auto& x : h) x /= s;
    return h;
  };

  MutationProposer base(v, length, 0.1);
  const auto trained = base.train(d);
  REQUIRE(trained != nullptr);
  const auto tn = normalize(target);
  const double before = kl_divergence(tn, normalize(histogram(base)));
  const double after = kl_divergence(tn, normalize(histogram(*trained)));
  MESSAGE("KL before " << before << " after " << after);
  CHECK(after < before);

  // Mean edit rate is preserved and no pairs means no retraining.
  const auto& rates = dynamic_cast<const MutationProposer&>(*trained).position_rates();
  double mean = 0.0;
  for (const double r : rates) mean += r / length;
  CHECK(std::abs(mean - 0.1) < 1e-12);
  CHECK(base.train(RefinementDataset{}) == nullptr);
}

TEST_CASE("proposer rejects bad rates") {
  CHECK_THROWS_AS(MutationProposer(4, 8, 0.0), InvariantError);
  CHECK_THROWS_AS(MutationProposer(4, 8, 1.0), InvariantError);
  CHECK_THROWS_AS(MutationProposer(1, 8, 0.1), InvariantError);
}

TEST_CASE("loop budget accounting per round") {
  const auto f = instance("Ehr(4,16)-2-2-2", 0);
  const auto ga = small_ga(0);
  const auto config = small_loop(0);
  std::int64_t ga_calls = 0;
  const auto pre = run_presolver(f, ga, config.presolver_rounds, initial_solution(f),
                                 [&](auto, auto, const auto&, double) { ++ga_calls; });
  CHECK(ga_calls == 1 + config.presolver_rounds * ga.num_particles);
  CHECK(static_cast<std::int64_t>(pre.evaluated.size()) == ga_calls);

  std::map<std::int64_t, std::int64_t> per_round;
  std::int64_t last = -1;
  MutationProposer gen(4, 16, default_mutation_rate(16));
  const auto r = run_llome(f, gen, config, pre, [&](auto idx, auto round, const auto&, double,
                                                    double margin) {
    CHECK(idx == last + 1 + (last < 0 ? ga_calls : 0));
    last = idx;
    ++per_round[round];
    CHECK(margin >= 0.0);
  });
  REQUIRE(r.rounds.size() == static_cast<std::size_t>(config.rounds));
  std::int64_t total = r.presolver_evals;
  double prev = r.presolver_min_regret;
  for (const auto& s : r.rounds) {
    CHECK(s.evals <= config.evals_per_round);
    CHECK(per_round[s.round] == s.evals);
    total += s.evals;
    CHECK(s.total_evals == total);
    CHECK(s.min_regret <= prev);
    prev = s.min_regret;
  }
  CHECK(r.total_evals == total);
  CHECK(total <= ga_calls + config.rounds * config.evals_per_round);
}

TEST_CASE("loop is deterministic") {
  const auto f = instance("Ehr(4,16)-2-2-2", 4);
  const auto config = small_loop(9);
  const auto pre = run_presolver(f, small_ga(4), 2, initial_solution(f));
  MutationProposer gen(4, 16, default_mutation_rate(16));
  std::vector<Sequence> a, b;
  run_llome(f, gen, config, pre, [&](auto, auto, const auto& s, double, double) { a.push_back(s); });
  run_llome(f, gen, config, pre, [&](auto, auto, const auto& s, double, double) { b.push_back(s); });
  CHECK(a == b);
}

TEST_CASE("echo loop keeps the presolver regret") {
  const auto f = instance("Ehr(4,16)-2-2-2", 1);
  const auto pre = run_presolver(f, small_ga(1), 2, initial_solution(f));
  EchoProposer echo;
  const auto r = run_llome(f, echo, small_loop(), pre);
  for (const auto& s : r.rounds) {
    CHECK(s.min_regret == r.presolver_min_regret);
    CHECK(s.novel_fraction == 0.0);
  }
  CHECK(r.best.value == pre.best.value);
}

TEST_CASE("collapsed generator aborts the loop") {
  const auto f = instance("Ehr(4,16)-2-2-2", 1);
  const auto pre = run_presolver(f, small_ga(1), 1, initial_solution(f));
  UnlikelyProposer unlikely;
  CHECK_THROWS_AS(run_llome(f, unlikely, small_loop(), pre), SolverAbort);
}

TEST_CASE("loop config validation") {
  LoopConfig c;
  CHECK_NOTHROW(c.validate());
  c.rounds = 0;
  CHECK_THROWS_AS(c.validate(), InvariantError);
  c = LoopConfig{};
  c.max_infeasible_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), InvariantError);
  c = LoopConfig{};
  c.base_temperatures.clear();
  CHECK_THROWS_AS(c.validate(), InvariantError);
}
