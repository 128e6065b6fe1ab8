#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ehrlich/random.hpp"
#include "ehrlich/sequence.hpp"

namespace ehrlich {

/// Generation parameters. The canonical name is "Ehr(v,L)-c-k-q".
struct EhrlichParams {
  int vocab_size = 32;
  int length = 32;
  int num_motifs = 4;
  int motif_length = 4;
  int quantization = 4;
  double epistasis = 0.0;
  double temperature = 1.0;
  double feasible_fraction = 0.75;
  std::uint64_t seed = 0;

  /// Ones per row of the banded mask before the diagonal is forced.
  int band_width() const;

  /// Throws InvariantError naming the first violated rule.
  void validate() const;

  std::string name() const;

  bool operator==(const EhrlichParams&) const = default;
};

/// Parses "Ehr(v,L)-c-k-q" into a params struct with default a/tau/fraction.
EhrlichParams parse_name(const std::string& name);

/// Row-major v x v transition matrix with its feasibility mask.
struct TransitionMatrix {
  int size = 0;
  std::vector<double> entries;
  std::vector<std::uint8_t> mask;

  double at(int from, int to) const { return entries[static_cast<std::size_t>(from) * size + to]; }
  bool allowed(int from, int to) const {
    return mask[static_cast<std::size_t>(from) * size + to] != 0;
  }

  bool operator==(const TransitionMatrix&) const = default;
};

struct SpacedMotifs {
  std::vector<Sequence> motifs;
  std::vector<std::vector<int>> offsets;

  bool operator==(const SpacedMotifs&) const = default;
};

/// Exact non-negative rational, always reduced.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational make(std::int64_t num, std::int64_t den);
  Rational operator*(const Rational& o) const { return make(num * o.num, den * o.den); }
  bool operator==(const Rational&) const = default;
  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// Banded 0/1 mask with `band` ones per row, wrapping around, covering
/// columns i - (band-1)/2 ... i + band/2 in row i.
std::vector<std::uint8_t> banded_mask(int v, int band);

/// softmax(logits / tau) per row, masked, then rows renormalized.
TransitionMatrix transition_from_logits(std::span<const double> logits,
                                        std::vector<std::uint8_t> mask, int v, double tau);

/// Random ergodic transition matrix with banded infeasible transitions.
/// Retries with an attempt counter mixed into the seed until the matrix has
/// at least one zero and is ergodic.
TransitionMatrix build_transition_matrix(int v, double tau, double feasible_fraction,
                                         std::uint64_t seed);

/// True iff the boolean power mask^((v-1)^2 + 1) has no zero entry.
bool check_ergodic(const TransitionMatrix& transition);
bool check_ergodic_mask(std::span<const std::uint8_t> mask, int v);

/// Draws one sequence from the chain. First token is uniform.
Sequence sample_dmp(const TransitionMatrix& transition, int length, RandomStream& rng);
Sequence sample_dmp(const TransitionMatrix& transition, int length, std::uint64_t seed);

/// Splits one chain sample of length c*k into c consecutive motifs.
std::vector<Sequence> chunk_motifs(const Sequence& joint, int num_motifs, int motif_length);

/// Offsets from simplex weights: s_0 = 0, s_{j+1} = s_j + 1 + floor(w_j * slack).
std::vector<int> offsets_from_weights(std::span<const double> weights, int slack);

SpacedMotifs build_motifs(const TransitionMatrix& transition, const EhrlichParams& params,
                          std::uint64_t attempt = 0);

/// Places motifs end to end, filling gaps with the previous motif element.
/// Throws std::logic_error if the result is not feasible with value 1.
Sequence construct_optimum(const SpacedMotifs& motifs, const EhrlichParams& params,
                           const TransitionMatrix& transition);

bool is_feasible(const Sequence& sequence, const TransitionMatrix& transition);

/// Best raw match count over window starts whose whole spaced window lies
/// inside the sequence (start + offsets.back() < length).
int motif_matches(std::span<const Token> sequence, std::span<const Token> motif,
                  std::span<const int> offsets);

/// Quantized motif presence: (matches // (k/q)) / q.
Rational motif_score(std::span<const Token> sequence, std::span<const Token> motif,
                     std::span<const int> offsets, int q);

/// Cubic epistatic response a*h^3 - a*h^2 + h.
inline double response(double h, double a) { return a * h * h * h - a * h * h + h; }

/// Immutable test-function instance. Safe to share across threads.
class EhrlichFunction {
 public:
  /// Procedural generation; deterministic in params (including seed).
  static EhrlichFunction generate(const EhrlichParams& params);

  /// Assembles an instance from stored parts and checks every invariant,
  /// throwing InvariantError on the first violation.
  EhrlichFunction(EhrlichParams params, TransitionMatrix transition, SpacedMotifs motifs,
                  Sequence optimum);

  const EhrlichParams& params() const noexcept { return params_; }
  const TransitionMatrix& transition() const noexcept { return transition_; }
  const SpacedMotifs& motifs() const noexcept { return motifs_; }
  const Sequence& optimum() const noexcept { return optimum_; }
  std::string name() const { return params_.name(); }
  int vocab_size() const noexcept { return params_.vocab_size; }
  int length() const noexcept { return params_.length; }

  /// -inf when infeasible, else the product of motif responses.
  double evaluate(std::span<const Token> sequence) const;
  double operator()(const Sequence& s) const { return evaluate(s); }

  bool feasible(std::span<const Token> sequence) const;

  /// Motif product as an exact rational, ignoring feasibility. Only defined
  /// for epistasis 0 (linear response).
  Rational motif_product(std::span<const Token> sequence) const;

  /// Evaluates a batch, optionally across threads; results do not depend on
  /// the thread count.
  std::vector<double> evaluate_batch(std::span<const Sequence> batch, int threads = 1) const;

  bool operator==(const EhrlichFunction& o) const {
    return params_ == o.params_ && transition_ == o.transition_ && motifs_ == o.motifs_ &&
           optimum_ == o.optimum_;
  }

 private:
  EhrlichFunction() = default;
  void flatten();
  void check_sequence(std::span<const Token> sequence) const;

  EhrlichParams params_;
  TransitionMatrix transition_;
  SpacedMotifs motifs_;
  Sequence optimum_;

  std::vector<Token> flat_tokens_;
  std::vector<int> flat_offsets_;
};

double evaluate(const EhrlichFunction& function, const Sequence& sequence);

/// Fixed starting point for optimizers: one chain sample on its own stream.
Sequence initial_solution(const EhrlichFunction& function);

/// 1 - f(x); +inf for infeasible sequences.
double regret(const EhrlichFunction& function, const Sequence& sequence);
inline double regret_from_value(double value) {
  return value == kInfeasible ? std::numeric_limits<double>::infinity() : 1.0 - value;
}

}  // namespace ehrlich
