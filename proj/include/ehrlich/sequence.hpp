#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace ehrlich {

using Token = std::int32_t;
using Sequence = std::vector<Token>;

inline constexpr double kInfeasible = -std::numeric_limits<double>::infinity();

struct ScoredSequence {
  Sequence sequence;
  double value = kInfeasible;

  bool feasible() const noexcept { return value != kInfeasible; }
};

/// Thrown when an input violates a documented invariant. `invariant()` names
/// the violated rule (e.g. "q|k", "row-sum") so callers and CLIs can report it.
class InvariantError : public std::invalid_argument {
 public:
  InvariantError(std::string invariant, const std::string& detail)
      : std::invalid_argument(invariant + ": " + detail), invariant_(std::move(invariant)) {}

  const std::string& invariant() const noexcept { return invariant_; }

 private:
  std::string invariant_;
};

/// Thrown when an optimizer or solver cannot continue (generator collapse,
/// iteration limit). Maps to exit code 3 in the command line tool.
class SolverAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fractional Hamming distance; sequences must have equal length.
double hamming_fraction(const Sequence& a, const Sequence& b);

std::uint64_t hash_sequence(const Sequence& s) noexcept;

struct SequenceHash {
  std::size_t operator()(const Sequence& s) const noexcept {
    return static_cast<std::size_t>(hash_sequence(s));
  }
};

}  // namespace ehrlich
