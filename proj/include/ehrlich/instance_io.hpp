#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ehrlich/ehrlich.hpp"

namespace ehrlich {

inline constexpr int kInstanceFormatVersion = 1;

/// Versioned JSON instance document. Output is byte-stable for a given
/// instance (fixed key order, round-trip double formatting).
std::string serialize_instance(const EhrlichFunction& function);

/// Parses and validates an instance document. Throws InvariantError naming
/// the violated invariant.
EhrlichFunction parse_instance(const std::string& document);

EhrlichFunction load_instance(const std::string& path);

/// One line of a sequence file: "t1,t2,...,tL[,score]".
struct SequenceLine {
  Sequence tokens;
  std::optional<double> score;
};

/// Reads a sequence file. When `expected_length` is set, a line with one
/// extra field is read as tokens plus a trailing score. Malformed input
/// throws InvariantError("sequence-file", "line N, column M: ...").
std::vector<SequenceLine> read_sequence_file(std::istream& in,
                                             std::optional<int> expected_length = std::nullopt);

std::string format_sequence(const Sequence& s);
std::string format_score(double value);
void write_sequence_line(std::ostream& out, const Sequence& s, std::optional<double> score);

}  // namespace ehrlich
