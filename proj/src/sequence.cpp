#include "ehrlich/sequence.hpp"

#include "ehrlich/random.hpp"

namespace ehrlich {

double hamming_fraction(const Sequence& a, const Sequence& b) {
  if (a.size() != b.size()) throw std::invalid_argument("hamming_fraction: length mismatch");
  if (a.empty()) return 0.0;
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
  return static_cast<double>(diff) / static_cast<double>(a.size());
}

std::uint64_t hash_sequence(const Sequence& s) noexcept {
  std::uint64_t h = mix64(s.size());
  for (const Token t : s) h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(t)));
  return h;
}

}  // namespace ehrlich
