#include "ehrlich/ehrlich.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <regex>
#include <sstream>
#include <thread>

namespace ehrlich {

namespace {

constexpr int kMaxAttempts = 100;
constexpr double kRowSumTolerance = 1e-9;

std::string join_ints(std::span<const int> xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

using BitRows = std::vector<std::vector<std::uint64_t>>;

BitRows to_bits(std::span<const std::uint8_t> mask, int v) {
  const int words = (v + 63) / 64;
  BitRows rows(v, std::vector<std::uint64_t>(words, 0));
  for (int i = 0; i < v; ++i)
    for (int j = 0; j < v; ++j)
      if (mask[static_cast<std::size_t>(i) * v + j]) rows[i][j / 64] |= 1ULL << (j % 64);
  return rows;
}

// Boolean matrix product: (a*b)[i][j] = OR_k a[i][k] AND b[k][j].
BitRows bool_product(const BitRows& a, const BitRows& b, int v) {
  BitRows out(v, std::vector<std::uint64_t>(a.front().size(), 0));
  for (int i = 0; i < v; ++i)
    for (int k = 0; k < v; ++k)
      if ((a[i][k / 64] >> (k % 64)) & 1ULL)
        for (std::size_t w = 0; w < out[i].size(); ++w) out[i][w] |= b[k][w];
  return out;
}

bool has_zero(const TransitionMatrix& t) {
  return std::any_of(t.mask.begin(), t.mask.end(), [](std::uint8_t m) { return m == 0; });
}

std::optional<TransitionMatrix> try_transition(int v, double tau, int band, std::uint64_t seed,
                                               std::uint64_t attempt) {
  auto banded = banded_mask(v, band);

  std::vector<int> perm(v);
  std::iota(perm.begin(), perm.end(), 0);
  RandomStream perm_rng(seed, StreamTag::kRowPermutation, {attempt});
  shuffle(std::span<int>(perm), perm_rng);

  std::vector<std::uint8_t> mask(banded.size());
  for (int i = 0; i < v; ++i) {
    std::copy_n(banded.begin() + static_cast<std::ptrdiff_t>(perm[i]) * v, v,
                mask.begin() + static_cast<std::ptrdiff_t>(i) * v);
    mask[static_cast<std::size_t>(i) * v + i] = 1;
  }

  RandomStream logit_rng(seed, StreamTag::kTransitionLogits, {attempt});
  std::vector<double> logits(static_cast<std::size_t>(v) * v);
  for (auto& z : logits) z = logit_rng.normal();

  auto t = transition_from_logits(logits, std::move(mask), v, tau);
  if (!has_zero(t) || !check_ergodic(t)) return std::nullopt;
  return t;
}

// Product of motif responses, computed directly from the definition.
double motif_product_value(std::span<const Token> x, const SpacedMotifs& motifs, int q, double a) {
  double value = 1.0;
  for (std::size_t i = 0; i < motifs.motifs.size(); ++i)
    value *= response(motif_score(x, motifs.motifs[i], motifs.offsets[i], q).to_double(), a);
  return value;
}

}  // namespace

// ---------------------------------------------------------------------------
// Params

int EhrlichParams::band_width() const {
  return static_cast<int>(std::lround(feasible_fraction * vocab_size));
}

void EhrlichParams::validate() const {
  if (vocab_size < 2) throw InvariantError("v>=2", "vocab_size must be at least 2");
  if (length < 2) throw InvariantError("L>=2", "length must be at least 2");
  if (num_motifs < 1) throw InvariantError("c>=1", "num_motifs must be positive");
  if (motif_length < 1) throw InvariantError("k>=1", "motif_length must be positive");
  if (quantization < 1 || quantization > motif_length || motif_length % quantization != 0)
    throw InvariantError("q|k", "quantization " + std::to_string(quantization) +
                                    " must divide motif_length " + std::to_string(motif_length));
  if (static_cast<long long>(num_motifs) * motif_length > length)
    throw InvariantError("c*k<=L", "num_motifs * motif_length = " +
                                       std::to_string(num_motifs * motif_length) +
                                       " exceeds length " + std::to_string(length));
  if (!(epistasis >= 0.0 && epistasis <= 4.0))
    throw InvariantError("0<=a<=4", "epistasis factor outside [0, 4]");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw InvariantError("tau>0", "softmax temperature must be positive");
  if (!(feasible_fraction > 0.0 && feasible_fraction <= 1.0))
    throw InvariantError("feasible_fraction", "feasible_fraction must lie in (0, 1]");
  const int band = band_width();
  if (band >= vocab_size)
    throw InvariantError("band<v", "feasible_fraction leaves no infeasible transition per row");
  if (band < 2)
    throw InvariantError("band>=2", "feasible_fraction yields fewer than 2 feasible transitions");
}

std::string EhrlichParams::name() const {
  std::ostringstream os;
  os << "Ehr(" << vocab_size << "," << length << ")-" << num_motifs << "-" << motif_length << "-"
     << quantization;
  return os.str();
}

EhrlichParams parse_name(const std::string& name) {
  static const std::regex re(R"(^\s*Ehr\(\s*(\d+)\s*,\s*(\d+)\s*\)-(\d+)-(\d+)-(\d+)\s*$)");
  std::smatch m;
  if (!std::regex_match(name, m, re))
    throw InvariantError("name", "expected Ehr(<v>,<L>)-<c>-<k>-<q>, got '" + name + "'");
  EhrlichParams p;
  p.vocab_size = std::stoi(m[1]);
  p.length = std::stoi(m[2]);
  p.num_motifs = std::stoi(m[3]);
  p.motif_length = std::stoi(m[4]);
  p.quantization = std::stoi(m[5]);
  return p;
}

Rational Rational::make(std::int64_t num, std::int64_t den) {
  if (den == 0) throw std::domain_error("Rational: zero denominator");
  if (den < 0) num = -num, den = -den;
  const std::int64_t g = std::gcd(num < 0 ? -num : num, den);
  if (g > 1) num /= g, den /= g;
  if (num == 0) den = 1;
  return {num, den};
}

// ---------------------------------------------------------------------------
// Transition matrix

std::vector<std::uint8_t> banded_mask(int v, int band) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(v) * v, 0);
  const int lo = (band - 1) / 2;
  for (int i = 0; i < v; ++i)
    for (int j = 0; j < band; ++j) {
      const int col = ((i - lo + j) % v + v) % v;
      mask[static_cast<std::size_t>(i) * v + col] = 1;
    }
  return mask;
}

TransitionMatrix transition_from_logits(std::span<const double> logits,
                                        std::vector<std::uint8_t> mask, int v, double tau) {
  const auto n = static_cast<std::size_t>(v) * v;
  if (logits.size() != n || mask.size() != n)
    throw InvariantError("shape", "logits and mask must be v*v");
  TransitionMatrix t{v, std::vector<double>(n, 0.0), std::move(mask)};
  for (int i = 0; i < v; ++i) {
    const auto row = logits.subspan(static_cast<std::size_t>(i) * v, v);
    const double zmax = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    std::vector<double> soft(v);
    for (int j = 0; j < v; ++j) total += soft[j] = std::exp((row[j] - zmax) / tau);
    double masked = 0.0;
    for (int j = 0; j < v; ++j) {
      soft[j] = t.allowed(i, j) ? soft[j] / total : 0.0;
      masked += soft[j];
    }
    if (!(masked > 0.0)) throw InvariantError("row-support", "row " + std::to_string(i) + " is fully masked");
    for (int j = 0; j < v; ++j) t.entries[static_cast<std::size_t>(i) * v + j] = soft[j] / masked;
  }
  return t;
}

TransitionMatrix build_transition_matrix(int v, double tau, double feasible_fraction,
                                         std::uint64_t seed) {
  EhrlichParams p;
  p.vocab_size = v;
  p.temperature = tau;
  p.feasible_fraction = feasible_fraction;
  p.length = 2;
  p.num_motifs = 1;
  p.motif_length = 1;
  p.quantization = 1;
  p.validate();
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt)
    if (auto t = try_transition(v, tau, p.band_width(), seed, attempt)) return *std::move(t);
  throw std::runtime_error("build_transition_matrix: no ergodic matrix with an infeasible "
                           "transition after " + std::to_string(kMaxAttempts) + " attempts");
}

bool check_ergodic_mask(std::span<const std::uint8_t> mask, int v) {
  if (v < 1 || mask.size() != static_cast<std::size_t>(v) * v) return false;
  std::uint64_t m = static_cast<std::uint64_t>(v - 1) * (v - 1) + 1;
  BitRows base = to_bits(mask, v);
  BitRows acc;
  bool have_acc = false;
  while (m > 0) {
    if (m & 1ULL) {
      acc = have_acc ? bool_product(acc, base, v) : base;
      have_acc = true;
    }
    m >>= 1;
    if (m > 0) base = bool_product(base, base, v);
  }
  for (int i = 0; i < v; ++i)
    for (int j = 0; j < v; ++j)
      if (!((acc[i][j / 64] >> (j % 64)) & 1ULL)) return false;
  return true;
}

bool check_ergodic(const TransitionMatrix& transition) {
  return check_ergodic_mask(transition.mask, transition.size);
}

// ---------------------------------------------------------------------------
// Sampling and construction

Sequence sample_dmp(const TransitionMatrix& t, int length, RandomStream& rng) {
  if (length < 1) throw std::invalid_argument("sample_dmp: length must be positive");
  Sequence out(length);
  out[0] = static_cast<Token>(rng.below(static_cast<std::uint64_t>(t.size)));
  for (int pos = 1; pos < length; ++pos) {
    const int prev = out[pos - 1];
    const double u = rng.uniform();
    double cum = 0.0;
    int chosen = -1;
    for (int j = 0; j < t.size; ++j) {
      if (!t.allowed(prev, j)) continue;
      chosen = j;
      cum += t.at(prev, j);
      if (u < cum) break;
    }
    out[pos] = chosen;
  }
  return out;
}

Sequence sample_dmp(const TransitionMatrix& transition, int length, std::uint64_t seed) {
  RandomStream rng(seed, StreamTag::kSampling);
  return sample_dmp(transition, length, rng);
}

Sequence initial_solution(const EhrlichFunction& function) {
  RandomStream rng(function.params().seed, StreamTag::kInitialSolution);
  return sample_dmp(function.transition(), function.length(), rng);
}

std::vector<Sequence> chunk_motifs(const Sequence& joint, int num_motifs, int motif_length) {
  if (static_cast<long long>(num_motifs) * motif_length != static_cast<long long>(joint.size()))
    throw std::invalid_argument("chunk_motifs: sample length must equal c*k");
  std::vector<Sequence> out;
  for (int i = 0; i < num_motifs; ++i)
    out.emplace_back(joint.begin() + i * motif_length, joint.begin() + (i + 1) * motif_length);
  return out;
}

std::vector<int> offsets_from_weights(std::span<const double> weights, int slack) {
  std::vector<int> offsets(weights.size() + 1, 0);
  for (std::size_t j = 0; j < weights.size(); ++j)
    offsets[j + 1] = offsets[j] + 1 + static_cast<int>(std::floor(weights[j] * slack));
  return offsets;
}

SpacedMotifs build_motifs(const TransitionMatrix& transition, const EhrlichParams& params,
                          std::uint64_t attempt) {
  const int c = params.num_motifs;
  const int k = params.motif_length;
  const int L = params.length;
  if (static_cast<long long>(c) * k > L)
    throw InvariantError("c*k<=L", "motifs do not fit in the sequence");

  RandomStream motif_rng(params.seed, StreamTag::kMotifs, {attempt});
  const Sequence joint = sample_dmp(transition, c * k, motif_rng);

  const int slack = (L - c * k) / c;
  SpacedMotifs out;
  out.motifs = chunk_motifs(joint, c, k);
  for (int i = 0; i < c; ++i) {
    // Uniform draw from the (k-1)-simplex via normalized exponentials.
    RandomStream offset_rng(params.seed, StreamTag::kOffsets,
                            {attempt, static_cast<std::uint64_t>(i)});
    std::vector<double> w(k > 1 ? k - 1 : 0);
    double total = 0.0;
    for (auto& wj : w) total += wj = offset_rng.exponential();
    for (auto& wj : w) wj /= total;
    out.offsets.push_back(offsets_from_weights(w, slack));
  }
  return out;
}

Sequence construct_optimum(const SpacedMotifs& motifs, const EhrlichParams& params,
                           const TransitionMatrix& transition) {
  const int L = params.length;
  Sequence x;
  x.reserve(L);
  for (std::size_t i = 0; i < motifs.motifs.size(); ++i) {
    const auto& m = motifs.motifs[i];
    const auto& s = motifs.offsets[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const int gap = j == 0 ? 0 : s[j] - s[j - 1] - 1;
      for (int g = 0; g < gap; ++g) x.push_back(m[j - 1]);
      x.push_back(m[j]);
    }
  }
  if (static_cast<int>(x.size()) > L)
    throw std::logic_error("construct_optimum: motifs overflow the sequence length");
  while (static_cast<int>(x.size()) < L) x.push_back(x.back());

  if (!is_feasible(x, transition))
    throw std::logic_error("construct_optimum: constructed optimum is infeasible");
  if (motif_product_value(x, motifs, params.quantization, params.epistasis) != 1.0)
    throw std::logic_error("construct_optimum: constructed optimum does not score 1");
  return x;
}

bool is_feasible(const Sequence& x, const TransitionMatrix& t) {
  for (std::size_t i = 1; i < x.size(); ++i)
    if (!t.allowed(x[i - 1], x[i])) return false;
  return true;
}

int motif_matches(std::span<const Token> x, std::span<const Token> motif,
                  std::span<const int> offsets) {
  const int L = static_cast<int>(x.size());
  const int k = static_cast<int>(motif.size());
  const int last_start = L - 1 - offsets[k - 1];
  int best = 0;
  for (int start = 0; start <= last_start && best < k; ++start) {
    int count = 0;
    for (int j = 0; j < k; ++j) count += x[start + offsets[j]] == motif[j];
    best = std::max(best, count);
  }
  return best;
}

Rational motif_score(std::span<const Token> x, std::span<const Token> motif,
                     std::span<const int> offsets, int q) {
  const int k = static_cast<int>(motif.size());
  if (q < 1 || k % q != 0) throw InvariantError("q|k", "quantization must divide motif length");
  return Rational::make(motif_matches(x, motif, offsets) / (k / q), q);
}

// ---------------------------------------------------------------------------
// EhrlichFunction

EhrlichFunction EhrlichFunction::generate(const EhrlichParams& params) {
  params.validate();
  std::string last_failure = "none";
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    auto transition = try_transition(params.vocab_size, params.temperature, params.band_width(),
                                     params.seed, static_cast<std::uint64_t>(attempt));
    if (!transition) {
      last_failure = "transition matrix not ergodic or without infeasible transition";
      continue;
    }
    auto motifs = build_motifs(*transition, params, static_cast<std::uint64_t>(attempt));
    try {
      auto optimum = construct_optimum(motifs, params, *transition);
      return EhrlichFunction(params, std::move(*transition), std::move(motifs),
                             std::move(optimum));
    } catch (const std::logic_error& e) {
      last_failure = e.what();
    }
  }
  throw std::runtime_error("EhrlichFunction::generate(" + params.name() + ", seed " +
                           std::to_string(params.seed) + "): gave up after " +
                           std::to_string(kMaxAttempts) + " attempts; last failure: " +
                           last_failure);
}

EhrlichFunction::EhrlichFunction(EhrlichParams params, TransitionMatrix transition,
                                 SpacedMotifs motifs, Sequence optimum)
    : params_(std::move(params)),
      transition_(std::move(transition)),
      motifs_(std::move(motifs)),
      optimum_(std::move(optimum)) {
  params_.validate();
  const int v = params_.vocab_size;
  const int L = params_.length;
  const int c = params_.num_motifs;
  const int k = params_.motif_length;
  const auto& t = transition_;
  const auto n = static_cast<std::size_t>(v) * v;

  if (t.size != v || t.entries.size() != n || t.mask.size() != n)
    throw InvariantError("shape", "transition matrix must be " + std::to_string(v) + "x" +
                                      std::to_string(v));
  for (int i = 0; i < v; ++i) {
    double row = 0.0;
    for (int j = 0; j < v; ++j) {
      const double a = t.at(i, j);
      if (!std::isfinite(a) || a < 0.0)
        throw InvariantError("nonnegative", "transition entry (" + std::to_string(i) + "," +
                                                std::to_string(j) + ") is negative or non-finite");
      if ((a > 0.0) != t.allowed(i, j))
        throw InvariantError("mask-support", "entry (" + std::to_string(i) + "," +
                                                 std::to_string(j) + ") disagrees with mask");
      row += a;
    }
    if (std::abs(row - 1.0) > kRowSumTolerance)
      throw InvariantError("row-sum", "row " + std::to_string(i) + " sums to " +
                                          std::to_string(row));
    if (!t.allowed(i, i))
      throw InvariantError("diagonal", "self-transition " + std::to_string(i) + " is infeasible");
  }
  if (!has_zero(t)) throw InvariantError("infeasible-transition", "mask has no zero entry");
  if (!check_ergodic(t)) throw InvariantError("ergodic", "transition mask is not ergodic");

  if (static_cast<int>(motifs_.motifs.size()) != c || static_cast<int>(motifs_.offsets.size()) != c)
    throw InvariantError("shape", "expected " + std::to_string(c) + " motifs and offset vectors");
  for (int i = 0; i < c; ++i) {
    const auto& m = motifs_.motifs[i];
    const auto& s = motifs_.offsets[i];
    if (static_cast<int>(m.size()) != k || static_cast<int>(s.size()) != k)
      throw InvariantError("shape", "motif " + std::to_string(i) + " must have length " +
                                        std::to_string(k));
    for (const Token tok : m)
      if (tok < 0 || tok >= v)
        throw InvariantError("token-range", "motif " + std::to_string(i) + " token out of range");
    if (s[0] != 0)
      throw InvariantError("offsets-start", "offsets of motif " + std::to_string(i) +
                                                " must start at 0, got [" + join_ints(s) + "]");
    for (int j = 1; j < k; ++j)
      if (s[j] <= s[j - 1])
        throw InvariantError("offsets-increasing", "offsets of motif " + std::to_string(i) +
                                                       " not strictly increasing: [" +
                                                       join_ints(s) + "]");
    if (s[k - 1] > L - 1)
      throw InvariantError("motif-fits", "motif " + std::to_string(i) + " spans past length");
  }
  // Motifs come from one chain sample, so the concatenation must be feasible.
  Sequence joint;
  for (const auto& m : motifs_.motifs) joint.insert(joint.end(), m.begin(), m.end());
  if (!is_feasible(joint, t))
    throw InvariantError("motif-feasible", "concatenated motifs contain an infeasible transition");

  if (static_cast<int>(optimum_.size()) != L)
    throw InvariantError("optimum-shape", "optimum must have length " + std::to_string(L));
  for (const Token tok : optimum_)
    if (tok < 0 || tok >= v) throw InvariantError("token-range", "optimum token out of range");
  flatten();
  if (!is_feasible(optimum_, t)) throw InvariantError("optimum-feasible", "optimum is infeasible");
  if (evaluate(optimum_) != 1.0) throw InvariantError("optimum-value", "optimum does not score 1");
}

void EhrlichFunction::flatten() {
  flat_tokens_.clear();
  flat_offsets_.clear();
  for (std::size_t i = 0; i < motifs_.motifs.size(); ++i) {
    flat_tokens_.insert(flat_tokens_.end(), motifs_.motifs[i].begin(), motifs_.motifs[i].end());
    flat_offsets_.insert(flat_offsets_.end(), motifs_.offsets[i].begin(),
                         motifs_.offsets[i].end());
  }
}

void EhrlichFunction::check_sequence(std::span<const Token> x) const {
  if (static_cast<int>(x.size()) != params_.length)
    throw InvariantError("sequence-length", "expected length " + std::to_string(params_.length) +
                                                ", got " + std::to_string(x.size()));
  for (const Token tok : x)
    if (tok < 0 || tok >= params_.vocab_size)
      throw InvariantError("token-range", "token " + std::to_string(tok) + " outside [0, " +
                                              std::to_string(params_.vocab_size) + ")");
}

bool EhrlichFunction::feasible(std::span<const Token> x) const {
  check_sequence(x);
  const int v = params_.vocab_size;
  const auto* mask = transition_.mask.data();
  for (std::size_t i = 1; i < x.size(); ++i)
    if (!mask[static_cast<std::size_t>(x[i - 1]) * v + x[i]]) return false;
  return true;
}

double EhrlichFunction::evaluate(std::span<const Token> x) const {
  if (!feasible(x)) return kInfeasible;
  const int k = params_.motif_length;
  const int block = k / params_.quantization;
  const double q = params_.quantization;
  double value = 1.0;
  for (int i = 0; i < params_.num_motifs; ++i) {
    const std::span<const Token> m(flat_tokens_.data() + static_cast<std::ptrdiff_t>(i) * k, k);
    const std::span<const int> s(flat_offsets_.data() + static_cast<std::ptrdiff_t>(i) * k, k);
    const double h = (motif_matches(x, m, s) / block) / q;
    value *= response(h, params_.epistasis);
    if (value == 0.0) break;
  }
  return value;
}

Rational EhrlichFunction::motif_product(std::span<const Token> x) const {
  if (params_.epistasis != 0.0)
    throw std::logic_error("motif_product: exact form requires epistasis 0");
  Rational r{1, 1};
  for (std::size_t i = 0; i < motifs_.motifs.size(); ++i)
    r = r * motif_score(x, motifs_.motifs[i], motifs_.offsets[i], params_.quantization);
  return r;
}

std::vector<double> EhrlichFunction::evaluate_batch(std::span<const Sequence> batch,
                                                    int threads) const {
  std::vector<double> out(batch.size());
  const auto n = batch.size();
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2 * workers) {
    for (std::size_t i = 0; i < n; ++i) out[i] = evaluate(batch[i]);
    return out;
  }
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t lo = w * chunk;
      const std::size_t hi = std::min(n, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back([this, &batch, &out, lo, hi] {
        for (std::size_t i = lo; i < hi; ++i) out[i] = evaluate(batch[i]);
      });
    }
  }  // joins
  return out;
}

double evaluate(const EhrlichFunction& function, const Sequence& sequence) {
  return function.evaluate(sequence);
}

double regret(const EhrlichFunction& function, const Sequence& sequence) {
  return regret_from_value(function.evaluate(sequence));
}

}  // namespace ehrlich
