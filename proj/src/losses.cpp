#include "ehrlich/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ehrlich/sequence.hpp"

namespace ehrlich {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": size mismatch");
}

void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw std::invalid_argument(std::string(what) + ": batch must be nonempty");
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += p[i] = std::exp(logits[i] - m);
  for (auto& v : p) v /= total;
  return p;
}

// Per-record marginal terms shared by MargE and REINFORCE.
struct WeightedTerms {
  std::vector<double> w;
  double weighted = 0.0;  // sum_i w_i a_i
  double nll = 0.0;       // sum_i lp_i / n_i
};

template <typename Term>
WeightedTerms weighted_terms(const LossBatch& batch, Term term) {
  WeightedTerms t;
  t.w = self_normalized_weights(batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    t.weighted += t.w[i] * term(batch[i]);
    t.nll += batch[i].log_pi_theta / batch[i].length;
  }
  return t;
}

}  // namespace

double margin_reward(double f_x, double f_y) {
  if (f_x == -kInf) f_x = 0.0;
  if (f_y == -kInf) f_y = 0.0;
  return f_y > f_x ? f_y - f_x : 0.0;
}

std::vector<double> boltzmann_target(std::span<const double> rewards, double beta) {
  if (rewards.empty()) throw std::invalid_argument("boltzmann_target: no outcomes");
  std::vector<double> logits(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (!std::isfinite(rewards[i])) throw std::invalid_argument("boltzmann_target: non-finite reward");
    logits[i] = beta * rewards[i];
  }
  return softmax(logits);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require_same_size(p.size(), q.size(), "kl_divergence");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return kInf;
    total += p[i] * std::log(p[i] / q[i]);
  }
  return total;
}

std::vector<double> self_normalized_weights(const LossBatch& batch) {
  require_nonempty(batch.size(), "self_normalized_weights");
  std::vector<double> d(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) d[i] = batch[i].log_pi_theta - batch[i].log_pi_ref;
  return softmax(d);
}

double marge_loss(const LossBatch& batch, double lambda, double beta) {
  const auto t = weighted_terms(batch, [beta](const LossRecord& r) {
    return r.log_pi_theta / r.length - beta * r.reward;
  });
  return t.weighted - lambda * t.nll / static_cast<double>(batch.size());
}

std::vector<double> marge_loss_grad(const LossBatch& batch, double lambda, double beta) {
  auto term = [beta](const LossRecord& r) { return r.log_pi_theta / r.length - beta * r.reward; };
  const auto t = weighted_terms(batch, term);
  const double n = static_cast<double>(batch.size());
  std::vector<double> g(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& r = batch[i];
    g[i] = t.w[i] * (term(r) - t.weighted) + t.w[i] / r.length - lambda / (n * r.length);
  }
  return g;
}

double reinforce_loss(const LossBatch& batch, double lambda) {
  const auto t =
      weighted_terms(batch, [](const LossRecord& r) { return -r.reward * r.log_pi_theta; });
  return t.weighted - lambda * t.nll / static_cast<double>(batch.size());
}

std::vector<double> reinforce_loss_grad(const LossBatch& batch, double lambda) {
  auto term = [](const LossRecord& r) { return -r.reward * r.log_pi_theta; };
  const auto t = weighted_terms(batch, term);
  const double n = static_cast<double>(batch.size());
  std::vector<double> g(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& r = batch[i];
    g[i] = t.w[i] * (term(r) - t.weighted) - t.w[i] * r.reward - lambda / (n * r.length);
  }
  return g;
}

double dpo_loss(std::span<const PreferenceTriple> triples, double beta) {
  require_nonempty(triples.size(), "dpo_loss");
  double total = 0.0;
  for (const auto& t : triples) {
    const double z = beta * ((t.log_pi_theta_w - t.log_pi_ref_w) - (t.log_pi_theta_l - t.log_pi_ref_l));
    total += softplus(-z);
  }
  return total / static_cast<double>(triples.size());
}

DpoGrad dpo_loss_grad(std::span<const PreferenceTriple> triples, double beta) {
  require_nonempty(triples.size(), "dpo_loss_grad");
  const double n = static_cast<double>(triples.size());
  DpoGrad g;
  for (const auto& t : triples) {
    const double z = beta * ((t.log_pi_theta_w - t.log_pi_ref_w) - (t.log_pi_theta_l - t.log_pi_ref_l));
    const double s = sigmoid(-z);
    g.d_log_pi_theta_w.push_back(-beta * s / n);
    g.d_log_pi_theta_l.push_back(beta * s / n);
  }
  return g;
}

PolicyTable::PolicyTable(int prompts_, int outcomes_)
    : PolicyTable(prompts_, outcomes_,
                  std::vector<double>(static_cast<std::size_t>(prompts_) * outcomes_, 0.0)) {}

PolicyTable::PolicyTable(int prompts_, int outcomes_, std::vector<double> logits_)
    : prompts(prompts_), outcomes(outcomes_), logits(std::move(logits_)) {
  if (prompts < 1 || outcomes < 1) throw std::invalid_argument("PolicyTable: empty table");
  require_same_size(logits.size(), static_cast<std::size_t>(prompts) * outcomes, "PolicyTable");
}

std::vector<double> PolicyTable::probs(int x) const {
  return softmax(std::span<const double>(logits).subspan(static_cast<std::size_t>(x) * outcomes,
                                                         static_cast<std::size_t>(outcomes)));
}

double PolicyTable::log_prob(int x, int y) const {
  const auto row = std::span<const double>(logits).subspan(static_cast<std::size_t>(x) * outcomes,
                                                           static_cast<std::size_t>(outcomes));
  const double m = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (const double l : row) total += std::exp(l - m);
  return row[static_cast<std::size_t>(y)] - m - std::log(total);
}

void refresh_log_probs(LossBatch& batch, const PolicyTable& table) {
  for (auto& r : batch) r.log_pi_theta = table.log_prob(r.x_id, r.y_id);
}

void refresh_log_probs(std::vector<PreferenceTriple>& triples, const PolicyTable& table) {
  for (auto& t : triples) {
    t.log_pi_theta_w = table.log_prob(t.x_id, t.y_w);
    t.log_pi_theta_l = table.log_prob(t.x_id, t.y_l);
  }
}

namespace {

void accumulate_log_prob_grad(const PolicyTable& table, int x, int y, double scale,
                              std::vector<double>& grad) {
  const auto p = table.probs(x);
  const std::size_t base = static_cast<std::size_t>(x) * table.outcomes;
  for (int k = 0; k < table.outcomes; ++k)
    grad[base + k] += scale * ((k == y ? 1.0 : 0.0) - p[static_cast<std::size_t>(k)]);
}

}  // namespace

std::vector<double> logit_gradient(const PolicyTable& table, const LossBatch& batch,
                                   std::span<const double> d_log_pi) {
  require_same_size(batch.size(), d_log_pi.size(), "logit_gradient");
  std::vector<double> grad(table.logits.size(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i)
    accumulate_log_prob_grad(table, batch[i].x_id, batch[i].y_id, d_log_pi[i], grad);
  return grad;
}

std::vector<double> logit_gradient(const PolicyTable& table,
                                   std::span<const PreferenceTriple> triples, const DpoGrad& g) {
  require_same_size(triples.size(), g.d_log_pi_theta_w.size(), "logit_gradient");
  std::vector<double> grad(table.logits.size(), 0.0);
  for (std::size_t i = 0; i < triples.size(); ++i) {
    accumulate_log_prob_grad(table, triples[i].x_id, triples[i].y_w, g.d_log_pi_theta_w[i], grad);
    accumulate_log_prob_grad(table, triples[i].x_id, triples[i].y_l, g.d_log_pi_theta_l[i], grad);
  }
  return grad;
}

double frekl_objective(std::span<const double> pi, std::span<const double> pi_star,
                       std::span<const double> pi_ref, double lambda) {
  require_same_size(pi.size(), pi_star.size(), "frekl_objective");
  require_same_size(pi.size(), pi_ref.size(), "frekl_objective");
  const double forward = kl_divergence(pi, pi_star);
  if (lambda == 0.0) return forward;
  return forward + lambda * kl_divergence(pi_ref, pi);
}

std::vector<double> frekl_gradient(std::span<const double> pi, std::span<const double> pi_star,
                                   std::span<const double> pi_ref, double lambda) {
  require_same_size(pi.size(), pi_star.size(), "frekl_gradient");
  require_same_size(pi.size(), pi_ref.size(), "frekl_gradient");
  std::vector<double> g(pi.size());
  for (std::size_t k = 0; k < pi.size(); ++k)
    g[k] = std::log(pi[k] / pi_star[k]) + 1.0 - lambda * pi_ref[k] / pi[k];
  return g;
}

std::vector<double> softmax_logit_gradient(std::span<const double> logits,
                                           std::span<const double> d_pi) {
  require_same_size(logits.size(), d_pi.size(), "softmax_logit_gradient");
  const auto p = softmax(logits);
  double mean = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) mean += p[k] * d_pi[k];
  std::vector<double> g(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) g[k] = p[k] * (d_pi[k] - mean);
  return g;
}

double frekl_residual(std::span<const double> pi, std::span<const double> pi_star,
                      std::span<const double> pi_ref, double lambda) {
  double lo = kInf, hi = -kInf, max_ratio = 0.0;
  for (std::size_t k = 0; k < pi.size(); ++k) {
    const double ratio = pi_ref[k] / pi[k];
    const double r = std::log(pi[k]) - std::log(pi_star[k]) - lambda * ratio;
    lo = std::min(lo, r);
    hi = std::max(hi, r);
    max_ratio = std::max(max_ratio, ratio);
  }
  return (hi - lo) / (1.0 + lambda * max_ratio);
}

FreklSolution solve_frekl(std::span<const double> pi_star, std::span<const double> pi_ref,
                          double lambda, double tolerance, int max_iterations) {
  require_same_size(pi_star.size(), pi_ref.size(), "solve_frekl");
  if (pi_star.empty()) throw std::invalid_argument("solve_frekl: empty support");
  if (!(lambda >= 0.0)) throw std::invalid_argument("solve_frekl: lambda must be >= 0");
  for (const double p : pi_star)
    if (!(p > 0.0)) throw std::invalid_argument("solve_frekl: pi_star must be strictly positive");
  const std::size_t n = pi_star.size();

  // Start from the even mixture; log coordinates keep iterates interior.
  std::vector<double> u(n);
  for (std::size_t k = 0; k < n; ++k) u[k] = std::log(0.5 * pi_star[k] + 0.5 * pi_ref[k]);
  auto pi = softmax(u);
  double value = frekl_objective(pi, pi_star, pi_ref, lambda);

  FreklSolution out;
  for (int it = 0; it < max_iterations; ++it) {
    out.residual = frekl_residual(pi, pi_star, pi_ref, lambda);
    if (out.residual <= tolerance) {
      out.policy = std::move(pi);
      out.objective = value;
      out.iterations = it;
      return out;
    }
    // Diagonal Newton direction in log coordinates, centered so that it
    // is a descent direction on the simplex.
    const auto g = frekl_gradient(pi, pi_star, pi_ref, lambda);
    std::vector<double> h(n);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      h[k] = 1.0 + lambda * pi_ref[k] / pi[k];
      num += pi[k] * g[k] / h[k];
      den += pi[k] / h[k];
    }
    const double c = num / den;
    std::vector<double> d(n);
    double slope = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      d[k] = -(g[k] - c) / h[k];
      slope += pi[k] * (g[k] - c) * d[k];
    }

    double step = 1.0;
    const double noise = 8 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(value));
    bool accepted = false;
    while (step > 1e-16) {
      std::vector<double> trial(n);
      for (std::size_t k = 0; k < n; ++k) trial[k] = u[k] + step * d[k];
      auto trial_pi = softmax(trial);
      const double trial_value = frekl_objective(trial_pi, pi_star, pi_ref, lambda);
      // Near the optimum the objective change drops below rounding; a
      // smaller fixed-point residual is then accepted instead.
      const bool decrease = trial_value <= value + 1e-4 * step * slope + noise;
      if (std::isfinite(trial_value) &&
          (decrease || frekl_residual(trial_pi, pi_star, pi_ref, lambda) < 0.5 * out.residual)) {
        u = std::move(trial);
        pi = std::move(trial_pi);
        value = trial_value;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      std::ostringstream msg;
      msg << "solve_frekl: line search stalled after " << it << " iterations (residual "
          << out.residual << ", tolerance " << tolerance << ")";
      throw SolverAbort(msg.str());
    }
  }
  out.residual = frekl_residual(pi, pi_star, pi_ref, lambda);
  std::ostringstream msg;
  msg << "solve_frekl: no convergence after " << max_iterations << " iterations (residual "
      << out.residual << ", tolerance " << tolerance << ")";
  throw SolverAbort(msg.str());
}

std::vector<SicRow> sic_sweep(std::span<const double> pi_star, std::span<const double> pi_ref,
                              std::span<const double> lambdas, double tolerance) {
  std::vector<SicRow> rows;
  for (const double lambda : lambdas) {
    const auto s = solve_frekl(pi_star, pi_ref, lambda, tolerance);
    rows.push_back({lambda, kl_divergence(s.policy, pi_star), kl_divergence(pi_ref, s.policy),
                    s.objective, s.iterations});
  }
  return rows;
}

double translation_invariance_deviation(std::span<const double> f_values, double beta,
                                        bool clipped) {
  const std::size_t n = f_values.size();
  if (n == 0) throw std::invalid_argument("translation_invariance_deviation: empty domain");
  std::vector<double> lo(n, kInf), hi(n, -kInf);
  std::vector<double> r(n);
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y)
      r[y] = clipped ? margin_reward(f_values[x], f_values[y]) : f_values[y] - f_values[x];
    const auto pi = boltzmann_target(r, beta);
    for (std::size_t y = 0; y < n; ++y) {
      lo[y] = std::min(lo[y], pi[y]);
      hi[y] = std::max(hi[y], pi[y]);
    }
  }
  double dev = 0.0;
  for (std::size_t y = 0; y < n; ++y) dev = std::max(dev, hi[y] - lo[y]);
  return dev;
}

}  // namespace ehrlich
