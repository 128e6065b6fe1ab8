#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ehrlich {

/// Clipped improvement f(y) - f(x) if positive, else 0. Infeasible (-inf)
/// values are treated as 0 first.
double margin_reward(double f_x, double f_y);

/// Probabilities proportional to exp(beta * r), normalized over the outcomes.
std::vector<double> boltzmann_target(std::span<const double> rewards, double beta = 1.0);

/// KL(p || q) with 0 log 0 = 0; +inf where q = 0 and p > 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

struct LossRecord {
  int x_id = 0;
  int y_id = 0;
  double log_pi_theta = 0.0;
  double log_pi_ref = 0.0;
  double reward = 0.0;
  double length = 1.0;
};
using LossBatch = std::vector<LossRecord>;

/// w_i / sum_j w_j with w = pi_theta / pi_ref, computed in log space.
std::vector<double> self_normalized_weights(const LossBatch& batch);

/// Self-normalized MargE over a batch:
///   sum_i w_i (lp_i/n_i - beta r_i) - (lambda/N) sum_i lp_i/n_i
/// with w summing to one (the per-record weight is N*w_i, averaged).
double marge_loss(const LossBatch& batch, double lambda, double beta = 1.0);
/// d marge_loss / d log_pi_theta_i.
std::vector<double> marge_loss_grad(const LossBatch& batch, double lambda, double beta = 1.0);

/// Self-normalized KL-regularized REINFORCE:
///   sum_i w_i (-r_i lp_i) - (lambda/N) sum_i lp_i/n_i
double reinforce_loss(const LossBatch& batch, double lambda);
std::vector<double> reinforce_loss_grad(const LossBatch& batch, double lambda);

struct PreferenceTriple {
  int x_id = 0;
  int y_w = 0;
  int y_l = 0;
  double log_pi_theta_w = 0.0;
  double log_pi_ref_w = 0.0;
  double log_pi_theta_l = 0.0;
  double log_pi_ref_l = 0.0;
};

/// mean of -log sigmoid(beta * ((lt_w - lr_w) - (lt_l - lr_l))).
double dpo_loss(std::span<const PreferenceTriple> triples, double beta = 1.0);

struct DpoGrad {
  std::vector<double> d_log_pi_theta_w;
  std::vector<double> d_log_pi_theta_l;
};
DpoGrad dpo_loss_grad(std::span<const PreferenceTriple> triples, double beta = 1.0);

/// Tabular softmax policy pi(y | x) = softmax(logits[x])[y].
struct PolicyTable {
  int prompts = 1;
  int outcomes = 1;
  std::vector<double> logits;

  PolicyTable(int prompts, int outcomes);
  PolicyTable(int prompts, int outcomes, std::vector<double> logits);

  double log_prob(int x, int y) const;
  std::vector<double> probs(int x) const;
};

/// Overwrites log_pi_theta in every record from the table.
void refresh_log_probs(LossBatch& batch, const PolicyTable& table);
void refresh_log_probs(std::vector<PreferenceTriple>& triples, const PolicyTable& table);

/// Chain rule from per-record d/d log_pi_theta to d/d logits.
std::vector<double> logit_gradient(const PolicyTable& table, const LossBatch& batch,
                                   std::span<const double> d_log_pi);
std::vector<double> logit_gradient(const PolicyTable& table,
                                   std::span<const PreferenceTriple> triples, const DpoGrad& grad);

/// KL(pi || pi_star) + lambda KL(pi_ref || pi).
double frekl_objective(std::span<const double> pi, std::span<const double> pi_star,
                       std::span<const double> pi_ref, double lambda);
/// Partial derivatives with respect to pi (not restricted to the simplex).
std::vector<double> frekl_gradient(std::span<const double> pi, std::span<const double> pi_star,
                                   std::span<const double> pi_ref, double lambda);
/// Gradient of a function of softmax(logits) given its gradient in pi.
std::vector<double> softmax_logit_gradient(std::span<const double> logits,
                                           std::span<const double> d_pi);

/// Spread of log pi - log pi_star - lambda pi_ref / pi over the support,
/// divided by (1 + lambda * max pi_ref/pi). Zero exactly at the optimum.
double frekl_residual(std::span<const double> pi, std::span<const double> pi_star,
                      std::span<const double> pi_ref, double lambda);

struct FreklSolution {
  std::vector<double> policy;
  double objective = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

/// Minimizes the FReKL objective over the simplex with preconditioned
/// exponentiated-gradient steps and backtracking. pi_star must be strictly
/// positive. Throws SolverAbort when max_iterations is reached.
FreklSolution solve_frekl(std::span<const double> pi_star, std::span<const double> pi_ref,
                          double lambda, double tolerance = 1e-10, int max_iterations = 100000);

struct SicRow {
  double lambda = 0.0;
  double kl_to_star = 0.0;
  double kl_from_ref = 0.0;
  double objective = 0.0;
  int iterations = 0;
};
std::vector<SicRow> sic_sweep(std::span<const double> pi_star, std::span<const double> pi_ref,
                              std::span<const double> lambdas, double tolerance = 1e-10);

/// Builds pi(y | x) proportional to exp(beta r(x, y)) for every prompt x in
/// the domain, with r = f(y) - f(x) (clipped at 0 when `clipped`), and
/// returns max over x, x', y of |pi(y|x) - pi(y|x')|.
double translation_invariance_deviation(std::span<const double> f_values, double beta,
                                        bool clipped);

}  // namespace ehrlich
