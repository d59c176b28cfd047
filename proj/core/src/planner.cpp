#include "semfilter/planner.hpp"

#include <algorithm>
#include <cmath>

namespace semfilter {

void PlannerParams::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "epsilon must lie in (0, 1)");
  }
  // l = 1 is accepted as the degenerate base (ln l = 0, any ratio works).
  if (!(failure_base > 0.0 && failure_base <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "failure base l must lie in (0, 1]");
  }
  if (!(sigma_hat_sq >= 0.0 && sigma_hat_sq <= 0.25)) {
    throw Error(ErrorKind::kInvalidArgument, "sigma_hat_sq must lie in [0, 0.25]");
  }
  if (!(skew >= 1.0)) throw Error(ErrorKind::kInvalidArgument, "skew constant v must be >= 1");
  if (!(r_bound > 0.0)) throw Error(ErrorKind::kInvalidArgument, "R must be positive");
}

namespace {

XiPlan solve(double radicand) {
  XiPlan plan;
  plan.radicand = radicand;
  if (radicand < 0.0) {
    plan.feasible = false;
    plan.xi = 1.0;
    return plan;
  }
  plan.feasible = true;
  plan.xi = std::clamp(0.5 - std::sqrt(radicand), 0.0, 1.0);
  return plan;
}

}  // namespace

XiPlan xi_univote(const PlannerParams& p) {
  p.validate();
  const double eps = p.epsilon;
  const double spread = 2.0 * p.sigma_hat_sq / (eps * eps) + 2.0 / (3.0 * eps);
  return solve(0.25 + std::log(p.failure_base) * spread);
}

XiPlan xi_simvote(const PlannerParams& p) {
  p.validate();
  const double eps = p.epsilon;
  const double spread = (6.0 * p.sigma_hat_sq + 2.0 * eps) / (3.0 * eps * eps);
  return solve(0.25 + p.skew * std::log(p.failure_base) * spread);
}

namespace {

void check_counts(std::uint64_t k, std::uint64_t n) {
  if (k < 1 || k > n) throw Error(ErrorKind::kInvalidArgument, "tail bound needs 1 <= k <= n");
}

double finite_population_factor(std::uint64_t k, std::uint64_t n) {
  if (n <= 1) return 0.0;
  return static_cast<double>(n - k) / static_cast<double>(n - 1);
}

}  // namespace

double bernstein_tail(std::uint64_t k, std::uint64_t n, double epsilon, double sigma_hat_sq,
                      double r_bound) {
  check_counts(k, n);
  const double kd = static_cast<double>(k);
  const double exponent = kd * epsilon * epsilon /
                          (2.0 * sigma_hat_sq + 2.0 * r_bound * epsilon / 3.0) *
                          finite_population_factor(k, n);
  return std::min(1.0, 2.0 * std::exp(-exponent));
}

double weighted_bernstein_tail(std::uint64_t k, std::uint64_t n, double epsilon,
                               double sigma_hat_sq, double skew) {
  check_counts(k, n);
  if (!(skew >= 1.0)) throw Error(ErrorKind::kInvalidArgument, "skew constant v must be >= 1");
  const double kd = static_cast<double>(k);
  const double exponent = 3.0 * kd * epsilon * epsilon /
                          ((6.0 * sigma_hat_sq + 2.0 * epsilon) * skew) *
                          finite_population_factor(k, n);
  return std::min(1.0, 2.0 * std::exp(-exponent));
}

double error_ceiling(const Thresholds& th, double epsilon) {
  return std::max(th.lb + epsilon, 1.0 - (th.ub - epsilon));
}

double failure_probability(double failure_base, std::uint64_t n) {
  return std::min(1.0, 2.0 * std::pow(failure_base, static_cast<double>(n)));
}

}  // namespace semfilter
