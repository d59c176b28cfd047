#pragma once

#include <cstdint>

#include "semfilter/voting.hpp"

namespace semfilter {

/// Inputs to the sample-ratio planner.
///
/// `sigma_hat_sq` is supplied by the caller: either the conservative
/// Bernoulli maximum 0.25 or a pilot estimate p(1 - p). `failure_base` is l;
/// a guarantee holds with probability at least 1 - 2 l^n for a cluster of n
/// tuples.
struct PlannerParams {
  double epsilon = 0.10;
  double failure_base = 0.9996;
  double sigma_hat_sq = 0.25;
  double skew = 2.0;  // v, SimVote only
  std::uint64_t population = 0;
  double r_bound = 1.0;

  void validate() const;
};

/// Result of solving for the sample ratio. When `feasible` is false no
/// sample smaller than the whole cluster satisfies the bound; callers should
/// relax epsilon, raise l, or fall back to a full scan.
struct XiPlan {
  bool feasible = false;
  double xi = 1.0;
  double radicand = 0.0;
};

/// xi >= 1/2 - sqrt(1/4 + ln(l) (2 s^2 / eps^2 + 2 / (3 eps))).
XiPlan xi_univote(const PlannerParams& params);
/// xi >= 1/2 - sqrt(1/4 + v ln(l) (6 s^2 + 2 eps) / (3 eps^2)).
XiPlan xi_simvote(const PlannerParams& params);

/// Finite-population Bernstein bound on Pr[|mean_hat - mean| >= eps] for
/// k draws without replacement from n, clamped to [0, 1].
double bernstein_tail(std::uint64_t k, std::uint64_t n, double epsilon, double sigma_hat_sq,
                      double r_bound = 1.0);

/// Weighted variant with max_i w_i <= v / k.
double weighted_bernstein_tail(std::uint64_t k, std::uint64_t n, double epsilon,
                               double sigma_hat_sq, double skew);

/// max(lb + eps, 1 - (ub - eps)): the per-tuple disagreement ceiling.
double error_ceiling(const Thresholds& th, double epsilon);

/// 2 l^n, the failure probability attached to the guarantees.
double failure_probability(double failure_base, std::uint64_t n);

}  // namespace semfilter
