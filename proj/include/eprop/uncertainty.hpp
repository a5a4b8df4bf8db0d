#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

// Sampling-plan arithmetic: averaging N independent measurements shrinks the
// effective measurement uncertainty by sqrt(N), so a physical sigma above the
// trainable threshold can be bought back with samples.

namespace eprop {

// sigma / sqrt(n): uncertainty of the mean of n independent measurements.
inline double effective_sigma(double sigma, std::int64_t n) {
  if (sigma < 0) throw std::invalid_argument("effective_sigma: sigma must be >= 0");
  if (n < 1) throw std::invalid_argument("effective_sigma: n must be >= 1");
  return sigma / std::sqrt(static_cast<double>(n));
}

// Smallest N with sigma / sqrt(N) <= sigma_crit: ceil((sigma/sigma_crit)^2),
// minimum 1. The ratio is nudged before ceil so exact quotients (within one
// part in 1e9) do not round up an extra sample.
inline std::int64_t required_samples(double sigma, double sigma_crit) {
  if (sigma < 0) throw std::invalid_argument("required_samples: sigma must be >= 0");
  if (sigma_crit <= 0) throw std::invalid_argument("required_samples: sigma_crit must be > 0");
  const double ratio = sigma / sigma_crit;
  const double n = std::ceil(ratio * ratio * (1.0 - 1e-9));
  return n < 1.0 ? 1 : static_cast<std::int64_t>(n);
}

// eta / beta: the step size an equivalent conventional SGD run would use.
inline double effective_lr(double eta, double beta) {
  if (beta <= 0) throw std::invalid_argument("effective_lr: beta must be > 0");
  return eta / beta;
}

struct UncertaintyPlan {
  double sigma_phys = 0.0;
  std::int64_t n_samples = 1;
  double sigma_act = 0.0;
  double sigma_crit = 0.0;
};

// Full plan for a known physical uncertainty against a measured critical
// threshold.
inline UncertaintyPlan plan_sampling(double sigma_phys, double sigma_crit) {
  UncertaintyPlan plan;
  plan.sigma_phys = sigma_phys;
  plan.sigma_crit = sigma_crit;
  plan.n_samples = required_samples(sigma_phys, sigma_crit);
  plan.sigma_act = effective_sigma(sigma_phys, plan.n_samples);
  return plan;
}

}  // namespace eprop
