#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "eprop/dynamics.hpp"
#include "eprop/network.hpp"

// Reference implementations used only for validation, deliberately written
// with none of the circuit machinery: a Hopfield-energy model relaxed by
// explicit gradient flow, and finite-difference loss gradients taken through
// tightly re-relaxed fixed points.

namespace eprop::oracle {

// Hard sigmoid: identity on [0, 1], clamped outside. Bounded activation keeps
// the gradient flow well-behaved.
inline double rho(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }
inline double drho(double x) { return (x >= 0.0 && x <= 1.0) ? 1.0 : 0.0; }

struct HopfieldModel {
  Eigen::MatrixXd weights;  // symmetric, zero diagonal
  Eigen::VectorXd bias;
  Eigen::VectorXd values;  // node values u

  void validate() const {
    const Eigen::Index n = weights.rows();
    if (weights.cols() != n) throw std::invalid_argument("HopfieldModel: weights must be square");
    if (bias.size() != n || values.size() != n)
      throw std::invalid_argument("HopfieldModel: bias/values length mismatch");
    if ((weights - weights.transpose()).cwiseAbs().maxCoeff() > 0.0)
      throw std::invalid_argument("HopfieldModel: weights must be symmetric");
    if (weights.diagonal().cwiseAbs().maxCoeff() > 0.0)
      throw std::invalid_argument("HopfieldModel: weight diagonal must be zero");
  }
};

// E = 1/2 sum u_i^2 - 1/2 sum_{i != j} W_ij rho(u_i) rho(u_j) - sum b_i rho(u_i)
inline double hopfield_energy(const HopfieldModel& model) {
  model.validate();
  const Eigen::VectorXd r = model.values.unaryExpr([](double x) { return rho(x); });
  return 0.5 * model.values.squaredNorm() - 0.5 * r.dot(model.weights * r) - model.bias.dot(r);
}

namespace detail {

inline std::vector<bool> clamp_mask(Eigen::Index n, const std::vector<Eigen::Index>& clamped) {
  std::vector<bool> held(static_cast<size_t>(n), false);
  for (Eigen::Index i : clamped) {
    if (i < 0 || i >= n) throw std::invalid_argument("hopfield_relax: clamped index out of range");
    held[static_cast<size_t>(i)] = true;
  }
  return held;
}

// One explicit-Euler step of du/dt = -dF/du on the free nodes; returns the
// largest |du| taken.
inline double euler_step(const Eigen::MatrixXd& weights, const Eigen::VectorXd& bias,
                         const std::vector<bool>& held, double beta,
                         const std::optional<Eigen::VectorXd>& targets, double dt,
                         Eigen::VectorXd& u) {
  const Eigen::Index n = u.size();
  const Eigen::VectorXd r = u.unaryExpr([](double x) { return rho(x); });
  const Eigen::VectorXd drive = weights * r + bias;
  const Eigen::Index t_count = targets ? targets->size() : 0;
  double max_du = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (held[static_cast<size_t>(i)]) continue;
    double grad = u[i] - drho(u[i]) * drive[i];
    if (beta > 0 && i >= n - t_count) grad += beta * (u[i] - (*targets)[i - (n - t_count)]);
    const double du = -dt * grad;
    u[i] += du;
    max_du = std::max(max_du, std::abs(du));
  }
  return max_du;
}

inline void check_relax_args(const HopfieldModel& model, double beta,
                             const std::optional<Eigen::VectorXd>& targets, double dt) {
  model.validate();
  if (dt <= 0) throw std::invalid_argument("hopfield_relax: dt must be > 0");
  if (beta < 0) throw std::invalid_argument("hopfield_relax: beta must be >= 0");
  if (beta > 0 && !targets.has_value())
    throw std::invalid_argument("hopfield_relax: nudged relax requires targets");
  if (targets && targets->size() > model.values.size())
    throw std::invalid_argument("hopfield_relax: more targets than nodes");
}

}  // namespace detail

// One Euler step of the (possibly nudged) gradient flow; exposed so tests can
// watch quantities along the trajectory.
inline Eigen::VectorXd hopfield_step(const HopfieldModel& model,
                                     const std::vector<Eigen::Index>& clamped, double beta,
                                     const std::optional<Eigen::VectorXd>& targets, double dt) {
  detail::check_relax_args(model, beta, targets, dt);
  const std::vector<bool> held = detail::clamp_mask(model.values.size(), clamped);
  Eigen::VectorXd u = model.values;
  detail::euler_step(model.weights, model.bias, held, beta, targets, dt, u);
  return u;
}

// Explicit-Euler flow of du/dt = -dF/du with F = E + beta * L, where
// L = 1/2 sum over the last targets.size() nodes of (u_i - t_i)^2. Nodes in
// `clamped` are held fixed. Returns the settled values; throws if max |du|
// never drops below tol.
inline Eigen::VectorXd hopfield_relax(const HopfieldModel& model,
                                      const std::vector<Eigen::Index>& clamped, double beta,
                                      const std::optional<Eigen::VectorXd>& targets, double dt,
                                      int max_steps, double tol) {
  detail::check_relax_args(model, beta, targets, dt);
  const std::vector<bool> held = detail::clamp_mask(model.values.size(), clamped);
  Eigen::VectorXd u = model.values;
  for (int step = 0; step < max_steps; ++step)
    if (detail::euler_step(model.weights, model.bias, held, beta, targets, dt, u) < tol) return u;
  throw ConvergenceError("hopfield_relax: no fixed point within step budget");
}

// Weight update contrasting the two phases:
//   dW_ij = (eta / beta) * (rho(u_i^b) rho(u_j^b) - rho(u_i^0) rho(u_j^0))
// which descends the loss for the energy convention above (E carries
// -W_ij rho rho, so growing W where the nudged correlation exceeds the free
// one deepens exactly the wells the nudge asked for). Diagonal stays zero.
inline Eigen::MatrixXd hopfield_ep_update(const Eigen::VectorXd& free_u,
                                          const Eigen::VectorXd& nudged_u, double eta,
                                          double beta) {
  if (free_u.size() != nudged_u.size())
    throw std::invalid_argument("hopfield_ep_update: state length mismatch");
  if (beta <= 0) throw std::invalid_argument("hopfield_ep_update: beta must be > 0");
  const Eigen::VectorXd r0 = free_u.unaryExpr([](double x) { return rho(x); });
  const Eigen::VectorXd rb = nudged_u.unaryExpr([](double x) { return rho(x); });
  Eigen::MatrixXd dw = (eta / beta) * (rb * rb.transpose() - r0 * r0.transpose());
  dw.diagonal().setZero();
  return dw;
}

// ---- finite-difference loss gradients through circuit fixed points ----

struct FdOptions {
  double h = 1e-4;       // central-difference step
  double tol = 1e-10;    // relaxation residual per probe
  int max_steps = 200000;
};

// Addresses one scalar parameter: pair (layer, row, col) conductance, or a
// bias entry (col ignored) when is_bias is set.
struct ParamCoord {
  int layer = 0;
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  bool is_bias = false;
};

inline std::vector<ParamCoord> all_param_coords(const NetworkParams& params) {
  std::vector<ParamCoord> coords;
  for (int l = 0; l < params.pair_count(); ++l) {
    for (Eigen::Index i = 0; i < params.conductances[l].rows(); ++i)
      for (Eigen::Index j = 0; j < params.conductances[l].cols(); ++j)
        coords.push_back({l, i, j, false});
    for (Eigen::Index i = 0; i < params.bias_conductances[l].size(); ++i)
      coords.push_back({l, i, 0, true});
  }
  return coords;
}

namespace detail {

inline double& param_entry(NetworkParams& params, const ParamCoord& c) {
  return c.is_bias ? params.bias_conductances[c.layer][c.row]
                   : params.conductances[c.layer](c.row, c.col);
}

inline double free_phase_loss(const NetworkParams& params, const Eigen::VectorXd& input,
                              const Eigen::VectorXd& target, const FdOptions& opt,
                              const NetworkState& init) {
  const AttractorState att =
      relax_to_fixed_point(params, input, 0.0, std::nullopt, opt.tol, opt.max_steps, init);
  return mse_loss(att.state.voltages.back(), target);
}

}  // namespace detail

// dL/dp for the listed parameters by central differences, each probe
// re-relaxed to opt.tol from the unperturbed fixed point (same basin, and the
// relaxation error stays orders of magnitude below the h^2 discretization
// error). No positivity clipping is applied to the probes.
inline Eigen::VectorXd fd_loss_gradient(const NetworkParams& params, const Eigen::VectorXd& input,
                                        const Eigen::VectorXd& target,
                                        const std::vector<ParamCoord>& coords,
                                        const FdOptions& opt = FdOptions{}) {
  if (opt.h <= 0) throw std::invalid_argument("fd_loss_gradient: h must be > 0");
  Eigen::VectorXd grad(static_cast<Eigen::Index>(coords.size()));
  if (coords.empty()) return grad;

  const AttractorState base = relax_to_fixed_point(params, input, 0.0, std::nullopt, opt.tol,
                                                   opt.max_steps, NetworkState::zeros(params.sizes));
  NetworkParams probe = params;
  for (size_t k = 0; k < coords.size(); ++k) {
    double& entry = detail::param_entry(probe, coords[k]);
    const double saved = entry;
    entry = saved + opt.h;
    const double plus = detail::free_phase_loss(probe, input, target, opt, base.state);
    entry = saved - opt.h;
    const double minus = detail::free_phase_loss(probe, input, target, opt, base.state);
    entry = saved;
    grad[static_cast<Eigen::Index>(k)] = (plus - minus) / (2.0 * opt.h);
  }
  return grad;
}

// dL/dW for the Hopfield oracle by central differences. Symmetry is
// preserved per probe: W_ij and W_ji move together, and the returned matrix
// carries the per-entry derivative (half the joint directional derivative),
// matching the entrywise shape of hopfield_ep_update.
inline Eigen::MatrixXd fd_hopfield_gradient(const HopfieldModel& model,
                                            const std::vector<Eigen::Index>& clamped,
                                            const Eigen::VectorXd& targets, double dt,
                                            int max_steps, double tol, double h = 1e-4) {
  model.validate();
  if (h <= 0) throw std::invalid_argument("fd_hopfield_gradient: h must be > 0");
  const Eigen::Index n = model.weights.rows();
  const Eigen::Index t_count = targets.size();
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, n);
  HopfieldModel probe = model;
  probe.values = hopfield_relax(model, clamped, 0.0, std::nullopt, dt, max_steps, tol);

  const auto loss_at = [&](const HopfieldModel& m) {
    const Eigen::VectorXd u = hopfield_relax(m, clamped, 0.0, std::nullopt, dt, max_steps, tol);
    return 0.5 * (u.tail(t_count) - targets).squaredNorm();
  };

  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double saved = probe.weights(i, j);
      probe.weights(i, j) = probe.weights(j, i) = saved + h;
      const double plus = loss_at(probe);
      probe.weights(i, j) = probe.weights(j, i) = saved - h;
      const double minus = loss_at(probe);
      probe.weights(i, j) = probe.weights(j, i) = saved;
      const double g = (plus - minus) / (2.0 * h) / 2.0;  // per entry of the symmetric pair
      grad(i, j) = grad(j, i) = g;
    }
  return grad;
}

}  // namespace eprop::oracle
