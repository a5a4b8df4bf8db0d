#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eprop/network.hpp"

// Circuit dynamics: synchronous Millman relaxation with ReLU (diode)
// nonlinearity, plus loss and pseudo-power diagnostics.
//
// One sweep updates every non-input node simultaneously from the previous
// state:
//
//   V_i <- relu( (sum_j g_ij V_j + b_i * V_rail + I_i) / (sum_j g_ij + b_i) )
//
// with V_rail = 1. In a nudged phase the output nodes receive an injected
// current I_i = beta * (t_i - V_i), V_i read from the pre-sweep state; the
// denominator is unchanged. Input-layer voltages are clamped and never
// updated.

namespace eprop {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PhaseConfig {
  double beta = 0.0;
  int steps = 1;
  std::optional<Eigen::VectorXd> targets;

  void validate(int output_width) const {
    if (beta < 0) throw std::invalid_argument("PhaseConfig: beta must be >= 0");
    if (steps < 0) throw std::invalid_argument("PhaseConfig: steps must be >= 0");
    if (beta == 0.0 && targets.has_value())
      throw std::invalid_argument("PhaseConfig: free phase (beta = 0) must not carry targets");
    if (beta > 0.0) {
      if (!targets.has_value())
        throw std::invalid_argument("PhaseConfig: nudged phase requires targets");
      if (targets->size() != output_width)
        throw std::invalid_argument("PhaseConfig: target length must match output width");
    }
  }
};

struct AttractorState {
  NetworkState state;
  double residual = 0.0;  // max abs per-node voltage change on the final step
};

// Batched counterparts: one column per batch item.
struct BatchState {
  std::vector<Eigen::MatrixXd> voltages;  // voltages[l]: sizes[l] x batch

  static BatchState zeros(const std::vector<int>& sizes, Eigen::Index batch) {
    BatchState s;
    s.voltages.reserve(sizes.size());
    for (int w : sizes) s.voltages.push_back(Eigen::MatrixXd::Zero(w, batch));
    return s;
  }

  Eigen::Index batch_size() const { return voltages.empty() ? 0 : voltages.front().cols(); }
};

struct BatchPhaseConfig {
  double beta = 0.0;
  int steps = 1;
  std::optional<Eigen::MatrixXd> targets;  // output_width x batch
};

struct BatchAttractor {
  BatchState state;
  double residual = 0.0;
};

// Precomputed per (params, clamped inputs): node load denominators and the
// constant drive contributed by the clamped input layer. Reused across the
// free and nudged phases of the same batch.
class MillmanSystem {
 public:
  MillmanSystem(const NetworkParams& params, const Eigen::MatrixXd& clamped_inputs)
      : params_(&params), inputs_(&clamped_inputs) {
    const auto& sizes = params.sizes;
    const int layers = params.layer_count();
    if (clamped_inputs.rows() != sizes.front())
      throw std::invalid_argument("relax: clamped input length must match first layer width");
    denom_.resize(layers);
    isolated_.resize(layers);
    for (int l = 1; l < layers; ++l) {
      Eigen::VectorXd d = params.bias_conductances[l - 1];
      d += params.conductances[l - 1].colwise().sum().transpose();
      if (l + 1 < layers) d += params.conductances[l].rowwise().sum();
      for (Eigen::Index i = 0; i < d.size(); ++i)
        if (d[i] <= 0.0) {
          isolated_[l].push_back(i);
          d[i] = 1.0;  // placeholder; the node's voltage is forced to 0 below
        }
      denom_[l] = std::move(d);
    }
    input_drive_.noalias() = params.conductances.front().transpose() * clamped_inputs;
  }

  // A Millman system holds references to its inputs; passing a temporary
  // column vector would dangle.
  MillmanSystem(const NetworkParams&, const Eigen::VectorXd&) = delete;

  const NetworkParams& params() const { return *params_; }
  const Eigen::MatrixXd& clamped_inputs() const { return *inputs_; }

  // One synchronous sweep: `next` is written from `prev` for every non-input
  // layer. Returns the max abs voltage change.
  double sweep(const BatchState& prev, BatchState& next, double beta,
               const Eigen::MatrixXd* targets) const {
    const auto& p = *params_;
    const int layers = p.layer_count();
    double residual = 0.0;
    for (int l = 1; l < layers; ++l) {
      Eigen::MatrixXd& out = next.voltages[l];
      if (l == 1)
        out = input_drive_;
      else
        out.noalias() = p.conductances[l - 1].transpose() * prev.voltages[l - 1];
      if (l + 1 < layers) out.noalias() += p.conductances[l] * prev.voltages[l + 1];
      out.colwise() += p.bias_conductances[l - 1];
      if (beta != 0.0 && l == layers - 1) out.noalias() += beta * (*targets - prev.voltages[l]);
      out.array().colwise() /= denom_[l].array();
      out = out.cwiseMax(0.0);
      // an isolated node (zero total conductance) rests at ground
      for (Eigen::Index i : isolated_[l]) out.row(i).setZero();
      if (!out.allFinite())
        throw DivergenceError("relax: non-finite voltage encountered");
      residual = std::max(residual, (out - prev.voltages[l]).cwiseAbs().maxCoeff());
    }
    return residual;
  }

 private:
  const NetworkParams* params_;
  const Eigen::MatrixXd* inputs_;
  std::vector<Eigen::VectorXd> denom_;
  std::vector<std::vector<Eigen::Index>> isolated_;
  Eigen::MatrixXd input_drive_;
};

namespace detail {

inline void check_batch_shapes(const NetworkParams& params, const Eigen::MatrixXd& inputs,
                               const BatchPhaseConfig& phase, const BatchState& init) {
  if (phase.beta < 0) throw std::invalid_argument("relax: beta must be >= 0");
  if (phase.steps < 0) throw std::invalid_argument("relax: steps must be >= 0");
  if (phase.beta == 0.0 && phase.targets.has_value())
    throw std::invalid_argument("relax: free phase must not carry targets");
  if (phase.beta > 0.0 &&
      (!phase.targets.has_value() || phase.targets->rows() != params.output_width() ||
       phase.targets->cols() != inputs.cols()))
    throw std::invalid_argument("relax: nudged phase requires output_width x batch targets");
  if (static_cast<int>(init.voltages.size()) != params.layer_count())
    throw std::invalid_argument("relax: init state layer count mismatch");
  for (int l = 0; l < params.layer_count(); ++l)
    if (init.voltages[l].rows() != params.sizes[l] || init.voltages[l].cols() != inputs.cols())
      throw std::invalid_argument("relax: init state shape mismatch");
}

}  // namespace detail

// Runs `steps` sweeps on a prebuilt system (callers reuse one system — and its
// cached input drive — across the free and nudged phases of a batch). The
// input layer of `init` is overwritten with the system's clamped inputs.
inline BatchAttractor relax_with_system(const MillmanSystem& system, double beta, int steps,
                                        const Eigen::MatrixXd* targets, BatchState init) {
  const NetworkParams& params = system.params();
  BatchAttractor result;
  init.voltages.front() = system.clamped_inputs();
  BatchState scratch = init;
  double residual = 0.0;
  for (int step = 0; step < steps; ++step) {
    residual = system.sweep(init, scratch, beta, targets);
    for (int l = 1; l < params.layer_count(); ++l) init.voltages[l].swap(scratch.voltages[l]);
  }
  result.state = std::move(init);
  result.residual = steps > 0 ? residual : 0.0;
  return result;
}

inline BatchAttractor relax_batch(const NetworkParams& params, const Eigen::MatrixXd& clamped_inputs,
                                  const BatchPhaseConfig& phase, BatchState init) {
  detail::check_batch_shapes(params, clamped_inputs, phase, init);
  MillmanSystem system(params, clamped_inputs);
  const Eigen::MatrixXd* targets = phase.targets ? &*phase.targets : nullptr;
  return relax_with_system(system, phase.beta, phase.steps, targets, std::move(init));
}

inline AttractorState relax(const NetworkParams& params, const Eigen::VectorXd& clamped_input,
                            const PhaseConfig& phase, const NetworkState& init) {
  phase.validate(params.output_width());
  BatchPhaseConfig bphase{phase.beta, phase.steps, std::nullopt};
  if (phase.targets) bphase.targets = *phase.targets;
  BatchState binit;
  binit.voltages.reserve(init.voltages.size());
  for (const auto& v : init.voltages) binit.voltages.push_back(v);
  BatchAttractor batt = relax_batch(params, clamped_input, bphase, std::move(binit));
  AttractorState att;
  att.residual = batt.residual;
  att.state.voltages.reserve(batt.state.voltages.size());
  for (const auto& v : batt.state.voltages) att.state.voltages.push_back(v.col(0));
  return att;
}

// Sweeps until the residual drops below `tol`; throws ConvergenceError if
// `max_steps` sweeps were not enough. Used for gradient checks, which need a
// much tighter equilibrium than the training budget provides.
inline AttractorState relax_to_fixed_point(const NetworkParams& params,
                                           const Eigen::VectorXd& clamped_input, double beta,
                                           const std::optional<Eigen::VectorXd>& targets,
                                           double tol, int max_steps, const NetworkState& init) {
  BatchPhaseConfig bphase{beta, 1, std::nullopt};
  if (targets) bphase.targets = *targets;
  BatchState state;
  state.voltages.reserve(init.voltages.size());
  for (const auto& v : init.voltages) state.voltages.push_back(v);
  const Eigen::MatrixXd inputs = clamped_input;
  detail::check_batch_shapes(params, inputs, bphase, state);
  state.voltages.front() = inputs;
  MillmanSystem system(params, inputs);
  BatchState scratch = state;
  const Eigen::MatrixXd* t = bphase.targets ? &*bphase.targets : nullptr;
  double residual = std::numeric_limits<double>::infinity();
  for (int step = 0; step < max_steps; ++step) {
    residual = system.sweep(state, scratch, beta, t);
    for (int l = 1; l < params.layer_count(); ++l) state.voltages[l].swap(scratch.voltages[l]);
    if (residual < tol) {
      AttractorState att;
      att.residual = residual;
      att.state.voltages.reserve(state.voltages.size());
      for (const auto& v : state.voltages) att.state.voltages.push_back(v.col(0));
      return att;
    }
  }
  throw ConvergenceError("relax_to_fixed_point: residual " + std::to_string(residual) +
                         " did not reach tolerance");
}

inline double mse_loss(const Eigen::VectorXd& output, const Eigen::VectorXd& target) {
  if (output.size() != target.size())
    throw std::invalid_argument("mse_loss: length mismatch");
  return 0.5 * (output - target).squaredNorm();
}

// P = 1/2 sum_pairs g_ij (V_i - V_j)^2 + 1/2 sum_i b_i (V_i - 1)^2,
// each physical conductance counted once.
inline double pseudo_power(const NetworkParams& params, const NetworkState& state) {
  if (state.layer_count() != params.layer_count())
    throw std::invalid_argument("pseudo_power: layer count mismatch");
  for (int l = 0; l < params.layer_count(); ++l)
    if (state.voltages[l].size() != params.sizes[l])
      throw std::invalid_argument("pseudo_power: state shape mismatch");
  double p = 0.0;
  for (int l = 0; l + 1 < params.layer_count(); ++l) {
    const auto& g = params.conductances[l];
    const auto& a = state.voltages[l];
    const auto& b = state.voltages[l + 1];
    p += a.array().square().matrix().dot(g.rowwise().sum());
    p += b.array().square().matrix().dot(g.colwise().sum().transpose());
    p -= 2.0 * a.dot(g * b);
  }
  for (int l = 0; l + 1 < params.layer_count(); ++l) {
    const auto& bias = params.bias_conductances[l];
    p += (state.voltages[l + 1].array() - 1.0).square().matrix().dot(bias);
  }
  return 0.5 * p;
}

}  // namespace eprop
