#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "eprop/data.hpp"
#include "eprop/dynamics.hpp"
#include "eprop/network.hpp"
#include "eprop/rng.hpp"

// EP conductance updates from noisy attractor-state measurements, and the
// SGD training loop.
//
// Every conductance sees the squared voltage drop across itself in both
// phases; the update moves conductances toward the free-phase drops and away
// from the nudged-phase drops:
//
//   dg_ij = (eta / 2 beta) * ( E[(dV_ij at beta=0)^2] - E[(dV_ij at beta)^2] )
//
// which descends the loss (the nudged phase lowers its own dissipation on
// exactly the drops that reduce the output error). Expectations are estimated
// from N noisy measurements per attractor state, V_samp = V_att + sigma*xi;
// sigma = 0 short-circuits the sampling and is exact.

namespace eprop {

struct NoiseModel {
  double sigma = 0.0;
  int samples = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (sigma < 0) throw std::invalid_argument("NoiseModel: sigma must be >= 0");
    if (samples < 1) throw std::invalid_argument("NoiseModel: samples must be >= 1");
  }
};

struct UpdateConfig {
  double eta = 1e-3;
  double beta = 1.0;
  int batch_size = 4;
  double g_min = 0.0;  // conductance floor applied after every update

  void validate() const {
    if (eta <= 0) throw std::invalid_argument("UpdateConfig: eta must be > 0");
    if (beta <= 0) throw std::invalid_argument("UpdateConfig: beta must be > 0");
    if (batch_size < 1) throw std::invalid_argument("UpdateConfig: batch_size must be >= 1");
    if (g_min < 0) throw std::invalid_argument("UpdateConfig: g_min must be >= 0");
  }
};

// Per-parameter quantities in the same shape as NetworkParams: one matrix per
// layer pair, one vector per non-input layer.
struct ParamDelta {
  std::vector<Eigen::MatrixXd> pairs;
  std::vector<Eigen::VectorXd> biases;

  static ParamDelta zeros(const std::vector<int>& sizes) {
    ParamDelta d;
    for (size_t l = 0; l + 1 < sizes.size(); ++l) {
      d.pairs.push_back(Eigen::MatrixXd::Zero(sizes[l], sizes[l + 1]));
      d.biases.push_back(Eigen::VectorXd::Zero(sizes[l + 1]));
    }
    return d;
  }
};

namespace detail {

// One measurement of a full network state. A single stream drives the whole
// measurement, layer by layer, node by node; every caller that materializes
// samples goes through here so draw order is identical everywhere.
template <typename Src, typename Dst>
void measure_into(const Src& src, double sigma, rng::Stream& stream, Dst&& dst) {
  for (Eigen::Index i = 0; i < src.size(); ++i) dst[i] = src[i] + sigma * stream.next_normal();
}

inline void check_states_match(const NetworkParams& params, const BatchState& s,
                               const char* what) {
  if (static_cast<int>(s.voltages.size()) != params.layer_count())
    throw std::invalid_argument(std::string(what) + ": layer count mismatch with params");
  for (int l = 0; l < params.layer_count(); ++l)
    if (s.voltages[l].rows() != params.sizes[l])
      throw std::invalid_argument(std::string(what) + ": layer width mismatch with params");
}

}  // namespace detail

// V_samp = V_att + sigma * xi, xi i.i.d. standard normal per node. Every node
// is measured, clamped inputs included: the measurement is noisy even where
// the physics is pinned. Deterministic in (noise.seed, draw_index).
inline NetworkState sample_state(const AttractorState& att, const NoiseModel& noise,
                                 std::uint64_t draw_index) {
  noise.validate();
  if (noise.sigma == 0.0) return att.state;
  rng::Stream stream(rng::key(noise.seed, draw_index));
  NetworkState out;
  out.voltages.reserve(att.state.voltages.size());
  for (const auto& v : att.state.voltages) {
    Eigen::VectorXd s(v.size());
    detail::measure_into(v, noise.sigma, stream, s);
    out.voltages.push_back(std::move(s));
  }
  return out;
}

// Mean over noise.samples measurements of the squared drop across each
// conductance: pair entries (V_i - V_j)^2, bias entries (V_i - 1)^2 with the
// rail noiseless. sigma = 0 returns the attractor drops exactly, for any N.
// draw_base separates expectations taken at different points of a run.
inline ParamDelta squared_drop_expectation(const NetworkParams& params, const AttractorState& att,
                                           const NoiseModel& noise, std::uint64_t draw_base = 0) {
  noise.validate();
  const int pairs = params.pair_count();
  if (att.state.layer_count() != params.layer_count())
    throw std::invalid_argument("squared_drop_expectation: layer count mismatch");
  for (int l = 0; l < params.layer_count(); ++l)
    if (att.state.voltages[l].size() != params.sizes[l])
      throw std::invalid_argument("squared_drop_expectation: layer width mismatch");

  ParamDelta out = ParamDelta::zeros(params.sizes);
  const int n_samples = noise.sigma == 0.0 ? 1 : noise.samples;
  for (int s = 0; s < n_samples; ++s) {
    const NetworkState samp =
        sample_state(att, noise, rng::key(draw_base, static_cast<std::uint64_t>(s)));
    for (int l = 0; l < pairs; ++l) {
      const auto& x = samp.voltages[l];
      const auto& y = samp.voltages[l + 1];
      out.pairs[l].array() += (x.replicate(1, y.size()) - y.transpose().replicate(x.size(), 1))
                                  .array()
                                  .square();
      out.biases[l].array() += (y.array() - 1.0).square();
    }
  }
  if (n_samples > 1) {
    const double inv = 1.0 / n_samples;
    for (int l = 0; l < pairs; ++l) {
      out.pairs[l] *= inv;
      out.biases[l] *= inv;
    }
  }
  return out;
}

namespace detail {

// Accumulates sum over batch items of
//   E[(drop at beta=0)^2] - E[(drop at beta)^2]
// into `acc`. Noise substreams are keyed on (seed, iteration, example id,
// phase, sample), so the result is independent of batch order and of any
// parallel schedule, and reproducible from the seeds alone.
inline void accumulate_drop_contrast(const NetworkParams& params, const BatchAttractor& free,
                                     const BatchAttractor& nudged, const NoiseModel& noise,
                                     std::uint64_t iteration,
                                     const std::vector<std::int64_t>& example_ids,
                                     ParamDelta& acc) {
  const int pairs = params.pair_count();
  const int layers = params.layer_count();
  const Eigen::Index batch = free.state.batch_size();
  const bool exact = noise.sigma == 0.0;
  const int n = noise.samples;

  if (exact || n == 1) {
    // Single measurement per item and phase. The per-entry contrast
    //   (d0 - db)(d0 + db),  d0(i,j) = x0_i - y0_j,  db(i,j) = xb_i - yb_j
    // expands over the phase difference D = V0 - Vb and phase sum S = V0 + Vb
    // as D_i S_i - D_i S_j - S_i D_j + D_j S_j, so the whole batch reduces to
    // two broadcast vectors and two batch-rank products per layer pair:
    // nothing of the parameter-matrix shape is materialised beyond the
    // accumulator, and bitwise-equal phases cancel exactly (D == 0) under any
    // FMA contraction.
    std::vector<Eigen::MatrixXd> diff(static_cast<size_t>(layers));
    std::vector<Eigen::MatrixXd> sum(static_cast<size_t>(layers));
    if (exact) {
      for (int l = 0; l < layers; ++l) {
        diff[static_cast<size_t>(l)] = free.state.voltages[l] - nudged.state.voltages[l];
        sum[static_cast<size_t>(l)] = free.state.voltages[l] + nudged.state.voltages[l];
      }
    } else {
      std::vector<Eigen::VectorXd> mf(static_cast<size_t>(layers));
      std::vector<Eigen::VectorXd> mn(static_cast<size_t>(layers));
      for (int l = 0; l < layers; ++l) {
        diff[static_cast<size_t>(l)].resize(params.sizes[l], batch);
        sum[static_cast<size_t>(l)].resize(params.sizes[l], batch);
        mf[static_cast<size_t>(l)].resize(params.sizes[l]);
        mn[static_cast<size_t>(l)].resize(params.sizes[l]);
      }
      for (Eigen::Index b = 0; b < batch; ++b) {
        const auto item = static_cast<std::uint64_t>(example_ids[static_cast<size_t>(b)]);
        constexpr std::uint64_t kFreePhase = 0, kNudgedPhase = 1;
        rng::Stream fs(rng::key(noise.seed, rng::key(iteration, item, kFreePhase,
                                                     std::uint64_t{0})));
        rng::Stream ns(rng::key(noise.seed, rng::key(iteration, item, kNudgedPhase,
                                                     std::uint64_t{0})));
        for (int l = 0; l < layers; ++l) {
          auto& f = mf[static_cast<size_t>(l)];
          auto& g = mn[static_cast<size_t>(l)];
          measure_into(free.state.voltages[l].col(b), noise.sigma, fs, f);
          measure_into(nudged.state.voltages[l].col(b), noise.sigma, ns, g);
          diff[static_cast<size_t>(l)].col(b) = f - g;
          sum[static_cast<size_t>(l)].col(b) = f + g;
        }
      }
    }
    for (int l = 0; l < pairs; ++l) {
      const Eigen::MatrixXd& dl = diff[static_cast<size_t>(l)];
      const Eigen::MatrixXd& dn = diff[static_cast<size_t>(l) + 1];
      const Eigen::MatrixXd& sl = sum[static_cast<size_t>(l)];
      const Eigen::MatrixXd& sn = sum[static_cast<size_t>(l) + 1];
      const Eigen::VectorXd u = (dl.array() * sl.array()).rowwise().sum();
      const Eigen::VectorXd v = (dn.array() * sn.array()).rowwise().sum();
      acc.pairs[l].colwise() += u;
      acc.pairs[l].rowwise() += v.transpose();
      acc.pairs[l].noalias() -= dl * sn.transpose();
      acc.pairs[l].noalias() -= sl * dn.transpose();
      // bias drops against the 1 V rail: (y0 - 1)^2 - (yb - 1)^2
      //   = (y0 - yb)(y0 + yb) - 2 (y0 - yb)
      acc.biases[l] += v - 2.0 * dn.rowwise().sum();
    }
    return;
  }

  // N measurements per item: per-item columns, reused across items.
  std::vector<Eigen::MatrixXd> meas_free(static_cast<size_t>(layers));
  std::vector<Eigen::MatrixXd> meas_nudged(static_cast<size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    meas_free[static_cast<size_t>(l)].resize(params.sizes[l], n);
    meas_nudged[static_cast<size_t>(l)].resize(params.sizes[l], n);
  }

  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto item = static_cast<std::uint64_t>(example_ids[static_cast<size_t>(b)]);
    for (int s = 0; s < n; ++s) {
      constexpr std::uint64_t kFreePhase = 0, kNudgedPhase = 1;
      rng::Stream fs(rng::key(noise.seed, rng::key(iteration, item, kFreePhase,
                                                   static_cast<std::uint64_t>(s))));
      rng::Stream ns(rng::key(noise.seed, rng::key(iteration, item, kNudgedPhase,
                                                   static_cast<std::uint64_t>(s))));
      for (int l = 0; l < layers; ++l) {
        measure_into(free.state.voltages[l].col(b), noise.sigma, fs, meas_free[l].col(s));
        measure_into(nudged.state.voltages[l].col(b), noise.sigma, ns, meas_nudged[l].col(s));
      }
    }

    // Expand E[(V_i - V_j)^2] = E[V_i^2] + E[V_j^2] - 2 E[V_i V_j] so the
    // cross term is a single N-sample product per layer pair instead of N
    // full sweeps over the parameter matrix.
    const double inv_n = 1.0 / n;
    std::vector<Eigen::VectorXd> dq(params.layer_count());  // E[V^2] contrast per layer
    for (int l = 0; l < params.layer_count(); ++l)
      dq[l] = (meas_free[l].array().square().rowwise().sum() -
               meas_nudged[l].array().square().rowwise().sum())
                  .matrix() *
              inv_n;
    for (int l = 0; l < pairs; ++l) {
      const Eigen::Index m = params.sizes[l], w = params.sizes[l + 1];
      Eigen::MatrixXd cross(m, w);
      cross.noalias() = meas_free[l] * meas_free[l + 1].transpose();
      cross.noalias() -= meas_nudged[l] * meas_nudged[l + 1].transpose();
      acc.pairs[l].array() += dq[l].replicate(1, w).array() +
                              dq[l + 1].transpose().replicate(m, 1).array() -
                              (2.0 * inv_n) * cross.array();
      const Eigen::VectorXd dm = (meas_free[l + 1].rowwise().sum() -
                                  meas_nudged[l + 1].rowwise().sum()) *
                                 inv_n;
      acc.biases[l].array() += dq[l + 1].array() - 2.0 * dm.array();
    }
  }
}

inline void check_update_inputs(const NetworkParams& params, const BatchAttractor& free,
                                const BatchAttractor& nudged, const NoiseModel& noise,
                                const UpdateConfig& cfg,
                                const std::vector<std::int64_t>& example_ids) {
  noise.validate();
  cfg.validate();
  check_states_match(params, free.state, "ep_update(free)");
  check_states_match(params, nudged.state, "ep_update(nudged)");
  if (free.state.batch_size() != nudged.state.batch_size())
    throw std::invalid_argument("ep_update: free/nudged batch size mismatch");
  if (static_cast<Eigen::Index>(example_ids.size()) != free.state.batch_size())
    throw std::invalid_argument("ep_update: example id count mismatch");
}

}  // namespace detail

// Raw batch update (before applying and clipping), written into `delta`: the
// mean over items of (eta / 2 beta) * (E[(drop at beta=0)^2] - E[(drop at
// beta)^2]). Reusing one delta across steps avoids reallocating
// parameter-sized buffers every iteration.
inline void batch_update_delta_into(ParamDelta& delta, const NetworkParams& params,
                                    const BatchAttractor& free, const BatchAttractor& nudged,
                                    const NoiseModel& noise, const UpdateConfig& cfg,
                                    std::uint64_t iteration,
                                    const std::vector<std::int64_t>& example_ids) {
  detail::check_update_inputs(params, free, nudged, noise, cfg, example_ids);
  bool shaped = delta.pairs.size() == static_cast<size_t>(params.pair_count()) &&
                delta.biases.size() == static_cast<size_t>(params.pair_count());
  for (size_t l = 0; shaped && l < delta.pairs.size(); ++l)
    shaped = delta.pairs[l].rows() == params.sizes[l] &&
             delta.pairs[l].cols() == params.sizes[l + 1] &&
             delta.biases[l].size() == params.sizes[l + 1];
  if (!shaped) {
    delta = ParamDelta::zeros(params.sizes);
  } else {
    for (auto& p : delta.pairs) p.setZero();
    for (auto& b : delta.biases) b.setZero();
  }
  detail::accumulate_drop_contrast(params, free, nudged, noise, iteration, example_ids, delta);
  const double scale =
      cfg.eta / (2.0 * cfg.beta * static_cast<double>(free.state.batch_size()));
  for (auto& p : delta.pairs) p *= scale;
  for (auto& b : delta.biases) b *= scale;
}

inline ParamDelta batch_update_delta(const NetworkParams& params, const BatchAttractor& free,
                                     const BatchAttractor& nudged, const NoiseModel& noise,
                                     const UpdateConfig& cfg, std::uint64_t iteration,
                                     const std::vector<std::int64_t>& example_ids) {
  ParamDelta delta;
  batch_update_delta_into(delta, params, free, nudged, noise, cfg, iteration, example_ids);
  return delta;
}

namespace detail {

inline BatchAttractor to_batch(const AttractorState& att) {
  BatchAttractor b;
  b.residual = att.residual;
  b.state.voltages.reserve(att.state.voltages.size());
  for (const auto& v : att.state.voltages) b.state.voltages.push_back(v);
  return b;
}

}  // namespace detail

// Single-item update delta (Eq. 7 operand shape): free and nudged must come
// from the same params and input.
inline ParamDelta ep_update_delta(const NetworkParams& params, const AttractorState& free,
                                  const AttractorState& nudged, const NoiseModel& noise,
                                  const UpdateConfig& cfg, std::uint64_t iteration = 0,
                                  std::int64_t example_id = 0) {
  return batch_update_delta(params, detail::to_batch(free), detail::to_batch(nudged), noise, cfg,
                            iteration, {example_id});
}

inline void apply_delta_in_place(NetworkParams& params, const ParamDelta& delta, double g_min) {
  for (size_t l = 0; l < delta.pairs.size(); ++l) {
    params.conductances[l] += delta.pairs[l];
    params.bias_conductances[l] += delta.biases[l];
  }
  clip_params_in_place(params, g_min);
}

// Applies the single-item update and re-clips conductances to cfg.g_min.
inline NetworkParams ep_update(NetworkParams params, const AttractorState& free,
                               const AttractorState& nudged, const NoiseModel& noise,
                               const UpdateConfig& cfg, std::uint64_t iteration = 0,
                               std::int64_t example_id = 0) {
  const ParamDelta delta =
      ep_update_delta(params, free, nudged, noise, cfg, iteration, example_id);
  apply_delta_in_place(params, delta, cfg.g_min);
  return params;
}

struct PhaseBudget {
  int free_steps = 5;
  int nudged_steps = 5;

  void validate() const {
    if (free_steps < 0 || nudged_steps < 0)
      throw std::invalid_argument("PhaseBudget: step counts must be >= 0");
  }
};

struct StepMetrics {
  double mean_loss = 0.0;  // free-phase MSE, mean over the batch
  int correct = 0;         // free-phase argmax matches the target class
  int count = 0;
};

// One SGD step per batch: free relax from zeros, nudged relax from the free
// attractor, mean update, clip. The iteration counter feeds noise keying and
// increments once per batch.
class Trainer {
 public:
  Trainer(NetworkParams params, UpdateConfig cfg, NoiseModel noise,
          PhaseBudget budget = PhaseBudget{})
      : params_(std::move(params)), cfg_(cfg), noise_(noise), budget_(budget) {
    cfg.validate();
    noise.validate();
    budget.validate();
  }

  const NetworkParams& params() const { return params_; }
  NetworkParams take_params() && { return std::move(params_); }
  std::uint64_t iteration() const { return iteration_; }

  StepMetrics step(const EncodedBatch& batch) {
    const Eigen::Index b = batch.batch_size();
    if (batch.inputs.rows() != params_.input_width())
      throw std::invalid_argument("Trainer: batch input width mismatch");
    if (batch.targets.rows() != params_.output_width() || batch.targets.cols() != b)
      throw std::invalid_argument("Trainer: batch target shape mismatch");

    MillmanSystem system(params_, batch.inputs);
    BatchAttractor free = relax_with_system(system, 0.0, budget_.free_steps, nullptr,
                                            BatchState::zeros(params_.sizes, b));
    BatchAttractor nudged =
        relax_with_system(system, cfg_.beta, budget_.nudged_steps, &batch.targets, free.state);

    StepMetrics metrics;
    metrics.count = static_cast<int>(b);
    const Eigen::MatrixXd& outputs = free.state.voltages.back();
    for (Eigen::Index c = 0; c < b; ++c) {
      metrics.mean_loss += mse_loss(outputs.col(c), batch.targets.col(c));
      Eigen::Index predicted, actual;
      outputs.col(c).maxCoeff(&predicted);
      batch.targets.col(c).maxCoeff(&actual);
      if (predicted == actual) ++metrics.correct;
    }
    metrics.mean_loss /= static_cast<double>(b);

    batch_update_delta_into(delta_, params_, free, nudged, noise_, cfg_, iteration_,
                            batch.example_ids);
    apply_delta_in_place(params_, delta_, cfg_.g_min);
    ++iteration_;
    return metrics;
  }

 private:
  NetworkParams params_;
  UpdateConfig cfg_;
  NoiseModel noise_;
  PhaseBudget budget_;
  std::uint64_t iteration_ = 0;
  ParamDelta delta_;  // reused across steps
};

struct TrainMetrics {
  double mean_loss = 0.0;
  double accuracy = 0.0;
  std::int64_t iterations = 0;
};

// Runs `iterations` SGD steps off a batch stream; returns updated params and
// loss/accuracy aggregated over every item seen.
inline std::pair<NetworkParams, TrainMetrics> train_epoch_stream(
    NetworkParams params, BatchIterator& stream, const UpdateConfig& cfg, const NoiseModel& noise,
    const PhaseBudget& budget, std::int64_t iterations) {
  if (iterations < 0) throw std::invalid_argument("train_epoch_stream: iterations must be >= 0");
  Trainer trainer(std::move(params), cfg, noise, budget);
  TrainMetrics total;
  double loss_weighted = 0.0;
  std::int64_t correct = 0, seen = 0;
  for (std::int64_t i = 0; i < iterations; ++i) {
    const StepMetrics m = trainer.step(stream.next());
    loss_weighted += m.mean_loss * m.count;
    correct += m.correct;
    seen += m.count;
  }
  total.iterations = iterations;
  if (seen > 0) {
    total.mean_loss = loss_weighted / static_cast<double>(seen);
    total.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  }
  return {std::move(trainer).take_params(), total};
}

}  // namespace eprop
