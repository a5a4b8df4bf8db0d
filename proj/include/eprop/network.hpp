#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "eprop/rng.hpp"

// Layered nonlinear resistive network: parameterization and state.
//
// Every weight is a resistor conductance g_ij >= 0 between a node in layer l
// and a node in layer l+1. Each inter-layer conductance is stored exactly
// once and read for both directions, so g_ij == g_ji holds by construction.
// Biases are conductances from each non-input node to a fixed +1 V rail.

namespace eprop {

struct LayerSpec {
  std::vector<int> sizes;

  void validate() const {
    if (sizes.size() < 2) throw std::invalid_argument("LayerSpec: need at least 2 layers");
    for (int w : sizes)
      if (w < 1) throw std::invalid_argument("LayerSpec: every layer width must be >= 1");
    if (sizes.front() % 2 != 0)
      throw std::invalid_argument("LayerSpec: input width must be even (doubled inputs)");
  }

  int raw_input_dim() const { return sizes.front() / 2; }
};

enum class InitScheme {
  // uniform on (0, 1/sqrt(fan_in + fan_out)]: positive-support Glorot-like
  positive_glorot,
};

struct NetworkParams {
  std::vector<int> sizes;
  // conductances[l]: sizes[l] x sizes[l+1], one matrix per adjacent layer pair
  std::vector<Eigen::MatrixXd> conductances;
  // bias_conductances[l]: sizes[l+1], one vector per non-input layer
  std::vector<Eigen::VectorXd> bias_conductances;

  int layer_count() const { return static_cast<int>(sizes.size()); }
  int pair_count() const { return layer_count() - 1; }
  int input_width() const { return sizes.front(); }
  int output_width() const { return sizes.back(); }

  double min_conductance() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& g : conductances) m = std::min(m, g.minCoeff());
    for (const auto& b : bias_conductances) m = std::min(m, b.minCoeff());
    return m;
  }

  bool same_shape(const NetworkParams& other) const { return sizes == other.sizes; }
};

struct NetworkState {
  // voltages[l]: sizes[l], node voltages per layer
  std::vector<Eigen::VectorXd> voltages;

  static NetworkState zeros(const std::vector<int>& sizes) {
    NetworkState s;
    s.voltages.reserve(sizes.size());
    for (int w : sizes) s.voltages.push_back(Eigen::VectorXd::Zero(w));
    return s;
  }

  int layer_count() const { return static_cast<int>(voltages.size()); }
};

inline NetworkParams init_params(const LayerSpec& spec, std::uint64_t seed,
                                 InitScheme scheme = InitScheme::positive_glorot) {
  spec.validate();
  if (scheme != InitScheme::positive_glorot)
    throw std::invalid_argument("init_params: unknown init scheme");

  NetworkParams p;
  p.sizes = spec.sizes;
  rng::Stream stream(rng::key(seed, static_cast<std::uint64_t>(scheme)));
  const int pairs = static_cast<int>(spec.sizes.size()) - 1;
  p.conductances.reserve(pairs);
  p.bias_conductances.reserve(pairs);
  for (int l = 0; l < pairs; ++l) {
    const int fan_in = spec.sizes[l];
    const int fan_out = spec.sizes[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in + fan_out));
    Eigen::MatrixXd g(fan_in, fan_out);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = stream.next_positive_uniform(bound);
    p.conductances.push_back(std::move(g));
    Eigen::VectorXd b(fan_out);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = stream.next_positive_uniform(bound);
    p.bias_conductances.push_back(std::move(b));
  }
  return p;
}

inline void clip_params_in_place(NetworkParams& params, double g_min) {
  if (g_min < 0) throw std::invalid_argument("clip_params: g_min must be >= 0");
  for (auto& g : params.conductances) g = g.cwiseMax(g_min);
  for (auto& b : params.bias_conductances) b = b.cwiseMax(g_min);
}

inline NetworkParams clip_params(NetworkParams params, double g_min) {
  clip_params_in_place(params, g_min);
  return params;
}

}  // namespace eprop
