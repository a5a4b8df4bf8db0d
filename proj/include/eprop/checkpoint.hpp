#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "eprop/network.hpp"

// Flat binary checkpoint for NetworkParams.
//
// Layout (little-endian):
//   magic "EPNP" | format version u32 | layer count u32 | widths u32 each
//   conductance matrices, row-major f64, in layer-pair order
//   bias vectors, f64, in layer order

namespace eprop {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::array<char, 4> kCheckpointMagic = {'E', 'P', 'N', 'P'};

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
  std::array<unsigned char, 4> b{static_cast<unsigned char>(v & 0xFF),
                                 static_cast<unsigned char>((v >> 8) & 0xFF),
                                 static_cast<unsigned char>((v >> 16) & 0xFF),
                                 static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline std::uint32_t read_u32_le(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f64_le(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline double read_f64_le(std::istream& in) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void save_checkpoint(const NetworkParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
  out.write(detail::kCheckpointMagic.data(), 4);
  detail::write_u32_le(out, detail::kCheckpointVersion);
  detail::write_u32_le(out, static_cast<std::uint32_t>(params.sizes.size()));
  for (int w : params.sizes) detail::write_u32_le(out, static_cast<std::uint32_t>(w));
  for (const auto& g : params.conductances)
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index j = 0; j < g.cols(); ++j) detail::write_f64_le(out, g(i, j));
  for (const auto& b : params.bias_conductances)
    for (Eigen::Index i = 0; i < b.size(); ++i) detail::write_f64_le(out, b[i]);
  if (!out) throw CheckpointError("write failed: " + path);
}

inline NetworkParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != detail::kCheckpointMagic)
    throw CheckpointError("bad checkpoint magic: " + path);
  const std::uint32_t version = detail::read_u32_le(in);
  if (version != detail::kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version in " + path);
  const std::uint32_t layers = detail::read_u32_le(in);
  if (layers < 2) throw CheckpointError("checkpoint has fewer than 2 layers: " + path);

  NetworkParams p;
  p.sizes.resize(layers);
  for (auto& w : p.sizes) w = static_cast<int>(detail::read_u32_le(in));
  if (!in) throw CheckpointError("truncated checkpoint header: " + path);
  for (std::uint32_t l = 0; l + 1 < layers; ++l) {
    Eigen::MatrixXd g(p.sizes[l], p.sizes[l + 1]);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = detail::read_f64_le(in);
    p.conductances.push_back(std::move(g));
  }
  for (std::uint32_t l = 0; l + 1 < layers; ++l) {
    Eigen::VectorXd b(p.sizes[l + 1]);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = detail::read_f64_le(in);
    p.bias_conductances.push_back(std::move(b));
  }
  if (!in) throw CheckpointError("truncated checkpoint payload: " + path);
  return p;
}

}  // namespace eprop
