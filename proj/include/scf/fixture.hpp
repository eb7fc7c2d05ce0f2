#pragma once

#include <cstdint>
#include <utility>

#include "scf/tensor.hpp"

namespace scf {

// Synthetic MLP-shaped checkpoint pair:
//   layers.{i}.weight [width, width], layers.{i}.bias [width] for i < layers,
//   head.weight [width, width].
// Base weights are N(0, 1/width), biases N(0, 0.01/width). The secondary is
//   base + scale * (drift * base + noise * s * z + tail * s * z' / (u + 0.05) on a
//   sparse_density fraction of entries)
// with s the tensor's base standard deviation. Normals are Irwin-Hall sums of
// twelve counter-RNG uniforms, so generation uses only +, -, *, / and sqrt.
struct FixtureSpec {
    int layers = 4;
    int width = 64;
    std::uint64_t seed = 0;
    double scale = 1.0;
    DType dtype = DType::F32;
    double drift = 0.02;
    double noise = 0.01;
    double sparse_density = 0.01;
    double tail = 0.05;

    /// Throws std::invalid_argument.
    void validate() const;
};

/// (base, secondary). scale = 0 gives a secondary bit-equal to the base.
std::pair<TensorMap, TensorMap> generate_fixture(const FixtureSpec& spec);

}  // namespace scf
