#pragma once

#include <random>
#include <string>

#include "udagcn/autodiff.hpp"

namespace udagcn {

using Rng = std::mt19937_64;

/// Uniform in ±sqrt(6 / fan_in).
Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng);

/// Affine map over rows: N×in → N×out.
struct Linear {
  Parameter weight;  // in × out
  Parameter bias;    // out

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);

  Var operator()(Tape& tape, const Var& x);
  ParamRefs parameters() { return {&weight, &bias}; }
  std::size_t in_features() const { return weight.value.dim(0); }
  std::size_t out_features() const { return weight.value.dim(1); }
};

/// 3×3 same-padded convolution with per-channel bias.
struct Conv3x3 {
  Parameter kernel;  // out × in × 3 × 3
  Parameter bias;    // out

  Conv3x3() = default;
  Conv3x3(const std::string& name, std::size_t in, std::size_t out, Rng& rng);

  Var operator()(Tape& tape, const Var& x);
  ParamRefs parameters() { return {&kernel, &bias}; }
  std::size_t in_channels() const { return kernel.value.dim(1); }
  std::size_t out_channels() const { return kernel.value.dim(0); }
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void zero_grad(const ParamRefs& params);
/// One bias-corrected Adam update using each parameter's accumulated grad.
void adam_step(const ParamRefs& params, const AdamConfig& cfg);

/// Concatenates parameter lists.
ParamRefs join(std::initializer_list<ParamRefs> lists);

}  // namespace udagcn
