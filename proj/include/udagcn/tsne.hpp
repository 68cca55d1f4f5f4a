#pragma once

#include <cstdint>
#include <vector>

#include "udagcn/tensor.hpp"

namespace udagcn {

struct TsneConfig {
  double perplexity = 10.0;
  std::size_t iterations = 500;
  double learning_rate = 200.0;
  double exaggeration = 4.0;
  std::size_t exaggeration_iters = 100;
  std::size_t momentum_switch = 250;  // momentum 0.5 before, 0.8 from here on
  double entropy_tol = 1e-4;          // bits
  std::uint64_t seed = 0;
  bool pca_init = true;

  void validate(std::size_t n) const;
};

inline constexpr std::size_t kTsneMaxPoints = 2000;

/// Conditional affinities p_{j|i}; beta[i] = 1/(2σᵢ²) found by bisection so
/// that the row entropy in bits is within tol of log2(perplexity).
struct Bandwidths {
  Tensor conditional;            // N × N, zero diagonal, rows sum to 1
  std::vector<double> beta;
  std::vector<double> entropy;   // bits
};

/// Squared Euclidean distances, N × N.
Tensor pairwise_sq_dists(const Tensor& x);
Bandwidths calibrate_bandwidths(const Tensor& sq_dists, double perplexity, double tol = 1e-4);
/// Joint P = (P_cond + P_condᵀ) / 2N.
Tensor joint_probabilities(const Tensor& conditional);
/// KL(P‖Q) with Q the Student-t affinities of the N × 2 layout y.
double tsne_kl(const Tensor& p, const Tensor& y);

struct TsneResult {
  Tensor coords;               // N × 2
  Tensor p;                    // joint affinities used
  std::vector<double> entropy; // per-row calibrated entropy, bits
  double initial_kl = 0;       // at the initial layout, unexaggerated P
  double kl_after_exaggeration = 0;
  double final_kl = 0;
};

/// Exact t-SNE of the rows of features (N × d).
TsneResult tsne_embed(const Tensor& features, const TsneConfig& cfg = {});

}  // namespace udagcn
