#pragma once

// Instance graphs over a batch of latent codes and the GCN propagation rule
//   Z = act(D̂^{-1/2} Â D̂^{-1/2} · X · W)
// with X stored nodes × features.

#include <filesystem>
#include <span>

#include "udagcn/autodiff.hpp"
#include "udagcn/disentangle.hpp"
#include "udagcn/nn.hpp"

namespace udagcn {

struct Adjacency {
  Tensor a_hat;    // w × w, symmetric, diagonal γ
  Tensor degrees;  // w, each ≥ γ
};

struct InstanceGraph {
  Tensor features;    // w × k, rows are [z_tex, flat z_str]
  Tensor scores;      // w × 2 cosine scores
  Tensor a_hat;       // w × w
  Tensor degrees;     // w
  Tensor normalized;  // D̂^{-1/2} Â D̂^{-1/2}

  std::size_t nodes() const { return features.dim(0); }
};

/// What each code's cosine score is measured against.
enum class ScoreAnchor {
  /// cos(z_i, z̄): similarity to the batch centroid.
  BatchMean,
  /// cos(z_i − z̄, u) with u the leading principal direction of the centered
  /// batch (sign fixed so its largest-magnitude entry is positive). Scores are
  /// signed, so clamping cuts edges between opposite sides of the batch.
  Principal,
};

/// Row i = (score of tex_i, score of str_i) against the chosen anchor; tex is
/// w×d and str is w×(anything), flattened per row. A degenerate anchor or
/// code scores 0.
Tensor similarity_scores(const Tensor& tex, const Tensor& str,
                         ScoreAnchor anchor = ScoreAnchor::BatchMean);
Tensor similarity_scores(std::span<const LatentCode> codes,
                         ScoreAnchor anchor = ScoreAnchor::BatchMean);

/// A = max(X_sc·X_scᵀ, 0) with zero diagonal; Â = A + γI; D̂ᵢᵢ = Σⱼ Âᵢⱼ.
/// γ = self_loop must be positive.
Adjacency build_adjacency(const Tensor& scores, double self_loop = 1.0);

/// Sᵢⱼ = Âᵢⱼ / sqrt(D̂ᵢᵢ·D̂ⱼⱼ). Nonpositive degrees are an invariant violation.
Tensor normalize_adjacency(const Tensor& a_hat, const Tensor& degrees);

/// Rows [z_tex, flat z_str] for a batch of codes.
Tensor node_features(const Tensor& tex, const Tensor& str);

/// Full graph construction from batch codes (values; no gradient through the
/// adjacency).
InstanceGraph build_graph(const Tensor& tex, const Tensor& str,
                          ScoreAnchor anchor = ScoreAnchor::BatchMean, double self_loop = 1.0);
InstanceGraph build_graph(std::span<const LatentCode> codes,
                          ScoreAnchor anchor = ScoreAnchor::BatchMean, double self_loop = 1.0);

enum class Activation { None, Relu };

/// act(S · X · W) for S: w×w, X: w×k, W: k×c.
Var gcn_layer(const Var& s, const Var& x, const Var& w, Activation act);

/// Stacked, bias-free GCN weights shared by the source and target graphs.
struct GcnParams {
  std::vector<Parameter> weights;  // layer ℓ: k_ℓ × c_ℓ

  GcnParams() = default;
  /// dims = {in, hidden..., out}; layers = dims.size() − 1.
  GcnParams(const std::vector<std::size_t>& dims, Rng& rng);

  std::size_t layers() const { return weights.size(); }
  std::size_t in_dim() const { return weights.front().value.dim(0); }
  std::size_t out_dim() const { return weights.back().value.dim(1); }
  ParamRefs parameters();
};

/// ReLU between layers, none after the last. s is the normalized adjacency.
Var gcn_forward(Tape& tape, GcnParams& params, const Var& s, const Var& x);
Tensor gcn_forward(GcnParams& params, const InstanceGraph& graph);

/// Writes <stem>_a_hat.csv, <stem>_degrees.csv and <stem>_normalized.csv.
void dump_graph_csv(const InstanceGraph& graph, const std::filesystem::path& stem);

}  // namespace udagcn
