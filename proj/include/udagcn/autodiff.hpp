#pragma once

// Reverse-mode automatic differentiation over dense Tensors.
//
// A Tape records every executed op in execution order, which is a valid
// topological order. backward() walks the record once in reverse and
// accumulates gradients, so a node used twice receives the sum of both
// path gradients. Leaves are either constants, free inputs, or bound to a
// Parameter whose grad buffer receives the accumulated gradient.

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "udagcn/tensor.hpp"

namespace udagcn {

/// Adam moment estimates carried with each parameter.
struct AdamState {
  Tensor m;
  Tensor v;
  std::int64_t step = 0;
};

/// A named trainable tensor. Copying a Parameter copies a full snapshot.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  AdamState adam;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}

  void zero_grad();
};

using ParamRefs = std::vector<Parameter*>;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the Tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& out_grad, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Free leaf that receives a gradient (read it back with grad()).
  Var input(Tensor value);
  /// Leaf bound to a parameter. Repeated calls for the same parameter return
  /// the same node; frozen parameters become constants.
  Var param(Parameter& p);

  /// Subsequent param() calls for these parameters yield constants.
  void freeze(const ParamRefs& params);
  void unfreeze_all() { frozen_.clear(); }

  Var record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn fn);

  /// Reverse accumulation from a one-element loss. Bound parameters get
  /// their gradient added into Parameter::grad.
  void backward(const Var& loss);

  /// Accumulated gradient of a node; zeros if the node received none.
  Tensor grad(const Var& v) const;

  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  /// Gradient buffer for accumulation inside backward functions.
  Tensor& grad_buffer(std::uint32_t id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    Parameter* bound = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // deque: references stay valid across record()
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
  std::unordered_set<const Parameter*> frozen_;
  bool backward_done_ = false;
};

// ---- primitive ops ---------------------------------------------------------

Var detach(const Var& x);
Var reshape(const Var& x, Shape shape);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& x) { return scale(x, s); }

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var abs(const Var& x);
Var square(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);

/// c = a·b for a: m×k, b: k×n.
Var matmul(const Var& a, const Var& b);
/// x: N×c plus bias b: c broadcast over rows.
Var add_row_bias(const Var& x, const Var& b);
/// x: N×C×H×W plus bias b: C broadcast over batch and space.
Var add_channel_bias(const Var& x, const Var& b);

/// 3×3 cross-correlation, stride 1, zero same-padding.
/// x: C_in×H×W or N×C_in×H×W; kernels: C_out×C_in×3×3.
Var conv2d(const Var& x, const Var& kernels);
/// 2×2 max pooling, stride 2; ties route to the first cell in row-major order.
Var maxpool2d(const Var& x);
/// Nearest-neighbour 2× upsampling of the last two axes.
Var upsample2x(const Var& x);
/// N×C×H×W → N×C mean over space.
Var global_avg_pool(const Var& x);
/// N×C → N×C×H×W, each channel value broadcast over space.
Var tile_spatial(const Var& x, std::size_t height, std::size_t width);

/// Concatenation along `axis`; all other extents must agree.
Var concat(std::span<const Var> parts, std::size_t axis);
/// Rows [begin, end) along axis 0.
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
/// Flattens all axes after the first: N×... → N×k.
Var flatten_rows(const Var& x);

/// Norms below this are treated as degenerate by the cosine ops.
inline constexpr double kCosineEps = 1e-12;

/// ⟨u,v⟩/(‖u‖‖v‖) over all elements. Degenerate norms give 0 with zero gradient.
Var cosine_similarity(const Var& u, const Var& v);
/// Row-wise cosine of two N×d matrices → length-N vector.
Var cosine_rows(const Var& a, const Var& b);

/// Mean over rows of −log softmax(logits)[label]; logits N×C or a single
/// length-C vector with one label.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

/// Probabilities are clamped to [1e-7, 1−1e-7] before the log.
inline constexpr double kProbClamp = 1e-7;
/// Mean binary cross-entropy of probabilities p against one target per element.
Var binary_cross_entropy(const Var& p, std::span<const double> targets);
/// Same, every element against one target.
Var binary_cross_entropy(const Var& p, double target);
/// Mean BCE of sigmoid(z), evaluated from the logits without clamping:
/// max(z,0) − t·z + log(1 + e^{−|z|}). Gradient (sigmoid(z) − t)/n never vanishes
/// for a confidently wrong logit.
Var binary_cross_entropy_logits(const Var& z, std::span<const double> targets);
Var binary_cross_entropy_logits(const Var& z, double target);

// ---- value helpers (no tape) ----------------------------------------------

/// Row-wise softmax of an N×C matrix.
Tensor softmax_rows(const Tensor& logits);

}  // namespace udagcn
