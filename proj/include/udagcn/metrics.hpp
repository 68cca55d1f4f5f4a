#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "udagcn/tensor.hpp"

namespace udagcn {

/// AUC is undefined without both a positive and a negative.
class UndefinedAucError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Mann–Whitney statistic: fraction of (positive, negative) pairs ranked
/// correctly, ties counting 1/2. Computed from midranks in O(N log N).
double roc_auc(std::span<const double> scores, std::span<const int> labels);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

/// Row-wise argmax of an N × C probability matrix.
std::vector<int> argmax_rows(const Tensor& probs);

struct MetricsReport {
  /// One-vs-rest AUC per class; empty when the evaluated labels lack a
  /// positive or a negative for that class.
  std::vector<std::optional<double>> per_class_auc;
  /// Mean over the classes whose AUC is defined.
  std::optional<double> macro_auc;
  double accuracy = 0.0;
  std::size_t n_eval = 0;
  /// Config echo, serialized JSON text.
  std::string config_json = "{}";

  std::string to_json() const;
};

MetricsReport evaluate(const Tensor& probs, std::span<const int> labels, std::string config_json = "{}");

}  // namespace udagcn
