#include "udagcn/metrics.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

namespace udagcn {

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw DimensionError("roc_auc: " + std::to_string(scores.size()) + " scores but " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of positive ranks, ranks doubled so midranks stay integral.
  std::uint64_t rank2_pos = 0, n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t mid2 = i + j + 1;  // 2 × mean of 1-based ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] != 0) {
        rank2_pos += mid2;
        ++n_pos;
      }
    i = j;
  }
  const std::uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedAucError("roc_auc: labels contain a single class");
  // 2U = 2·R_pos − n_pos(n_pos+1); exact in integers.
  const std::uint64_t u2 = rank2_pos - n_pos * (n_pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw DimensionError("accuracy: length mismatch");
  if (predictions.empty()) throw ContractError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<int> argmax_rows(const Tensor& probs) {
  if (probs.rank() != 2) throw DimensionError("argmax_rows: expected N×C, got " + shape_str(probs.shape()));
  const std::size_t c = probs.dim(1);
  std::vector<int> out(probs.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = probs.data() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

MetricsReport evaluate(const Tensor& probs, std::span<const int> labels, std::string config_json) {
  const auto pred = argmax_rows(probs);
  MetricsReport r;
  r.accuracy = accuracy(pred, labels);
  r.n_eval = labels.size();
  r.config_json = std::move(config_json);
  const std::size_t c = probs.dim(1);
  std::vector<double> col(labels.size());
  std::vector<int> bin(labels.size());
  double sum = 0;
  std::size_t defined = 0;
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      col[i] = probs[i * c + k];
      bin[i] = labels[i] == static_cast<int>(k);
    }
    try {
      const double auc = roc_auc(col, bin);
      r.per_class_auc.emplace_back(auc);
      sum += auc;
      ++defined;
    } catch (const UndefinedAucError&) {
      r.per_class_auc.emplace_back(std::nullopt);
    }
  }
  if (defined) r.macro_auc = sum / static_cast<double>(defined);
  return r;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["accuracy"] = accuracy;
  j["macro_auc"] = macro_auc ? nlohmann::ordered_json(*macro_auc) : nlohmann::ordered_json(nullptr);
  auto& pc = j["per_class_auc"] = nlohmann::ordered_json::array();
  for (const auto& a : per_class_auc) pc.push_back(a ? nlohmann::ordered_json(*a) : nlohmann::ordered_json(nullptr));
  j["n_eval"] = n_eval;
  j["config"] = nlohmann::ordered_json::parse(config_json);
  return j.dump(2) + "\n";
}

}  // namespace udagcn
