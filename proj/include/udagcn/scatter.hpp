#pragma once

#include <filesystem>
#include <vector>

#include "udagcn/data.hpp"
#include "udagcn/tensor.hpp"

namespace udagcn {

struct EmbeddingPlot {
  Tensor coords;  // N × 2, finite
  std::vector<int> labels;
  std::vector<Domain> domains;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

/// Writes <path> as SVG (color = class; circle = source, plus = target) and
/// <path with .csv extension> with columns x,y,label,domain.
void export_scatter(const EmbeddingPlot& plot, const std::filesystem::path& svg_path);

/// Mean pairwise distance between same-class points of different domains,
/// and between points of different classes (any domain).
struct SeparationStats {
  double intra_class_cross_domain = 0;
  double inter_class = 0;
};
SeparationStats separation(const EmbeddingPlot& plot);

}  // namespace udagcn
