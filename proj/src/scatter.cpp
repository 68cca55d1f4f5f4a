#include "udagcn/scatter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace udagcn {

void EmbeddingPlot::validate() const {
  if (coords.rank() != 2 || coords.dim(1) != 2)
    throw DimensionError("EmbeddingPlot: coords must be N×2, got " + shape_str(coords.shape()));
  if (coords.dim(0) != labels.size() || labels.size() != domains.size())
    throw DimensionError("EmbeddingPlot: coords, labels and domains must have one entry per point");
  if (!coords.all_finite()) throw ContractError("EmbeddingPlot: non-finite coordinate");
}

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
constexpr double kSize = 480, kPad = 24;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

void export_scatter(const EmbeddingPlot& plot, const std::filesystem::path& svg_path) {
  plot.validate();
  const std::size_t n = plot.size();
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (n) {
    x0 = x1 = plot.coords[0];
    y0 = y1 = plot.coords[1];
    for (std::size_t i = 0; i < n; ++i) {
      x0 = std::min(x0, plot.coords[i * 2]);
      x1 = std::max(x1, plot.coords[i * 2]);
      y0 = std::min(y0, plot.coords[i * 2 + 1]);
      y1 = std::max(y1, plot.coords[i * 2 + 1]);
    }
  }
  const double span = std::max({x1 - x0, y1 - y0, 1e-12});
  auto px = [&](double v) { return kPad + (v - x0) / span * (kSize - 2 * kPad); };
  auto py = [&](double v) { return kSize - kPad - (v - y0) / span * (kSize - 2 * kPad); };

  std::ofstream svg(svg_path);
  if (!svg) throw std::runtime_error("cannot write " + svg_path.string());
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize
      << "\" viewBox=\"0 0 " << kSize << ' ' << kSize << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < n; ++i) {
    const std::string cx = fmt(px(plot.coords[i * 2])), cy = fmt(py(plot.coords[i * 2 + 1]));
    const char* color = kPalette[static_cast<std::size_t>(std::max(plot.labels[i], 0)) % std::size(kPalette)];
    if (plot.domains[i] == Domain::Source) {
      svg << "<circle class=\"marker source\" cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"3\" fill=\"" << color
          << "\"/>\n";
    } else {
      const double x = px(plot.coords[i * 2]), y = py(plot.coords[i * 2 + 1]);
      svg << "<path class=\"marker target\" d=\"M" << fmt(x - 4) << ' ' << cy << "H" << fmt(x + 4) << "M" << cx
          << ' ' << fmt(y - 4) << "V" << fmt(y + 4) << "\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
    }
  }
  svg << "</svg>\n";
  if (!svg) throw std::runtime_error("failed writing " + svg_path.string());

  std::filesystem::path csv_path = svg_path;
  csv_path.replace_extension(".csv");
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  csv << "x,y,label,domain\n";
  char buf[96];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d,%s\n", plot.coords[i * 2], plot.coords[i * 2 + 1], plot.labels[i],
                  domain_name(plot.domains[i]));
    csv << buf;
  }
  if (!csv) throw std::runtime_error("failed writing " + csv_path.string());
}

SeparationStats separation(const EmbeddingPlot& plot) {
  plot.validate();
  double intra = 0, inter = 0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < plot.size(); ++i)
    for (std::size_t j = i + 1; j < plot.size(); ++j) {
      const double d = std::hypot(plot.coords[i * 2] - plot.coords[j * 2],
                                  plot.coords[i * 2 + 1] - plot.coords[j * 2 + 1]);
      if (plot.labels[i] != plot.labels[j]) {
        inter += d;
        ++n_inter;
      } else if (plot.domains[i] != plot.domains[j]) {
        intra += d;
        ++n_intra;
      }
    }
  if (!n_intra || !n_inter) throw ContractError("separation: need cross-domain same-class and cross-class pairs");
  return {intra / static_cast<double>(n_intra), inter / static_cast<double>(n_inter)};
}

}  // namespace udagcn
