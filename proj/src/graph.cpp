#include "udagcn/graph.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <Eigen/Dense>

namespace udagcn {

namespace {

double cosine(const double* u, const double* v, std::size_t d) {
  double uu = 0, vv = 0, uv = 0;
  for (std::size_t i = 0; i < d; ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  if (std::sqrt(uu) < kCosineEps || std::sqrt(vv) < kCosineEps) return 0.0;
  return std::clamp(uv / std::sqrt(uu * vv), -1.0, 1.0);
}

std::vector<double> column_mean(const Tensor& m, std::size_t rows, std::size_t cols) {
  std::vector<double> mu(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) mu[c] += m[r * cols + c];
  for (auto& v : mu) v /= static_cast<double>(rows);
  return mu;
}

// Scores of the centered rows against the leading principal direction,
// found from the w×w Gram matrix of the centered rows.
void principal_scores(const double* m, std::size_t w, std::size_t d, Tensor& out, std::size_t col) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Mat c = Eigen::Map<const Mat>(m, static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(d));
  c.rowwise() -= c.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Mat> eig(c * c.transpose());
  Eigen::VectorXd u = c.transpose() * eig.eigenvectors().col(static_cast<Eigen::Index>(w) - 1);
  Eigen::Index arg = 0;
  u.cwiseAbs().maxCoeff(&arg);
  if (u[arg] < 0) u = -u;
  for (std::size_t i = 0; i < w; ++i)
    out[i * 2 + col] = cosine(c.row(static_cast<Eigen::Index>(i)).data(), u.data(), d);
}

}  // namespace

Tensor similarity_scores(const Tensor& tex, const Tensor& str, ScoreAnchor anchor) {
  if (tex.rank() != 2) throw DimensionError("similarity_scores: tex must be w×d, got " + shape_str(tex.shape()));
  const std::size_t w = tex.dim(0);
  if (str.dim(0) != w)
    throw DimensionError("similarity_scores: " + std::to_string(w) + " texture rows but " +
                         std::to_string(str.dim(0)) + " structure rows");
  const std::size_t dt = tex.dim(1), ds = str.size() / w;
  Tensor out(Shape{w, 2});
  if (anchor == ScoreAnchor::Principal) {
    principal_scores(tex.data(), w, dt, out, 0);
    principal_scores(str.data(), w, ds, out, 1);
    return out;
  }
  const auto mt = column_mean(tex, w, dt);
  const auto ms = column_mean(str, w, ds);
  for (std::size_t i = 0; i < w; ++i) {
    out[i * 2] = cosine(tex.data() + i * dt, mt.data(), dt);
    out[i * 2 + 1] = cosine(str.data() + i * ds, ms.data(), ds);
  }
  return out;
}

namespace {

std::pair<Tensor, Tensor> stack_codes(std::span<const LatentCode> codes) {
  if (codes.empty()) throw ContractError("graph over an empty batch");
  std::vector<Tensor> tex, str;
  for (const auto& c : codes) {
    if (c.tex.shape() != codes[0].tex.shape() || c.str.shape() != codes[0].str.shape())
      throw DimensionError("graph: codes in a batch must share shapes");
    tex.push_back(c.tex.reshaped({1, c.tex.size()}));
    str.push_back(c.str.reshaped({1, c.str.size()}));
  }
  return {stack_rows(tex), stack_rows(str)};
}

}  // namespace

Tensor similarity_scores(std::span<const LatentCode> codes, ScoreAnchor anchor) {
  auto [tex, str] = stack_codes(codes);
  return similarity_scores(tex, str, anchor);
}

Adjacency build_adjacency(const Tensor& scores, double self_loop) {
  if (scores.rank() != 2) throw DimensionError("build_adjacency: expected w×h scores, got " + shape_str(scores.shape()));
  if (!(self_loop > 0.0) || !std::isfinite(self_loop))
    throw ConfigError("build_adjacency: self-loop weight must be positive and finite");
  const std::size_t w = scores.dim(0), h = scores.dim(1);
  Adjacency adj{Tensor(Shape{w, w}, 0.0), Tensor(Shape{w}, 0.0)};
  for (std::size_t i = 0; i < w; ++i) {
    adj.a_hat.at(i, i) = self_loop;
    for (std::size_t j = i + 1; j < w; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < h; ++k) s += scores[i * h + k] * scores[j * h + k];
      const double a = s > 0.0 ? s : 0.0;
      adj.a_hat.at(i, j) = a;
      adj.a_hat.at(j, i) = a;
    }
  }
  for (std::size_t i = 0; i < w; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < w; ++j) d += adj.a_hat.at(i, j);
    adj.degrees[i] = d;
  }
  return adj;
}

Tensor normalize_adjacency(const Tensor& a_hat, const Tensor& degrees) {
  const std::size_t w = degrees.size();
  if (a_hat.shape() != Shape{w, w})
    throw DimensionError("normalize_adjacency: adjacency " + shape_str(a_hat.shape()) + " vs " +
                         std::to_string(w) + " degrees");
  for (std::size_t i = 0; i < w; ++i)
    if (!(degrees[i] > 0.0))
      throw std::logic_error("normalize_adjacency: nonpositive degree at node " + std::to_string(i));
  Tensor s(Shape{w, w});
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < w; ++j) s.at(i, j) = a_hat.at(i, j) / std::sqrt(degrees[i] * degrees[j]);
  return s;
}

Tensor node_features(const Tensor& tex, const Tensor& str) {
  const std::size_t w = tex.dim(0);
  if (str.dim(0) != w) throw DimensionError("node_features: row counts differ");
  const std::size_t dt = tex.size() / w, ds = str.size() / w;
  Tensor x(Shape{w, dt + ds});
  for (std::size_t i = 0; i < w; ++i) {
    std::copy(tex.data() + i * dt, tex.data() + (i + 1) * dt, x.data() + i * (dt + ds));
    std::copy(str.data() + i * ds, str.data() + (i + 1) * ds, x.data() + i * (dt + ds) + dt);
  }
  return x;
}

InstanceGraph build_graph(const Tensor& tex, const Tensor& str, ScoreAnchor anchor, double self_loop) {
  InstanceGraph g;
  g.features = node_features(tex, str);
  g.scores = similarity_scores(tex, str, anchor);
  Adjacency adj = build_adjacency(g.scores, self_loop);
  g.normalized = normalize_adjacency(adj.a_hat, adj.degrees);
  g.a_hat = std::move(adj.a_hat);
  g.degrees = std::move(adj.degrees);
  return g;
}

InstanceGraph build_graph(std::span<const LatentCode> codes, ScoreAnchor anchor, double self_loop) {
  auto [tex, str] = stack_codes(codes);
  return build_graph(tex, str, anchor, self_loop);
}

Var gcn_layer(const Var& s, const Var& x, const Var& w, Activation act) {
  const Shape& ss = s.shape();
  if (ss.size() != 2 || ss[0] != ss[1] || x.value().rank() != 2 || ss[1] != x.dim(0))
    throw DimensionError("gcn_layer: adjacency " + shape_str(ss) + " does not match features " +
                         shape_str(x.shape()));
  Var z = matmul(s, matmul(x, w));
  return act == Activation::Relu ? relu(z) : z;
}

GcnParams::GcnParams(const std::vector<std::size_t>& dims, Rng& rng) {
  if (dims.size() < 2) throw ConfigError("gcn needs at least one layer");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    weights.emplace_back("gcn.w" + std::to_string(l),
                         fan_in_uniform({dims[l], dims[l + 1]}, dims[l], rng));
}

ParamRefs GcnParams::parameters() {
  ParamRefs out;
  for (auto& w : weights) out.push_back(&w);
  return out;
}

Var gcn_forward(Tape& tape, GcnParams& params, const Var& s, const Var& x) {
  Var h = x;
  for (std::size_t l = 0; l < params.layers(); ++l) {
    const bool last = l + 1 == params.layers();
    h = gcn_layer(s, h, tape.param(params.weights[l]), last ? Activation::None : Activation::Relu);
  }
  return h;
}

Tensor gcn_forward(GcnParams& params, const InstanceGraph& graph) {
  Tape tape;
  return gcn_forward(tape, params, tape.constant(graph.normalized), tape.constant(graph.features))
      .value();
}

namespace {

void write_matrix_csv(const Tensor& m, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  const std::size_t cols = m.rank() == 2 ? m.dim(1) : m.size();
  const std::size_t rows = m.size() / cols;
  char buf[32];
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m[r * cols + c]);
      os << (c ? "," : "") << buf;
    }
    os << '\n';
  }
}

}  // namespace

void dump_graph_csv(const InstanceGraph& graph, const std::filesystem::path& stem) {
  write_matrix_csv(graph.a_hat, stem.string() + "_a_hat.csv");
  write_matrix_csv(graph.degrees, stem.string() + "_degrees.csv");
  write_matrix_csv(graph.normalized, stem.string() + "_normalized.csv");
}

}  // namespace udagcn
