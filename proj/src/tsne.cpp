#include "udagcn/tsne.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

namespace udagcn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void TsneConfig::validate(std::size_t n) const {
  if (!(perplexity > 0)) throw ConfigError("tsne.perplexity must be positive");
  if (static_cast<double>(n) < 3.0 * perplexity)
    throw ConfigError("tsne: " + std::to_string(n) + " points is fewer than 3·perplexity");
  if (n > kTsneMaxPoints)
    throw ConfigError("tsne: " + std::to_string(n) + " points exceeds the exact-method cap of " +
                      std::to_string(kTsneMaxPoints));
  if (iterations == 0) throw ConfigError("tsne.iterations must be positive");
  if (!(learning_rate > 0)) throw ConfigError("tsne.learning_rate must be positive");
}

Tensor pairwise_sq_dists(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("pairwise_sq_dists: expected N×d");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out(Shape{n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const double t = x[i * d + k] - x[j * d + k];
        s += t * t;
      }
      out.at(i, j) = s;
      out.at(j, i) = s;
    }
  return out;
}

namespace {

// Row i of p_{j|i} at precision beta; returns the entropy in bits.
double row_affinities(const Tensor& d2, std::size_t i, double beta, double* row) {
  const std::size_t n = d2.dim(0);
  // Shift by the nearest distance so the largest weight is 1.
  double dmin = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    if (j != i) dmin = std::min(dmin, d2.at(i, j));
  double z = 0, wd = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) {
      row[j] = 0;
      continue;
    }
    const double dj = d2.at(i, j) - dmin;
    row[j] = std::exp(-beta * dj);
    z += row[j];
    wd += row[j] * dj;
  }
  for (std::size_t j = 0; j < n; ++j) row[j] /= z;
  // H = log z + β·E[d], in nats.
  return (std::log(z) + beta * wd / z) / std::log(2.0);
}

}  // namespace

Bandwidths calibrate_bandwidths(const Tensor& d2, double perplexity, double tol) {
  const std::size_t n = d2.dim(0);
  const double target = std::log2(perplexity);
  Bandwidths b{Tensor(Shape{n, n}, 0.0), std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    double* row = b.conditional.data() + i * n;
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double h = row_affinities(d2, i, beta, row);
    for (int it = 0; it < 200 && std::fabs(h - target) >= tol; ++it) {
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = (beta + lo) / 2.0;
      }
      h = row_affinities(d2, i, beta, row);
    }
    b.beta[i] = beta;
    b.entropy[i] = h;
  }
  return b;
}

Tensor joint_probabilities(const Tensor& cond) {
  const std::size_t n = cond.dim(0);
  Tensor p(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) p.at(i, j) = (cond.at(i, j) + cond.at(j, i)) / (2.0 * static_cast<double>(n));
  return p;
}

namespace {

constexpr double kTiny = 1e-12;

// Unnormalized Student-t kernel 1/(1+|yi−yj|²) with zero diagonal; returns its sum.
double student_kernel(const Tensor& y, Tensor& num) {
  const std::size_t n = y.dim(0);
  double z = 0;
  for (std::size_t i = 0; i < n; ++i) {
    num.at(i, i) = 0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = y[i * 2] - y[j * 2], dy = y[i * 2 + 1] - y[j * 2 + 1];
      const double q = 1.0 / (1.0 + dx * dx + dy * dy);
      num.at(i, j) = q;
      num.at(j, i) = q;
      z += 2 * q;
    }
  }
  return z;
}

Tensor initial_layout(const Tensor& x, const TsneConfig& cfg) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor y(Shape{n, 2});
  if (cfg.pca_init && d >= 2) {
    RowMat c = Eigen::Map<const RowMat>(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    c.rowwise() -= c.colwise().mean();
    Eigen::SelfAdjointEigenSolver<RowMat> eig(c.transpose() * c);
    // Eigenvalues ascend; the top two components are the last columns.
    RowMat proj = c * eig.eigenvectors().rightCols(2).rowwise().reverse();
    for (Eigen::Index k = 0; k < 2; ++k) {
      Eigen::Index arg = 0;
      proj.col(k).cwiseAbs().maxCoeff(&arg);
      if (proj(arg, k) < 0) proj.col(k) *= -1.0;
    }
    const double sd = std::sqrt(proj.col(0).squaredNorm() / static_cast<double>(n));
    if (sd > kTiny) {
      proj *= 1e-4 / sd;
      std::copy(proj.data(), proj.data() + n * 2, y.data());
      return y;
    }
  }
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> g(0.0, 1e-4);
  for (auto& v : y.values()) v = g(rng);
  return y;
}

}  // namespace

double tsne_kl(const Tensor& p, const Tensor& y) {
  const std::size_t n = p.dim(0);
  Tensor num(Shape{n, n});
  const double z = student_kernel(y, num);
  double kl = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && p.at(i, j) > 0)
        kl += p.at(i, j) * std::log(p.at(i, j) / std::max(num.at(i, j) / z, kTiny));
  return kl;
}

TsneResult tsne_embed(const Tensor& x, const TsneConfig& cfg) {
  if (x.rank() != 2) throw DimensionError("tsne_embed: expected N×d features, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  cfg.validate(n);
  TsneResult r;
  Bandwidths bw = calibrate_bandwidths(pairwise_sq_dists(x), cfg.perplexity, cfg.entropy_tol);
  r.entropy = std::move(bw.entropy);
  r.p = joint_probabilities(bw.conditional);
  for (auto& v : r.p.values()) v = std::max(v, kTiny);
  for (std::size_t i = 0; i < n; ++i) r.p.at(i, i) = 0;

  Tensor y = initial_layout(x, cfg);
  r.initial_kl = tsne_kl(r.p, y);
  Tensor update(Shape{n, 2}, 0.0), gains(Shape{n, 2}, 1.0), grad(Shape{n, 2}), num(Shape{n, n});
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const double exag = it < cfg.exaggeration_iters ? cfg.exaggeration : 1.0;
    const double momentum = it < cfg.momentum_switch ? 0.5 : 0.8;
    const double z = student_kernel(y, num);
    // dC/dy_i = 4 Σ_j (p_ij − q_ij) (1+|yi−yj|²)^{-1} (y_i − y_j)
    for (std::size_t i = 0; i < n; ++i) {
      double gx = 0, gy = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double w = (exag * r.p.at(i, j) - num.at(i, j) / z) * num.at(i, j);
        gx += w * (y[i * 2] - y[j * 2]);
        gy += w * (y[i * 2 + 1] - y[j * 2 + 1]);
      }
      grad[i * 2] = 4 * gx;
      grad[i * 2 + 1] = 4 * gy;
    }
    for (std::size_t k = 0; k < n * 2; ++k) {
      const bool same_sign = (grad[k] > 0) == (update[k] > 0);
      gains[k] = std::max(same_sign ? gains[k] * 0.8 : gains[k] + 0.2, 0.01);
      update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    // Keep the layout centered.
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y[i * 2];
      my += y[i * 2 + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i * 2] -= mx;
      y[i * 2 + 1] -= my;
    }
    if (it + 1 == cfg.exaggeration_iters) r.kl_after_exaggeration = tsne_kl(r.p, y);
  }
  r.final_kl = tsne_kl(r.p, y);
  if (cfg.exaggeration_iters >= cfg.iterations) r.kl_after_exaggeration = r.final_kl;
  r.coords = std::move(y);
  return r;
}

}  // namespace udagcn
