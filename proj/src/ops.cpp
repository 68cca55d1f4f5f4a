#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "udagcn/autodiff.hpp"

namespace udagcn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
}

// Elementwise unary op with derivative expressed through input and output.
template <typename Fwd, typename Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const auto xid = x.id();
  return x.tape().record(std::move(out), {xid}, [xid, deriv](const Tensor& g, Tape& t) {
    const Tensor& xv = t.value(xid);
    Tensor& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g[i] * deriv(xv[i]);
  });
}

// Spatial view shared by the image ops: batch count, channels, height, width.
struct ImageDims {
  std::size_t n, c, h, w;
};

ImageDims image_dims(const Var& x, const char* op) {
  const auto& s = x.shape();
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  throw DimensionError(std::string(op) + ": expected C×H×W or N×C×H×W, got " + shape_str(s));
}

Shape image_shape(bool batched, const ImageDims& d) {
  return batched ? Shape{d.n, d.c, d.h, d.w} : Shape{d.c, d.h, d.w};
}

// cols: (C·9) × (H·W); row = c·9 + ky·3 + kx, col = y·W + x.
void im2col(const double* img, std::size_t c, std::size_t h, std::size_t w, double* cols) {
  const std::size_t hw = h * w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = img + ch * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* row = cols + (ch * 9 + static_cast<std::size_t>(ky * 3 + kx)) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + ky - 1;
          double* dst = row + y * w;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sy) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + kx - 1;
            dst[x] = (sx < 0 || sx >= static_cast<long>(w)) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t c, std::size_t h, std::size_t w, double* img) {
  const std::size_t hw = h * w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double* plane = img + ch * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = cols + (ch * 9 + static_cast<std::size_t>(ky * 3 + kx)) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          double* dst = plane + static_cast<std::size_t>(sy) * w;
          const double* src = row + y * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + kx - 1;
            if (sx >= 0 && sx < static_cast<long>(w)) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

Var detach(const Var& x) { return x.tape().constant(x.value()); }

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const auto xid = x.id();
  return x.tape().record(std::move(out), {xid}, [xid](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi](const Tensor& g, Tape& t) {
    for (auto id : {ai, bi}) {
      if (!t.requires_grad(id)) continue;
      Tensor& gx = t.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi](const Tensor& g, Tape& t) {
    if (t.requires_grad(ai)) {
      Tensor& ga = t.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi](const Tensor& g, Tape& t) {
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    if (t.requires_grad(ai)) {
      Tensor& ga = t.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& x, double s) {
  return unary(x, [s](double v) { return s * v; }, [s](double) { return s; });
}

Var add_scalar(const Var& x, double s) {
  return unary(x, [s](double v) { return v + s; }, [](double) { return 1.0; });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

namespace {
double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& x) {
  return unary(x, stable_sigmoid, [](double v) {
    const double s = stable_sigmoid(v);
    return s * (1.0 - s);
  });
}

Var abs(const Var& x) {
  // Subgradient 0 at the kink.
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const auto xid = x.id();
  return x.tape().record(Tensor::scalar(s), {xid}, [xid](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(xid);
    for (auto& v : gx.values()) v += g[0];
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.value().rank() != 2 || b.value().rank() != 2)
    throw DimensionError("matmul: expected matrices, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  Tensor out(Shape{m, n});
  MapMat(out.data(), m, n).noalias() =
      CMapMat(a.value().data(), m, k) * CMapMat(b.value().data(), k, n);
  const auto ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi, m, k, n](const Tensor& g, Tape& t) {
    CMapMat G(g.data(), m, n);
    if (t.requires_grad(ai)) {
      MapMat(t.grad_buffer(ai).data(), m, k).noalias() +=
          G * CMapMat(t.value(bi).data(), k, n).transpose();
    }
    if (t.requires_grad(bi)) {
      MapMat(t.grad_buffer(bi).data(), k, n).noalias() +=
          CMapMat(t.value(ai).data(), m, k).transpose() * G;
    }
  });
}

Var add_row_bias(const Var& x, const Var& b) {
  require_same_tape(x, b);
  if (x.value().rank() != 2 || b.value().rank() != 1 || b.dim(0) != x.dim(1))
    throw DimensionError("add_row_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += b.value()[c];
  const auto xi = x.id(), bi = b.id();
  return x.tape().record(std::move(out), {xi, bi}, [xi, bi, rows, cols](const Tensor& g, Tape& t) {
    if (t.requires_grad(xi)) {
      Tensor& gx = t.grad_buffer(xi);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad_buffer(bi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
    }
  });
}

Var add_channel_bias(const Var& x, const Var& b) {
  require_same_tape(x, b);
  const ImageDims d = image_dims(x, "add_channel_bias");
  if (b.value().rank() != 1 || b.dim(0) != d.c)
    throw DimensionError("add_channel_bias: " + shape_str(x.shape()) + " + " +
                         shape_str(b.shape()));
  const std::size_t hw = d.h * d.w;
  Tensor out = x.value();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      double* p = out.data() + (n * d.c + c) * hw;
      const double bias = b.value()[c];
      for (std::size_t i = 0; i < hw; ++i) p[i] += bias;
    }
  const auto xi = x.id(), bi = b.id();
  return x.tape().record(std::move(out), {xi, bi}, [xi, bi, d, hw](const Tensor& g, Tape& t) {
    if (t.requires_grad(xi)) {
      Tensor& gx = t.grad_buffer(xi);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad_buffer(bi);
      for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t c = 0; c < d.c; ++c) {
          const double* p = g.data() + (n * d.c + c) * hw;
          double s = 0.0;
          for (std::size_t i = 0; i < hw; ++i) s += p[i];
          gb[c] += s;
        }
    }
  });
}

Var conv2d(const Var& x, const Var& kernels) {
  require_same_tape(x, kernels);
  const ImageDims d = image_dims(x, "conv2d");
  const bool batched = x.value().rank() == 4;
  const auto& ks = kernels.shape();
  if (ks.size() != 4 || ks[2] != 3 || ks[3] != 3)
    throw DimensionError("conv2d: kernels must be C_out×C_in×3×3, got " + shape_str(ks));
  if (ks[1] != d.c)
    throw DimensionError("conv2d: input has " + std::to_string(d.c) + " channels, kernels expect " +
                         std::to_string(ks[1]));
  const std::size_t cout = ks[0], rows = d.c * 9, hw = d.h * d.w;

  ImageDims od = d;
  od.c = cout;
  Tensor out(image_shape(batched, od));
  std::vector<double> cols(rows * hw);
  CMapMat K(kernels.value().data(), cout, rows);
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(x.value().data() + n * d.c * hw, d.c, d.h, d.w, cols.data());
    MapMat(out.data() + n * cout * hw, cout, hw).noalias() = K * CMapMat(cols.data(), rows, hw);
  }

  const auto xi = x.id(), ki = kernels.id();
  return x.tape().record(
      std::move(out), {xi, ki}, [xi, ki, d, cout, rows, hw](const Tensor& g, Tape& t) {
        const bool gx_needed = t.requires_grad(xi), gk_needed = t.requires_grad(ki);
        std::vector<double> cols(rows * hw);
        std::vector<double> dcols(gx_needed ? rows * hw : 0);
        CMapMat K(t.value(ki).data(), cout, rows);
        for (std::size_t n = 0; n < d.n; ++n) {
          CMapMat G(g.data() + n * cout * hw, cout, hw);
          if (gk_needed) {
            im2col(t.value(xi).data() + n * d.c * hw, d.c, d.h, d.w, cols.data());
            MapMat(t.grad_buffer(ki).data(), cout, rows).noalias() +=
                G * CMapMat(cols.data(), rows, hw).transpose();
          }
          if (gx_needed) {
            MapMat(dcols.data(), rows, hw).noalias() = K.transpose() * G;
            col2im_add(dcols.data(), d.c, d.h, d.w, t.grad_buffer(xi).data() + n * d.c * hw);
          }
        }
      });
}

Var maxpool2d(const Var& x) {
  const ImageDims d = image_dims(x, "maxpool2d");
  if (d.h % 2 || d.w % 2)
    throw DimensionError("maxpool2d: spatial extents must be even, got " + shape_str(x.shape()));
  const bool batched = x.value().rank() == 4;
  ImageDims od{d.n, d.c, d.h / 2, d.w / 2};
  Tensor out(image_shape(batched, od));
  std::vector<std::size_t> argmax(out.size());
  const Tensor& xv = x.value();
  std::size_t o = 0;
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const std::size_t base = p * d.h * d.w;
    for (std::size_t y = 0; y < od.h; ++y)
      for (std::size_t xx = 0; xx < od.w; ++xx, ++o) {
        const std::size_t cells[4] = {base + (2 * y) * d.w + 2 * xx, base + (2 * y) * d.w + 2 * xx + 1,
                                      base + (2 * y + 1) * d.w + 2 * xx,
                                      base + (2 * y + 1) * d.w + 2 * xx + 1};
        std::size_t best = cells[0];
        for (int k = 1; k < 4; ++k)
          if (xv[cells[k]] > xv[best]) best = cells[k];
        argmax[o] = best;
        out[o] = xv[best];
      }
  }
  const auto xi = x.id();
  return x.tape().record(std::move(out), {xi},
                         [xi, argmax = std::move(argmax)](const Tensor& g, Tape& t) {
                           Tensor& gx = t.grad_buffer(xi);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                         });
}

Var upsample2x(const Var& x) {
  const ImageDims d = image_dims(x, "upsample2x");
  const bool batched = x.value().rank() == 4;
  ImageDims od{d.n, d.c, d.h * 2, d.w * 2};
  Tensor out(image_shape(batched, od));
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < d.n * d.c; ++p)
    for (std::size_t y = 0; y < od.h; ++y)
      for (std::size_t xx = 0; xx < od.w; ++xx)
        out[(p * od.h + y) * od.w + xx] = xv[(p * d.h + y / 2) * d.w + xx / 2];
  const auto xi = x.id();
  return x.tape().record(std::move(out), {xi}, [xi, d, od](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(xi);
    for (std::size_t p = 0; p < d.n * d.c; ++p)
      for (std::size_t y = 0; y < od.h; ++y)
        for (std::size_t xx = 0; xx < od.w; ++xx)
          gx[(p * d.h + y / 2) * d.w + xx / 2] += g[(p * od.h + y) * od.w + xx];
  });
}

Var global_avg_pool(const Var& x) {
  if (x.value().rank() != 4)
    throw DimensionError("global_avg_pool: expected N×C×H×W, got " + shape_str(x.shape()));
  const ImageDims d = image_dims(x, "global_avg_pool");
  const std::size_t hw = d.h * d.w;
  Tensor out(Shape{d.n, d.c});
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += x.value()[p * hw + i];
    out[p] = s / static_cast<double>(hw);
  }
  const auto xi = x.id();
  return x.tape().record(std::move(out), {xi}, [xi, d, hw](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(xi);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t p = 0; p < d.n * d.c; ++p)
      for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += g[p] * inv;
  });
}

Var tile_spatial(const Var& x, std::size_t height, std::size_t width) {
  if (x.value().rank() != 2)
    throw DimensionError("tile_spatial: expected N×C, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = height * width;
  Tensor out(Shape{n, c, height, width});
  for (std::size_t p = 0; p < n * c; ++p)
    std::fill(out.data() + p * hw, out.data() + (p + 1) * hw, x.value()[p]);
  const auto xi = x.id();
  return x.tape().record(std::move(out), {xi}, [xi, n, c, hw](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(xi);
    for (std::size_t p = 0; p < n * c; ++p) {
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += g[p * hw + i];
      gx[p] += s;
    }
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of nothing");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range for " + shape_str(s0));
  std::size_t outer = 1, inner = 1, total = 0;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p);
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok)
      throw DimensionError("concat: incompatible shapes " + shape_str(s0) + " and " + shape_str(s));
    ids.push_back(p.id());
    widths.push_back(s[axis] * inner);
    total += s[axis];
  }
  Shape os = s0;
  os[axis] = total;
  Tensor out(os);
  const std::size_t row = total * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const double* src = parts[k].value().data() + o * widths[k];
      std::copy(src, src + widths[k], out.data() + o * row + off);
      off += widths[k];
    }
  }
  return parts[0].tape().record(
      std::move(out), ids, [ids, widths, outer, row](const Tensor& g, Tape& t) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.requires_grad(ids[k])) {
            Tensor& gx = t.grad_buffer(ids[k]);
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < widths[k]; ++i)
                gx[o * widths[k] + i] += g[o * row + off + i];
          }
          off += widths[k];
        }
      });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  Tensor out = x.value().slice(begin, end);
  const std::size_t stride = x.size() / x.dim(0);
  const auto xi = x.id();
  return x.tape().record(std::move(out), {xi}, [xi, begin, stride](const Tensor& g, Tape& t) {
    Tensor& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * stride + i] += g[i];
  });
}

Var flatten_rows(const Var& x) {
  const std::size_t n = x.dim(0);
  return reshape(x, Shape{n, x.size() / n});
}

Var cosine_rows(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.value().rank() != 2) throw DimensionError("cosine_rows: expected N×d, got " + shape_str(a.shape()));
  require_same_shape(a, b, "cosine_rows");
  const std::size_t n = a.dim(0), d = a.dim(1);
  Tensor out(Shape{n});
  // Per row: norms, saved for backward. A zero product marks a degenerate row.
  std::vector<double> na(n), nb(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* u = a.value().data() + r * d;
    const double* v = b.value().data() + r * d;
    double uu = 0, vv = 0, uv = 0;
    for (std::size_t i = 0; i < d; ++i) {
      uu += u[i] * u[i];
      vv += v[i] * v[i];
      uv += u[i] * v[i];
    }
    na[r] = std::sqrt(uu);
    nb[r] = std::sqrt(vv);
    if (na[r] < kCosineEps || nb[r] < kCosineEps) {
      na[r] = nb[r] = 0.0;
      out[r] = 0.0;
    } else {
      // sqrt(uu·vv) rather than na·nb keeps cos(z,z) = 1 and cos(z,−z) = −1 exact.
      out[r] = std::clamp(uv / std::sqrt(uu * vv), -1.0, 1.0);
    }
  }
  const auto ai = a.id(), bi = b.id();
  Tensor cosv = out;
  return a.tape().record(
      std::move(out), {ai, bi},
      [ai, bi, n, d, na = std::move(na), nb = std::move(nb), cosv = std::move(cosv)](
          const Tensor& g, Tape& t) {
        const Tensor& av = t.value(ai);
        const Tensor& bv = t.value(bi);
        const bool ga_needed = t.requires_grad(ai), gb_needed = t.requires_grad(bi);
        for (std::size_t r = 0; r < n; ++r) {
          if (na[r] == 0.0) continue;
          const double inv = 1.0 / (na[r] * nb[r]);
          const double c = cosv[r];
          const double* u = av.data() + r * d;
          const double* v = bv.data() + r * d;
          if (ga_needed) {
            double* gu = t.grad_buffer(ai).data() + r * d;
            for (std::size_t i = 0; i < d; ++i)
              gu[i] += g[r] * (v[i] * inv - c * u[i] / (na[r] * na[r]));
          }
          if (gb_needed) {
            double* gv = t.grad_buffer(bi).data() + r * d;
            for (std::size_t i = 0; i < d; ++i)
              gv[i] += g[r] * (u[i] * inv - c * v[i] / (nb[r] * nb[r]));
          }
        }
      });
}

Var cosine_similarity(const Var& u, const Var& v) {
  if (u.size() != v.size())
    throw DimensionError("cosine_similarity: sizes differ: " + shape_str(u.shape()) + " vs " +
                         shape_str(v.shape()));
  const Shape row{1, u.size()};
  return cosine_rows(reshape(u, row), reshape(v, row));
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  std::size_t n = 0, c = 0;
  if (lv.rank() == 1) {
    n = 1;
    c = lv.dim(0);
  } else if (lv.rank() == 2) {
    n = lv.dim(0);
    c = lv.dim(1);
  } else {
    throw DimensionError("softmax_cross_entropy: expected C or N×C logits, got " +
                         shape_str(lv.shape()));
  }
  if (labels.size() != n)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(n) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  Tensor probs(Shape{n, c});
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c)
      throw IndexError("label " + std::to_string(labels[r]) + " out of range for " +
                       std::to_string(c) + " classes");
    const double* z = lv.data() + r * c;
    const double mx = *std::max_element(z, z + c);
    double se = 0.0;
    for (std::size_t k = 0; k < c; ++k) se += std::exp(z[k] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t k = 0; k < c; ++k) probs[r * c + k] = std::exp(z[k] - lse);
    loss += lse - z[labels[r]];
  }
  loss /= static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  const auto li = logits.id();
  return logits.tape().record(
      Tensor::scalar(loss), {li},
      [li, n, c, lab = std::move(lab), probs = std::move(probs)](const Tensor& g, Tape& t) {
        Tensor& gl = t.grad_buffer(li);
        const double s = g[0] / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t k = 0; k < c; ++k)
            gl[r * c + k] += s * (probs[r * c + k] - (static_cast<int>(k) == lab[r] ? 1.0 : 0.0));
      });
}

Var binary_cross_entropy(const Var& p, std::span<const double> targets) {
  const Tensor& pv = p.value();
  if (targets.size() != pv.size())
    throw DimensionError("binary_cross_entropy: " + std::to_string(pv.size()) +
                         " probabilities but " + std::to_string(targets.size()) + " targets");
  const std::size_t n = pv.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp(pv[i], kProbClamp, 1.0 - kProbClamp);
    loss -= targets[i] * std::log(q) + (1.0 - targets[i]) * std::log(1.0 - q);
  }
  loss /= static_cast<double>(n);
  std::vector<double> tg(targets.begin(), targets.end());
  const auto pi = p.id();
  return p.tape().record(Tensor::scalar(loss), {pi},
                         [pi, n, tg = std::move(tg)](const Tensor& g, Tape& t) {
                           const Tensor& pv = t.value(pi);
                           Tensor& gp = t.grad_buffer(pi);
                           const double s = g[0] / static_cast<double>(n);
                           for (std::size_t i = 0; i < n; ++i) {
                             const double q = pv[i];
                             if (q <= kProbClamp || q >= 1.0 - kProbClamp) continue;
                             gp[i] += s * (-tg[i] / q + (1.0 - tg[i]) / (1.0 - q));
                           }
                         });
}

Var binary_cross_entropy(const Var& p, double target) {
  std::vector<double> t(p.size(), target);
  return binary_cross_entropy(p, t);
}

Var binary_cross_entropy_logits(const Var& z, std::span<const double> targets) {
  const Tensor& zv = z.value();
  if (targets.size() != zv.size())
    throw DimensionError("binary_cross_entropy_logits: " + std::to_string(zv.size()) +
                         " logits but " + std::to_string(targets.size()) + " targets");
  const std::size_t n = zv.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    loss += std::max(zv[i], 0.0) - targets[i] * zv[i] + std::log1p(std::exp(-std::fabs(zv[i])));
  loss /= static_cast<double>(n);
  std::vector<double> tg(targets.begin(), targets.end());
  const auto zi = z.id();
  return z.tape().record(Tensor::scalar(loss), {zi},
                         [zi, n, tg = std::move(tg)](const Tensor& g, Tape& t) {
                           const Tensor& zv = t.value(zi);
                           Tensor& gz = t.grad_buffer(zi);
                           const double s = g[0] / static_cast<double>(n);
                           for (std::size_t i = 0; i < n; ++i)
                             gz[i] += s * (1.0 / (1.0 + std::exp(-zv[i])) - tg[i]);
                         });
}

Var binary_cross_entropy_logits(const Var& z, double target) {
  std::vector<double> t(z.size(), target);
  return binary_cross_entropy_logits(z, t);
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax_rows: expected N×C, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double* z = logits.data() + r * c;
    const double mx = *std::max_element(z, z + c);
    double se = 0.0;
    for (std::size_t k = 0; k < c; ++k) se += std::exp(z[k] - mx);
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] = std::exp(z[k] - mx) / se;
  }
  return out;
}

}  // namespace udagcn
