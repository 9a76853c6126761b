#include "fkd/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace fkd {

namespace {

using MatRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

struct Dims4 {
  int n, c, h, w;
  bool was_3d;
};

Dims4 as4d(const Tensor& t, const char* op) {
  if (t.ndim() == 3) return {1, t.dim(0), t.dim(1), t.dim(2), true};
  if (t.ndim() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), false};
  throw std::invalid_argument(std::string(op) + ": expected 3-d or 4-d input, got " +
                              shape_str(t.shape()));
}

Shape spatial_shape(const Dims4& d, int c, int h, int w) {
  if (d.was_3d) return {c, h, w};
  return {d.n, c, h, w};
}

// Scatter input patches into a [C*kh*kw, Ho*Wo] row-major column matrix.
void im2col(const double* src, int c, int h, int w, int kh, int kw, int stride,
            int pad, int ho, int wo, double* dst) {
  const int patch = ho * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        double* row = dst + ((static_cast<std::int64_t>(ci) * kh + ki) * kw + kj) * patch;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) {
            std::fill(row + oy * wo, row + (oy + 1) * wo, 0.0);
            continue;
          }
          const double* in_row = src + (static_cast<std::int64_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            row[oy * wo + ox] = (ix >= 0 && ix < w) ? in_row[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulate columns back into the image.
void col2im(const double* col, int c, int h, int w, int kh, int kw, int stride,
            int pad, int ho, int wo, double* dst) {
  const int patch = ho * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const double* row =
            col + ((static_cast<std::int64_t>(ci) * kh + ki) * kw + kj) * patch;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          double* out_row = dst + (static_cast<std::int64_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) out_row[ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.data()[i]);
  Tensor y = make_node(x.shape(), std::move(out), {x}, "relu");
  if (y.in_graph()) {
    auto xi = x.impl();
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    y.impl()->backward_fn = [xi, yi]() {
      xi->ensure_grad();
      for (size_t i = 0; i < yi->grad.size(); ++i) {
        if (xi->data[i] > 0.0) xi->grad[i] += yi->grad[i];
      }
    };
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor y = make_node(a.shape(), std::move(out), {a, b}, "add");
  if (y.in_graph()) {
    auto ai = a.impl();
    auto bi = b.impl();
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    y.impl()->backward_fn = [ai, bi, yi]() {
      if (ai->in_graph) {
        ai->ensure_grad();
        for (size_t i = 0; i < yi->grad.size(); ++i) ai->grad[i] += yi->grad[i];
      }
      if (bi->in_graph) {
        bi->ensure_grad();
        for (size_t i = 0; i < yi->grad.size(); ++i) bi->grad[i] += yi->grad[i];
      }
    };
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Tensor y = make_node(a.shape(), std::move(out), {a, b}, "sub");
  if (y.in_graph()) {
    auto ai = a.impl();
    auto bi = b.impl();
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    y.impl()->backward_fn = [ai, bi, yi]() {
      if (ai->in_graph) {
        ai->ensure_grad();
        for (size_t i = 0; i < yi->grad.size(); ++i) ai->grad[i] += yi->grad[i];
      }
      if (bi->in_graph) {
        bi->ensure_grad();
        for (size_t i = 0; i < yi->grad.size(); ++i) bi->grad[i] -= yi->grad[i];
      }
    };
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor y = make_node(a.shape(), std::move(out), {a, b}, "mul");
  if (y.in_graph()) {
    auto ai = a.impl();
    auto bi = b.impl();
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    y.impl()->backward_fn = [ai, bi, yi]() {
      if (ai->in_graph) {
        ai->ensure_grad();
        for (size_t i = 0; i < yi->grad.size(); ++i)
          ai->grad[i] += yi->grad[i] * bi->data[i];
      }
      if (bi->in_graph) {
        bi->ensure_grad();
        for (size_t i = 0; i < yi->grad.size(); ++i)
          bi->grad[i] += yi->grad[i] * ai->data[i];
      }
    };
  }
  return y;
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = c * x.data()[i];
  Tensor y = make_node(x.shape(), std::move(out), {x}, "scale");
  if (y.in_graph()) {
    auto xi = x.impl();
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    y.impl()->backward_fn = [xi, yi, c]() {
      xi->ensure_grad();
      for (size_t i = 0; i < yi->grad.size(); ++i) xi->grad[i] += c * yi->grad[i];
    };
  }
  return y;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y = make_node({1}, {s}, {x}, "sum");
  if (y.in_graph()) {
    auto xi = x.impl();
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    y.impl()->backward_fn = [xi, yi]() {
      xi->ensure_grad();
      const double g = yi->grad[0];
      for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += g;
    };
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " +
              shape_str(shape));
  Tensor y = make_node(std::move(shape), x.data(), {x}, "reshape");
  if (y.in_graph()) {
    auto xi = x.impl();
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    y.impl()->backward_fn = [xi, yi]() {
      xi->ensure_grad();
      for (size_t i = 0; i < yi->grad.size(); ++i) xi->grad[i] += yi->grad[i];
    };
  }
  return y;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  require(lo <= hi, "clamp: lo > hi");
  std::vector<double> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(hi, std::max(lo, x.data()[i]));
  Tensor y = make_node(x.shape(), std::move(out), {x}, "clamp");
  if (y.in_graph()) {
    auto xi = x.impl();
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    y.impl()->backward_fn = [xi, yi, lo, hi]() {
      xi->ensure_grad();
      for (size_t i = 0; i < yi->grad.size(); ++i) {
        if (xi->data[i] > lo && xi->data[i] < hi) xi->grad[i] += yi->grad[i];
      }
    };
  }
  return y;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "concat_channels: empty input list");
  Dims4 d0 = as4d(xs[0], "concat_channels");
  int c_total = 0;
  for (const auto& x : xs) {
    Dims4 d = as4d(x, "concat_channels");
    require(d.n == d0.n && d.h == d0.h && d.w == d0.w && d.was_3d == d0.was_3d,
            "concat_channels: spatial/batch mismatch " + shape_str(x.shape()) +
                " vs " + shape_str(xs[0].shape()));
    c_total += d.c;
  }
  const std::int64_t plane = static_cast<std::int64_t>(d0.h) * d0.w;
  std::vector<double> out(static_cast<size_t>(d0.n) * c_total * plane);
  std::vector<int> offsets(xs.size());
  int off_c = 0;
  for (size_t k = 0; k < xs.size(); ++k) {
    offsets[k] = off_c;
    const int ck = as4d(xs[k], "concat_channels").c;
    for (int n = 0; n < d0.n; ++n) {
      std::copy(xs[k].data().begin() + n * ck * plane,
                xs[k].data().begin() + (n + 1) * ck * plane,
                out.begin() + (static_cast<std::int64_t>(n) * c_total + off_c) * plane);
    }
    off_c += ck;
  }
  Tensor y = make_node(spatial_shape(d0, c_total, d0.h, d0.w), std::move(out),
                       xs, "concat_channels");
  if (y.in_graph()) {
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    std::vector<std::shared_ptr<TensorImpl>> parents;
    for (const auto& x : xs) parents.push_back(x.impl());
    const int n_batch = d0.n;
    y.impl()->backward_fn = [yi, parents, offsets, c_total, plane, n_batch]() {
      for (size_t k = 0; k < parents.size(); ++k) {
        auto& p = parents[k];
        if (!p->in_graph) continue;
        p->ensure_grad();
        const int ck = static_cast<int>(p->data.size() / (n_batch * plane));
        for (int n = 0; n < n_batch; ++n) {
          const double* g =
              yi->grad.data() +
              (static_cast<std::int64_t>(n) * c_total + offsets[k]) * plane;
          double* dst = p->grad.data() + static_cast<std::int64_t>(n) * ck * plane;
          for (std::int64_t i = 0; i < ck * plane; ++i) dst[i] += g[i];
        }
      }
    };
  }
  return y;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  return concat_channels(std::vector<Tensor>{a, b});
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding) {
  Dims4 d = as4d(input, "conv2d");
  require(kernel.ndim() == 4, "conv2d: kernel must be 4-d, got " +
                                  shape_str(kernel.shape()));
  const int c_out = kernel.dim(0), c_in = kernel.dim(1);
  const int kh = kernel.dim(2), kw = kernel.dim(3);
  require(c_in == d.c, "conv2d: kernel expects " + std::to_string(c_in) +
                           " input channels, input has " + std::to_string(d.c));
  require(bias.ndim() == 1 && bias.dim(0) == c_out,
          "conv2d: bias must have shape [" + std::to_string(c_out) + "]");
  require(stride >= 1 && padding >= 0, "conv2d: invalid stride/padding");
  require(kh <= d.h + 2 * padding && kw <= d.w + 2 * padding,
          "conv2d: kernel larger than padded input");
  const int ho = (d.h + 2 * padding - kh) / stride + 1;
  const int wo = (d.w + 2 * padding - kw) / stride + 1;
  const int kdim = c_in * kh * kw;
  const int patch = ho * wo;

  std::vector<double> out(static_cast<size_t>(d.n) * c_out * patch);
  std::vector<double> col(static_cast<size_t>(kdim) * patch);
  CMapRM wm(kernel.data().data(), c_out, kdim);
  for (int n = 0; n < d.n; ++n) {
    im2col(input.data().data() + static_cast<std::int64_t>(n) * d.c * d.h * d.w,
           d.c, d.h, d.w, kh, kw, stride, padding, ho, wo, col.data());
    MapRM om(out.data() + static_cast<std::int64_t>(n) * c_out * patch, c_out, patch);
    CMapRM cm(col.data(), kdim, patch);
    om.noalias() = wm * cm;
    for (int co = 0; co < c_out; ++co) om.row(co).array() += bias.data()[co];
  }

  Tensor y = make_node(spatial_shape(d, c_out, ho, wo), std::move(out),
                       {input, kernel, bias}, "conv2d");
  if (y.in_graph()) {
    auto xi = input.impl();
    auto ki = kernel.impl();
    auto bi = bias.impl();
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    y.impl()->backward_fn = [xi, ki, bi, yi, d, c_out, c_in, kh, kw, stride,
                             padding, ho, wo, kdim, patch]() {
      std::vector<double> col(static_cast<size_t>(kdim) * patch);
      CMapRM wm(ki->data.data(), c_out, kdim);
      for (int n = 0; n < d.n; ++n) {
        CMapRM gm(yi->grad.data() + static_cast<std::int64_t>(n) * c_out * patch,
                  c_out, patch);
        if (xi->in_graph) {
          xi->ensure_grad();
          MatRM dcol = wm.transpose() * gm;
          col2im(dcol.data(), d.c, d.h, d.w, kh, kw, stride, padding, ho, wo,
                 xi->grad.data() + static_cast<std::int64_t>(n) * d.c * d.h * d.w);
        }
        if (ki->in_graph || bi->in_graph) {
          im2col(xi->data.data() + static_cast<std::int64_t>(n) * d.c * d.h * d.w,
                 d.c, d.h, d.w, kh, kw, stride, padding, ho, wo, col.data());
          if (ki->in_graph) {
            ki->ensure_grad();
            MapRM dwm(ki->grad.data(), c_out, kdim);
            CMapRM cm(col.data(), kdim, patch);
            dwm.noalias() += gm * cm.transpose();
          }
          if (bi->in_graph) {
            bi->ensure_grad();
            for (int co = 0; co < c_out; ++co) bi->grad[co] += gm.row(co).sum();
          }
        } else if (bi->in_graph) {
          bi->ensure_grad();
          for (int co = 0; co < c_out; ++co) bi->grad[co] += gm.row(co).sum();
        }
      }
    };
  }
  return y;
}

Tensor transposed_conv2d(const Tensor& input, const Tensor& kernel,
                         const Tensor& bias, int stride, int padding) {
  Dims4 d = as4d(input, "transposed_conv2d");
  require(kernel.ndim() == 4, "transposed_conv2d: kernel must be 4-d");
  const int c_in = kernel.dim(0), c_out = kernel.dim(1);
  const int kh = kernel.dim(2), kw = kernel.dim(3);
  require(c_in == d.c, "transposed_conv2d: kernel expects " +
                           std::to_string(c_in) + " input channels, input has " +
                           std::to_string(d.c));
  require(bias.ndim() == 1 && bias.dim(0) == c_out,
          "transposed_conv2d: bias must have shape [" + std::to_string(c_out) +
              "]");
  require(stride >= 1 && padding >= 0, "transposed_conv2d: invalid stride/padding");
  const int ho = (d.h - 1) * stride - 2 * padding + kh;
  const int wo = (d.w - 1) * stride - 2 * padding + kw;
  require(ho > 0 && wo > 0, "transposed_conv2d: computed output size " +
                                std::to_string(ho) + "x" + std::to_string(wo) +
                                " is not positive");
  const int kdim = c_out * kh * kw;
  const int patch = d.h * d.w;  // input positions play the conv-output role

  std::vector<double> out(static_cast<size_t>(d.n) * c_out * ho * wo, 0.0);
  CMapRM wm(kernel.data().data(), c_in, kdim);
  for (int n = 0; n < d.n; ++n) {
    CMapRM xm(input.data().data() + static_cast<std::int64_t>(n) * c_in * patch,
              c_in, patch);
    MatRM cols = wm.transpose() * xm;  // [kdim, patch]
    double* o = out.data() + static_cast<std::int64_t>(n) * c_out * ho * wo;
    col2im(cols.data(), c_out, ho, wo, kh, kw, stride, padding, d.h, d.w, o);
    for (int co = 0; co < c_out; ++co) {
      double* plane = o + static_cast<std::int64_t>(co) * ho * wo;
      for (int i = 0; i < ho * wo; ++i) plane[i] += bias.data()[co];
    }
  }

  Tensor y = make_node(spatial_shape(d, c_out, ho, wo), std::move(out),
                       {input, kernel, bias}, "transposed_conv2d");
  if (y.in_graph()) {
    auto xi = input.impl();
    auto ki = kernel.impl();
    auto bi = bias.impl();
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    y.impl()->backward_fn = [xi, ki, bi, yi, d, c_in, c_out, kh, kw, stride,
                             padding, ho, wo, kdim, patch]() {
      std::vector<double> gcol(static_cast<size_t>(kdim) * patch);
      CMapRM wm(ki->data.data(), c_in, kdim);
      for (int n = 0; n < d.n; ++n) {
        const double* g =
            yi->grad.data() + static_cast<std::int64_t>(n) * c_out * ho * wo;
        im2col(g, c_out, ho, wo, kh, kw, stride, padding, d.h, d.w, gcol.data());
        CMapRM gcm(gcol.data(), kdim, patch);
        if (xi->in_graph) {
          xi->ensure_grad();
          MapRM dxm(xi->grad.data() + static_cast<std::int64_t>(n) * c_in * patch,
                    c_in, patch);
          dxm.noalias() += wm * gcm;
        }
        if (ki->in_graph) {
          ki->ensure_grad();
          CMapRM xm(xi->data.data() + static_cast<std::int64_t>(n) * c_in * patch,
                    c_in, patch);
          MapRM dwm(ki->grad.data(), c_in, kdim);
          dwm.noalias() += xm * gcm.transpose();
        }
        if (bi->in_graph) {
          bi->ensure_grad();
          for (int co = 0; co < c_out; ++co) {
            const double* plane = g + static_cast<std::int64_t>(co) * ho * wo;
            double s = 0.0;
            for (int i = 0; i < ho * wo; ++i) s += plane[i];
            bi->grad[co] += s;
          }
        }
      }
    };
  }
  return y;
}

Tensor maxpool2d(const Tensor& input, int window, int stride) {
  Dims4 d = as4d(input, "maxpool2d");
  require(window >= 1 && stride >= 1, "maxpool2d: invalid window/stride");
  require(window <= d.h && window <= d.w,
          "maxpool2d: window " + std::to_string(window) +
              " exceeds input " + std::to_string(d.h) + "x" + std::to_string(d.w));
  const int ho = (d.h - window) / stride + 1;
  const int wo = (d.w - window) / stride + 1;
  std::vector<double> out(static_cast<size_t>(d.n) * d.c * ho * wo);
  std::vector<std::int64_t> argmax(out.size());
  std::int64_t idx = 0;
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.c; ++c) {
      const double* plane =
          input.data().data() + (static_cast<std::int64_t>(n) * d.c + c) * d.h * d.w;
      const std::int64_t base = (static_cast<std::int64_t>(n) * d.c + c) * d.h * d.w;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox, ++idx) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_i = -1;
          for (int ky = 0; ky < window; ++ky) {
            for (int kx = 0; kx < window; ++kx) {
              const int iy = oy * stride + ky, ix = ox * stride + kx;
              const double v = plane[iy * d.w + ix];
              if (v > best) {
                best = v;
                best_i = base + iy * d.w + ix;
              }
            }
          }
          out[static_cast<size_t>(idx)] = best;
          argmax[static_cast<size_t>(idx)] = best_i;
        }
      }
    }
  }
  Tensor y = make_node(spatial_shape(d, d.c, ho, wo), std::move(out), {input},
                       "maxpool2d");
  if (y.in_graph()) {
    auto xi = input.impl();
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    y.impl()->backward_fn = [xi, yi, argmax = std::move(argmax)]() {
      xi->ensure_grad();
      for (size_t i = 0; i < yi->grad.size(); ++i)
        xi->grad[static_cast<size_t>(argmax[i])] += yi->grad[i];
    };
  }
  return y;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma,
                   const Tensor& beta, BatchNormMode mode,
                   BatchNormStats& stats, double eps) {
  Dims4 d = as4d(input, "batchnorm2d");
  require(gamma.ndim() == 1 && gamma.dim(0) == d.c &&
              beta.ndim() == 1 && beta.dim(0) == d.c,
          "batchnorm2d: gamma/beta must have length " + std::to_string(d.c));
  const std::int64_t plane = static_cast<std::int64_t>(d.h) * d.w;
  const std::int64_t m = static_cast<std::int64_t>(d.n) * plane;
  require(m > 0, "batchnorm2d: zero-size channel plane");
  if (stats.running_mean.empty()) {
    stats.running_mean.assign(static_cast<size_t>(d.c), 0.0);
    stats.running_var.assign(static_cast<size_t>(d.c), 1.0);
  }
  require(static_cast<int>(stats.running_mean.size()) == d.c,
          "batchnorm2d: running stats channel mismatch");

  std::vector<double> mean(static_cast<size_t>(d.c), 0.0);
  std::vector<double> var(static_cast<size_t>(d.c), 0.0);
  if (mode == BatchNormMode::kTrain) {
    for (int c = 0; c < d.c; ++c) {
      double s = 0.0;
      for (int n = 0; n < d.n; ++n) {
        const double* p =
            input.data().data() + (static_cast<std::int64_t>(n) * d.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) s += p[i];
      }
      mean[c] = s / static_cast<double>(m);
      double v = 0.0;
      for (int n = 0; n < d.n; ++n) {
        const double* p =
            input.data().data() + (static_cast<std::int64_t>(n) * d.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double t = p[i] - mean[c];
          v += t * t;
        }
      }
      var[c] = v / static_cast<double>(m);
      stats.running_mean[c] =
          stats.momentum * stats.running_mean[c] + (1.0 - stats.momentum) * mean[c];
      stats.running_var[c] =
          stats.momentum * stats.running_var[c] + (1.0 - stats.momentum) * var[c];
    }
  } else {
    mean = stats.running_mean;
    var = stats.running_var;
  }

  std::vector<double> invstd(static_cast<size_t>(d.c));
  for (int c = 0; c < d.c; ++c) invstd[c] = 1.0 / std::sqrt(var[c] + eps);

  std::vector<double> xhat(input.data().size());
  std::vector<double> out(input.data().size());
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.c; ++c) {
      const std::int64_t off = (static_cast<std::int64_t>(n) * d.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double xh = (input.data()[off + i] - mean[c]) * invstd[c];
        xhat[off + i] = xh;
        out[off + i] = gamma.data()[c] * xh + beta.data()[c];
      }
    }
  }

  Tensor y = make_node(input.shape(), std::move(out), {input, gamma, beta},
                       "batchnorm2d");
  if (y.in_graph()) {
    auto xi = input.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    const bool train = mode == BatchNormMode::kTrain;
    y.impl()->backward_fn = [xi, gi, bi, yi, d, plane, m, train,
                             xhat = std::move(xhat),
                             invstd = std::move(invstd)]() {
      for (int c = 0; c < d.c; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < d.n; ++n) {
          const std::int64_t off = (static_cast<std::int64_t>(n) * d.c + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            sum_dy += yi->grad[off + i];
            sum_dy_xhat += yi->grad[off + i] * xhat[off + i];
          }
        }
        if (gi->in_graph) {
          gi->ensure_grad();
          gi->grad[c] += sum_dy_xhat;
        }
        if (bi->in_graph) {
          bi->ensure_grad();
          bi->grad[c] += sum_dy;
        }
        if (xi->in_graph) {
          xi->ensure_grad();
          const double g = gi->data[c];
          for (int n = 0; n < d.n; ++n) {
            const std::int64_t off = (static_cast<std::int64_t>(n) * d.c + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              if (train) {
                xi->grad[off + i] +=
                    g * invstd[c] *
                    (yi->grad[off + i] - sum_dy / static_cast<double>(m) -
                     xhat[off + i] * sum_dy_xhat / static_cast<double>(m));
              } else {
                xi->grad[off + i] += g * invstd[c] * yi->grad[off + i];
              }
            }
          }
        }
      }
    };
  }
  return y;
}

Tensor fully_connected(const Tensor& input, const Tensor& weight,
                       const Tensor& bias) {
  require(weight.ndim() == 2, "fully_connected: weight must be 2-d");
  const int d_out = weight.dim(0), d_in = weight.dim(1);
  require(bias.ndim() == 1 && bias.dim(0) == d_out,
          "fully_connected: bias must have shape [" + std::to_string(d_out) + "]");
  const bool batched = input.ndim() == 2;
  require(input.ndim() == 1 || batched,
          "fully_connected: input must be 1-d or 2-d, got " +
              shape_str(input.shape()));
  const int n = batched ? input.dim(0) : 1;
  require(input.dim(batched ? 1 : 0) == d_in,
          "fully_connected: input features " +
              std::to_string(input.dim(batched ? 1 : 0)) + " != weight columns " +
              std::to_string(d_in));

  std::vector<double> out(static_cast<size_t>(n) * d_out);
  {
    CMapRM xm(input.data().data(), n, d_in);
    CMapRM wm(weight.data().data(), d_out, d_in);
    MapRM om(out.data(), n, d_out);
    om.noalias() = xm * wm.transpose();
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < d_out; ++c) om(r, c) += bias.data()[c];
  }
  Shape out_shape = batched ? Shape{n, d_out} : Shape{d_out};
  Tensor y = make_node(std::move(out_shape), std::move(out),
                       {input, weight, bias}, "fully_connected");
  if (y.in_graph()) {
    auto xi = input.impl();
    auto wi = weight.impl();
    auto bi = bias.impl();
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    y.impl()->backward_fn = [xi, wi, bi, yi, n, d_in, d_out]() {
      CMapRM gm(yi->grad.data(), n, d_out);
      if (xi->in_graph) {
        xi->ensure_grad();
        MapRM dxm(xi->grad.data(), n, d_in);
        CMapRM wm(wi->data.data(), d_out, d_in);
        dxm.noalias() += gm * wm;
      }
      if (wi->in_graph) {
        wi->ensure_grad();
        MapRM dwm(wi->grad.data(), d_out, d_in);
        CMapRM xm(xi->data.data(), n, d_in);
        dwm.noalias() += gm.transpose() * xm;
      }
      if (bi->in_graph) {
        bi->ensure_grad();
        for (int c = 0; c < d_out; ++c) bi->grad[c] += gm.col(c).sum();
      }
    };
  }
  return y;
}

Tensor global_avg_pool(const Tensor& input) {
  Dims4 d = as4d(input, "global_avg_pool");
  const std::int64_t plane = static_cast<std::int64_t>(d.h) * d.w;
  std::vector<double> out(static_cast<size_t>(d.n) * d.c);
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.c; ++c) {
      const double* p =
          input.data().data() + (static_cast<std::int64_t>(n) * d.c + c) * plane;
      double s = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) s += p[i];
      out[static_cast<size_t>(n) * d.c + c] = s / static_cast<double>(plane);
    }
  }
  Tensor y = make_node({d.n, d.c}, std::move(out), {input}, "global_avg_pool");
  if (y.in_graph()) {
    auto xi = input.impl();
    TensorImpl* yi = y.impl().get();  // raw: the closure must not own its node
    y.impl()->backward_fn = [xi, yi, d, plane]() {
      xi->ensure_grad();
      for (int n = 0; n < d.n; ++n) {
        for (int c = 0; c < d.c; ++c) {
          const double g =
              yi->grad[static_cast<size_t>(n) * d.c + c] / static_cast<double>(plane);
          double* dst =
              xi->grad.data() + (static_cast<std::int64_t>(n) * d.c + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) dst[i] += g;
        }
      }
    };
  }
  return y;
}

}  // namespace fkd
