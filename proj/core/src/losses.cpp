#include "fkd/losses.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "fkd/ops.hpp"

namespace fkd {

namespace {

struct MapDims {
  int n, k, h, w;
};

MapDims label_dims(const Tensor& t, const char* op) {
  if (t.ndim() == 3) return {1, t.dim(0), t.dim(1), t.dim(2)};
  if (t.ndim() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
  throw std::invalid_argument(std::string(op) + ": expected 3-d or 4-d tensor, got " +
                              shape_str(t.shape()));
}

}  // namespace

NegativeMask build_negative_mask(const Tensor& labelmap, double keep_rate,
                                 std::uint64_t seed) {
  if (!(keep_rate > 0.0 && keep_rate <= 1.0)) {
    throw std::invalid_argument("build_negative_mask: keep_rate must be in (0,1]");
  }
  MapDims d = label_dims(labelmap, "build_negative_mask");
  const int background = d.k - 1;
  const std::int64_t plane = static_cast<std::int64_t>(d.h) * d.w;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> m(static_cast<size_t>(d.n) * plane, 0.0);
  std::int64_t kept = 0;
  for (int n = 0; n < d.n; ++n) {
    const double* lm = labelmap.data().data() +
                       static_cast<std::int64_t>(n) * d.k * plane;
    double* mm = m.data() + static_cast<std::int64_t>(n) * plane;
    for (std::int64_t p = 0; p < plane; ++p) {
      const bool is_background = lm[background * plane + p] > 0.5;
      if (!is_background || unit(rng) < keep_rate) {
        mm[p] = 1.0;
        ++kept;
      }
    }
  }
  Shape shape = labelmap.ndim() == 3 ? Shape{d.h, d.w} : Shape{d.n, d.h, d.w};
  return {Tensor::from(std::move(shape), std::move(m)), kept};
}

Tensor classification_loss(const Tensor& logits, const Tensor& labelmap,
                           const NegativeMask& mask, bool mean_over_kept) {
  MapDims d = label_dims(logits, "classification_loss");
  if (logits.shape() != labelmap.shape()) {
    throw std::invalid_argument("classification_loss: logits " +
                                shape_str(logits.shape()) + " vs labels " +
                                shape_str(labelmap.shape()));
  }
  const std::int64_t plane = static_cast<std::int64_t>(d.h) * d.w;
  if (mask.m.numel() != static_cast<std::int64_t>(d.n) * plane) {
    throw std::invalid_argument("classification_loss: mask size mismatch");
  }
  // one-hot validation
  for (int n = 0; n < d.n; ++n) {
    const double* lm = labelmap.data().data() +
                       static_cast<std::int64_t>(n) * d.k * plane;
    for (std::int64_t p = 0; p < plane; ++p) {
      double s = 0.0;
      for (int k = 0; k < d.k; ++k) {
        const double v = lm[k * plane + p];
        if (v != 0.0 && v != 1.0) {
          throw std::invalid_argument("classification_loss: labels must be 0/1");
        }
        s += v;
      }
      if (s != 1.0) {
        throw std::invalid_argument(
            "classification_loss: labels must be one-hot per pixel");
      }
    }
  }

  const double denom =
      mean_over_kept ? std::max<std::int64_t>(1, mask.kept_pixels) : 1.0;
  // softmax probabilities are reused by the backward closure
  auto softmax = std::make_shared<std::vector<double>>(logits.data().size());
  double loss = 0.0;
  for (int n = 0; n < d.n; ++n) {
    const std::int64_t base = static_cast<std::int64_t>(n) * d.k * plane;
    const double* lg = logits.data().data() + base;
    const double* lm = labelmap.data().data() + base;
    const double* mm = mask.m.data().data() + static_cast<std::int64_t>(n) * plane;
    double* sm = softmax->data() + base;
    for (std::int64_t p = 0; p < plane; ++p) {
      double mx = lg[p];
      for (int k = 1; k < d.k; ++k) mx = std::max(mx, lg[k * plane + p]);
      double z = 0.0;
      for (int k = 0; k < d.k; ++k) {
        const double e = std::exp(lg[k * plane + p] - mx);
        sm[k * plane + p] = e;
        z += e;
      }
      for (int k = 0; k < d.k; ++k) sm[k * plane + p] /= z;
      if (mm[p] == 0.0) continue;
      for (int k = 0; k < d.k; ++k) {
        if (lm[k * plane + p] == 1.0) {
          loss -= std::log(sm[k * plane + p]);
        }
      }
    }
  }
  loss /= denom;

  Tensor out = make_node({1}, {loss}, {logits}, "classification_loss");
  if (out.in_graph()) {
    auto li = logits.impl();
    auto gi = labelmap.impl();
    auto mi = mask.m.impl();
    TensorImpl* oi = out.impl().get();  // raw: the closure must not own its node
    out.impl()->backward_fn = [li, gi, mi, oi, d, plane, denom, softmax]() {
      li->ensure_grad();
      const double g = oi->grad[0] / denom;
      for (int n = 0; n < d.n; ++n) {
        const std::int64_t base = static_cast<std::int64_t>(n) * d.k * plane;
        const double* mm = mi->data.data() + static_cast<std::int64_t>(n) * plane;
        for (std::int64_t p = 0; p < plane; ++p) {
          if (mm[p] == 0.0) continue;
          for (int k = 0; k < d.k; ++k) {
            li->grad[base + k * plane + p] +=
                g * ((*softmax)[base + k * plane + p] - gi->data[base + k * plane + p]);
          }
        }
      }
    };
  }
  return out;
}

Tensor coordinate_loss(const Tensor& predicted, const Tensor& target,
                       const Tensor& visibility) {
  const bool batched = predicted.ndim() == 2;
  if (predicted.shape() != target.shape()) {
    throw std::invalid_argument("coordinate_loss: shape mismatch");
  }
  const int n = batched ? predicted.dim(0) : 1;
  const int two_l = batched ? predicted.dim(1) : predicted.dim(0);
  if (two_l % 2 != 0) {
    throw std::invalid_argument("coordinate_loss: coordinate vector length must be even");
  }
  const int l = two_l / 2;
  if (visibility.numel() != static_cast<std::int64_t>(n) * l) {
    throw std::invalid_argument("coordinate_loss: visibility length mismatch");
  }
  // expand per-keypoint visibility to per-coordinate gate
  std::vector<double> vexp(static_cast<size_t>(n) * two_l);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < l; ++k) {
      const double v = visibility.data()[static_cast<size_t>(i) * l + k];
      vexp[static_cast<size_t>(i) * two_l + 2 * k] = v;
      vexp[static_cast<size_t>(i) * two_l + 2 * k + 1] = v;
    }
  Tensor gate = Tensor::from(predicted.shape(), std::move(vexp));
  Tensor diff = sub(predicted, target);
  Tensor loss = sum(mul(gate, mul(diff, diff)));
  return batched && n > 1 ? scale(loss, 1.0 / n) : loss;
}

Tensor pose_loss(const Tensor& predicted, const Tensor& target) {
  if (predicted.shape() != target.shape()) {
    throw std::invalid_argument("pose_loss: shape mismatch");
  }
  const bool batched = predicted.ndim() == 2;
  const int n = batched ? predicted.dim(0) : 1;
  Tensor diff = sub(predicted, target);
  Tensor loss = sum(mul(diff, diff));
  return batched && n > 1 ? scale(loss, 1.0 / n) : loss;
}

Tensor visibility_loss(const Tensor& predicted, const Tensor& target) {
  if (predicted.shape() != target.shape()) {
    throw std::invalid_argument("visibility_loss: shape mismatch");
  }
  const bool batched = predicted.ndim() == 2;
  const int n = batched ? predicted.dim(0) : 1;
  Tensor diff = sub(predicted, target);
  Tensor loss = sum(mul(diff, diff));
  return batched && n > 1 ? scale(loss, 1.0 / n) : loss;
}

LossBreakdown total_loss(const Tensor& l0, const Tensor& l1, const Tensor& l2,
                         const Tensor& l3,
                         const std::array<double, 4>& weights) {
  LossBreakdown b;
  b.l0 = l0;
  b.l1 = l1;
  b.l2 = l2;
  b.l3 = l3;
  b.total = add(add(scale(l0, weights[0]), scale(l1, weights[1])),
                add(scale(l2, weights[2]), scale(l3, weights[3])));
  return b;
}

}  // namespace fkd
