#include "doctest.h"

#include <cmath>
#include <random>

#include "fkd/gradcheck.hpp"
#include "fkd/losses.hpp"
#include "fkd/ops.hpp"
#include "fkd/rng.hpp"

using namespace fkd;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool rg = false) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(data), rg);
}

// one-hot labelmap with the given class at every pixel
Tensor uniform_labels(int k, int h, int w, int cls) {
  Tensor t = Tensor::zeros({k, h, w});
  for (int p = 0; p < h * w; ++p) t.data()[cls * h * w + p] = 1.0;
  return t;
}

}  // namespace

TEST_CASE("classification loss uniform logits give ln 2") {
  Tensor logits = Tensor::zeros({2, 1, 1});
  Tensor labels = uniform_labels(2, 1, 1, 0);
  NegativeMask mask{Tensor::full({1, 1}, 1.0), 1};
  Tensor loss = classification_loss(logits, labels, mask);
  CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("classification loss zero mask means zero loss and gradient") {
  auto rng = make_rng(60, RngStream::kTest);
  Tensor logits = random_tensor({3, 4, 4}, rng, true);
  Tensor labels = uniform_labels(3, 4, 4, 2);
  NegativeMask mask{Tensor::zeros({4, 4}), 0};
  Tensor loss = classification_loss(logits, labels, mask);
  CHECK(loss.item() == 0.0);
  loss.backward();
  for (double g : logits.grad()) CHECK(g == 0.0);
}

TEST_CASE("classification loss gradient zero exactly at masked pixels") {
  auto rng = make_rng(61, RngStream::kTest);
  Tensor logits = random_tensor({3, 2, 2}, rng, true);
  Tensor labels = uniform_labels(3, 2, 2, 1);
  Tensor m = Tensor::from({2, 2}, {1, 0, 0, 1});
  NegativeMask mask{m, 2};
  Tensor loss = classification_loss(logits, labels, mask);
  loss.backward();
  for (int k = 0; k < 3; ++k) {
    CHECK(logits.grad()[k * 4 + 1] == 0.0);
    CHECK(logits.grad()[k * 4 + 2] == 0.0);
    CHECK(logits.grad()[k * 4 + 0] != 0.0);
  }
}

TEST_CASE("classification loss matches per-pixel hand oracle") {
  auto rng = make_rng(62, RngStream::kTest);
  const int k = 22, h = 8, w = 8;
  Tensor logits = random_tensor({k, h, w}, rng);
  Tensor labels = Tensor::zeros({k, h, w});
  std::uniform_int_distribution<int> cd(0, k - 1);
  std::vector<int> cls(h * w);
  for (int p = 0; p < h * w; ++p) {
    cls[p] = cd(rng);
    labels.data()[cls[p] * h * w + p] = 1.0;
  }
  NegativeMask mask = build_negative_mask(labels, 0.5, 99);

  double expect = 0.0;
  for (int p = 0; p < h * w; ++p) {
    if (mask.m.data()[p] == 0.0) continue;
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += std::exp(logits.data()[c * h * w + p]);
    expect -= std::log(std::exp(logits.data()[cls[p] * h * w + p]) / z);
  }
  expect /= static_cast<double>(mask.kept_pixels);

  Tensor loss = classification_loss(logits, labels, mask);
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-6));

  // raw-sum mode
  Tensor raw = classification_loss(logits, labels, mask, false);
  CHECK(raw.item() ==
        doctest::Approx(expect * static_cast<double>(mask.kept_pixels)).epsilon(1e-6));
}

TEST_CASE("classification loss rejects non-one-hot labels") {
  Tensor logits = Tensor::zeros({2, 1, 1});
  Tensor labels = Tensor::from({2, 1, 1}, {0.5, 0.5});
  NegativeMask mask{Tensor::full({1, 1}, 1.0), 1};
  CHECK_THROWS_AS(classification_loss(logits, labels, mask),
                  std::invalid_argument);
}

TEST_CASE("classification loss gradient matches finite differences") {
  auto rng = make_rng(63, RngStream::kTest);
  Tensor logits = random_tensor({4, 3, 3}, rng, true);
  Tensor labels = Tensor::zeros({4, 3, 3});
  std::uniform_int_distribution<int> cd(0, 3);
  for (int p = 0; p < 9; ++p) labels.data()[cd(rng) * 9 + p] = 1.0;
  NegativeMask mask = build_negative_mask(labels, 0.7, 5);
  CHECK(gradient_check(
            [&labels, &mask](const std::vector<Tensor>& in) {
              return classification_loss(in[0], labels, mask);
            },
            {logits}) < 1e-6);
}

TEST_CASE("negative mask basics") {
  Tensor labels = uniform_labels(3, 8, 8, 2);  // all background
  NegativeMask all = build_negative_mask(labels, 1.0, 1);
  CHECK(all.kept_pixels == 64);
  for (double v : all.m.data()) CHECK(v == 1.0);

  NegativeMask a = build_negative_mask(labels, 0.25, 42);
  NegativeMask b = build_negative_mask(labels, 0.25, 42);
  CHECK(a.m.data() == b.m.data());
  CHECK(a.kept_pixels < 64);

  // positive pixels always kept
  Tensor mixed = uniform_labels(3, 4, 4, 2);
  mixed.data()[2 * 16 + 5] = 0.0;
  mixed.data()[0 * 16 + 5] = 1.0;
  NegativeMask m = build_negative_mask(mixed, 1e-9, 7);
  CHECK(m.m.data()[5] == 1.0);

  CHECK_THROWS_AS(build_negative_mask(labels, 0.0, 1), std::invalid_argument);
}

TEST_CASE("negative mask expected keep count at the full-scale default rate") {
  // 224^2 background pixels at 0.025% -> about 12.5 expected survivors
  Tensor labels = uniform_labels(2, 224, 224, 1);
  double total = 0.0;
  const int runs = 64;
  for (int r = 0; r < runs; ++r) {
    total += static_cast<double>(
        build_negative_mask(labels, 0.00025, 1000 + r).kept_pixels);
  }
  const double mean = total / runs;
  CHECK(mean > 8.0);
  CHECK(mean < 17.0);
}

TEST_CASE("coordinate loss basics") {
  Tensor y = Tensor::from({4}, {1, 2, 3, 4});
  Tensor g = Tensor::from({4}, {1, 2, 3, 4});
  Tensor v = Tensor::from({2}, {1, 1});
  CHECK(coordinate_loss(y, g, v).item() == 0.0);

  Tensor y2 = Tensor::from({2}, {1, 2}, true);
  Tensor g2 = Tensor::from({2}, {0, 0});
  Tensor v1 = Tensor::from({1}, {1.0});
  CHECK(coordinate_loss(y2, g2, v1).item() == doctest::Approx(5.0));

  // invisible keypoints: zero loss and exactly zero gradient
  Tensor v0 = Tensor::from({1}, {0.0});
  Tensor loss = coordinate_loss(y2, g2, v0);
  CHECK(loss.item() == 0.0);
  loss.backward();
  for (double gr : y2.grad()) CHECK(gr == 0.0);
}

TEST_CASE("pose loss basics") {
  Tensor p = Tensor::from({3}, {10, 0, 0});
  Tensor g = Tensor::from({3}, {0, 0, 0});
  CHECK(pose_loss(p, g).item() == doctest::Approx(100.0));
  CHECK(pose_loss(g, g).item() == 0.0);

  auto rng = make_rng(64, RngStream::kTest);
  Tensor a = random_tensor({3}, rng);
  Tensor b = random_tensor({3}, rng);
  double expect = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double d = a.data()[i] - b.data()[i];
    expect += d * d;
  }
  CHECK(pose_loss(a, b).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("visibility loss basics") {
  Tensor vp = Tensor::from({2}, {1, 0});
  Tensor vg = Tensor::from({2}, {0, 1});
  CHECK(visibility_loss(vp, vg).item() == doctest::Approx(2.0));
  CHECK(visibility_loss(vp, vp).item() == 0.0);

  auto rng = make_rng(65, RngStream::kTest);
  Tensor a = random_tensor({5}, rng);
  Tensor b = random_tensor({5}, rng);
  double expect = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double d = a.data()[i] - b.data()[i];
    expect += d * d;
  }
  CHECK(visibility_loss(a, b).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("total loss weighted combination") {
  Tensor l0 = Tensor::scalar(2.0);
  Tensor l1 = Tensor::scalar(3.0);
  Tensor l2 = Tensor::scalar(5.0);
  Tensor l3 = Tensor::scalar(7.0);

  CHECK(total_loss(l0, l1, l2, l3, {1, 0, 0, 0}).total_value() == 2.0);
  CHECK(total_loss(l0, l1, l2, l3, {0, 0, 0, 0}).total_value() == 0.0);

  auto rng = make_rng(66, RngStream::kTest);
  std::uniform_real_distribution<double> wd(0.0, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::array<double, 4> w{wd(rng), wd(rng), wd(rng), wd(rng)};
    const double expect = 2 * w[0] + 3 * w[1] + 5 * w[2] + 7 * w[3];
    LossBreakdown b = total_loss(l0, l1, l2, l3, w);
    CHECK(b.total_value() == doctest::Approx(expect).epsilon(1e-12));
    // linear in each component: doubling a weight adds that term once more
    std::array<double, 4> w2 = w;
    w2[2] *= 2.0;
    CHECK(total_loss(l0, l1, l2, l3, w2).total_value() ==
          doctest::Approx(expect + 5 * w[2]).epsilon(1e-12));
  }
}
