#include "doctest.h"

#include <random>

#include "fkd/blocks.hpp"
#include "fkd/gradcheck.hpp"
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

}  // namespace

TEST_CASE("fire module output channels enable residual") {
  auto rng = make_rng(40, RngStream::kTest);
  ParamStore store;
  FireSpec spec{16, 64, 64, true};
  CHECK(spec.out_channels() == 128);
  FireParams params = make_fire_params(store, "fire", 128, spec, rng);
  Tensor x = random_tensor({128, 4, 4}, rng);
  Tensor y = fire_forward(x, spec, params);
  CHECK(y.shape() == Shape{128, 4, 4});
}

TEST_CASE("fire module rejects residual channel mismatch") {
  auto rng = make_rng(41, RngStream::kTest);
  ParamStore store;
  FireSpec spec{4, 8, 8, true};
  FireParams params = make_fire_params(store, "fire", 12, spec, rng);
  Tensor x = random_tensor({12, 4, 4}, rng);
  CHECK_THROWS_AS(fire_forward(x, spec, params), std::invalid_argument);
}

TEST_CASE("fire module with zero parameters") {
  auto rng = make_rng(42, RngStream::kTest);
  Tensor x = random_tensor({8, 3, 3}, rng);

  ParamStore store;
  FireSpec spec{2, 4, 4, false};
  FireParams p = make_fire_params(store, "fire", 8, spec, rng);
  for (auto& [name, t] : store.params())
    std::fill(t.data().begin(), t.data().end(), 0.0);
  Tensor y = fire_forward(x, spec, p);
  for (double v : y.data()) CHECK(v == 0.0);

  ParamStore store_r;
  FireSpec spec_r{2, 4, 4, true};
  FireParams pr = make_fire_params(store_r, "fire", 8, spec_r, rng);
  for (auto& [name, t] : store_r.params())
    std::fill(t.data().begin(), t.data().end(), 0.0);
  Tensor yr = fire_forward(x, spec_r, pr);
  CHECK(yr.data() == x.data());
}

TEST_CASE("fire module matches hand-composed oracle") {
  auto rng = make_rng(43, RngStream::kTest);
  ParamStore store;
  FireSpec spec{3, 4, 4, false};
  FireParams p = make_fire_params(store, "fire", 5, spec, rng);
  Tensor x = random_tensor({5, 6, 6}, rng);
  Tensor y = fire_forward(x, spec, p);

  Tensor s = relu(conv2d(x, p.squeeze_w, p.squeeze_b, 1, 0));
  Tensor expect = relu(concat_channels(conv2d(s, p.expand1_w, p.expand1_b, 1, 0),
                                       conv2d(s, p.expand3_w, p.expand3_b, 1, 1)));
  REQUIRE(y.shape() == expect.shape());
  for (size_t i = 0; i < y.data().size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-6));
}

TEST_CASE("fire output channels property over random specs") {
  auto rng = make_rng(44, RngStream::kTest);
  std::uniform_int_distribution<int> cd(1, 6);
  for (int trial = 0; trial < 20; ++trial) {
    FireSpec spec{cd(rng), cd(rng), cd(rng), false};
    ParamStore store;
    const int cin = cd(rng);
    FireParams p = make_fire_params(store, "f", cin, spec, rng);
    Tensor x = random_tensor({cin, 5, 5}, rng);
    Tensor y = fire_forward(x, spec, p);
    CHECK(y.dim(0) == spec.expand_1x1 + spec.expand_3x3);
  }
}

TEST_CASE("deconv block doubles 7x7 to 14x14") {
  auto rng = make_rng(45, RngStream::kTest);
  ParamStore store;
  DeconvBlockSpec spec{4, 2, 1, 6, 4};
  DeconvBlockParams p = make_deconv_block_params(store, "up", 3, spec, rng);
  Tensor x = random_tensor({3, 7, 7}, rng);
  Tensor y = deconv_block_forward(x, spec, p);
  CHECK(y.shape() == Shape{4, 14, 14});
}

TEST_CASE("deconv block zero input and zero bias give zero output") {
  auto rng = make_rng(46, RngStream::kTest);
  ParamStore store;
  DeconvBlockSpec spec{4, 2, 1, 4, 4};
  DeconvBlockParams p = make_deconv_block_params(store, "up", 4, spec, rng);
  std::fill(p.up_b.data().begin(), p.up_b.data().end(), 0.0);
  std::fill(p.squeeze_b.data().begin(), p.squeeze_b.data().end(), 0.0);
  Tensor x = Tensor::zeros({4, 5, 5});
  Tensor y = deconv_block_forward(x, spec, p);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("deconv block matches composition oracle") {
  auto rng = make_rng(47, RngStream::kTest);
  ParamStore store;
  DeconvBlockSpec spec{4, 2, 1, 5, 3};
  DeconvBlockParams p = make_deconv_block_params(store, "up", 2, spec, rng);
  Tensor x = random_tensor({2, 4, 4}, rng);
  Tensor y = deconv_block_forward(x, spec, p);
  Tensor expect =
      relu(conv2d(relu(transposed_conv2d(x, p.up_w, p.up_b, 2, 1)),
                  p.squeeze_w, p.squeeze_b, 1, 0));
  REQUIRE(y.shape() == expect.shape());
  for (size_t i = 0; i < y.data().size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-6));
}

TEST_CASE("ladder of k deconv blocks scales by 2^k") {
  auto rng = make_rng(48, RngStream::kTest);
  ParamStore store;
  Tensor x = random_tensor({4, 3, 3}, rng);
  Tensor cur = x;
  for (int k = 1; k <= 4; ++k) {
    DeconvBlockSpec spec{4, 2, 1, 4, 4};
    DeconvBlockParams p =
        make_deconv_block_params(store, "up" + std::to_string(k), 4, spec, rng);
    cur = deconv_block_forward(cur, spec, p);
    CHECK(cur.dim(1) == 3 * (1 << k));
    CHECK(cur.dim(2) == 3 * (1 << k));
  }
}

namespace {

// Zero biases put relu pre-activations exactly on the kink, where the
// analytic subgradient and a finite difference legitimately disagree.
// Random biases keep the probe off the kink.
void randomize_params(ParamStore& store, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  for (auto& [name, t] : store.params())
    for (auto& v : t.data()) v = dist(rng);
}

}  // namespace

TEST_CASE("gradient check through fire and deconv blocks") {
  auto rng = make_rng(49, RngStream::kTest);

  SUBCASE("fire") {
    ParamStore store;
    FireSpec spec{2, 2, 2, true};
    FireParams p = make_fire_params(store, "fire", 4, spec, rng);
    randomize_params(store, rng);
    Tensor x = random_tensor({4, 4, 4}, rng, true);
    std::vector<Tensor> inputs{x};
    for (auto& [name, t] : store.params()) inputs.push_back(t);
    CHECK(gradient_check(
              [&spec, &p](const std::vector<Tensor>& in) {
                Tensor y = fire_forward(in[0], spec, p);
                return sum(mul(y, y));
              },
              inputs, 1e-5) < 1e-4);
  }
  SUBCASE("deconv block") {
    ParamStore store;
    DeconvBlockSpec spec{4, 2, 1, 3, 3};
    DeconvBlockParams p = make_deconv_block_params(store, "up", 2, spec, rng);
    randomize_params(store, rng);
    Tensor x = random_tensor({2, 3, 3}, rng, true);
    std::vector<Tensor> inputs{x};
    for (auto& [name, t] : store.params()) inputs.push_back(t);
    CHECK(gradient_check(
              [&spec, &p](const std::vector<Tensor>& in) {
                Tensor y = deconv_block_forward(in[0], spec, p);
                return sum(mul(y, y));
              },
              inputs, 1e-5) < 1e-4);
  }
}
