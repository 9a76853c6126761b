#include "doctest.h"

#include <random>

#include "fkd/gradcheck.hpp"
#include "fkd/ops.hpp"
#include "fkd/rng.hpp"
#include "fkd/tensor.hpp"

using namespace fkd;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool rg = false) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(data), rg);
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(t.item(), std::invalid_argument);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
}

TEST_CASE("backward of sum is all ones") {
  Tensor x = Tensor::from({4}, {1, -2, 3, 0.5}, true);
  Tensor loss = sum(x);
  loss.backward();
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum(x*x) at 3 is 6") {
  Tensor x = Tensor::scalar(3.0, true);
  Tensor loss = sum(mul(x, x));
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y = relu(x);
  CHECK_THROWS_AS(y.backward(), std::invalid_argument);
}

TEST_CASE("gradient accumulates over reused tensors") {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor loss = sum(add(x, x));
  loss.backward();
  CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("computation record is topologically ordered") {
  Tensor x = Tensor::scalar(1.0, true);
  Tensor a = relu(x);
  Tensor b = mul(a, a);
  Tensor loss = sum(add(b, a));
  ComputationRecord rec = record_for(loss);
  // every node appears after all of its producers
  for (size_t i = 0; i < rec.size(); ++i) {
    for (const auto& parent : rec[i]->parents) {
      bool found_before = false;
      for (size_t j = 0; j < i; ++j) found_before |= rec[j] == parent;
      CHECK(found_before);
    }
  }
  CHECK(rec.back().get() == loss.impl().get());
}

TEST_CASE("gradient_check is near-exact on a linear graph") {
  auto rng = make_rng(11, RngStream::kTest);
  Tensor x = random_tensor({6}, rng, true);
  double err = gradient_check(
      [](const std::vector<Tensor>& in) { return sum(scale(in[0], 3.0)); }, {x});
  CHECK(err < 1e-8);
}

TEST_CASE("gradient_check on composite conv-relu-sum graph") {
  auto rng = make_rng(12, RngStream::kTest);
  Tensor x = random_tensor({2, 5, 5}, rng, true);
  Tensor k = random_tensor({3, 2, 3, 3}, rng, true);
  Tensor b = random_tensor({3}, rng, true);
  double err = gradient_check(
      [](const std::vector<Tensor>& in) {
        return sum(relu(conv2d(in[0], in[1], in[2], 1, 1)));
      },
      {x, k, b});
  CHECK(err < 1e-4);
}

TEST_CASE("forward determinism") {
  auto rng = make_rng(13, RngStream::kTest);
  Tensor x = random_tensor({1, 6, 6}, rng);
  Tensor k = random_tensor({2, 1, 3, 3}, rng);
  Tensor b = random_tensor({2}, rng);
  Tensor y1 = conv2d(x, k, b, 1, 1);
  Tensor y2 = conv2d(x, k, b, 1, 1);
  CHECK(y1.data() == y2.data());
}
