#include "fkd/gradcheck_suite.hpp"

#include <random>

#include "fkd/blocks.hpp"
#include "fkd/gradcheck.hpp"
#include "fkd/losses.hpp"
#include "fkd/ops.hpp"
#include "fkd/rng.hpp"

namespace fkd {

namespace {

constexpr double kThreshold = 1e-4;
constexpr double kDelta = 1e-5;

Tensor rand_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(data), true);
}

void randomize_store(ParamStore& store, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  for (auto& [name, t] : store.params())
    for (auto& v : t.data()) v = dist(rng);
}

}  // namespace

std::vector<OpCheckResult> run_op_gradchecks(std::uint64_t seed) {
  auto rng = make_rng(seed, RngStream::kTest);
  std::vector<OpCheckResult> results;
  auto record = [&](const std::string& op, double err) {
    results.push_back({op, err, err < kThreshold});
  };

  {
    Tensor x = rand_tensor({2, 6, 6}, rng);
    Tensor w = rand_tensor({3, 2, 3, 3}, rng);
    Tensor b = rand_tensor({3}, rng);
    record("conv2d", gradient_check(
                         [](const std::vector<Tensor>& in) {
                           Tensor y = conv2d(in[0], in[1], in[2], 2, 1);
                           return sum(mul(y, y));
                         },
                         {x, w, b}, kDelta));
  }
  {
    Tensor x = rand_tensor({3, 4, 4}, rng);
    Tensor w = rand_tensor({3, 2, 4, 4}, rng);
    Tensor b = rand_tensor({2}, rng);
    record("transposed_conv2d",
           gradient_check(
               [](const std::vector<Tensor>& in) {
                 Tensor y = transposed_conv2d(in[0], in[1], in[2], 2, 1);
                 return sum(mul(y, y));
               },
               {x, w, b}, kDelta));
  }
  {
    Tensor x = rand_tensor({2, 6, 6}, rng);
    record("maxpool2d", gradient_check(
                            [](const std::vector<Tensor>& in) {
                              Tensor y = maxpool2d(in[0], 2, 2);
                              return sum(mul(y, y));
                            },
                            {x}, kDelta));
  }
  {
    Tensor x = rand_tensor({2, 3, 5, 5}, rng);
    Tensor gamma = rand_tensor({3}, rng);
    Tensor beta = rand_tensor({3}, rng);
    record("batchnorm2d",
           gradient_check(
               [](const std::vector<Tensor>& in) {
                 BatchNormStats stats;
                 Tensor y = batchnorm2d(in[0], in[1], in[2],
                                        BatchNormMode::kTrain, stats);
                 return sum(mul(y, y));
               },
               {x, gamma, beta}, kDelta));
  }
  {
    Tensor x = rand_tensor({3, 6}, rng);
    Tensor w = rand_tensor({4, 6}, rng);
    Tensor b = rand_tensor({4}, rng);
    record("fully_connected",
           gradient_check(
               [](const std::vector<Tensor>& in) {
                 Tensor y = fully_connected(in[0], in[1], in[2]);
                 return sum(mul(y, y));
               },
               {x, w, b}, kDelta));
  }
  {
    ParamStore store;
    FireSpec spec{2, 2, 2, true};
    FireParams p = make_fire_params(store, "fire", 4, spec, rng);
    randomize_store(store, rng);
    std::vector<Tensor> inputs{rand_tensor({4, 4, 4}, rng)};
    for (auto& [name, t] : store.params()) inputs.push_back(t);
    record("fire_module", gradient_check(
                              [&spec, &p](const std::vector<Tensor>& in) {
                                Tensor y = fire_forward(in[0], spec, p);
                                return sum(mul(y, y));
                              },
                              inputs, kDelta));
  }
  {
    ParamStore store;
    DeconvBlockSpec spec{4, 2, 1, 3, 3};
    DeconvBlockParams p = make_deconv_block_params(store, "up", 2, spec, rng);
    randomize_store(store, rng);
    std::vector<Tensor> inputs{rand_tensor({2, 3, 3}, rng)};
    for (auto& [name, t] : store.params()) inputs.push_back(t);
    record("deconv_block",
           gradient_check(
               [&spec, &p](const std::vector<Tensor>& in) {
                 Tensor y = deconv_block_forward(in[0], spec, p);
                 return sum(mul(y, y));
               },
               inputs, kDelta));
  }
  {
    // message layer: receiver + relu(conv3x3(sender))
    Tensor sender = rand_tensor({3, 4, 4}, rng);
    Tensor receiver = rand_tensor({3, 4, 4}, rng);
    Tensor w = rand_tensor({3, 3, 3, 3}, rng);
    Tensor b = rand_tensor({3}, rng);
    record("message_layer",
           gradient_check(
               [](const std::vector<Tensor>& in) {
                 Tensor y = add(in[1], relu(conv2d(in[0], in[2], in[3], 1, 1)));
                 return sum(mul(y, y));
               },
               {sender, receiver, w, b}, kDelta));
  }
  {
    Tensor logits = rand_tensor({4, 3, 3}, rng);
    Tensor labels = Tensor::zeros({4, 3, 3});
    std::uniform_int_distribution<int> cd(0, 3);
    for (int p = 0; p < 9; ++p) labels.data()[static_cast<size_t>(cd(rng) * 9 + p)] = 1.0;
    NegativeMask mask = build_negative_mask(labels, 0.7, seed + 1);
    record("loss_classification",
           gradient_check(
               [&labels, &mask](const std::vector<Tensor>& in) {
                 return classification_loss(in[0], labels, mask);
               },
               {logits}, kDelta));
  }
  {
    Tensor y = rand_tensor({8}, rng);
    Tensor g = rand_tensor({8}, rng);
    Tensor v = Tensor::from({4}, {1, 0, 1, 1});
    record("loss_coordinates",
           gradient_check(
               [&g, &v](const std::vector<Tensor>& in) {
                 return coordinate_loss(in[0], g, v);
               },
               {y}, kDelta));
  }
  {
    Tensor p = rand_tensor({3}, rng, 30.0);
    Tensor g = rand_tensor({3}, rng, 30.0);
    record("loss_pose", gradient_check(
                            [&g](const std::vector<Tensor>& in) {
                              return pose_loss(in[0], g);
                            },
                            {p}, kDelta));
  }
  {
    Tensor p = rand_tensor({5}, rng);
    Tensor g = Tensor::from({5}, {1, 0, 0, 1, 1});
    record("loss_visibility",
           gradient_check(
               [&g](const std::vector<Tensor>& in) {
                 return visibility_loss(in[0], g);
               },
               {p}, kDelta));
  }
  return results;
}

}  // namespace fkd
