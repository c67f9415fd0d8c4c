#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nsae/conv.hpp"
#include "nsae/rng.hpp"
#include "nsae/tensor.hpp"
#include "testutil.hpp"

using nsae::Tensor;
using testutil::check_gradients;
using testutil::random_tensor;

namespace {

// Random projection so the whole Jacobian is exercised, not just row sums.
// Seeded per call site so repeated forward rebuilds see identical weights.
Tensor<double> project(const Tensor<double>& t, std::uint64_t seed) {
  nsae::Rng rng(seed);
  std::vector<double> w(t.size());
  for (auto& v : w) v = rng.uniform(-1, 1);
  return nsae::sum(nsae::mul(t, Tensor<double>::from(t.shape(), std::move(w))));
}

// Shift values away from a kink so central differences stay valid.
Tensor<double> random_off_kink(const nsae::Shape& shape, nsae::Rng& rng) {
  std::vector<double> v(nsae::shape_numel(shape));
  for (auto& x : v) {
    x = rng.uniform(-1, 1);
    if (std::abs(x) < 0.01) x += x >= 0 ? 0.02 : -0.02;
  }
  return Tensor<double>::from(shape, std::move(v));
}

constexpr int kSeeds = 10;

}  // namespace

TEST_CASE("elementwise op gradients") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    nsae::Rng rng(100 + seed);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    const std::uint64_t prj = 500 + seed;
    check_gradients([&] { return project(nsae::add(a, b), prj); }, {a, b});
    check_gradients([&] { return project(nsae::sub(a, b), prj); }, {a, b});
    check_gradients([&] { return project(nsae::mul(a, b), prj); }, {a, b});
    check_gradients([&] { return project(nsae::scale(a, 2.5), prj); }, {a});
    auto r = random_off_kink({3, 4}, rng);
    check_gradients([&] { return project(nsae::relu(r), prj); }, {r});
    check_gradients([&] { return project(nsae::sigmoid(a), prj); }, {a});
    auto pos = random_tensor({3, 4}, rng, 0.1, 2.0);
    check_gradients([&] { return project(nsae::sqrt_elem(pos), prj); }, {pos});
  }
}

TEST_CASE("shape and reduction gradients") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    nsae::Rng rng(200 + seed);
    const std::uint64_t prj = 600 + seed;
    auto a = random_tensor({2, 6}, rng);
    check_gradients([&] { return project(nsae::reshape(a, {3, 4}), prj); }, {a});
    check_gradients([&] { return nsae::sum(a); }, {a});
    check_gradients([&] { return nsae::mean(a); }, {a});
    check_gradients([&] { return project(nsae::sum_cols(a), prj); }, {a});
  }
}

TEST_CASE("matmul and linear gradients") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    nsae::Rng rng(300 + seed);
    const std::uint64_t prj = 700 + seed;
    auto a = random_tensor({3, 5}, rng);
    auto b = random_tensor({5, 4}, rng);
    check_gradients([&] { return project(nsae::matmul(a, b), prj); }, {a, b});
    auto c = random_tensor({4, 5}, rng);
    check_gradients([&] { return project(nsae::matmul_nt(a, c), prj); }, {a, c});
    auto bias = random_tensor({4}, rng);
    check_gradients([&] { return project(nsae::linear(a, b, bias), prj); },
                    {a, b, bias});
  }
}

TEST_CASE("classification op gradients") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    nsae::Rng rng(400 + seed);
    const std::uint64_t prj = 800 + seed;
    auto logits = random_tensor({4, 5}, rng, -2, 2);
    check_gradients([&] { return project(nsae::log_softmax(logits), prj); },
                    {logits});
    std::vector<int> labels{0, 3, 1, 4};
    check_gradients(
        [&] { return nsae::gather_nll(nsae::log_softmax(logits), labels); },
        {logits});
    auto feats = random_tensor({4, 6}, rng, 0.2, 1.5);
    check_gradients([&] { return project(nsae::l2_normalize_rows(feats), prj); },
                    {feats});
    std::vector<int> groups{0, 1, 0, 1};
    check_gradients([&] { return project(nsae::group_means(feats, groups, 2), prj); },
                    {feats});
  }
}

TEST_CASE("conv2d gradients") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    nsae::Rng rng(900 + seed);
    const std::uint64_t prj = 1900 + seed;
    auto x = random_tensor({2, 2, 5, 5}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    auto b = random_tensor({3}, rng);
    check_gradients([&] { return project(nsae::conv2d(x, w, b, 1, 1), prj); },
                    {x, w, b});
    check_gradients([&] { return project(nsae::conv2d(x, w, b, 2, 0), prj); },
                    {x, w, b});
  }
}

TEST_CASE("conv_transpose2d gradients") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    nsae::Rng rng(1000 + seed);
    const std::uint64_t prj = 2000 + seed;
    auto x = random_tensor({2, 3, 4, 4}, rng);
    auto w = random_tensor({3, 2, 2, 2}, rng);
    auto b = random_tensor({2}, rng);
    check_gradients(
        [&] { return project(nsae::conv_transpose2d(x, w, b, 2, 0), prj); },
        {x, w, b});
  }
}

TEST_CASE("maxpool2d gradients") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    nsae::Rng rng(1100 + seed);
    const std::uint64_t prj = 2100 + seed;
    auto x = random_tensor({2, 2, 4, 4}, rng);  // distinct values w.p. 1
    check_gradients([&] { return project(nsae::maxpool2d(x, 2, 2), prj); }, {x});
  }
}

TEST_CASE("batchnorm2d gradients in every mode") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    nsae::Rng rng(1200 + seed);
    const std::uint64_t prj = 2200 + seed;
    auto x = random_tensor({3, 2, 3, 3}, rng);
    auto gamma = random_tensor({2}, rng, 0.5, 1.5);
    auto beta = random_tensor({2}, rng);
    for (auto mode : {nsae::BnMode::kTrain, nsae::BnMode::kEval,
                      nsae::BnMode::kTransductive}) {
      nsae::BnStats<double> stats(2);
      stats.running_mean = {0.1, -0.2};
      stats.running_var = {1.3, 0.7};
      check_gradients(
          [&] {
            nsae::BnStats<double> local = stats;  // keep fd evaluations pure
            return project(nsae::batchnorm2d(x, gamma, beta, local, mode), prj);
          },
          {x, gamma, beta});
    }
  }
}
