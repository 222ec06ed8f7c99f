#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "support/grad_check.hpp"
#include "tcsf/tensor.hpp"

using namespace tcsf;
using testsupport::max_grad_rel_error;

namespace {

Tensor random_param(Rng& rng, Shape shape, double bound = 1.0) {
  return Tensor::param(shape, uniform_init(rng, shape_numel(shape), bound));
}

}  // namespace

TEST_CASE("linear basics") {
  Tensor x = Tensor::from({2}, {1, 2});
  Tensor w = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::zeros({2});
  Tensor y = linear(x, w, b);
  CHECK(y.values()[0] == doctest::Approx(1.0));
  CHECK(y.values()[1] == doctest::Approx(2.0));

  Tensor x2 = Tensor::from({2}, {1, 1});
  Tensor w2 = Tensor::from({2, 1}, {1, -1});
  Tensor b2 = Tensor::from({1}, {0.5});
  CHECK(linear(x2, w2, b2).item() == doctest::Approx(0.5));

  Tensor bad = Tensor::from({3}, {1, 2, 3});
  CHECK_THROWS_AS(linear(bad, w, b), ShapeError);
}

TEST_CASE("conv2d identity and hand fixture") {
  // 1x1 kernel [[1]] is the identity
  Tensor x = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
  Tensor k = Tensor::from({1, 1, 1, 1}, {1});
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, k, b, 1, 0);
  CHECK(y.values() == x.values());

  // all-ones 3x3, padding 1, constant-1 4x4: interior 9, corner 4, edge 6
  Tensor x2 = Tensor::full({1, 4, 4}, 1.0);
  Tensor k2 = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor y2 = conv2d(x2, k2, b, 1, 1);
  REQUIRE(y2.shape() == Shape{1, 4, 4});
  auto at = [&](int r, int c) { return y2.values()[static_cast<size_t>(r * 4 + c)]; };
  CHECK(at(1, 1) == doctest::Approx(9));
  CHECK(at(2, 2) == doctest::Approx(9));
  CHECK(at(0, 0) == doctest::Approx(4));
  CHECK(at(3, 3) == doctest::Approx(4));
  CHECK(at(0, 1) == doctest::Approx(6));

  // stride producing non-integral output size: (6 - 3) % 2 != 0
  Tensor x3 = Tensor::full({1, 6, 6}, 1.0);
  CHECK_THROWS_AS(conv2d(x3, k2, b, 2, 0), ShapeError);
}

TEST_CASE("activations") {
  Tensor x = Tensor::from({3}, {-1, 0, 2});
  auto r = relu(x).values();
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);

  auto s = softmax(Tensor::from({2}, {0, 0}), 0).values();
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));

  CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));
}

TEST_CASE("softmax normalization and sigmoid range properties") {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = Tensor::from({4, 5}, uniform_init(rng, 20, 6.0));
    const int axis = rep % 2;
    Tensor y = softmax(x, axis);
    const int outer = axis == 0 ? 5 : 4;
    for (int o = 0; o < outer; ++o) {
      double sum = 0;
      for (int t = 0; t < (axis == 0 ? 4 : 5); ++t) {
        sum += axis == 0 ? y.values()[static_cast<size_t>(t * 5 + o)]
                         : y.values()[static_cast<size_t>(o * 5 + t)];
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
    Tensor sg = sigmoid(x);
    for (double v : sg.values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("reductions") {
  // GAP over H,W,C of a [K,H,W,C] constant tensor
  Tensor x = Tensor::full({3, 2, 2, 4}, 2.5);
  Tensor g = reduce_mean(x, {1, 2, 3});
  REQUIRE(g.shape() == Shape{3});
  for (double v : g.values()) CHECK(v == doctest::Approx(2.5));

  CHECK(sum_all(Tensor::from({3}, {1, 2, 3})).item() == doctest::Approx(6.0));

  // mean over empty axis list is the identity
  Tensor id = reduce_mean(Tensor::from({2, 2}, {1, 2, 3, 4}), {});
  CHECK(id.values() == std::vector<double>{1, 2, 3, 4});

  CHECK_THROWS_AS(reduce_sum(x, {7}), ShapeError);
}

TEST_CASE("backward analytic fixtures") {
  // loss = x^2 at x=3 -> dx = 6
  Tensor x = Tensor::param({1}, {3.0});
  Tensor loss = mul(x, x);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0));

  // loss = sum(sigmoid(x)) at x=0 -> dx = 0.25 per element
  Tensor z = Tensor::param({4}, {0, 0, 0, 0});
  backward(sum_all(sigmoid(z)));
  for (double g : z.grad()) CHECK(g == doctest::Approx(0.25));

  // non-scalar loss rejected
  Tensor v = Tensor::param({2}, {1, 2});
  CHECK_THROWS_AS(backward(add(v, v)), std::invalid_argument);
}

TEST_CASE("gradient accumulates across backward calls and zero_grad resets") {
  Tensor x = Tensor::param({1}, {2.0});
  backward(mul(x, x));
  backward(mul(x, x));
  CHECK(x.grad()[0] == doctest::Approx(8.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("finite-difference checks per op") {
  Rng rng(42);
  SUBCASE("elementwise chain") {
    Tensor a = random_param(rng, {3, 4});
    Tensor b = random_param(rng, {3, 4});
    auto loss = [&] {
      Tensor t = mul(add(a, b), sub(a, scale(b, 0.7)));
      t = add_const(t, 0.3);
      t = mul(t, sigmoid(a));
      return sum_all(mul(tanh_t(t), rsub_const(1.0, sigmoid(b))));
    };
    CHECK(max_grad_rel_error({a, b}, loss) <= 1e-4);
  }
  SUBCASE("relu away from kink") {
    Tensor a = Tensor::param({4}, {-0.9, -0.4, 0.3, 1.2});
    auto loss = [&] { return sum_all(mul(relu(a), a)); };
    CHECK(max_grad_rel_error({a}, loss) <= 1e-4);
  }
  SUBCASE("matmul all transpose combinations") {
    Tensor a = random_param(rng, {3, 4});
    Tensor b = random_param(rng, {4, 2});
    Tensor c = random_param(rng, {2, 4});
    Tensor d = random_param(rng, {4, 3});
    auto loss = [&] {
      Tensor m1 = matmul(a, b);                 // [3,2]
      Tensor m2 = matmul(a, c, false, true);    // [3,2]
      Tensor m3 = matmul(d, b, true, false);    // [3,2]
      Tensor m4 = matmul(d, c, true, true);     // [3,2]
      return sum_all(mul(add(m1, m2), add(m3, m4)));
    };
    CHECK(max_grad_rel_error({a, b, c, d}, loss) <= 1e-4);
  }
  SUBCASE("linear") {
    Tensor x = random_param(rng, {5, 3});
    Tensor w = random_param(rng, {3, 4});
    Tensor b = random_param(rng, {4});
    auto loss = [&] { return mean_all(tanh_t(linear(x, w, b))); };
    CHECK(max_grad_rel_error({x, w, b}, loss) <= 1e-4);
  }
  SUBCASE("conv2d stride and padding") {
    for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}}) {
      int h = 5;
      while ((h + 2 * pad - 3) % stride != 0) ++h;
      Tensor x = random_param(rng, {2, h, h});
      Tensor k = random_param(rng, {3, 2, 3, 3});
      Tensor b = random_param(rng, {3});
      auto loss = [&] { return mean_all(tanh_t(conv2d(x, k, b, stride, pad))); };
      CHECK(max_grad_rel_error({x, k, b}, loss) <= 1e-4);
    }
  }
  SUBCASE("softmax log clamp") {
    Tensor x = random_param(rng, {2, 5});
    auto loss = [&] {
      Tensor p = softmax(x, 1);
      return sum_all(mul(log_t(clamp_t(p, 1e-7, 1.0 - 1e-7)), p));
    };
    CHECK(max_grad_rel_error({x}, loss) <= 1e-4);
  }
  SUBCASE("reductions") {
    Tensor x = random_param(rng, {3, 2, 4});
    auto loss = [&] {
      Tensor a = reduce_mean(x, {1});
      Tensor s = reduce_sum(x, {0, 2});
      return add(mean_all(mul(a, a)), sum_all(mul(s, s)));
    };
    CHECK(max_grad_rel_error({x}, loss) <= 1e-4);
  }
  SUBCASE("concat slice reshape") {
    Tensor a = random_param(rng, {2, 3});
    Tensor b = random_param(rng, {2, 3});
    auto loss = [&] {
      Tensor c = concat({a, b}, 0);                    // [4,3]
      Tensor s = slice(c, 0, 1, 2);                    // [2,3]
      Tensor r = reshape(s, {3, 2});
      return sum_all(mul(r, r));
    };
    CHECK(max_grad_rel_error({a, b}, loss) <= 1e-4);
  }
  SUBCASE("embedding and masked mean") {
    Tensor table = random_param(rng, {6, 4});
    std::vector<int> ids{1, 3, 1, 5};
    std::vector<uint8_t> mask{1, 0, 1, 1};
    auto loss = [&] {
      Tensor rows = embedding_rows(table, ids);
      Tensor m = masked_mean_rows(rows, mask);
      return sum_all(mul(m, m));
    };
    CHECK(max_grad_rel_error({table}, loss) <= 1e-4);
  }
  SUBCASE("gather and broadcast helpers") {
    Tensor plane = random_param(rng, {2, 3, 3});
    Tensor bias = random_param(rng, {2});
    Tensor map = random_param(rng, {3, 3});
    Tensor sc = random_param(rng, {1});
    std::vector<int> idx{0, 0, 1, 4, 4, 5, 8, 7, 6};
    auto loss = [&] {
      Tensor g = gather_cells(plane, idx);
      Tensor t = add_channel_bias(g, bias);
      t = mul_spatial_map(t, map);
      t = mul_scalar_tensor(t, sc);
      return mean_all(mul(t, t));
    };
    CHECK(max_grad_rel_error({plane, bias, map, sc}, loss) <= 1e-4);
  }
  SUBCASE("add_row_vector") {
    Tensor x = random_param(rng, {4, 3});
    Tensor v = random_param(rng, {3});
    auto loss = [&] { return mean_all(sigmoid(add_row_vector(x, v))); };
    CHECK(max_grad_rel_error({x, v}, loss) <= 1e-4);
  }
}

TEST_CASE("randomized composite network gradient check") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Tensor w1 = random_param(rng, {6, 8});
    Tensor b1 = random_param(rng, {8});
    Tensor w2 = random_param(rng, {8, 3});
    Tensor b2 = random_param(rng, {3});
    Tensor x = random_param(rng, {4, 6});
    auto loss = [&] {
      Tensor h = tanh_t(linear(x, w1, b1));
      Tensor o = softmax(linear(h, w2, b2), 1);
      return mean_all(mul(o, log_t(clamp_t(o, 1e-9, 1.0))));
    };
    CHECK(max_grad_rel_error({w1, b1, w2, b2, x}, loss) <= 1e-4);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::param({3}, {1, 2, 3});
    p.zero_grad();
    std::vector<Tensor> params{p};
    AdamOptimizer opt(0.1);
    opt.step(params);
    CHECK(p.values() == std::vector<double>{1, 2, 3});
  }
  SUBCASE("first bias-corrected step moves by ~lr") {
    Tensor p = Tensor::param({1}, {1.0});
    p.grad()[0] = 1.0;
    std::vector<Tensor> params{p};
    AdamOptimizer opt(0.1);
    opt.step(params);
    CHECK(std::abs((1.0 - p.values()[0]) - 0.1) < 1e-6);
  }
  SUBCASE("kernel step matches hand Adam arithmetic") {
    std::vector<double> x{2.0}, g{0.5}, m{0.0}, v{0.0};
    adam_step(x, g, m, v, 1, 0.01);
    const double mhat = (0.1 * 0.5) / (1 - 0.9);
    const double vhat = (0.001 * 0.25) / (1 - 0.999);
    CHECK(x[0] == doctest::Approx(2.0 - 0.01 * mhat / (std::sqrt(vhat) + 1e-8)));
    CHECK_THROWS_AS(adam_step(x, {}, m, v, 2, 0.01), ShapeError);
  }
}

TEST_CASE("no-grad mode and debug checks") {
  {
    NoGradGuard ng;
    Tensor x = Tensor::param({2}, {1, 2});
    Tensor y = mul(x, x);
    CHECK_FALSE(y.node()->live);
  }
  set_debug_checks(true);
  Tensor x = Tensor::param({1}, {800.0});
  CHECK_THROWS(log_t(rsub_const(0.0, relu(x))));  // log of -800
  set_debug_checks(false);
}

TEST_CASE("portable tensor file round trip") {
  Rng rng(3);
  Tensor t = Tensor::from({2, 3, 4}, uniform_init(rng, 24, 5.0));
  std::stringstream ss;
  write_tensor(ss, t);
  Tensor back = read_tensor(ss);
  CHECK(back.shape() == t.shape());
  CHECK(back.values() == t.values());

  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(read_tensor(bad), CorruptStreamError);

  std::string bytes = ss.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_tensor(truncated), CorruptStreamError);
}

TEST_CASE("deterministic init") {
  Rng a(11), b(11);
  CHECK(uniform_init(a, 16, 1.0) == uniform_init(b, 16, 1.0));
}
