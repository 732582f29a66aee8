#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "fedsem/autodiff.hpp"
#include "fedsem/random.hpp"

using namespace fedsem;
namespace ag = fedsem::ag;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double s = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = s * rng.normal();
  return t;
}

// Central-difference gradient of a scalar-valued function of one tensor.
Tensor numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                    double h = 1e-5) {
  Tensor g(x.shape());
  Tensor xp = x;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    xp[i] = v + h;
    const double fp = f(xp);
    xp[i] = v - h;
    const double fm = f(xp);
    xp[i] = v;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double max_rel_err(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), 1e-8});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("rng streams are reproducible and label-separated") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) REQUIRE(a.normal() == b.normal());
  REQUIRE(mix_seed(1, "alpha") != mix_seed(1, "beta"));
  REQUIRE(mix_seed(1, "alpha", 0) != mix_seed(1, "alpha", 1));
  REQUIRE(mix_seed(1, "alpha", 3) == mix_seed(1, "alpha", 3));

  Rng c(3);
  auto p = c.permutation(10);
  std::vector<bool> seen(10, false);
  for (auto v : p) seen[static_cast<size_t>(v)] = true;
  for (bool s : seen) REQUIRE(s);
}

TEST_CASE("elementwise forward values") {
  auto x = ag::leaf(Tensor({2}, {0.25, -1.5}));
  auto y = ag::sigmoid(x);
  REQUIRE(y->value[0] == Catch::Approx(1.0 / (1.0 + std::exp(-0.25))));
  auto z = ag::clamp(x, 0.0, 1.0);
  REQUIRE(z->value[1] == 0.0);
  auto s = ag::sum_all(ag::mul(x, x));
  REQUIRE(s->value[0] == Catch::Approx(0.0625 + 2.25));
}

TEST_CASE("conv2d forward matches direct accumulation") {
  Rng rng(11);
  Tensor x = random_tensor({2, 5, 4}, rng);
  Tensor k = random_tensor({3, 2, 3, 3}, rng);
  Tensor out = ag::conv2d_value(x, k, 1);
  REQUIRE(out.shape() == std::vector<int64_t>{3, 5, 4});
  // direct triple loop
  for (int64_t o = 0; o < 3; ++o)
    for (int64_t y = 0; y < 5; ++y)
      for (int64_t xx = 0; xx < 4; ++xx) {
        double acc = 0.0;
        for (int64_t c = 0; c < 2; ++c)
          for (int64_t dy = 0; dy < 3; ++dy)
            for (int64_t dx = 0; dx < 3; ++dx) {
              const int64_t sy = y + dy - 1, sx = xx + dx - 1;
              if (sy < 0 || sy >= 5 || sx < 0 || sx >= 4) continue;
              acc += x[(c * 5 + sy) * 4 + sx] * k[((o * 2 + c) * 3 + dy) * 3 + dx];
            }
        REQUIRE(out[(o * 5 + y) * 4 + xx] == Catch::Approx(acc).margin(1e-12));
      }
}

TEST_CASE("first-order gradients match finite differences") {
  Rng rng(42);
  Tensor x0 = random_tensor({2, 8, 8}, rng, 0.5);
  Tensor k0 = random_tensor({4, 2, 3, 3}, rng, 0.5);
  Tensor b0 = random_tensor({4}, rng, 0.2);

  auto build = [&](const Tensor& xt, const Tensor& kt, const Tensor& bt) {
    auto x = ag::leaf(xt);
    auto k = ag::leaf(kt);
    auto b = ag::leaf(bt);
    auto h = ag::silu(ag::bias_add(ag::conv2d(x, k, 1), b));
    auto p = ag::avg_pool2(h);
    auto u = ag::upsample2(p);
    auto cat = ag::concat_ch(h, u);
    auto s = ag::sigmoid(ag::sum_all(ag::mul(cat, cat)));
    return std::tuple{x, k, b, ag::scale(s, 3.0)};
  };

  auto [x, k, b, loss] = build(x0, k0, b0);
  auto grads = ag::backward(loss);
  Tensor gx = ag::grad_of(grads, x);
  Tensor gk = ag::grad_of(grads, k);
  Tensor gb = ag::grad_of(grads, b);

  auto fx = [&](const Tensor& t) { return std::get<3>(build(t, k0, b0))->value[0]; };
  auto fk = [&](const Tensor& t) { return std::get<3>(build(x0, t, b0))->value[0]; };
  auto fb = [&](const Tensor& t) { return std::get<3>(build(x0, k0, t))->value[0]; };

  REQUIRE(max_rel_err(gx, numeric_grad(fx, x0)) < 1e-5);
  REQUIRE(max_rel_err(gk, numeric_grad(fk, k0)) < 1e-5);
  REQUIRE(max_rel_err(gb, numeric_grad(fb, b0)) < 1e-5);
}

TEST_CASE("matvec/outer/transpose gradients match finite differences") {
  Rng rng(9);
  Tensor W0 = random_tensor({5, 4}, rng);
  Tensor v0 = random_tensor({4}, rng);

  auto build = [&](const Tensor& Wt, const Tensor& vt) {
    auto W = ag::leaf(Wt);
    auto v = ag::leaf(vt);
    auto y = ag::sigmoid(ag::matvec(W, v));
    auto o = ag::outer(y, v);
    return std::tuple{W, v, ag::sum_all(ag::mul(o, o))};
  };
  auto [W, v, loss] = build(W0, v0);
  auto grads = ag::backward(loss);

  auto fW = [&](const Tensor& t) { return std::get<2>(build(t, v0))->value[0]; };
  auto fv = [&](const Tensor& t) { return std::get<2>(build(W0, t))->value[0]; };
  REQUIRE(max_rel_err(ag::grad_of(grads, W), numeric_grad(fW, W0)) < 1e-5);
  REQUIRE(max_rel_err(ag::grad_of(grads, v), numeric_grad(fv, v0)) < 1e-5);
}

TEST_CASE("second-order: gradient-of-gradient matches finite differences") {
  Rng rng(123);
  Tensor x0 = random_tensor({1, 6, 6}, rng, 0.5);
  Tensor k0 = random_tensor({2, 1, 3, 3}, rng, 0.5);
  Tensor r = random_tensor({2, 1, 3, 3}, rng);  // fixed probe direction

  // s(x) = < dL/dk , r >  with  L = sum(sigmoid(conv(x,k)))
  auto s_of = [&](const Tensor& xt) {
    auto x = ag::leaf(xt);
    auto k = ag::leaf(k0);
    auto L = ag::sum_all(ag::sigmoid(ag::conv2d(x, k, 1)));
    auto grads = ag::backward(L);
    auto gk = grads.at(k.get());
    return std::tuple{x, ag::dot(gk, ag::constant(r))};
  };

  auto [x, s] = s_of(x0);
  auto outer_grads = ag::backward(s);
  Tensor gx = ag::grad_of(outer_grads, x);

  auto f = [&](const Tensor& t) { return std::get<1>(s_of(t))->value[0]; };
  REQUIRE(max_rel_err(gx, numeric_grad(f, x0)) < 1e-4);
}

TEST_CASE("second-order through pooling, concat and division") {
  Rng rng(5);
  Tensor x0 = random_tensor({1, 4, 4}, rng, 0.7);
  Tensor k0 = random_tensor({2, 1, 3, 3}, rng, 0.7);
  Tensor r1 = random_tensor({2, 1, 3, 3}, rng);
  Tensor r2 = random_tensor({2}, rng);

  auto s_of = [&](const Tensor& xt) {
    auto x = ag::leaf(xt);
    auto k = ag::leaf(k0);
    auto b = ag::leaf(Tensor({2}, {0.1, -0.2}));
    auto h = ag::silu(ag::bias_add(ag::conv2d(x, k, 1), b));
    auto L = ag::div(ag::sum_all(ag::avg_pool2(h)),
                     ag::sqrt_n(ag::add(ag::sum_all(ag::mul(h, h)), ag::constant(Tensor::scalar(1.0)))));
    auto grads = ag::backward(L);
    auto probe = ag::add(ag::dot(grads.at(k.get()), ag::constant(r1)),
                         ag::dot(grads.at(b.get()), ag::constant(r2)));
    return std::tuple{x, probe};
  };

  auto [x, s] = s_of(x0);
  Tensor gx = ag::grad_of(ag::backward(s), x);
  auto f = [&](const Tensor& t) { return std::get<1>(s_of(t))->value[0]; };
  REQUIRE(max_rel_err(gx, numeric_grad(f, x0)) < 1e-4);
}

TEST_CASE("gradient accumulates across shared subexpressions") {
  auto x = ag::leaf(Tensor({1}, {3.0}));
  auto y = ag::mul(x, x);  // same parent twice
  auto g = ag::grad_of(ag::backward(ag::sum_all(y)), x);
  REQUIRE(g[0] == Catch::Approx(6.0));
}

TEST_CASE("constants do not receive gradients") {
  auto x = ag::leaf(Tensor({1}, {2.0}));
  auto c = ag::constant(Tensor({1}, {5.0}));
  auto grads = ag::backward(ag::sum_all(ag::mul(x, c)));
  REQUIRE(grads.find(c.get()) == grads.end());
  REQUIRE(ag::grad_of(grads, x)[0] == Catch::Approx(5.0));
}
