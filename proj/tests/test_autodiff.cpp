#include <catch_amalgamated.hpp>

#include <cmath>

#include "gradcheck.hpp"
#include "raven/autodiff.hpp"

using namespace raven;
using TensorD = Tensor<double>;

TEST_CASE("every op matches central finite differences") {
  for (const auto& c : gradcheck::cases()) {
    RngStream r(2024, std::hash<std::string>{}(c.name));
    for (int trial = 0; trial < 20; ++trial) {
      const double err = c.trial(r);
      INFO(c.name << " trial " << trial);
      REQUIRE(err < 1e-4);
    }
  }
}

TEST_CASE("gaussian KL closed form") {
  Tape<double> t;
  const auto kl = ops::gaussian_kl(t, t.constant(TensorD({1, 2}, {1.0, 0.0})), t.constant(TensorD({1, 2}, {0.0, std::log(4.0)})));
  CHECK(t.value(kl)[0] == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(t.value(kl)[1] == Catch::Approx(0.5 * (4 - std::log(4.0) - 1)).epsilon(1e-12));
  const auto zero = ops::gaussian_kl(t, t.constant(TensorD({1, 1})), t.constant(TensorD({1, 1})));
  CHECK(t.value(zero)[0] == 0.0);
}

TEST_CASE("reparameterized samples have the posterior variance") {
  constexpr std::size_t n = 100000;
  RngStream r(3, 0);
  TensorD noise({n, 1});
  for (auto& v : noise.data) v = r.normal();
  Tape<double> t;
  const double lv = std::log(2.5);
  const auto z = ops::reparameterize(t, t.constant(TensorD({n, 1}, 0.7)), t.constant(TensorD({n, 1}, lv)), noise);
  double s = 0, s2 = 0;
  for (const auto v : t.value(z).data) {
    s += v;
    s2 += v * v;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  CHECK(mean == Catch::Approx(0.7).margin(0.02));
  CHECK(var == Catch::Approx(2.5).epsilon(0.03));
}

TEST_CASE("zero logits give -ln 2 per pixel") {
  Tape<double> t;
  const TensorD target({2, 5}, std::vector<double>{0, 1, 0.3, 1, 0, 1, 1, 0, 0.5, 0});
  const auto ll = ops::bernoulli_log_likelihood(t, t.constant(TensorD({2, 5})), target);
  CHECK(t.value(ll)[0] == Catch::Approx(-5 * std::log(2.0)).epsilon(1e-12));
  CHECK(t.value(ll)[1] == Catch::Approx(-5 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("uniform logits give ln K cross-entropy") {
  Tape<double> t;
  const std::vector<int> labels{3};
  const auto ce = ops::softmax_cross_entropy(t, t.constant(TensorD({1, 6})), std::span<const int>(labels));
  CHECK(std::abs(t.value(ce)[0] - std::log(6.0)) < 1e-12);
}

TEST_CASE("group_std is exactly zero on constant groups") {
  Tape<double> t;
  const auto x = t.input(TensorD({3, 2}, std::vector<double>{0.1, 0.0, 0.1, 0.0, 0.1, 3.0}));
  const auto s = ops::group_std(t, x, 3);
  CHECK(t.value(s)[0] == 0.0);
  CHECK(t.value(s)[1] == Catch::Approx(std::sqrt(2.0)).epsilon(1e-12));
  t.backward(ops::sum(t, s));
  const auto g = t.grad(x);
  CHECK(g[0] == 0.0);
  CHECK(g[2] == 0.0);
}

TEST_CASE("dropout is the identity in eval mode and scales kept units in train mode") {
  Tape<double> t;
  const auto x = t.constant(TensorD({1, 1000}, 1.0));
  CHECK(t.value(ops::dropout(t, x, 0.5, Mode::eval, nullptr)).data == t.value(x).data);
  RngStream r(1, 1);
  const auto& y = t.value(ops::dropout(t, x, 0.5, Mode::train, &r));
  std::size_t kept = 0;
  for (const auto v : y.data) {
    REQUIRE((v == 0.0 || v == 2.0));
    kept += v != 0.0;
  }
  CHECK(kept > 400);
  CHECK(kept < 600);
}

TEST_CASE("misuse is reported") {
  Tape<double> t;
  const auto a = t.input(TensorD({2, 3}));
  const auto b = t.input(TensorD({3, 3}));
  CHECK_THROWS_AS(ops::add(t, a, b), std::invalid_argument);
  CHECK_THROWS_AS(ops::matmul(t, a, a), std::invalid_argument);
  CHECK_THROWS_AS(t.backward(a), std::invalid_argument);
  CHECK_THROWS_AS(t.backward(Var{}), std::logic_error);
}

TEST_CASE("gradients accumulate over fan-out") {
  Tape<double> t;
  const auto x = t.input(TensorD({1}, 3.0));
  const auto y = ops::add(t, ops::mul(t, x, x), x);  // x^2 + x
  t.backward(y);
  CHECK(t.grad(x)[0] == 7.0);
}
