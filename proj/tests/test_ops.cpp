#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support.hpp"
#include "wmtl/tensor.hpp"

using namespace wmtl;

TEST_CASE("activation forward values match the defining formulas") {
  Tape tape;
  Tensor x = Tensor::from_values({4}, {-2.0, -0.5, 0.0, 1.5});
  Tensor th = tanh(tape, x);
  Tensor el = elu(tape, x);
  Tensor sp = softplus(tape, x);
  for (std::size_t i = 0; i < 4; ++i) {
    const double v = x.values()[i];
    REQUIRE(th.values()[i] == Catch::Approx(std::tanh(v)).margin(1e-15));
    REQUIRE(el.values()[i] == Catch::Approx(v > 0 ? v : std::expm1(v)).margin(1e-15));
    REQUIRE(sp.values()[i] == Catch::Approx(std::log1p(std::exp(v))).margin(1e-12));
  }
}

TEST_CASE("softplus stays finite and linear for large inputs") {
  Tape tape;
  Tensor x = Tensor::from_values({2}, {100.0, 800.0}, true);
  Tensor y = softplus(tape, x);
  REQUIRE(y.values()[0] == Catch::Approx(100.0).margin(1e-9));
  REQUIRE(y.values()[1] == Catch::Approx(800.0).margin(1e-9));
  Tensor loss = sum(tape, y);
  tape.backward(loss);
  REQUIRE(std::isfinite(x.grad()[0]));
  REQUIRE(x.grad()[1] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("kl divergence matches the hand case of unit sigmas one apart") {
  Tape tape;
  Tensor ma = Tensor::scalar(1.0);
  Tensor sa = Tensor::scalar(1.0);
  Tensor mb = Tensor::scalar(0.0);
  Tensor sb = Tensor::scalar(1.0);
  Tensor kl = gaussian_kl(tape, ma, sa, mb, sb);
  REQUIRE(kl.item() == Catch::Approx(0.5).margin(1e-14));
}

TEST_CASE("kl divergence matches numerical quadrature oracles") {
  // Reference values computed by composite Simpson integration of
  // p(x) log(p(x)/q(x)) over a 12-sigma window, independent of the
  // closed-form expression used by the implementation.
  struct Case {
    double ma, sa, mb, sb, expected;
  };
  const Case cases[] = {
      {0.3, 0.7, -0.5, 1.3, 0.453358735033457},
      {2.0, 0.5, 1.0, 2.0, 1.042544361119948},
      {-1.0, 2.0, 3.0, 0.8, 14.208709268124872},
  };
  Tape tape;
  for (const Case& c : cases) {
    Tensor kl = gaussian_kl(tape, Tensor::scalar(c.ma), Tensor::scalar(c.sa),
                            Tensor::scalar(c.mb), Tensor::scalar(c.sb));
    REQUIRE(kl.item() == Catch::Approx(c.expected).margin(1e-9));
  }
}

TEST_CASE("kl of identical distributions is zero") {
  Tape tape;
  Tensor m = Tensor::from_values({3}, {0.1, -2.0, 5.0});
  Tensor s = Tensor::from_values({3}, {0.3, 1.0, 4.0});
  Tensor kl = gaussian_kl(tape, m, s, m, s);
  for (double v : kl.values()) REQUIRE(v == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("batched kl reduces over the latent dimension per row") {
  Tape tape;
  // Row 0: two coordinates each contributing 0.5; row 1: identical dists.
  Tensor ma = Tensor::from_values({2, 2}, {1.0, 1.0, 0.0, 0.0});
  Tensor sa = Tensor::full({2, 2}, 1.0);
  Tensor mb = Tensor::zeros({2, 2});
  Tensor sb = Tensor::full({2, 2}, 1.0);
  Tensor kl = gaussian_kl(tape, ma, sa, mb, sb);
  REQUIRE(kl.shape() == Shape{2});
  REQUIRE(kl.values()[0] == Catch::Approx(1.0).margin(1e-14));
  REQUIRE(kl.values()[1] == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("pathwise gradient of a quadratic matches the analytic expectation") {
  // d/dmu E[(mu + sigma e)^2] = 2 mu; the Monte Carlo pathwise estimator over
  // many draws must approach it.
  const double mu = 0.7, sigma = 0.8;
  const int n = 20000;
  RngStream rng = RngStream::root(77).split("mc");
  double grad_mu = 0.0, grad_sigma = 0.0;
  for (int i = 0; i < n; ++i) {
    Tape tape;
    Tensor m = Tensor::from_values({1}, {mu}, true);
    Tensor s = Tensor::from_values({1}, {sigma}, true);
    Tensor y = gaussian_sample(tape, m, s, rng);
    Tensor loss = mul(tape, y, y);
    tape.backward(loss);
    grad_mu += m.grad()[0];
    grad_sigma += s.grad()[0];
  }
  grad_mu /= n;
  grad_sigma /= n;
  // d/dsigma E[(mu + sigma e)^2] = 2 sigma.
  REQUIRE(grad_mu == Catch::Approx(2.0 * mu).margin(0.05));
  REQUIRE(grad_sigma == Catch::Approx(2.0 * sigma).margin(0.05));
}

TEST_CASE("sample mean and spread follow the requested distribution") {
  Tape tape(false);
  const int n = 20000;
  Tensor m = Tensor::full({n}, 1.5);
  Tensor s = Tensor::full({n}, 0.5);
  RngStream rng = RngStream::root(78);
  Tensor draw = gaussian_sample(tape, m, s, rng);
  double sum = 0.0, sq = 0.0;
  for (double v : draw.values()) {
    sum += v;
    sq += v * v;
  }
  const double mean_v = sum / n;
  const double var_v = sq / n - mean_v * mean_v;
  REQUIRE(mean_v == Catch::Approx(1.5).margin(0.02));
  REQUIRE(var_v == Catch::Approx(0.25).margin(0.02));
}
