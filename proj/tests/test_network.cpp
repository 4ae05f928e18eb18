#include <cmath>
#include <functional>

#include "doctest.h"
#include "gancs/adam.hpp"
#include "gancs/errors.hpp"
#include "gancs/finite_diff.hpp"
#include "gancs/network.hpp"
#include "support.hpp"

using namespace gancs;
using namespace gancs::testing;

TEST_CASE("forward examples") {
  SUBCASE("dense with identity weights and zero bias is the identity") {
    Network net({3}, {LayerSpec::dense(3, 3)});
    auto& w = net.parameters()[0][0];
    w.fill(0.0);
    for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
    const Tensor x({2, 3}, {1, -2, 3, 0.5, 0.25, -7});
    CHECK(net.infer(x) == x);
  }
  SUBCASE("tanh of zeros is zeros") {
    Network net({4}, {LayerSpec::tanh()});
    CHECK(net.infer(Tensor({1, 4})) == Tensor({1, 4}));
  }
  SUBCASE("stride-2 transposed convolution of a single one with a 2x2 ones kernel") {
    Network net({1, 1, 1}, {LayerSpec::conv_transpose2d(1, 1, 2, 2, 0)});
    net.parameters()[0][0].fill(1.0);
    const Tensor y = net.infer(Tensor({1, 1, 1, 1}, 1.0));
    CHECK(y == Tensor({1, 1, 2, 2}, 1.0));
  }
  SUBCASE("transposed convolution matches direct summation over output positions") {
    Rng rng(3);
    const std::size_t cin = 2, cout = 3, k = 4, s = 2, p = 1, h = 3, w = 2;
    Network net({cin, h, w}, {LayerSpec::conv_transpose2d(cin, cout, k, s, p)});
    net.initialize(rng, 1.0);
    for (auto& b : net.parameters()[0][1].values()) b = rng.normal();
    const Tensor x = batched({cin, h, w}, 1, rng, 0.0);
    const Tensor y = net.infer(x);
    const auto& W = net.parameters()[0][0];
    const auto& b = net.parameters()[0][1];
    const std::size_t ho = (h - 1) * s + k - 2 * p, wo = (w - 1) * s + k - 2 * p;
    REQUIRE(y.shape() == Shape{1, cout, ho, wo});
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oi = 0; oi < ho; ++oi)
        for (std::size_t oj = 0; oj < wo; ++oj) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t i = 0; i < h; ++i)
              for (std::size_t j = 0; j < w; ++j)
                for (std::size_t ki = 0; ki < k; ++ki)
                  for (std::size_t kj = 0; kj < k; ++kj)
                    if (i * s + ki == oi + p && j * s + kj == oj + p)
                      acc += x[(ci * h + i) * w + j] * W[((ci * cout + co) * k + ki) * k + kj];
          CHECK(y[(co * ho + oi) * wo + oj] == doctest::Approx(acc).epsilon(1e-12));
        }
  }
}

TEST_CASE("shape errors name the layer") {
  Network net({3}, {LayerSpec::dense(3, 2)});
  try {
    net.infer(Tensor({1, 4}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("layer 0") != std::string::npos);
    CHECK(msg.find("[1,4]") != std::string::npos);
  }
  CHECK_THROWS_AS(Network({3}, {LayerSpec::dense(3, 2), LayerSpec::dense(3, 1)}), ShapeError);
  CHECK_THROWS_AS(LayerSpec::leaky_relu(1.5), ConfigError);
}

TEST_CASE("backward examples") {
  SUBCASE("dense input gradient is W^T g") {
    Rng rng(1);
    Network net({3}, {LayerSpec::dense(3, 2)});
    net.initialize(rng, 1.0);
    const Tensor x({1, 3}, {0.3, -0.2, 1.0});
    const Tensor g({1, 2}, {1.5, -0.5});
    const auto grads = net.backward(net.forward(x), g);
    const auto& w = net.parameters()[0][0];
    for (std::size_t i = 0; i < 3; ++i) CHECK(grads.input[i] == doctest::Approx(w[i] * 1.5 + w[3 + i] * -0.5));
  }
  SUBCASE("relu on negative pre-activations passes no gradient") {
    Network net({3}, {LayerSpec::relu()});
    const auto grads = net.backward(net.forward(Tensor({1, 3}, {-1, -2, -0.1})), Tensor({1, 3}, 1.0));
    CHECK(grads.input == Tensor({1, 3}));
  }
  SUBCASE("backward in a different mode than forward is rejected") {
    Network net({2, 2, 2}, {LayerSpec::batchnorm2d(2)});
    net.set_mode(Mode::train);
    Rng rng(2);
    const auto acts = net.forward(batched({2, 2, 2}, 2, rng, 0.0));
    net.set_mode(Mode::infer);
    CHECK_THROWS_AS(net.backward(acts, Tensor(acts.output().shape(), 1.0)), ModeError);
  }
}

TEST_CASE("analytic gradients match central finite differences for every layer kind") {
  Rng rng(20240611);
  const LayerKind kinds[] = {LayerKind::dense,      LayerKind::conv2d, LayerKind::conv_transpose2d,
                             LayerKind::batchnorm2d, LayerKind::relu,   LayerKind::leaky_relu,
                             LayerKind::tanh,       LayerKind::sigmoid, LayerKind::reshape};
  for (auto kind : kinds) {
    for (Mode mode : {Mode::train, Mode::infer}) {
      if (mode == Mode::infer && kind != LayerKind::batchnorm2d) continue;
      double worst_input = 0.0, worst_param = 0.0;
      for (int trial = 0; trial < 20; ++trial) {
        Shape sample;
        Network net = random_layer_network(kind, rng, sample);
        net.initialize(rng, 0.5);
        for (auto* p : net.parameter_list())
          for (auto& v : p->values()) v += 0.1 * rng.normal();
        if (kind == LayerKind::batchnorm2d) {
          for (auto& v : net.running_mean()[0].values()) v = rng.normal();
          for (auto& v : net.running_var()[0].values()) v = rng.uniform(0.5, 2.0);
        }
        net.set_mode(mode);
        const std::size_t batch = kind == LayerKind::batchnorm2d ? pick(rng, 2, 3) : pick(rng, 1, 3);
        const Tensor x = batched(sample, batch, rng, 0.01);
        const auto r = gradient_check(net, x, rng);
        worst_input = std::max(worst_input, r.input_error);
        worst_param = std::max(worst_param, r.param_error);
      }
      INFO(to_string(kind), mode == Mode::train ? " train" : " infer");
      CHECK(worst_input < 1e-6);
      CHECK(worst_param < 1e-6);
    }
  }
}

TEST_CASE("stacked generator-like network gradient check") {
  Rng rng(77);
  Network net({5}, {LayerSpec::dense(5, 2 * 2 * 3), LayerSpec::reshape({3, 2, 2}), LayerSpec::batchnorm2d(3),
                    LayerSpec::relu(), LayerSpec::conv_transpose2d(3, 2, 4, 2, 1), LayerSpec::batchnorm2d(2),
                    LayerSpec::leaky_relu(0.2), LayerSpec::conv2d(2, 1, 3, 1, 1), LayerSpec::tanh()});
  net.initialize(rng, 0.5);
  net.set_mode(Mode::train);
  const auto r = gradient_check(net, batched({5}, 3, rng, 0.0), rng);
  CHECK(r.input_error < 1e-6);
  CHECK(r.param_error < 1e-6);
}

TEST_CASE("infer mode is a pure function") {
  Rng rng(5);
  Network net({2, 4, 4}, {LayerSpec::conv2d(2, 3, 3, 1, 1), LayerSpec::batchnorm2d(3), LayerSpec::relu()});
  net.initialize(rng);
  net.set_mode(Mode::infer);
  const Tensor x = batched({2, 4, 4}, 2, rng, 0.0);
  const Tensor a = net.infer(x);
  const Tensor b = net.infer(x);
  CHECK(a == b);
}

TEST_CASE("train-mode batchnorm normalizes each channel") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = pick(rng, 1, 4), h = pick(rng, 2, 5), w = pick(rng, 2, 5), n = pick(rng, 2, 4);
    Network net({c, h, w}, {LayerSpec::batchnorm2d(c)});
    net.set_mode(Mode::train);
    Tensor x({n, c, h, w});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(0.5, 2.0) * rng.normal() + rng.normal() * 3.0;
    const Tensor y = net.infer(x);  // gamma 1, beta 0: output is the normalized value
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum = 0, sq = 0;
      const double m = static_cast<double>(n * h * w);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < h * w; ++i) sum += y[(b * c + ch) * h * w + i];
      const double mean = sum / m;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < h * w; ++i) sq += std::pow(y[(b * c + ch) * h * w + i] - mean, 2);
      CHECK(std::abs(mean) < 1e-10);
      CHECK(std::abs(sq / m - 1.0) < 1e-8);
    }
  }
}

TEST_CASE("running statistics follow an exponential moving average") {
  Network net({1, 1, 2}, {LayerSpec::batchnorm2d(1)});
  net.set_mode(Mode::train);
  const auto acts = net.forward(Tensor({2, 1, 1, 2}, {1, 2, 3, 4}));
  net.update_running_stats(acts);
  CHECK(net.running_mean()[0][0] == doctest::Approx(0.1 * 2.5));
  CHECK(net.running_var()[0][0] == doctest::Approx(0.9 + 0.1 * (5.0 / 3.0)));
}

TEST_CASE("adam") {
  SUBCASE("documented defaults") {
    CHECK(AdamOptions::recovery().learning_rate == 0.1);
    CHECK(AdamOptions::recovery().beta1 == 0.9);
    CHECK(AdamOptions::recovery().beta2 == 0.999);
    CHECK(AdamOptions::gan().learning_rate == 0.0002);
    CHECK(AdamOptions::gan().beta1 == 0.5);
    CHECK(AdamOptions::gan().beta2 == 0.999);
  }
  SUBCASE("first step moves by about lr against the gradient sign") {
    for (double g : {3.0, -0.02}) {
      AdamState adam(AdamOptions::recovery());
      Tensor p({1}, 1.0);
      adam.step(p, Tensor({1}, g));
      CHECK(p[0] == doctest::Approx(1.0 - 0.1 * (g > 0 ? 1 : -1)).epsilon(1e-6));
      CHECK(adam.step_count() == 1);
    }
  }
  SUBCASE("zero gradients leave parameters unchanged") {
    AdamState adam;
    Tensor p({3}, {1, 2, 3});
    for (int i = 0; i < 5; ++i) adam.step(p, Tensor({3}));
    CHECK(p == Tensor({3}, {1, 2, 3}));
    CHECK(adam.step_count() == 5);
  }
  SUBCASE("non-finite gradients are rejected with the parameter name") {
    AdamState adam;
    Tensor a({1}), b({2});
    Tensor* ps[] = {&a, &b};
    const Tensor gs[] = {Tensor({1}), Tensor({2}, {0.0, std::nan("")})};
    const std::string names[] = {"w", "bias"};
    try {
      adam.step(ps, gs, names);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("bias") != std::string::npos);
    }
  }
  CHECK_THROWS_AS(AdamState(AdamOptions{0.0}), ConfigError);
}

TEST_CASE("finite_diff_grad") {
  const Tensor x({4}, {0.5, -1.0, 2.0, 0.0});
  const Tensor g = finite_diff_grad([](const Tensor& v) { return squared_norm(v); }, x, 1e-5);
  for (std::size_t i = 0; i < 4; ++i) CHECK(g[i] == doctest::Approx(2 * x[i]).epsilon(1e-8));
  const Tensor z = finite_diff_grad([](const Tensor&) { return 3.0; }, x, 1e-5);
  CHECK(z == Tensor({4}));
  CHECK_THROWS_AS(finite_diff_grad([](const Tensor&) { return 0.0; }, x, 0.0), ConfigError);
}
