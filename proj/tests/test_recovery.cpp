#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "gancs/errors.hpp"
#include "gancs/finite_diff.hpp"
#include "gancs/recovery.hpp"

using namespace gancs;

namespace {

GeneratorModel tiny_generator(std::uint64_t seed) {
  GanArchitecture a;
  a.height = a.width = 16;
  a.latent_dim = 6;
  a.g_base = 3;
  a.d_base = 2;
  GeneratorModel g(a);
  Rng rng(seed);
  g.net.initialize(rng, 0.3);
  // Give batchnorm non-trivial running statistics before switching to inference.
  g.net.set_mode(Mode::train);
  for (int i = 0; i < 3; ++i) g.net.update_running_stats(g.net.forward(sample_latent(8, a.latent_dim, rng)));
  g.net.set_mode(Mode::infer);
  return g;
}

std::vector<std::unique_ptr<ForwardOperator>> operators_for(const Shape& shape) {
  std::vector<std::unique_ptr<ForwardOperator>> ops;
  ops.push_back(std::make_unique<CompressionOperator>(shape, 4, 11));
  ops.push_back(std::make_unique<BlurOperator>(shape, BlurKernel::motion(30, 5)));
  ops.push_back(std::make_unique<OcclusionOperator>(shape, leaf_occlusion_mask(shape[1], shape[2], 0.25, 5)));
  return ops;
}

Tensor observe_code(const GeneratorModel& g, const ForwardOperator& op, const Tensor& z) {
  return op.apply(g.generate(z).reshaped(op.input_shape()));
}

RecoveryConfig quick_config(std::size_t restarts = 4) {
  RecoveryConfig c;
  c.iterations = 25;
  c.restarts = restarts;
  c.seed = 99;
  return c;
}

bool same_outcome(const RestartOutcome& a, const RestartOutcome& b) {
  return a.seed == b.seed && a.failed == b.failed && a.z == b.z && a.loss == b.loss &&
         a.consistency == b.consistency && a.penalty == b.penalty && a.best_iteration == b.best_iteration;
}

}  // namespace

TEST_CASE("gradient matches finite differences for each operator") {
  GeneratorModel g = tiny_generator(3);
  const Shape image = g.arch.image_shape();
  Rng rng(8);
  for (const auto& op : operators_for(image)) {
    for (double lambda : {0.0, 0.001, 0.5}) {
      Tensor y = observe_code(g, *op, sample_latent(1, g.latent_dim(), rng));
      Tensor z = sample_latent(1, g.latent_dim(), rng);
      RecoveryLoss l = recovery_loss(z, g, *op, y, lambda);
      Tensor numeric =
          finite_diff_grad([&](const Tensor& x) { return recovery_loss(x, g, *op, y, lambda).total; }, z, 1e-5);
      INFO(to_string(op->kind()) << " lambda " << lambda);
      CHECK(relative_error(l.grad, numeric) < 1e-5);
      CHECK(l.total == doctest::Approx(l.consistency + lambda * l.penalty).epsilon(1e-14));
      CHECK(l.penalty == doctest::Approx(squared_norm(z)).epsilon(1e-14));
    }
  }
}

TEST_CASE("loss at the generating code is the prior term alone") {
  GeneratorModel g = tiny_generator(4);
  const Shape s = g.arch.image_shape();
  CompressionOperator op(s, 2, 3);
  Rng rng(1);
  Tensor z = sample_latent(1, g.latent_dim(), rng);
  Tensor y = observe_code(g, op, z);
  RecoveryLoss l = recovery_loss(z, g, op, y, 0.25);
  CHECK(l.consistency == 0.0);
  CHECK(l.total == doctest::Approx(0.25 * squared_norm(z)).epsilon(1e-14));
  // With a zero residual only the prior contributes to the gradient.
  CHECK(relative_error(l.grad, 0.5 * z) < 1e-14);
}

TEST_CASE("input validation") {
  GeneratorModel g = tiny_generator(5);
  const Shape s = g.arch.image_shape();
  CompressionOperator op(s, 4, 3);
  Tensor y(op.output_shape(), 0.0);

  RecoveryConfig c = quick_config();
  c.iterations = 0;
  CHECK_THROWS_AS(recover(g, op, y, c), ConfigError);
  c = quick_config();
  c.restarts = 0;
  CHECK_THROWS_AS(recover(g, op, y, c), ConfigError);
  c = quick_config();
  c.lambda = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  CHECK_THROWS_AS(recover(g, op, Tensor({3}, 0.0), quick_config()), ShapeError);
  CompressionOperator wrong({1, 8, 8}, 4, 3);
  CHECK_THROWS_AS(recover(g, wrong, Tensor(wrong.output_shape(), 0.0), quick_config()), ShapeError);

  GeneratorModel training = g;
  training.net.set_mode(Mode::train);
  CHECK_THROWS_AS(recover(training, op, y, quick_config()), ModeError);
  CHECK_THROWS_AS(recovery_loss(Tensor({1, g.latent_dim()}, 0.0), training, op, y, 0.1), ModeError);
}

TEST_CASE("recovery is bit-identical for a fixed seed and matches single runs") {
  GeneratorModel g = tiny_generator(6);
  const Shape s = g.arch.image_shape();
  Rng rng(2);
  for (const auto& op : operators_for(s)) {
    Tensor y = observe_code(g, *op, sample_latent(1, g.latent_dim(), rng));
    RecoveryConfig c = quick_config();
    RecoveryResult a = recover(g, *op, y, c), b = recover(g, *op, y, c);
    CHECK(a.z_hat == b.z_hat);
    CHECK(a.reconstruction == b.reconstruction);
    CHECK(a.per_restart_losses == b.per_restart_losses);
    CHECK(a.best_restart == b.best_restart);
    for (std::size_t r = 0; r < c.restarts; ++r) {
      RestartOutcome single = recover_single(g, *op, y, c, restart_seed(c.seed, r));
      CHECK(same_outcome(single, a.restarts[r]));
    }
  }
}

TEST_CASE("restart selection") {
  GeneratorModel g = tiny_generator(7);
  const Shape s = g.arch.image_shape();
  CompressionOperator op(s, 8, 4);
  Rng rng(3);
  Tensor y = observe_code(g, op, sample_latent(1, g.latent_dim(), rng));
  RecoveryConfig c = quick_config(6);
  RecoveryResult full = recover(g, op, y, c);

  CHECK(full.per_restart_losses.size() == 6);
  CHECK(full.L_min == *std::min_element(full.per_restart_losses.begin(), full.per_restart_losses.end()));
  CHECK(full.per_restart_losses[full.best_restart] == full.L_min);
  for (std::size_t r = 0; r < full.best_restart; ++r) CHECK(full.per_restart_losses[r] > full.L_min);
  CHECK(full.L_min == doctest::Approx(full.L_c + c.lambda * full.L_p).epsilon(1e-14));
  CHECK(full.reconstruction.shape() == s);
  CHECK(full.reconstruction == g.generate(full.z_hat).reshaped(s));

  SUBCASE("a single restart is the single run") {
    RecoveryConfig one = c;
    one.restarts = 1;
    RecoveryResult r1 = recover(g, op, y, one);
    RestartOutcome single = recover_single(g, op, y, one, restart_seed(c.seed, 0));
    CHECK(r1.L_min == single.loss);
    CHECK(r1.z_hat == single.z);
  }

  SUBCASE("best of nested restart sets never increases") {
    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= 6; ++k) {
      RecoveryConfig ck = c;
      ck.restarts = k;
      RecoveryResult rk = recover(g, op, y, ck);
      CHECK(rk.L_min <= previous);
      for (std::size_t r = 0; r < k; ++r) CHECK(rk.per_restart_losses[r] == full.per_restart_losses[r]);
      previous = rk.L_min;
    }
    CHECK(previous == full.L_min);
  }

  SUBCASE("result does not depend on restart order") {
    std::vector<std::uint64_t> seeds;
    for (std::size_t r = 0; r < 6; ++r) seeds.push_back(restart_seed(c.seed, r));
    std::vector<std::uint64_t> reversed(seeds.rbegin(), seeds.rend());
    RecoveryResult rev = recover_with_seeds(g, op, y, c, reversed);
    CHECK(rev.L_min == full.L_min);
    CHECK(rev.z_hat == full.z_hat);
    std::vector<double> a = rev.per_restart_losses, b = full.per_restart_losses;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
}

TEST_CASE("the best iterate is reported and optimization reduces the loss") {
  GeneratorModel g = tiny_generator(8);
  const Shape s = g.arch.image_shape();
  CompressionOperator op(s, 2, 5);
  Rng rng(4);
  Tensor y = observe_code(g, op, sample_latent(1, g.latent_dim(), rng));
  RecoveryConfig c = quick_config(3);
  c.iterations = 60;
  c.record_trace = true;
  RecoveryResult res = recover(g, op, y, c);
  for (const auto& o : res.restarts) {
    REQUIRE(o.trace.size() == c.iterations + 1);
    double best = std::numeric_limits<double>::infinity();
    std::size_t at = 0;
    for (const auto& t : o.trace) {
      CHECK(std::isfinite(t.total));
      if (t.total < best) {
        best = t.total;
        at = t.iteration;
      }
    }
    CHECK(o.loss == best);
    CHECK(o.best_iteration == at);
    CHECK(o.loss < 0.5 * o.trace.front().total);
    CHECK(recovery_loss(o.z, g, op, y, c.lambda).total == o.loss);
  }

  const auto path = std::filesystem::temp_directory_path() / "gancs_trace_test.csv";
  write_trace_csv(path, res);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "restart,iteration,L,L_c,L_p");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 3 * (c.iterations + 1));
  std::filesystem::remove(path);
}

TEST_CASE("recovery config defaults and json") {
  RecoveryConfig c;
  CHECK(c.lambda == 0.001);
  CHECK(c.restarts == 10);
  CHECK(c.adam.learning_rate == 0.1);
  CHECK(c.adam.beta1 == 0.9);
  CHECK(c.adam.beta2 == 0.999);
  CHECK(RecoveryConfig::default_restarts(OperatorKind::compression) == 10);
  CHECK(RecoveryConfig::default_restarts(OperatorKind::blur) == 5);
  CHECK(RecoveryConfig::default_restarts(OperatorKind::occlusion) == 5);
  c.iterations = 77;
  c.seed = 5;
  CHECK(RecoveryConfig::from_json(c.to_json()) == c);
  Json j = c.to_json();
  j["lamda"] = 0.1;
  CHECK_THROWS_AS(RecoveryConfig::from_json(j), ConfigError);
}
