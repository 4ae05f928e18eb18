#include <doctest.h>

#include <cmath>

#include "gancs/errors.hpp"
#include "gancs/finite_diff.hpp"
#include "gancs/gan.hpp"

using namespace gancs;

namespace {

GanArchitecture tiny_arch(std::size_t size = 8) {
  GanArchitecture a;
  a.height = a.width = size;
  a.latent_dim = 5;
  a.g_base = 3;
  a.d_base = 2;
  return a;
}

Tensor random_images(std::size_t batch, const GanArchitecture& a, Rng& rng) {
  Tensor t = normal_tensor({batch, a.channels, a.height, a.width}, rng, 0.5);
  for (auto& v : t.values()) v = std::tanh(v);
  return t;
}

// Relative error of an analytic gradient against central differences over every
// parameter tensor of `net`, with `loss` re-evaluated after each perturbation.
double parameter_gradient_error(Network& net, const std::vector<std::vector<Tensor>>& analytic,
                                const std::function<double()>& loss) {
  double diff = 0, ref = 0;
  auto& params = net.parameters();
  for (std::size_t l = 0; l < params.size(); ++l) {
    for (std::size_t p = 0; p < params[l].size(); ++p) {
      Tensor& param = params[l][p];
      Tensor original = param;
      Tensor numeric = finite_diff_grad(
          [&](const Tensor& x) {
            param = x;
            return loss();
          },
          original, 1e-5);
      param = original;
      Tensor delta = numeric - analytic[l][p];
      diff += squared_norm(delta);
      ref += std::max(squared_norm(numeric), squared_norm(analytic[l][p]));
    }
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

}  // namespace

TEST_CASE("architecture shapes") {
  GanArchitecture a;
  CHECK(a.latent_dim == 100);
  CHECK(a.stages() == 4);
  Network g = build_generator(a);
  Network d = build_discriminator(a);
  CHECK(g.input_shape() == Shape{100});
  CHECK(g.output_shape() == Shape{1, 64, 64});
  CHECK(d.input_shape() == Shape{1, 64, 64});
  CHECK(d.output_shape() == Shape{1});
  CHECK(g.layers().back().kind == LayerKind::tanh);
  CHECK(d.layers().back().kind == LayerKind::sigmoid);
  // No batchnorm directly after the first discriminator convolution.
  CHECK(d.layers()[1].kind == LayerKind::leaky_relu);
  CHECK(d.layers()[1].slope == 0.2);

  a.height = 128;
  a.width = 64;
  a.channels = 3;
  CHECK(build_generator(a).output_shape() == Shape{3, 128, 64});
  CHECK(build_discriminator(a).output_shape() == Shape{1});

  GanArchitecture bad;
  bad.height = 48;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(GanArchitecture::from_json(a.to_json()) == a);
}

TEST_CASE("generator outputs stay in [-1,1] for any code") {
  GanArchitecture a = tiny_arch(16);
  GeneratorModel g(a);
  Rng rng(3);
  g.net.initialize(rng, 0.5);
  g.net.set_mode(Mode::infer);
  for (double scale : {1.0, 100.0, 1e6}) {
    Tensor z = normal_tensor({4, a.latent_dim}, rng, scale);
    for (double v : g.generate(z).values()) CHECK((v >= -1.0 && v <= 1.0));
  }
}

TEST_CASE("latent sampling") {
  Rng a(11), b(11);
  CHECK(sample_latent(3, 100, a) == sample_latent(3, 100, b));
  Rng rng(12);
  Tensor z = sample_latent(1000, 100, rng);
  CHECK(z.shape() == Shape{1000, 100});
  double mean = 0;
  for (double v : z.values()) mean += v;
  mean /= double(z.size());
  double var = 0;
  for (double v : z.values()) var += (v - mean) * (v - mean);
  var /= double(z.size() - 1);
  CHECK(std::abs(mean) <= 0.02);
  CHECK((var >= 0.97 && var <= 1.03));
  CHECK_THROWS_AS(sample_latent(0, 100, rng), ConfigError);
}

TEST_CASE("clamped log probabilities") {
  CHECK(log_sigmoid_clamped(0.0).value == doctest::Approx(std::log(0.5)));
  CHECK(log_one_minus_sigmoid_clamped(0.0).value == doctest::Approx(std::log(0.5)));
  CHECK(log_sigmoid_clamped(-100.0).value == doctest::Approx(std::log(1e-7)));
  CHECK(log_sigmoid_clamped(-100.0).dlogit == 0.0);
  CHECK(log_one_minus_sigmoid_clamped(100.0).value == doctest::Approx(std::log(1e-7)));
  CHECK(log_one_minus_sigmoid_clamped(100.0).dlogit == 0.0);
  // Derivatives agree with central differences away from the clamp.
  for (double a : {-5.0, -0.3, 0.0, 0.7, 4.0}) {
    const double h = 1e-6;
    double fd1 = (log_sigmoid_clamped(a + h).value - log_sigmoid_clamped(a - h).value) / (2 * h);
    double fd2 = (log_one_minus_sigmoid_clamped(a + h).value - log_one_minus_sigmoid_clamped(a - h).value) / (2 * h);
    CHECK(log_sigmoid_clamped(a).dlogit == doctest::Approx(fd1).epsilon(1e-8));
    CHECK(log_one_minus_sigmoid_clamped(a).dlogit == doctest::Approx(fd2).epsilon(1e-8));
  }
}

TEST_CASE("loss values at analytic points") {
  std::vector<double> half(4, 0.0);  // logit 0 gives D = 0.5
  CHECK(discriminator_loss_from_logits(half, half, LossVariant::literal).value ==
        doctest::Approx(2 * std::log(0.5)));
  CHECK(discriminator_loss_from_logits(half, half, LossVariant::literal).value == doctest::Approx(-1.3863).epsilon(1e-4));
  CHECK(generator_loss_from_logits(half, LossVariant::literal).value == doctest::Approx(-0.6931).epsilon(1e-4));
  CHECK(generator_loss_from_logits(half, LossVariant::non_saturating).value ==
        doctest::Approx(0.6931).epsilon(1e-4));

  // A perfect discriminator hits the clamp on both terms.
  std::vector<double> sure_real(4, 60.0), sure_fake(4, -60.0);
  LogitLoss perfect = discriminator_loss_from_logits(sure_real, sure_fake, LossVariant::literal);
  CHECK(perfect.value == doctest::Approx(2 * std::log(1e-7)));
  CHECK(std::isfinite(perfect.value));

  // Fakes judged real: the literal generator loss saturates at log(1e-7).
  LogitLoss fooled = generator_loss_from_logits(sure_real, LossVariant::literal);
  CHECK(fooled.value == doctest::Approx(std::log(1e-7)));
  CHECK(std::isfinite(fooled.value));

  std::vector<double> nan_logits{std::nan("")};
  CHECK_THROWS_AS(generator_loss_from_logits(nan_logits, LossVariant::literal), NumericError);
}

TEST_CASE("both generator variants push D(G(z)) upward") {
  for (double a = -12.0; a <= 12.0; a += 0.5) {
    std::vector<double> logit{a};
    double lit = generator_loss_from_logits(logit, LossVariant::literal).d_fake[0];
    double ns = generator_loss_from_logits(logit, LossVariant::non_saturating).d_fake[0];
    INFO("logit " << a);
    CHECK(lit < 0.0);
    CHECK(ns < 0.0);
  }
}

TEST_CASE("discriminator loss on a network outputting one half") {
  GanArchitecture a = tiny_arch(16);
  DiscriminatorModel d(a);
  Rng rng(5);
  d.net.initialize(rng);
  d.net.set_mode(Mode::train);
  auto& dense = d.net.parameters()[d.logit_layer()];
  dense[0].fill(0.0);
  dense[1].fill(0.0);
  Tensor real = random_images(3, a, rng), fake = random_images(3, a, rng);
  DiscriminatorLoss l = discriminator_loss(d, real, fake, LossVariant::literal);
  CHECK(l.loss == doctest::Approx(2 * std::log(0.5)));
  CHECK(l.mean_real == doctest::Approx(0.5));
  CHECK(l.mean_fake == doctest::Approx(0.5));
  CHECK(discriminator_loss(d, real, fake, LossVariant::non_saturating).loss == doctest::Approx(-2 * std::log(0.5)));

  d.net.set_mode(Mode::infer);
  CHECK_THROWS_AS(discriminator_loss(d, real, fake, LossVariant::literal), ModeError);
}

TEST_CASE("discriminator loss gradients match finite differences") {
  for (LossVariant variant : {LossVariant::literal, LossVariant::non_saturating}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      GanArchitecture a = tiny_arch(16);
      DiscriminatorModel d(a);
      Rng rng(100 + seed);
      d.net.initialize(rng, 0.3);
      d.net.set_mode(Mode::train);
      Tensor real = random_images(3, a, rng), fake = random_images(3, a, rng);
      DiscriminatorLoss l = discriminator_loss(d, real, fake, variant);
      double err = parameter_gradient_error(d.net, l.grads,
                                            [&] { return discriminator_loss(d, real, fake, variant).loss; });
      INFO(to_string(variant) << " seed " << seed);
      CHECK(err < 1e-6);
    }
  }
}

TEST_CASE("generator loss gradients match finite differences") {
  for (LossVariant variant : {LossVariant::literal, LossVariant::non_saturating}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      GanArchitecture a = tiny_arch(16);
      GeneratorModel g(a);
      DiscriminatorModel d(a);
      Rng rng(200 + seed);
      g.net.initialize(rng, 0.3);
      d.net.initialize(rng, 0.3);
      g.net.set_mode(Mode::train);
      d.net.set_mode(Mode::train);
      Tensor z = sample_latent(3, a.latent_dim, rng);
      GeneratorLoss l = generator_loss(g, d, z, variant);
      double err = parameter_gradient_error(g.net, l.grads, [&] { return generator_loss(g, d, z, variant).loss; });
      INFO(to_string(variant) << " seed " << seed);
      CHECK(err < 1e-6);
    }
  }
}

TEST_CASE("training schedule arithmetic") {
  GanArchitecture a = tiny_arch(16);
  Rng rng(1);
  std::vector<Tensor> one{random_images(1, a, rng).reshaped(a.image_shape())};
  GanTrainConfig c;
  c.max_epochs = 1;
  TrainResult r = train_gan(one, a, c);
  CHECK(r.d_steps == 1);
  CHECK(r.g_steps == 2);
  CHECK(r.history.size() == 1);

  std::vector<Tensor> many;
  for (int i = 0; i < 37; ++i) many.push_back(random_images(1, a, rng).reshaped(a.image_shape()));
  c.max_epochs = 2;
  c.g_updates_per_d_update = 3;
  r = train_gan(many, a, c);
  CHECK(r.d_steps == 2 * 3);  // ceil(37 / 16) per epoch
  CHECK(r.g_steps == 3 * r.d_steps);
  CHECK(r.generator.net.mode() == Mode::infer);
}

TEST_CASE("training is deterministic for a fixed seed") {
  GanArchitecture a = tiny_arch(16);
  Rng rng(2);
  std::vector<Tensor> images;
  for (int i = 0; i < 20; ++i) images.push_back(random_images(1, a, rng).reshaped(a.image_shape()));
  GanTrainConfig c;
  c.max_epochs = 2;
  c.minibatch_size = 4;
  TrainResult r1 = train_gan(images, a, c);
  TrainResult r2 = train_gan(images, a, c);
  CHECK(r1.generator.net.parameters() == r2.generator.net.parameters());
  CHECK(r1.generator.net.running_mean() == r2.generator.net.running_mean());
  CHECK(r1.generator.net.running_var() == r2.generator.net.running_var());
  CHECK(r1.discriminator.net.parameters() == r2.discriminator.net.parameters());
  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].d_loss == r2.history[i].d_loss);
    CHECK(r1.history[i].g_loss == r2.history[i].g_loss);
  }
  c.seed += 1;
  TrainResult r3 = train_gan(images, a, c);
  CHECK(!(r3.generator.net.parameters() == r1.generator.net.parameters()));
}

TEST_CASE("divergence is reported with the step index") {
  GanArchitecture a = tiny_arch(16);
  Rng rng(4);
  std::vector<Tensor> images;
  for (int i = 0; i < 8; ++i) images.push_back(random_images(1, a, rng).reshaped(a.image_shape()));
  images[5].fill(std::nan(""));
  GanTrainConfig c;
  c.minibatch_size = 4;
  c.max_epochs = 1;
  try {
    train_gan(images, a, c);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("training config validation and json") {
  GanTrainConfig c;
  CHECK(c.minibatch_size == 16);
  CHECK(c.max_epochs == 25);
  CHECK(c.g_updates_per_d_update == 2);
  CHECK(c.adam.learning_rate == 0.0002);
  CHECK(c.adam.beta1 == 0.5);
  CHECK(c.adam.beta2 == 0.999);
  CHECK(c.loss_variant == LossVariant::non_saturating);
  c.loss_variant = LossVariant::literal;
  c.seed = 99;
  CHECK(GanTrainConfig::from_json(c.to_json()) == c);
  Json j = c.to_json();
  j["loss_variant"] = "wasserstein";
  CHECK_THROWS_AS(GanTrainConfig::from_json(j), ConfigError);
  c.minibatch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
