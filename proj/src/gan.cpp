#include "gancs/gan.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gancs/errors.hpp"

namespace gancs {

namespace {

bool power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

// −log(1 + e^{−a}) without overflow.
double stable_log_sigmoid(double a) { return a >= 0 ? -std::log1p(std::exp(-a)) : a - std::log1p(std::exp(a)); }

double sigmoid(double a) {
  if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
  double e = std::exp(a);
  return e / (1.0 + e);
}

// Logit bound where the sigmoid reaches the probability clamp.
const double kLogitBound = std::log((1.0 - kProbabilityClamp) / kProbabilityClamp);

std::vector<double> logits_of(const Activations& acts, std::size_t logit_layer) {
  const Tensor& t = acts.values.at(logit_layer + 1);
  return {t.values().begin(), t.values().end()};
}

Tensor batch_slice(const std::vector<Tensor>& images, const std::vector<std::size_t>& order, std::size_t begin,
                   std::size_t end) {
  const Shape& s = images.front().shape();
  Shape shape{end - begin};
  shape.insert(shape.end(), s.begin(), s.end());
  Tensor out(shape);
  std::size_t n = images.front().size();
  for (std::size_t b = begin; b < end; ++b) {
    const Tensor& img = images[order[b]];
    std::copy(img.values().begin(), img.values().end(), out.data() + (b - begin) * n);
  }
  return out;
}

}  // namespace

std::size_t GanArchitecture::stages() const {
  return static_cast<std::size_t>(std::countr_zero(std::min(height, width))) - 2;
}

void GanArchitecture::validate() const {
  if (!power_of_two(height) || !power_of_two(width) || std::min(height, width) < 8)
    throw ConfigError("architecture image size must be powers of two >= 8");
  if (channels != 1 && channels != 3) throw ConfigError("architecture channels must be 1 or 3");
  if (latent_dim == 0 || g_base == 0 || d_base == 0) throw ConfigError("architecture widths must be positive");
}

Json GanArchitecture::to_json() const {
  return Json{{"height", height}, {"width", width},   {"channels", channels},
              {"latent_dim", latent_dim}, {"g_base", g_base}, {"d_base", d_base}};
}

GanArchitecture GanArchitecture::from_json(const Json& j) {
  GanArchitecture a;
  ObjectReader r(j, "architecture");
  a.height = r.get("height", a.height);
  a.width = r.get("width", a.width);
  a.channels = r.get("channels", a.channels);
  a.latent_dim = r.get("latent_dim", a.latent_dim);
  a.g_base = r.get("g_base", a.g_base);
  a.d_base = r.get("d_base", a.d_base);
  r.finish();
  a.validate();
  return a;
}

Network build_generator(const GanArchitecture& arch) {
  arch.validate();
  std::size_t n = arch.stages();
  std::size_t h0 = arch.height >> n, w0 = arch.width >> n;
  std::size_t ch = arch.g_base << (n - 1);
  std::vector<LayerSpec> layers{LayerSpec::dense(arch.latent_dim, ch * h0 * w0), LayerSpec::reshape({ch, h0, w0}),
                                LayerSpec::batchnorm2d(ch), LayerSpec::relu()};
  for (std::size_t s = 0; s + 1 < n; ++s) {
    layers.push_back(LayerSpec::conv_transpose2d(ch, ch / 2, 4, 2, 1));
    layers.push_back(LayerSpec::batchnorm2d(ch / 2));
    layers.push_back(LayerSpec::relu());
    ch /= 2;
  }
  layers.push_back(LayerSpec::conv_transpose2d(ch, arch.channels, 4, 2, 1));
  layers.push_back(LayerSpec::tanh());
  return Network({arch.latent_dim}, std::move(layers));
}

Network build_discriminator(const GanArchitecture& arch) {
  arch.validate();
  std::size_t n = arch.stages();
  std::vector<LayerSpec> layers;
  std::size_t in = arch.channels, out = arch.d_base;
  for (std::size_t s = 0; s < n; ++s) {
    layers.push_back(LayerSpec::conv2d(in, out, 4, 2, 1));
    if (s > 0) layers.push_back(LayerSpec::batchnorm2d(out));
    layers.push_back(LayerSpec::leaky_relu(0.2));
    in = out;
    out *= 2;
  }
  std::size_t flat = in * (arch.height >> n) * (arch.width >> n);
  layers.push_back(LayerSpec::reshape({flat}));
  layers.push_back(LayerSpec::dense(flat, 1));
  layers.push_back(LayerSpec::sigmoid());
  return Network(arch.image_shape(), std::move(layers));
}

Tensor GeneratorModel::generate(const Tensor& z) const {
  if (net.mode() != Mode::infer) {
    Network frozen = net;
    frozen.set_mode(Mode::infer);
    return frozen.infer(z);
  }
  return net.infer(z);
}

std::string to_string(LossVariant v) { return v == LossVariant::literal ? "literal" : "non_saturating"; }

LossVariant loss_variant_from_string(const std::string& s) {
  if (s == "literal") return LossVariant::literal;
  if (s == "non_saturating") return LossVariant::non_saturating;
  throw ConfigError("unknown loss variant '" + s + "' (expected literal or non_saturating)");
}

LogProbability log_sigmoid_clamped(double logit) {
  if (logit <= -kLogitBound) return {std::log(kProbabilityClamp), 0.0};
  if (logit >= kLogitBound) return {std::log1p(-kProbabilityClamp), 0.0};
  return {stable_log_sigmoid(logit), sigmoid(-logit)};
}

LogProbability log_one_minus_sigmoid_clamped(double logit) {
  if (logit >= kLogitBound) return {std::log(kProbabilityClamp), 0.0};
  if (logit <= -kLogitBound) return {std::log1p(-kProbabilityClamp), 0.0};
  return {stable_log_sigmoid(-logit), -sigmoid(logit)};
}

Tensor sample_latent(std::size_t count, std::size_t latent_dim, Rng& rng) {
  if (count == 0 || latent_dim == 0) throw ConfigError("latent sample dimensions must be positive");
  return normal_tensor({count, latent_dim}, rng);
}

LogitLoss discriminator_loss_from_logits(std::span<const double> real, std::span<const double> fake,
                                        LossVariant variant) {
  if (real.empty() || real.size() != fake.size()) throw ShapeError("discriminator loss: batch sizes differ");
  const double nb = static_cast<double>(real.size());
  const bool literal = variant == LossVariant::literal;
  // literal minimizes log(1 − D(x)) + log D(G(z)); non_saturating minimizes −log D(x) − log(1 − D(G(z))).
  const double sign = literal ? 1.0 : -1.0;
  LogitLoss out;
  out.d_real.resize(real.size());
  out.d_fake.resize(fake.size());
  for (std::size_t i = 0; i < real.size(); ++i) {
    LogProbability p = literal ? log_one_minus_sigmoid_clamped(real[i]) : log_sigmoid_clamped(real[i]);
    out.value += sign * p.value / nb;
    out.d_real[i] = sign * p.dlogit / nb;
  }
  for (std::size_t i = 0; i < fake.size(); ++i) {
    LogProbability p = literal ? log_sigmoid_clamped(fake[i]) : log_one_minus_sigmoid_clamped(fake[i]);
    out.value += sign * p.value / nb;
    out.d_fake[i] = sign * p.dlogit / nb;
  }
  if (!std::isfinite(out.value)) throw NumericError("discriminator loss is not finite");
  return out;
}

LogitLoss generator_loss_from_logits(std::span<const double> fake, LossVariant variant) {
  if (fake.empty()) throw ShapeError("generator loss: empty batch");
  const double nb = static_cast<double>(fake.size());
  const bool literal = variant == LossVariant::literal;
  const double sign = literal ? 1.0 : -1.0;
  LogitLoss out;
  out.d_fake.resize(fake.size());
  for (std::size_t i = 0; i < fake.size(); ++i) {
    LogProbability p = literal ? log_one_minus_sigmoid_clamped(fake[i]) : log_sigmoid_clamped(fake[i]);
    out.value += sign * p.value / nb;
    out.d_fake[i] = sign * p.dlogit / nb;
  }
  if (!std::isfinite(out.value)) throw NumericError("generator loss is not finite");
  return out;
}

DiscriminatorLoss discriminator_loss(const DiscriminatorModel& d, const Tensor& real, const Tensor& fake,
                                     LossVariant variant) {
  if (real.shape() != fake.shape())
    throw ShapeError("discriminator loss: real " + shape_string(real.shape()) + " vs fake " +
                     shape_string(fake.shape()));
  if (d.net.mode() != Mode::train) throw ModeError("discriminator loss requires a train-mode discriminator");
  DiscriminatorLoss out;
  out.real_acts = d.net.forward(real);
  out.fake_acts = d.net.forward(fake);
  const std::size_t layer = d.logit_layer();
  auto real_logits = logits_of(out.real_acts, layer);
  auto fake_logits = logits_of(out.fake_acts, layer);
  LogitLoss l = discriminator_loss_from_logits(real_logits, fake_logits, variant);
  out.loss = l.value;
  for (double a : real_logits) out.mean_real += sigmoid(a) / static_cast<double>(real_logits.size());
  for (double a : fake_logits) out.mean_fake += sigmoid(a) / static_cast<double>(fake_logits.size());

  const std::size_t nb = real_logits.size();
  Gradients gr = d.net.backward_from(out.real_acts, layer, Tensor({nb, 1}, std::move(l.d_real)));
  Gradients gf = d.net.backward_from(out.fake_acts, layer, Tensor({nb, 1}, std::move(l.d_fake)));
  out.grads = std::move(gr.params);
  for (std::size_t i = 0; i < out.grads.size(); ++i)
    for (std::size_t p = 0; p < out.grads[i].size(); ++p) out.grads[i][p] += gf.params[i][p];
  return out;
}

GeneratorLoss generator_loss(const GeneratorModel& g, const DiscriminatorModel& d, const Tensor& z,
                             LossVariant variant) {
  if (g.net.mode() != Mode::train || d.net.mode() != Mode::train)
    throw ModeError("generator loss requires train-mode networks");
  GeneratorLoss out;
  out.g_acts = g.net.forward(z);
  Activations d_acts = d.net.forward(out.g_acts.output());
  const std::size_t layer = d.logit_layer();
  auto logits = logits_of(d_acts, layer);
  LogitLoss l = generator_loss_from_logits(logits, variant);
  out.loss = l.value;
  for (double a : logits) out.mean_fake += sigmoid(a) / static_cast<double>(logits.size());
  Gradients through_d = d.net.backward_from(d_acts, layer, Tensor({logits.size(), 1}, std::move(l.d_fake)), false);
  out.grads = g.net.backward(out.g_acts, through_d.input).params;
  return out;
}

void GanTrainConfig::validate() const {
  if (minibatch_size == 0 || max_epochs == 0 || g_updates_per_d_update == 0)
    throw ConfigError("training counts must be positive");
  if (!(adam.learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (!(init_stddev > 0)) throw ConfigError("initialization stddev must be positive");
}

Json GanTrainConfig::to_json() const {
  return Json{{"minibatch_size", minibatch_size},
              {"max_epochs", max_epochs},
              {"g_updates_per_d_update", g_updates_per_d_update},
              {"learning_rate", adam.learning_rate},
              {"beta1", adam.beta1},
              {"beta2", adam.beta2},
              {"loss_variant", to_string(loss_variant)},
              {"init_stddev", init_stddev},
              {"seed", seed}};
}

GanTrainConfig GanTrainConfig::from_json(const Json& j) {
  GanTrainConfig c;
  ObjectReader r(j, "training config");
  c.minibatch_size = r.get("minibatch_size", c.minibatch_size);
  c.max_epochs = r.get("max_epochs", c.max_epochs);
  c.g_updates_per_d_update = r.get("g_updates_per_d_update", c.g_updates_per_d_update);
  c.adam.learning_rate = r.get("learning_rate", c.adam.learning_rate);
  c.adam.beta1 = r.get("beta1", c.adam.beta1);
  c.adam.beta2 = r.get("beta2", c.adam.beta2);
  c.loss_variant = loss_variant_from_string(r.get<std::string>("loss_variant", to_string(c.loss_variant)));
  c.init_stddev = r.get("init_stddev", c.init_stddev);
  c.seed = r.get("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

TrainResult train_gan(const std::vector<Tensor>& images, const GanArchitecture& arch, const GanTrainConfig& config,
                      const TrainProgress& progress) {
  config.validate();
  if (images.empty()) throw ConfigError("training corpus is empty");
  for (const auto& img : images)
    if (img.shape() != arch.image_shape())
      throw ShapeError("training image " + shape_string(img.shape()) + " does not match architecture " +
                       shape_string(arch.image_shape()));

  TrainResult res{GeneratorModel(arch), DiscriminatorModel(arch), {}, 0, 0};
  Rng init_rng(derive_seed(config.seed, 0));
  Rng order_rng(derive_seed(config.seed, 1));
  Rng latent_rng(derive_seed(config.seed, 2));
  res.generator.net.initialize(init_rng, config.init_stddev);
  res.discriminator.net.initialize(init_rng, config.init_stddev);
  res.generator.net.set_mode(Mode::train);
  res.discriminator.net.set_mode(Mode::train);

  Network& gnet = res.generator.net;
  Network& dnet = res.discriminator.net;
  AdamState g_opt(config.adam), d_opt(config.adam);
  auto g_params = gnet.parameter_list();
  auto d_params = dnet.parameter_list();
  auto g_names = gnet.parameter_names();
  auto d_names = dnet.parameter_names();
  auto flatten = [](std::vector<std::vector<Tensor>>& nested) {
    std::vector<Tensor> flat;
    for (auto& layer : nested)
      for (auto& t : layer) flat.push_back(std::move(t));
    return flat;
  };

  auto run_step = [&](const Tensor& real, std::size_t step, std::size_t epoch) {
    const std::size_t nb = real.dim(0);
    Activations fake_acts = gnet.forward(sample_latent(nb, arch.latent_dim, latent_rng));
    gnet.update_running_stats(fake_acts);
    DiscriminatorLoss dl = discriminator_loss(res.discriminator, real, fake_acts.output(), config.loss_variant);
    dnet.update_running_stats(dl.real_acts);
    dnet.update_running_stats(dl.fake_acts);
    auto dg = flatten(dl.grads);
    d_opt.step(d_params, dg, d_names);
    ++res.d_steps;

    TrainRecord rec{step, epoch, dl.loss, 0.0, dl.mean_real, dl.mean_fake};
    for (std::size_t k = 0; k < config.g_updates_per_d_update; ++k) {
      GeneratorLoss gl = generator_loss(res.generator, res.discriminator,
                                        sample_latent(nb, arch.latent_dim, latent_rng), config.loss_variant);
      gnet.update_running_stats(gl.g_acts);
      auto gg = flatten(gl.grads);
      g_opt.step(g_params, gg, g_names);
      ++res.g_steps;
      rec.g_loss += gl.loss / static_cast<double>(config.g_updates_per_d_update);
    }
    return rec;
  };

  std::vector<std::size_t> order(images.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
    for (std::size_t begin = 0; begin < order.size(); begin += config.minibatch_size, ++step) {
      const std::size_t end = std::min(order.size(), begin + config.minibatch_size);
      TrainRecord rec;
      try {
        rec = run_step(batch_slice(images, order, begin, end), step, epoch);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
      }
      res.history.push_back(rec);
      if (progress) progress(rec);
    }
  }
  gnet.set_mode(Mode::infer);
  dnet.set_mode(Mode::infer);
  return res;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<TrainRecord>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "step,d_loss,g_loss\n";
  for (const auto& r : history) os << r.step << ',' << r.d_loss << ',' << r.g_loss << '\n';
  write_text_atomic(path, os.str());
}

}  // namespace gancs
