#include "gancs/recovery.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "gancs/errors.hpp"

namespace gancs {

namespace {

void check_problem(const GeneratorModel& g, const ForwardOperator& op, const Tensor& y) {
  if (g.net.mode() != Mode::infer) throw ModeError("latent recovery requires the generator in inference mode");
  if (shape_size(op.input_shape()) != shape_size(g.net.output_shape()))
    throw ShapeError("operator input " + shape_string(op.input_shape()) + " does not match generator output " +
                     shape_string(g.net.output_shape()));
  if (y.size() != shape_size(op.output_shape()))
    throw ShapeError("observation has " + std::to_string(y.size()) + " values, operator produces " +
                     shape_string(op.output_shape()));
}

// Losses (and gradients when requested) for several codes. The operator sees all
// codes in one call; every quantity of code r depends on code r alone.
std::vector<RecoveryLoss> batch_loss(const GeneratorModel& g, const ForwardOperator& op, const Tensor& y,
                                     double lambda, const std::vector<const Tensor*>& zs, bool with_grad) {
  std::vector<Activations> acts;
  std::vector<const Tensor*> images;
  acts.reserve(zs.size());
  for (const Tensor* z : zs) acts.push_back(g.net.forward(*z));
  for (const auto& a : acts) images.push_back(&a.output());
  std::vector<Tensor> projected = op.apply(images);

  std::vector<RecoveryLoss> out(zs.size());
  std::vector<Tensor> residuals;
  residuals.reserve(zs.size());
  for (std::size_t r = 0; r < zs.size(); ++r) {
    Tensor res = projected[r].reshaped(y.shape()) - y;
    out[r].consistency = squared_norm(res);
    out[r].penalty = squared_norm(*zs[r]);
    out[r].total = out[r].consistency + lambda * out[r].penalty;
    residuals.push_back(2.0 * res);
  }
  if (!with_grad) return out;

  std::vector<const Tensor*> pres;
  for (const auto& r : residuals) pres.push_back(&r);
  std::vector<Tensor> back = op.adjoint(pres);
  for (std::size_t r = 0; r < zs.size(); ++r) {
    Tensor grad_image = back[r].reshaped(acts[r].output().shape());
    Tensor gz = g.net.backward(acts[r], grad_image, false).input;
    gz += (2.0 * lambda) * *zs[r];
    out[r].grad = std::move(gz);
  }
  return out;
}

std::vector<RestartOutcome> run_restarts(const GeneratorModel& g, const ForwardOperator& op, const Tensor& y,
                                         const RecoveryConfig& config, const std::vector<std::uint64_t>& seeds) {
  config.validate();
  check_problem(g, op, y);
  const std::size_t n = seeds.size();
  std::vector<RestartOutcome> outcomes(n);
  std::vector<Tensor> z(n);
  std::vector<AdamState> adam(n, AdamState(config.adam));
  std::vector<bool> active(n, true);
  for (std::size_t r = 0; r < n; ++r) {
    Rng rng(seeds[r]);
    z[r] = sample_latent(1, g.latent_dim(), rng);
    outcomes[r].seed = seeds[r];
    outcomes[r].loss = std::numeric_limits<double>::infinity();
  }

  for (std::size_t it = 0; it <= config.iterations; ++it) {
    std::vector<std::size_t> idx;
    std::vector<const Tensor*> zs;
    for (std::size_t r = 0; r < n; ++r)
      if (active[r]) {
        idx.push_back(r);
        zs.push_back(&z[r]);
      }
    if (idx.empty()) break;
    const bool step = it < config.iterations;
    std::vector<RecoveryLoss> losses = batch_loss(g, op, y, config.lambda, zs, step);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::size_t r = idx[k];
      RestartOutcome& o = outcomes[r];
      const RecoveryLoss& l = losses[k];
      auto fail = [&](const std::string& why) {
        active[r] = false;
        o.failed = true;
        o.failure = "iteration " + std::to_string(it) + ": " + why;
      };
      if (!std::isfinite(l.total)) {
        fail("loss is not finite");
        continue;
      }
      if (config.record_trace) o.trace.push_back({it, l.total, l.consistency, l.penalty});
      if (l.total < o.loss) {
        o.loss = l.total;
        o.consistency = l.consistency;
        o.penalty = l.penalty;
        o.best_iteration = it;
        o.z = z[r];
      }
      if (!step) continue;
      try {
        adam[r].step(z[r], l.grad);
      } catch (const NumericError& e) {
        fail(std::string("gradient is not finite: ") + e.what());
      }
    }
  }
  // A restart that failed after producing finite iterates keeps its best one.
  for (auto& o : outcomes)
    if (o.failed && std::isfinite(o.loss)) o.failed = false;
  return outcomes;
}

}  // namespace

std::size_t RecoveryConfig::default_restarts(OperatorKind kind) {
  return kind == OperatorKind::blur || kind == OperatorKind::occlusion ? 5 : 10;
}

void RecoveryConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("recovery lambda must be nonnegative");
  if (iterations < 1) throw ConfigError("recovery needs at least one iteration");
  if (restarts < 1) throw ConfigError("recovery needs at least one restart");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("recovery learning rate must be positive");
}

Json RecoveryConfig::to_json() const {
  return Json{{"lambda", lambda},         {"iterations", iterations}, {"restarts", restarts},
              {"learning_rate", adam.learning_rate}, {"beta1", adam.beta1},           {"beta2", adam.beta2},
              {"seed", seed},             {"record_trace", record_trace}};
}

RecoveryConfig RecoveryConfig::from_json(const Json& j) {
  RecoveryConfig c;
  ObjectReader r(j, "recovery config");
  c.lambda = r.get("lambda", c.lambda);
  c.iterations = r.get("iterations", c.iterations);
  c.restarts = r.get("restarts", c.restarts);
  c.adam.learning_rate = r.get("learning_rate", c.adam.learning_rate);
  c.adam.beta1 = r.get("beta1", c.adam.beta1);
  c.adam.beta2 = r.get("beta2", c.adam.beta2);
  c.seed = r.get("seed", c.seed);
  c.record_trace = r.get("record_trace", c.record_trace);
  r.finish();
  c.validate();
  return c;
}

RecoveryLoss recovery_loss(const Tensor& z, const GeneratorModel& g, const ForwardOperator& op, const Tensor& y,
                           double lambda) {
  check_problem(g, op, y);
  if (z.size() != g.latent_dim())
    throw ShapeError("latent code has " + std::to_string(z.size()) + " values, expected " +
                     std::to_string(g.latent_dim()));
  Tensor zz = z.reshaped({1, g.latent_dim()});
  RecoveryLoss l = std::move(batch_loss(g, op, y, lambda, {&zz}, true)[0]);
  if (!std::isfinite(l.total)) throw NumericError("recovery loss is not finite");
  l.grad.reshape(z.shape());
  return l;
}

std::uint64_t restart_seed(std::uint64_t seed, std::size_t restart) { return derive_seed(seed, restart); }

RestartOutcome recover_single(const GeneratorModel& g, const ForwardOperator& op, const Tensor& y,
                              const RecoveryConfig& config, std::uint64_t seed) {
  RestartOutcome o = std::move(run_restarts(g, op, y, config, {seed})[0]);
  if (o.failed) throw NumericError("recovery failed at " + o.failure);
  return o;
}

RecoveryResult recover_with_seeds(const GeneratorModel& g, const ForwardOperator& op, const Tensor& y,
                                  const RecoveryConfig& config, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("recovery needs at least one restart");
  const auto start = std::chrono::steady_clock::now();
  RecoveryResult res;
  res.restarts = run_restarts(g, op, y, config, seeds);
  bool any = false;
  for (std::size_t r = 0; r < res.restarts.size(); ++r) {
    const auto& o = res.restarts[r];
    res.per_restart_losses.push_back(o.failed ? std::numeric_limits<double>::infinity() : o.loss);
    if (!o.failed && (!any || o.loss < res.L_min)) {
      any = true;
      res.L_min = o.loss;
      res.best_restart = r;
    }
  }
  if (!any) {
    std::ostringstream os;
    os << "all " << seeds.size() << " recovery restarts failed:";
    for (std::size_t r = 0; r < res.restarts.size(); ++r)
      os << " [restart " << r << " seed " << res.restarts[r].seed << ": " << res.restarts[r].failure << "]";
    throw NumericError(os.str());
  }
  const auto& best = res.restarts[res.best_restart];
  res.z_hat = best.z;
  res.L_c = best.consistency;
  res.L_p = best.penalty;
  Tensor image = g.net.infer(res.z_hat);
  res.reconstruction = image.reshaped(g.net.output_shape());
  res.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

RecoveryResult recover(const GeneratorModel& g, const ForwardOperator& op, const Tensor& y,
                       const RecoveryConfig& config) {
  config.validate();
  std::vector<std::uint64_t> seeds;
  for (std::size_t r = 0; r < config.restarts; ++r) seeds.push_back(restart_seed(config.seed, r));
  return recover_with_seeds(g, op, y, config, seeds);
}

void write_trace_csv(const std::filesystem::path& path, const RecoveryResult& result) {
  std::ostringstream os;
  os.precision(17);
  os << "restart,iteration,L,L_c,L_p\n";
  for (std::size_t r = 0; r < result.restarts.size(); ++r)
    for (const auto& t : result.restarts[r].trace)
      os << r << ',' << t.iteration << ',' << t.total << ',' << t.consistency << ',' << t.penalty << '\n';
  write_text_atomic(path, os.str());
}

}  // namespace gancs
