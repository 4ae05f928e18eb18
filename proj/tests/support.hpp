#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "gancs/finite_diff.hpp"
#include "gancs/network.hpp"
#include "gancs/operators.hpp"
#include "gancs/rng.hpp"

// Oracles shared by the unit tests and the acceptance run.
namespace gancs::testing {

// Scalar probe loss sum(c ⊙ net(x)); its output gradient is simply c.
inline double probe_loss(const Network& net, const Tensor& x, const Tensor& c) { return dot(net.infer(x), c); }

inline Tensor random_tensor(Shape shape, Rng& rng, double min_abs = 0.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) {
    double u = rng.normal();
    if (std::abs(u) < min_abs) u = u < 0 ? u - min_abs : u + min_abs;
    v = u;
  }
  return t;
}

struct CheckResult {
  double input_error = 0.0;
  double param_error = 0.0;
};

inline CheckResult gradient_check(Network net, const Tensor& x, Rng& rng) {
  const Tensor c = random_tensor(net.forward(x).output().shape(), rng);
  const auto acts = net.forward(x);
  const auto grads = net.backward(acts, c);

  CheckResult r;
  const Tensor fd_input = finite_diff_grad([&](const Tensor& xp) { return probe_loss(net, xp, c); }, x, 1e-5);
  r.input_error = relative_error(grads.input, fd_input);

  // Parameter error is measured over all parameters jointly: biases feeding a
  // train-mode batchnorm have an exactly zero gradient, where per-tensor
  // relative error would only compare finite-difference round-off.
  std::vector<double> analytic, numeric;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    for (std::size_t k = 0; k < net.parameters()[l].size(); ++k) {
      const Tensor original = net.parameters()[l][k];
      const Tensor fd = finite_diff_grad(
          [&](const Tensor& p) {
            net.parameters()[l][k] = p;
            const double v = probe_loss(net, x, c);
            net.parameters()[l][k] = original;
            return v;
          },
          original, 1e-5);
      analytic.insert(analytic.end(), grads.params[l][k].values().begin(), grads.params[l][k].values().end());
      numeric.insert(numeric.end(), fd.values().begin(), fd.values().end());
    }
  }
  if (!analytic.empty()) {
    const Shape s{analytic.size()};
    r.param_error = relative_error(Tensor(s, analytic), Tensor(s, numeric));
  }
  return r;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

inline Network random_layer_network(LayerKind kind, Rng& rng, Shape& input_shape) {
  switch (kind) {
    case LayerKind::dense: {
      const auto in = pick(rng, 1, 6), out = pick(rng, 1, 6);
      input_shape = {in};
      return Network(input_shape, {LayerSpec::dense(in, out)});
    }
    case LayerKind::conv2d: {
      const auto k = pick(rng, 1, 4), s = pick(rng, 1, 3), p = pick(rng, 0, k - 1);
      input_shape = {pick(rng, 1, 3), pick(rng, k, 7), pick(rng, k, 7)};
      return Network(input_shape, {LayerSpec::conv2d(input_shape[0], pick(rng, 1, 3), k, s, p)});
    }
    case LayerKind::conv_transpose2d: {
      const auto k = pick(rng, 2, 4), s = pick(rng, 1, 2), p = pick(rng, 0, (k - 1) / 2);
      input_shape = {pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)};
      return Network(input_shape, {LayerSpec::conv_transpose2d(input_shape[0], pick(rng, 1, 3), k, s, p)});
    }
    case LayerKind::batchnorm2d:
      input_shape = {pick(rng, 1, 3), pick(rng, 2, 4), pick(rng, 2, 4)};
      return Network(input_shape, {LayerSpec::batchnorm2d(input_shape[0])});
    case LayerKind::leaky_relu:
      input_shape = {pick(rng, 1, 5), pick(rng, 1, 3)};
      return Network(input_shape, {LayerSpec::leaky_relu(rng.uniform(0.05, 0.95))});
    case LayerKind::reshape:
      input_shape = {2, 3, 2};
      return Network(input_shape, {LayerSpec::reshape({12})});
    case LayerKind::relu:
      input_shape = {pick(rng, 1, 5), pick(rng, 1, 3)};
      return Network(input_shape, {LayerSpec::relu()});
    case LayerKind::tanh:
      input_shape = {pick(rng, 1, 5), pick(rng, 1, 3)};
      return Network(input_shape, {LayerSpec::tanh()});
    case LayerKind::sigmoid:
      input_shape = {pick(rng, 1, 5), pick(rng, 1, 3)};
      return Network(input_shape, {LayerSpec::sigmoid()});
  }
  throw std::logic_error("unreachable");
}

inline Tensor batched(const Shape& sample, std::size_t batch, Rng& rng, double min_abs) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return random_tensor(s, rng, min_abs);
}


/// Relative mismatch of <op(x), v> and <x, adjoint(v)> for random x and v.
inline double adjoint_mismatch(const ForwardOperator& op, Rng& rng) {
  Tensor x = normal_tensor(op.input_shape(), rng);
  Tensor v = normal_tensor(op.output_shape(), rng);
  const double lhs = dot(op.apply(x), v);
  const double rhs = dot(x, op.adjoint(v));
  return std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-300});
}

}  // namespace gancs::testing
