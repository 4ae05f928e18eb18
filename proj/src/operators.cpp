#include "gancs/operators.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "gancs/errors.hpp"

namespace gancs {

namespace {

using RowVector = Eigen::Map<const Eigen::VectorXd>;

Shape image_shape_checked(const Shape& s) {
  if (s.size() != 3) throw ShapeError("operator image shape must be [C,H,W], got " + shape_string(s));
  return s;
}

}  // namespace

std::string to_string(OperatorKind k) {
  switch (k) {
    case OperatorKind::identity: return "identity";
    case OperatorKind::compression: return "compression";
    case OperatorKind::blur: return "blur";
    case OperatorKind::occlusion: return "occlusion";
  }
  return "?";
}

OperatorKind operator_kind_from_string(const std::string& s) {
  for (auto k : {OperatorKind::identity, OperatorKind::compression, OperatorKind::blur, OperatorKind::occlusion})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown operator kind '" + s + "'");
}

// ---- noise ------------------------------------------------------------------

double NoiseModel::sample_sigma(Rng& rng) const { return rng.uniform(0.0, delta()); }

double NoiseModel::add_noise(Tensor& y, Rng& rng) const {
  if (!(nl >= 0.0)) throw ConfigError("noise level must be nonnegative");
  if (nl == 0.0) return 0.0;
  const double sigma = sample_sigma(rng);
  for (auto& v : y.values()) v += sigma * rng.normal();
  return sigma;
}

// ---- descriptor ---------------------------------------------------------------

Json OperatorDescriptor::to_json() const {
  Json j{{"kind", to_string(kind)}};
  switch (kind) {
    case OperatorKind::identity: break;
    case OperatorKind::compression:
      j["cr"] = cr;
      j["seed"] = seed;
      break;
    case OperatorKind::blur:
      j["angle"] = angle;
      j["degree"] = degree;
      break;
    case OperatorKind::occlusion:
      j["coverage"] = coverage;
      j["seed"] = seed;
      j["fill_value"] = fill_value;
      break;
  }
  j["nl"] = nl;
  j["noise_seed"] = noise_seed;
  return j;
}

OperatorDescriptor OperatorDescriptor::from_json(const Json& j) {
  OperatorDescriptor d;
  ObjectReader r(j, "operator descriptor");
  d.kind = operator_kind_from_string(r.required<std::string>("kind"));
  d.cr = r.get("cr", d.cr);
  d.seed = r.get("seed", d.seed);
  d.angle = r.get("angle", d.angle);
  d.degree = r.get("degree", d.degree);
  d.coverage = r.get("coverage", d.coverage);
  d.fill_value = r.get("fill_value", d.fill_value);
  d.nl = r.get("nl", d.nl);
  d.noise_seed = r.get("noise_seed", d.noise_seed);
  r.finish();
  if (!(d.nl >= 0.0)) throw ConfigError("operator descriptor: nl must be nonnegative");
  return d;
}

// ---- base ---------------------------------------------------------------------

void ForwardOperator::set_noise(double nl, std::uint64_t noise_seed) {
  if (!(nl >= 0.0)) throw ConfigError("noise level must be nonnegative");
  descriptor_.nl = nl;
  descriptor_.noise_seed = noise_seed;
}

void ForwardOperator::check_input(const Tensor& s) const {
  if (s.size() != shape_size(input_shape_))
    throw ShapeError(to_string(kind()) + " operator: input has " + std::to_string(s.size()) +
                     " values, expected " + shape_string(input_shape_));
}

void ForwardOperator::check_output(const Tensor& v) const {
  if (v.size() != shape_size(output_shape_))
    throw ShapeError(to_string(kind()) + " operator adjoint: input has " + std::to_string(v.size()) +
                     " values, expected " + shape_string(output_shape_));
}

Tensor ForwardOperator::apply(const Tensor& s) const { return std::move(apply(std::vector<const Tensor*>{&s})[0]); }

Tensor ForwardOperator::adjoint(const Tensor& v) const {
  return std::move(adjoint(std::vector<const Tensor*>{&v})[0]);
}

std::vector<Tensor> ForwardOperator::apply(const std::vector<const Tensor*>& s) const {
  std::vector<Tensor> out;
  out.reserve(s.size());
  for (const Tensor* x : s) {
    check_input(*x);
    out.push_back(apply_one(*x));
  }
  return out;
}

std::vector<Tensor> ForwardOperator::adjoint(const std::vector<const Tensor*>& v) const {
  std::vector<Tensor> out;
  out.reserve(v.size());
  for (const Tensor* x : v) {
    check_output(*x);
    out.push_back(adjoint_one(*x));
  }
  return out;
}

// ---- identity -------------------------------------------------------------------

IdentityOperator::IdentityOperator(Shape image_shape, OperatorDescriptor d)
    : ForwardOperator(image_shape_checked(image_shape), image_shape, [&] {
        d.kind = OperatorKind::identity;
        return d;
      }()) {}

Tensor IdentityOperator::apply_one(const Tensor& s) const { return s.reshaped(output_shape()); }
Tensor IdentityOperator::adjoint_one(const Tensor& v) const { return v.reshaped(input_shape()); }

// ---- compression ------------------------------------------------------------------

std::size_t measurement_count(std::size_t n, double cr) {
  if (!(cr >= 1.0)) throw ConfigError("compression ratio must be >= 1");
  const auto m = static_cast<std::size_t>(std::llround(static_cast<double>(n) / cr));
  if (m < 1) throw ConfigError("compression ratio leaves no measurements");
  return m;
}

CompressionOperator::CompressionOperator(Shape image_shape, double cr, std::uint64_t seed)
    : ForwardOperator(image_shape_checked(image_shape), {measurement_count(shape_size(image_shape), cr)},
                      [&] {
                        OperatorDescriptor d;
                        d.kind = OperatorKind::compression;
                        d.cr = cr;
                        d.seed = seed;
                        return d;
                      }()),
      m_(output_shape()[0]),
      n_(shape_size(image_shape)) {
  Rng rng(seed);
  a_ = normal_tensor({m_, n_}, rng);
}

// One pass over the rows of A serves every signal; each output entry is a single
// dot product, so results do not depend on how many signals share the pass.
std::vector<Tensor> CompressionOperator::apply(const std::vector<const Tensor*>& s) const {
  for (const Tensor* x : s) check_input(*x);
  std::vector<Tensor> out(s.size(), Tensor({m_}));
  for (std::size_t m = 0; m < m_; ++m) {
    RowVector row(a_.data() + m * n_, static_cast<Eigen::Index>(n_));
    for (std::size_t r = 0; r < s.size(); ++r)
      out[r][m] = row.dot(RowVector(s[r]->data(), static_cast<Eigen::Index>(n_)));
  }
  return out;
}

std::vector<Tensor> CompressionOperator::adjoint(const std::vector<const Tensor*>& v) const {
  for (const Tensor* x : v) check_output(*x);
  std::vector<Tensor> out(v.size(), Tensor(input_shape()));
  for (std::size_t m = 0; m < m_; ++m) {
    RowVector row(a_.data() + m * n_, static_cast<Eigen::Index>(n_));
    for (std::size_t r = 0; r < v.size(); ++r) {
      Eigen::Map<Eigen::VectorXd> acc(out[r].data(), static_cast<Eigen::Index>(n_));
      acc += (*v[r])[m] * row;
    }
  }
  return out;
}

Tensor CompressionOperator::apply_one(const Tensor& s) const { return std::move(apply({&s})[0]); }
Tensor CompressionOperator::adjoint_one(const Tensor& v) const { return std::move(adjoint({&v})[0]); }

// ---- blur --------------------------------------------------------------------------

BlurKernel::BlurKernel(std::size_t degree, std::vector<double> weights) : degree_(degree), weights_(std::move(weights)) {
  if (degree_ == 0 || degree_ % 2 == 0)
    throw ConfigError("blur degree must be a positive odd integer, got " + std::to_string(degree_));
  if (weights_.size() != degree_ * degree_) throw ShapeError("blur kernel weights do not match its degree");
  double sum = 0;
  for (double w : weights_) {
    if (!(w >= 0.0)) throw ConfigError("blur kernel weights must be nonnegative");
    sum += w;
  }
  if (!(sum > 0.0)) throw ConfigError("blur kernel must have positive mass");
  for (double& w : weights_) w /= sum;
}

BlurKernel BlurKernel::motion(double angle_degrees, std::size_t degree) {
  if (degree == 0 || degree % 2 == 0)
    throw ConfigError("blur degree must be a positive odd integer, got " + std::to_string(degree));
  const long c = static_cast<long>(degree / 2);
  const double theta = angle_degrees * std::numbers::pi / 180.0;
  std::vector<double> w(degree * degree, 0.0);
  for (long t = -c; t <= c; ++t) {
    const long di = std::lround(-static_cast<double>(t) * std::sin(theta));
    const long dj = std::lround(static_cast<double>(t) * std::cos(theta));
    w[static_cast<std::size_t>((c + di) * static_cast<long>(degree) + (c + dj))] = 1.0;
  }
  return BlurKernel(degree, std::move(w));
}

BlurKernel BlurKernel::custom(std::size_t degree, std::vector<double> weights) {
  return BlurKernel(degree, std::move(weights));
}

BlurOperator::BlurOperator(Shape image_shape, BlurKernel kernel, OperatorDescriptor d)
    : ForwardOperator(image_shape_checked(image_shape), image_shape,
                      [&] {
                        d.kind = OperatorKind::blur;
                        d.degree = kernel.degree();
                        return d;
                      }()),
      kernel_(std::move(kernel)) {
  if (kernel_.degree() > std::min(image_shape[1], image_shape[2]))
    throw ConfigError("blur kernel extent exceeds the image size");
}

namespace {

// sign = +1: out[i,j] = Σ K[a,b] s[i-(a-c), j-(b-c)] (convolution);
// sign = -1: out[i,j] = Σ K[a,b] s[i+(a-c), j+(b-c)] (its adjoint).
Tensor blur_pass(const BlurKernel& k, const Shape& shape, const Tensor& s, long sign) {
  const long h = static_cast<long>(shape[1]), w = static_cast<long>(shape[2]);
  const long d = static_cast<long>(k.degree()), c = d / 2;
  Tensor out(shape);
  for (std::size_t ch = 0; ch < shape[0]; ++ch) {
    const double* src = s.data() + ch * static_cast<std::size_t>(h * w);
    double* dst = out.data() + ch * static_cast<std::size_t>(h * w);
    for (long a = 0; a < d; ++a) {
      for (long b = 0; b < d; ++b) {
        const double kw = k.at(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
        if (kw == 0.0) continue;
        const long di = -sign * (a - c), dj = -sign * (b - c);
        for (long i = std::max(0L, -di); i < std::min(h, h - di); ++i) {
          const double* srow = src + (i + di) * w;
          double* drow = dst + i * w;
          for (long j = std::max(0L, -dj); j < std::min(w, w - dj); ++j) drow[j] += kw * srow[j + dj];
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor BlurOperator::apply_one(const Tensor& s) const { return blur_pass(kernel_, input_shape(), s, +1); }
Tensor BlurOperator::adjoint_one(const Tensor& v) const { return blur_pass(kernel_, input_shape(), v, -1); }

// ---- occlusion -----------------------------------------------------------------------

BinaryMask leaf_occlusion_mask(std::size_t height, std::size_t width, double coverage, std::uint64_t seed) {
  if (!(coverage > 0.0 && coverage < 1.0)) throw ConfigError("occlusion coverage must lie in (0, 1)");
  Rng rng(seed);
  const double phi = rng.uniform(0.0, std::numbers::pi);
  const double cy = rng.uniform(0.3, 0.7) * static_cast<double>(height);
  const double cx = rng.uniform(0.3, 0.7) * static_cast<double>(width);
  const double ux = std::cos(phi), uy = std::sin(phi);

  auto rasterize = [&](double r) {
    BinaryMask visible(height, width, 1);
    const double r2 = r * r;
    for (std::size_t i = 0; i < height; ++i) {
      for (std::size_t j = 0; j < width; ++j) {
        const double y = static_cast<double>(i) + 0.5 - cy, x = static_cast<double>(j) + 0.5 - cx;
        const double ax = x - 0.5 * r * ux, ay = y - 0.5 * r * uy;
        const double bx = x + 0.5 * r * ux, by = y + 0.5 * r * uy;
        if (ax * ax + ay * ay <= r2 && bx * bx + by * by <= r2) visible.at(i, j) = 0;
      }
    }
    return visible;
  };

  const double target = coverage * static_cast<double>(height * width);
  double lo = 0.0, hi = 2.0 * static_cast<double>(std::max(height, width));
  BinaryMask best = rasterize(hi);
  double best_err = std::abs(static_cast<double>(height * width - best.count()) - target);
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    BinaryMask m = rasterize(mid);
    const double occluded = static_cast<double>(height * width - m.count());
    const double err = std::abs(occluded - target);
    if (err < best_err) {
      best_err = err;
      best = std::move(m);
    }
    if (occluded < target)
      lo = mid;
    else
      hi = mid;
  }
  if (best_err > 0.02 * static_cast<double>(height * width))
    throw ConfigError("occlusion coverage " + std::to_string(coverage) + " is not reachable within 0.02");
  return best;
}

OcclusionOperator::OcclusionOperator(Shape image_shape, BinaryMask visible, double fill_value, OperatorDescriptor d)
    : ForwardOperator(image_shape_checked(image_shape), image_shape,
                      [&] {
                        d.kind = OperatorKind::occlusion;
                        d.fill_value = fill_value;
                        return d;
                      }()),
      visible_(std::move(visible)),
      fill_value_(fill_value) {
  if (visible_.height != image_shape[1] || visible_.width != image_shape[2])
    throw ShapeError("occlusion mask " + std::to_string(visible_.height) + "x" + std::to_string(visible_.width) +
                     " does not match image " + shape_string(image_shape));
}

Tensor OcclusionOperator::apply_one(const Tensor& s) const {
  Tensor out = s.reshaped(input_shape());
  const std::size_t plane = visible_.values.size();
  for (std::size_t k = 0; k < out.size(); ++k)
    if (!visible_.values[k % plane]) out[k] = 0.0;
  return out;
}

Tensor OcclusionOperator::adjoint_one(const Tensor& v) const { return apply_one(v); }

Tensor OcclusionOperator::display(const Tensor& s) const {
  check_input(s);
  Tensor out = s.reshaped(input_shape());
  const std::size_t plane = visible_.values.size();
  for (std::size_t k = 0; k < out.size(); ++k)
    if (!visible_.values[k % plane]) out[k] = fill_value_;
  return out;
}

// ---- factory / observation ------------------------------------------------------------

std::unique_ptr<ForwardOperator> make_operator(const OperatorDescriptor& d, const Shape& image_shape) {
  std::unique_ptr<ForwardOperator> op;
  switch (d.kind) {
    case OperatorKind::identity: op = std::make_unique<IdentityOperator>(image_shape, d); break;
    case OperatorKind::compression: op = std::make_unique<CompressionOperator>(image_shape, d.cr, d.seed); break;
    case OperatorKind::blur:
      op = std::make_unique<BlurOperator>(image_shape, BlurKernel::motion(d.angle, d.degree), d);
      break;
    case OperatorKind::occlusion:
      op = std::make_unique<OcclusionOperator>(
          image_shape, leaf_occlusion_mask(image_shape.at(1), image_shape.at(2), d.coverage, d.seed), d.fill_value, d);
      break;
  }
  op->set_noise(d.nl, d.noise_seed);
  return op;
}

Observation observe(const ForwardOperator& op, const Tensor& s) {
  const OperatorDescriptor& d = op.descriptor();
  Observation obs;
  obs.y = op.apply(s);
  Rng rng(d.noise_seed);
  obs.sigma = d.noise().add_noise(obs.y, rng);
  obs.descriptor = d;
  obs.image_shape = op.input_shape();
  return obs;
}

}  // namespace gancs
