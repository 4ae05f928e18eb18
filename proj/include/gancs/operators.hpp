#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gancs/image.hpp"
#include "gancs/json_io.hpp"
#include "gancs/rng.hpp"
#include "gancs/tensor.hpp"

namespace gancs {

enum class OperatorKind { identity, compression, blur, occlusion };
std::string to_string(OperatorKind k);
OperatorKind operator_kind_from_string(const std::string& s);

/// Additive Gaussian measurement noise whose standard deviation σ is drawn once
/// per observation from Uniform(0, δ), δ = nl · value_range.
struct NoiseModel {
  double nl = 0.0;
  double value_range = 2.0;

  double delta() const { return nl * value_range; }
  double sample_sigma(Rng& rng) const;
  /// Adds noise in place and returns the σ used (0 when nl = 0, with y untouched).
  double add_noise(Tensor& y, Rng& rng) const;
};

/// Everything needed to rebuild an operator and its noise for a given image shape.
struct OperatorDescriptor {
  OperatorKind kind = OperatorKind::identity;
  double cr = 1.0;            // compression
  std::uint64_t seed = 0;     // compression matrix / occlusion placement
  double angle = 0.0;         // blur, degrees counter-clockwise from +x
  std::size_t degree = 1;     // blur, odd kernel extent
  double coverage = 0.25;     // occlusion, occluded fraction
  double fill_value = 0.0;    // occlusion, display only
  double nl = 0.0;
  std::uint64_t noise_seed = 0;

  NoiseModel noise() const { return {nl, 2.0}; }
  Json to_json() const;
  static OperatorDescriptor from_json(const Json& j);
  friend bool operator==(const OperatorDescriptor&, const OperatorDescriptor&) = default;
};

/// Linear degradation s ↦ A s with an exact adjoint. Inputs have the image shape
/// [C,H,W]; apply/adjoint on lists process several signals with results identical
/// to processing each one alone.
class ForwardOperator {
 public:
  virtual ~ForwardOperator() = default;

  virtual OperatorKind kind() const = 0;
  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  const OperatorDescriptor& descriptor() const { return descriptor_; }
  /// Noise recorded in the descriptor and used by observe().
  void set_noise(double nl, std::uint64_t noise_seed);

  Tensor apply(const Tensor& s) const;
  Tensor adjoint(const Tensor& v) const;
  virtual std::vector<Tensor> apply(const std::vector<const Tensor*>& s) const;
  virtual std::vector<Tensor> adjoint(const std::vector<const Tensor*>& v) const;

 protected:
  ForwardOperator(Shape in, Shape out, OperatorDescriptor d)
      : input_shape_(std::move(in)), output_shape_(std::move(out)), descriptor_(d) {}
  virtual Tensor apply_one(const Tensor& s) const = 0;
  virtual Tensor adjoint_one(const Tensor& v) const = 0;
  void check_input(const Tensor& s) const;
  void check_output(const Tensor& v) const;

 private:
  Shape input_shape_, output_shape_;
  OperatorDescriptor descriptor_;
};

class IdentityOperator final : public ForwardOperator {
 public:
  explicit IdentityOperator(Shape image_shape, OperatorDescriptor d = {});
  OperatorKind kind() const override { return OperatorKind::identity; }

 protected:
  Tensor apply_one(const Tensor& s) const override;
  Tensor adjoint_one(const Tensor& v) const override;
};

/// Dense M×N standard-normal projection, M = round(N / CR).
class CompressionOperator final : public ForwardOperator {
 public:
  CompressionOperator(Shape image_shape, double cr, std::uint64_t seed);
  OperatorKind kind() const override { return OperatorKind::compression; }

  std::size_t rows() const { return m_; }
  std::size_t cols() const { return n_; }
  /// Row-major M×N matrix.
  const Tensor& matrix() const { return a_; }

  using ForwardOperator::adjoint;
  using ForwardOperator::apply;
  std::vector<Tensor> apply(const std::vector<const Tensor*>& s) const override;
  std::vector<Tensor> adjoint(const std::vector<const Tensor*>& v) const override;

 protected:
  Tensor apply_one(const Tensor& s) const override;
  Tensor adjoint_one(const Tensor& v) const override;

 private:
  std::size_t m_, n_;
  Tensor a_;
};

std::size_t measurement_count(std::size_t n, double cr);

/// d×d nonnegative kernel summing to 1.
class BlurKernel {
 public:
  /// Uniform weights on the raster of a line of extent `degree` through the centre
  /// at `angle_degrees` (counter-clockwise from +x, rows pointing down).
  static BlurKernel motion(double angle_degrees, std::size_t degree);
  /// Arbitrary odd-sized kernel, normalized to unit sum.
  static BlurKernel custom(std::size_t degree, std::vector<double> weights);

  std::size_t degree() const { return degree_; }
  double at(std::size_t i, std::size_t j) const { return weights_[i * degree_ + j]; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  BlurKernel(std::size_t degree, std::vector<double> weights);
  std::size_t degree_;
  std::vector<double> weights_;
};

/// Per-channel true 2-D convolution with zero padding and same-size output.
class BlurOperator final : public ForwardOperator {
 public:
  BlurOperator(Shape image_shape, BlurKernel kernel, OperatorDescriptor d = {});
  OperatorKind kind() const override { return OperatorKind::blur; }
  const BlurKernel& kernel() const { return kernel_; }

 protected:
  Tensor apply_one(const Tensor& s) const override;
  Tensor adjoint_one(const Tensor& v) const override;

 private:
  BlurKernel kernel_;
};

/// Lens-shaped ("leaf") occluder: the intersection of two discs of radius r whose
/// centres are r apart, at a seeded orientation and position. r is calibrated by
/// bisection so the occluded fraction is within 0.02 of the target.
BinaryMask leaf_occlusion_mask(std::size_t height, std::size_t width, double coverage, std::uint64_t seed);

/// Hadamard product with a visibility mask (1 = visible), applied to every channel.
class OcclusionOperator final : public ForwardOperator {
 public:
  OcclusionOperator(Shape image_shape, BinaryMask visible, double fill_value = 0.0, OperatorDescriptor d = {});
  OperatorKind kind() const override { return OperatorKind::occlusion; }

  const BinaryMask& visible() const { return visible_; }
  double occluded_fraction() const { return 1.0 - visible_.fraction(); }
  /// Image with fill_value painted into occluded pixels.
  Tensor display(const Tensor& s) const;

 protected:
  Tensor apply_one(const Tensor& s) const override;
  Tensor adjoint_one(const Tensor& v) const override;

 private:
  BinaryMask visible_;
  double fill_value_;
};

std::unique_ptr<ForwardOperator> make_operator(const OperatorDescriptor& d, const Shape& image_shape);

/// Degraded measurement together with the noise actually applied.
struct Observation {
  Tensor y;
  double sigma = 0.0;
  OperatorDescriptor descriptor;
  Shape image_shape;
};

/// y = op(s) + ε, with ε drawn from the descriptor's noise model seeded by noise_seed.
Observation observe(const ForwardOperator& op, const Tensor& s);

}  // namespace gancs
