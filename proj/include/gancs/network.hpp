#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gancs/rng.hpp"
#include "gancs/tensor.hpp"

namespace gancs {

enum class LayerKind { dense, conv2d, conv_transpose2d, batchnorm2d, relu, leaky_relu, tanh, sigmoid, reshape };

enum class Mode { train, infer };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// One layer of a feed-forward network. Shapes here are per sample; the batch
/// dimension is always the leading axis of the tensors flowing through a Network.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;   // features (dense) or channels (conv, batchnorm)
  std::size_t out = 0;  // features (dense) or channels (conv)
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  double slope = 0.0;  // leaky_relu negative slope
  Shape target;        // reshape output, per sample

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding);
  static LayerSpec conv_transpose2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                                    std::size_t padding);
  static LayerSpec batchnorm2d(std::size_t channels);
  static LayerSpec relu();
  static LayerSpec leaky_relu(double slope);
  static LayerSpec tanh();
  static LayerSpec sigmoid();
  static LayerSpec reshape(Shape target);

  /// Per-sample output shape; throws ShapeError if `input` is incompatible.
  Shape output_shape(const Shape& input) const;
  /// Trainable parameter shapes in storage order (weight, bias) or (gamma, beta).
  std::vector<Shape> parameter_shapes() const;
  std::string describe() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Per-channel batch statistics captured by a train-mode batchnorm forward.
struct BatchStatistics {
  std::vector<double> mean;
  std::vector<double> variance;  // biased
  std::size_t count = 0;         // elements per channel
};

/// Result of a forward pass. values[0] is the input, values[i + 1] the output of layer i.
struct Activations {
  Mode mode = Mode::infer;
  std::vector<Tensor> values;
  std::vector<BatchStatistics> batch_stats;  // indexed by layer; empty unless train-mode batchnorm

  const Tensor& output() const { return values.back(); }
};

struct Gradients {
  std::vector<std::vector<Tensor>> params;  // indexed [layer][parameter]; empty when not requested
  Tensor input;
};

inline constexpr double kBatchNormEpsilon = 1e-9;
inline constexpr double kBatchNormMomentum = 0.1;

/// Ordered layer stack with parameters, batchnorm running statistics and a mode flag.
class Network {
 public:
  Network() = default;
  Network(Shape input_shape, std::vector<LayerSpec> layers);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& output_shape() const noexcept { return shapes_.back(); }
  /// Per-sample shape entering layer i (i == layers().size() gives the output).
  const Shape& shape_at(std::size_t i) const { return shapes_.at(i); }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }

  std::vector<std::vector<Tensor>>& parameters() noexcept { return params_; }
  const std::vector<std::vector<Tensor>>& parameters() const noexcept { return params_; }
  std::vector<Tensor>& running_mean() noexcept { return running_mean_; }
  std::vector<Tensor>& running_var() noexcept { return running_var_; }
  const std::vector<Tensor>& running_mean() const noexcept { return running_mean_; }
  const std::vector<Tensor>& running_var() const noexcept { return running_var_; }

  /// Flattened views over parameters, in layer order, with names like "3.weight".
  std::vector<Tensor*> parameter_list();
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;

  Mode mode() const noexcept { return mode_; }
  void set_mode(Mode mode) noexcept { mode_ = mode; }

  /// N(0, stddev) weights, zero biases, unit batchnorm scale.
  void initialize(Rng& rng, double stddev = 0.02);

  /// Pure forward pass in the network's current mode. Train-mode batchnorm uses
  /// batch statistics (returned in the activations); infer mode uses running statistics.
  Activations forward(const Tensor& input) const;
  Tensor infer(const Tensor& input) const { return forward(input).output(); }

  /// Exponential moving average (momentum 0.1) of train-mode batch statistics.
  void update_running_stats(const Activations& acts);

  /// Analytic gradients of a scalar loss given dLoss/dOutput.
  Gradients backward(const Activations& acts, const Tensor& output_grad, bool with_params = true) const;
  /// As backward(), but `grad` is dLoss/d(output of layer `layer`); layers after it are ignored.
  Gradients backward_from(const Activations& acts, std::size_t layer, const Tensor& grad,
                          bool with_params = true) const;

 private:
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
  std::vector<std::vector<Tensor>> params_;
  std::vector<Tensor> running_mean_;
  std::vector<Tensor> running_var_;
  Mode mode_ = Mode::train;
};

/// Batch size of a tensor whose trailing dims must equal `sample_shape`.
std::size_t batch_size_for(const Tensor& t, const Shape& sample_shape, const std::string& context);

}  // namespace gancs
