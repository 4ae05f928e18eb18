#include "gancs/network.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "gancs/errors.hpp"

namespace gancs {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Pointer-based loops so the compiler can vectorize them.
template <typename F>
void elementwise(const Tensor& a, Tensor& out, F f) {
  const double* __restrict pa = a.data();
  double* __restrict po = out.data();
  const std::size_t n = a.size();
  for (std::size_t k = 0; k < n; ++k) po[k] = f(pa[k]);
}

template <typename F>
void elementwise(const Tensor& a, const Tensor& b, Tensor& out, F f) {
  const double* __restrict pa = a.data();
  const double* __restrict pb = b.data();
  double* __restrict po = out.data();
  const std::size_t n = a.size();
  for (std::size_t k = 0; k < n; ++k) po[k] = f(pa[k], pb[k]);
}

struct ConvGeometry {
  std::size_t channels, height, width;    // image side
  std::size_t kernel, stride, padding;
  std::size_t out_height, out_width;      // column side
};

// cols[(c*k + ki)*k + kj, oi*Wo + oj] = x[c, oi*s - p + ki, oj*s - p + kj], rows `ld` apart.
void im2col(const double* image, const ConvGeometry& g, double* cols, std::size_t ld) {
  const std::size_t k = g.kernel;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = cols + ((c * k + ki) * k + kj) * ld;
        for (std::size_t oi = 0; oi < g.out_height; ++oi) {
          const long i = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.padding);
          double* dst = row + oi * g.out_width;
          if (i < 0 || i >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_width, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(i) * g.width;
          for (std::size_t oj = 0; oj < g.out_width; ++oj) {
            const long j = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.padding);
            dst[oj] = (j < 0 || j >= static_cast<long>(g.width)) ? 0.0 : src[j];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into an (already zeroed) image.
void col2im(const double* cols, const ConvGeometry& g, double* image, std::size_t ld) {
  const std::size_t k = g.kernel;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = cols + ((c * k + ki) * k + kj) * ld;
        for (std::size_t oi = 0; oi < g.out_height; ++oi) {
          const long i = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.padding);
          if (i < 0 || i >= static_cast<long>(g.height)) continue;
          double* dst = plane + static_cast<std::size_t>(i) * g.width;
          const double* src = row + oi * g.out_width;
          for (std::size_t oj = 0; oj < g.out_width; ++oj) {
            const long j = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.padding);
            if (j >= 0 && j < static_cast<long>(g.width)) dst[j] += src[oj];
          }
        }
      }
    }
  }
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p, const LayerSpec& spec) {
  if (in + 2 * p < k) throw ShapeError(spec.describe() + ": kernel larger than padded input");
  return (in + 2 * p - k) / s + 1;
}

// ---- dense ----------------------------------------------------------------

void dense_forward(const LayerSpec& spec, const std::vector<Tensor>& p, const Tensor& x, Tensor& y,
                   std::size_t batch) {
  ConstMatrixMap X(x.data(), batch, spec.in);
  ConstMatrixMap W(p[0].data(), spec.out, spec.in);
  MatrixMap Y(y.data(), batch, spec.out);
  Y.noalias() = X * W.transpose();
  Eigen::Map<const Eigen::RowVectorXd> b(p[1].data(), spec.out);
  Y.rowwise() += b;
}

void dense_backward(const LayerSpec& spec, const std::vector<Tensor>& p, const Tensor& x, const Tensor& dy,
                    Tensor& dx, std::vector<Tensor>* dp, std::size_t batch) {
  ConstMatrixMap X(x.data(), batch, spec.in);
  ConstMatrixMap W(p[0].data(), spec.out, spec.in);
  ConstMatrixMap DY(dy.data(), batch, spec.out);
  MatrixMap DX(dx.data(), batch, spec.in);
  DX.noalias() = DY * W;
  if (dp) {
    MatrixMap DW((*dp)[0].data(), spec.out, spec.in);
    DW.noalias() = DY.transpose() * X;
    Eigen::Map<Eigen::RowVectorXd> db((*dp)[1].data(), spec.out);
    db = DY.colwise().sum();
  }
}

// ---- conv2d ---------------------------------------------------------------

ConvGeometry conv_geometry(const LayerSpec& spec, const Shape& in, const Shape& out) {
  return {spec.in, in[1], in[2], spec.kernel, spec.stride, spec.padding, out[1], out[2]};
}

// Samples per GEMM: columns of several samples are laid side by side so the
// products stay wide even for small feature maps.
std::size_t chunk_size(std::size_t batch, std::size_t rows, std::size_t ncols) {
  constexpr std::size_t kMaxColumnEntries = std::size_t{1} << 22;
  return std::clamp<std::size_t>(kMaxColumnEntries / std::max<std::size_t>(1, rows * ncols), 1, batch);
}

// [n][c][j] (samples n0..n0+nb) -> [c][n*ncols + j]
void gather_channels(const double* src, std::size_t nb, std::size_t channels, std::size_t ncols, double* dst) {
  const std::size_t ld = nb * ncols;
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(src + (n * channels + c) * ncols, ncols, dst + c * ld + n * ncols);
}

// Inverse of gather_channels.
void scatter_channels(const double* src, std::size_t nb, std::size_t channels, std::size_t ncols, double* dst) {
  const std::size_t ld = nb * ncols;
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(src + c * ld + n * ncols, ncols, dst + (n * channels + c) * ncols);
}

void conv_forward(const LayerSpec& spec, const std::vector<Tensor>& p, const Shape& in_shape,
                  const Shape& out_shape, const Tensor& x, Tensor& y, std::size_t batch) {
  const auto g = conv_geometry(spec, in_shape, out_shape);
  const std::size_t rows = spec.in * spec.kernel * spec.kernel;
  const std::size_t ncols = g.out_height * g.out_width;
  const std::size_t in_size = shape_size(in_shape), out_size = shape_size(out_shape);
  const std::size_t chunk = chunk_size(batch, rows, ncols);
  AlignedVector cols(rows * ncols * chunk), prod(spec.out * ncols * chunk);
  ConstMatrixMap W(p[0].data(), spec.out, rows);
  Eigen::Map<const Eigen::VectorXd> b(p[1].data(), spec.out);
  for (std::size_t n0 = 0; n0 < batch; n0 += chunk) {
    const std::size_t nb = std::min(chunk, batch - n0), ld = nb * ncols;
    for (std::size_t n = 0; n < nb; ++n) im2col(x.data() + (n0 + n) * in_size, g, cols.data() + n * ncols, ld);
    MatrixMap Y(prod.data(), spec.out, ld);
    Y.noalias() = W * ConstMatrixMap(cols.data(), rows, ld);
    Y.colwise() += b;
    scatter_channels(prod.data(), nb, spec.out, ncols, y.data() + n0 * out_size);
  }
}

void conv_backward(const LayerSpec& spec, const std::vector<Tensor>& p, const Shape& in_shape,
                   const Shape& out_shape, const Tensor& x, const Tensor& dy, Tensor& dx, std::vector<Tensor>* dp,
                   std::size_t batch) {
  const auto g = conv_geometry(spec, in_shape, out_shape);
  const std::size_t rows = spec.in * spec.kernel * spec.kernel;
  const std::size_t ncols = g.out_height * g.out_width;
  const std::size_t in_size = shape_size(in_shape), out_size = shape_size(out_shape);
  const std::size_t chunk = chunk_size(batch, rows, ncols);
  AlignedVector cols(rows * ncols * chunk), grad(spec.out * ncols * chunk);
  ConstMatrixMap W(p[0].data(), spec.out, rows);
  dx.fill(0.0);
  for (std::size_t n0 = 0; n0 < batch; n0 += chunk) {
    const std::size_t nb = std::min(chunk, batch - n0), ld = nb * ncols;
    gather_channels(dy.data() + n0 * out_size, nb, spec.out, ncols, grad.data());
    ConstMatrixMap DY(grad.data(), spec.out, ld);
    if (dp) {
      for (std::size_t n = 0; n < nb; ++n) im2col(x.data() + (n0 + n) * in_size, g, cols.data() + n * ncols, ld);
      MatrixMap DW((*dp)[0].data(), spec.out, rows);
      DW.noalias() += DY * ConstMatrixMap(cols.data(), rows, ld).transpose();
      Eigen::Map<Eigen::VectorXd> db((*dp)[1].data(), spec.out);
      db += DY.rowwise().sum();
    }
    MatrixMap C(cols.data(), rows, ld);
    C.noalias() = W.transpose() * DY;
    for (std::size_t n = 0; n < nb; ++n) col2im(cols.data() + n * ncols, g, dx.data() + (n0 + n) * in_size, ld);
  }
}

// ---- conv_transpose2d -----------------------------------------------------
// Weight layout [in, out, k, k]; the layer is the adjoint of a conv2d mapping
// the output geometry back to the input geometry.

void convt_forward(const LayerSpec& spec, const std::vector<Tensor>& p, const Shape& in_shape,
                   const Shape& out_shape, const Tensor& x, Tensor& y, std::size_t batch) {
  const ConvGeometry g{spec.out, out_shape[1], out_shape[2], spec.kernel, spec.stride, spec.padding,
                       in_shape[1], in_shape[2]};
  const std::size_t rows = spec.out * spec.kernel * spec.kernel;
  const std::size_t ncols = in_shape[1] * in_shape[2];
  const std::size_t in_size = shape_size(in_shape), out_size = shape_size(out_shape);
  const std::size_t plane = out_shape[1] * out_shape[2];
  const std::size_t chunk = chunk_size(batch, rows, ncols);
  AlignedVector cols(rows * ncols * chunk), input(spec.in * ncols * chunk);
  ConstMatrixMap W(p[0].data(), spec.in, rows);
  for (std::size_t n0 = 0; n0 < batch; n0 += chunk) {
    const std::size_t nb = std::min(chunk, batch - n0), ld = nb * ncols;
    gather_channels(x.data() + n0 * in_size, nb, spec.in, ncols, input.data());
    MatrixMap C(cols.data(), rows, ld);
    C.noalias() = W.transpose() * ConstMatrixMap(input.data(), spec.in, ld);
    for (std::size_t n = 0; n < nb; ++n) {
      double* out = y.data() + (n0 + n) * out_size;
      for (std::size_t c = 0; c < spec.out; ++c) std::fill(out + c * plane, out + (c + 1) * plane, p[1][c]);
      col2im(cols.data() + n * ncols, g, out, ld);
    }
  }
}

void convt_backward(const LayerSpec& spec, const std::vector<Tensor>& p, const Shape& in_shape,
                    const Shape& out_shape, const Tensor& x, const Tensor& dy, Tensor& dx, std::vector<Tensor>* dp,
                    std::size_t batch) {
  const ConvGeometry g{spec.out, out_shape[1], out_shape[2], spec.kernel, spec.stride, spec.padding,
                       in_shape[1], in_shape[2]};
  const std::size_t rows = spec.out * spec.kernel * spec.kernel;
  const std::size_t ncols = in_shape[1] * in_shape[2];
  const std::size_t in_size = shape_size(in_shape), out_size = shape_size(out_shape);
  const std::size_t plane = out_shape[1] * out_shape[2];
  const std::size_t chunk = chunk_size(batch, rows, ncols);
  AlignedVector cols(rows * ncols * chunk), buf(spec.in * ncols * chunk);
  ConstMatrixMap W(p[0].data(), spec.in, rows);
  for (std::size_t n0 = 0; n0 < batch; n0 += chunk) {
    const std::size_t nb = std::min(chunk, batch - n0), ld = nb * ncols;
    for (std::size_t n = 0; n < nb; ++n) im2col(dy.data() + (n0 + n) * out_size, g, cols.data() + n * ncols, ld);
    ConstMatrixMap C(cols.data(), rows, ld);
    MatrixMap B(buf.data(), spec.in, ld);
    B.noalias() = W * C;
    scatter_channels(buf.data(), nb, spec.in, ncols, dx.data() + n0 * in_size);
    if (dp) {
      gather_channels(x.data() + n0 * in_size, nb, spec.in, ncols, buf.data());
      MatrixMap DW((*dp)[0].data(), spec.in, rows);
      DW.noalias() += ConstMatrixMap(buf.data(), spec.in, ld) * C.transpose();
      for (std::size_t n = 0; n < nb; ++n) {
        const double* g_out = dy.data() + (n0 + n) * out_size;
        for (std::size_t c = 0; c < spec.out; ++c) {
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += g_out[c * plane + i];
          (*dp)[1][c] += acc;
        }
      }
    }
  }
}

// ---- batchnorm2d ----------------------------------------------------------

void batchnorm_forward(const LayerSpec& spec, const std::vector<Tensor>& p, const Tensor& running_mean,
                       const Tensor& running_var, Mode mode, const Shape& shape, const Tensor& x, Tensor& y,
                       std::size_t batch, BatchStatistics& stats) {
  const std::size_t channels = spec.in;
  const std::size_t plane = shape[1] * shape[2];
  const std::size_t count = batch * plane;
  std::vector<double> mean(channels), var(channels);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const double* v = x.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += v[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const double* v = x.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) ss += (v[i] - mu) * (v[i] - mu);
      }
      mean[c] = mu;
      var[c] = ss / static_cast<double>(count);
    }
    stats = {mean, var, count};
  } else {
    std::copy(running_mean.values().begin(), running_mean.values().end(), mean.begin());
    std::copy(running_var.values().begin(), running_var.values().end(), var.begin());
  }
  for (std::size_t c = 0; c < channels; ++c) {
    const double inv_std = 1.0 / std::sqrt(var[c] + kBatchNormEpsilon);
    const double gamma = p[0][c], beta = p[1][c];
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) y[off + i] = gamma * (x[off + i] - mean[c]) * inv_std + beta;
    }
  }
}

void batchnorm_backward(const LayerSpec& spec, const std::vector<Tensor>& p, const Tensor& running_mean,
                        const Tensor& running_var, Mode mode, const Shape& shape, const Tensor& x,
                        const Tensor& dy, Tensor& dx, std::vector<Tensor>* dp, std::size_t batch,
                        const BatchStatistics& stats) {
  const std::size_t channels = spec.in;
  const std::size_t plane = shape[1] * shape[2];
  for (std::size_t c = 0; c < channels; ++c) {
    const double mu = mode == Mode::train ? stats.mean[c] : running_mean[c];
    const double var = mode == Mode::train ? stats.variance[c] : running_var[c];
    const double inv_std = 1.0 / std::sqrt(var + kBatchNormEpsilon);
    const double gamma = p[0][c];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xhat += dy[off + i] * (x[off + i] - mu) * inv_std;
      }
    }
    if (dp) {
      (*dp)[0][c] += sum_dy_xhat;
      (*dp)[1][c] += sum_dy;
    }
    if (mode == Mode::infer) {
      for (std::size_t n = 0; n < batch; ++n) {
        const std::size_t off = (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) dx[off + i] = gamma * inv_std * dy[off + i];
      }
      continue;
    }
    const double m = static_cast<double>(batch * plane);
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (x[off + i] - mu) * inv_std;
        dx[off + i] = gamma * inv_std * (dy[off + i] - sum_dy / m - xhat * sum_dy_xhat / m);
      }
    }
  }
}

}  // namespace

// ---- LayerSpec ------------------------------------------------------------

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::conv_transpose2d: return "conv_transpose2d";
    case LayerKind::batchnorm2d: return "batchnorm2d";
    case LayerKind::relu: return "relu";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::tanh: return "tanh";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::reshape: return "reshape";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::dense, LayerKind::conv2d, LayerKind::conv_transpose2d, LayerKind::batchnorm2d,
                 LayerKind::relu, LayerKind::leaky_relu, LayerKind::tanh, LayerKind::sigmoid, LayerKind::reshape})
    if (to_string(k) == name) return k;
  throw FormatError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in = in;
  s.out = out;
  return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
  LayerSpec s = dense(in, out);
  s.kind = LayerKind::conv2d;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::conv_transpose2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                                      std::size_t padding) {
  LayerSpec s = conv2d(in, out, kernel, stride, padding);
  s.kind = LayerKind::conv_transpose2d;
  return s;
}

LayerSpec LayerSpec::batchnorm2d(std::size_t channels) {
  LayerSpec s;
  s.kind = LayerKind::batchnorm2d;
  s.in = s.out = channels;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::leaky_relu(double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw ConfigError("leaky_relu slope must lie in (0, 1)");
  LayerSpec s;
  s.kind = LayerKind::leaky_relu;
  s.slope = slope;
  return s;
}

LayerSpec LayerSpec::tanh() {
  LayerSpec s;
  s.kind = LayerKind::tanh;
  return s;
}

LayerSpec LayerSpec::sigmoid() {
  LayerSpec s;
  s.kind = LayerKind::sigmoid;
  return s;
}

LayerSpec LayerSpec::reshape(Shape target) {
  LayerSpec s;
  s.kind = LayerKind::reshape;
  s.target = std::move(target);
  return s;
}

std::string LayerSpec::describe() const {
  std::ostringstream os;
  os << to_string(kind);
  switch (kind) {
    case LayerKind::dense: os << '(' << in << "->" << out << ')'; break;
    case LayerKind::conv2d:
    case LayerKind::conv_transpose2d:
      os << '(' << in << "->" << out << ", k" << kernel << " s" << stride << " p" << padding << ')';
      break;
    case LayerKind::batchnorm2d: os << '(' << in << ')'; break;
    case LayerKind::leaky_relu: os << '(' << slope << ')'; break;
    case LayerKind::reshape: os << shape_string(target); break;
    default: break;
  }
  return os.str();
}

Shape LayerSpec::output_shape(const Shape& input) const {
  auto fail = [&](const std::string& expected) -> Shape {
    throw ShapeError(describe() + ": expected input " + expected + ", got " + shape_string(input));
  };
  switch (kind) {
    case LayerKind::dense:
      if (input.size() != 1 || input[0] != in) return fail("[" + std::to_string(in) + "]");
      return {out};
    case LayerKind::conv2d:
      if (input.size() != 3 || input[0] != in) return fail("[" + std::to_string(in) + ",H,W]");
      if (kernel == 0 || stride == 0) throw ShapeError(describe() + ": kernel and stride must be positive");
      return {out, conv_out(input[1], kernel, stride, padding, *this), conv_out(input[2], kernel, stride, padding, *this)};
    case LayerKind::conv_transpose2d: {
      if (input.size() != 3 || input[0] != in) return fail("[" + std::to_string(in) + ",H,W]");
      if (kernel == 0 || stride == 0) throw ShapeError(describe() + ": kernel and stride must be positive");
      const std::size_t h = (input[1] - 1) * stride + kernel, w = (input[2] - 1) * stride + kernel;
      if (h <= 2 * padding || w <= 2 * padding) throw ShapeError(describe() + ": padding consumes the output");
      return {out, h - 2 * padding, w - 2 * padding};
    }
    case LayerKind::batchnorm2d:
      if (input.size() != 3 || input[0] != in) return fail("[" + std::to_string(in) + ",H,W]");
      return input;
    case LayerKind::reshape:
      if (shape_size(target) != shape_size(input)) return fail("with " + std::to_string(shape_size(target)) + " elements");
      return target;
    case LayerKind::leaky_relu:
      if (!(slope > 0.0 && slope < 1.0)) throw ShapeError("leaky_relu slope must lie in (0, 1)");
      return input;
    default: return input;
  }
}

std::vector<Shape> LayerSpec::parameter_shapes() const {
  switch (kind) {
    case LayerKind::dense: return {{out, in}, {out}};
    case LayerKind::conv2d: return {{out, in, kernel, kernel}, {out}};
    case LayerKind::conv_transpose2d: return {{in, out, kernel, kernel}, {out}};
    case LayerKind::batchnorm2d: return {{in}, {in}};
    default: return {};
  }
}

// ---- Network --------------------------------------------------------------

std::size_t batch_size_for(const Tensor& t, const Shape& sample_shape, const std::string& context) {
  const bool ok = t.rank() == sample_shape.size() + 1 &&
                  std::equal(sample_shape.begin(), sample_shape.end(), t.shape().begin() + 1);
  if (!ok)
    throw ShapeError(context + ": expected [batch]+" + shape_string(sample_shape) + ", got " +
                     shape_string(t.shape()));
  return t.dim(0);
}

Network::Network(Shape input_shape, std::vector<LayerSpec> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  shapes_.push_back(input_shape_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      shapes_.push_back(layers_[i].output_shape(shapes_.back()));
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + ": " + e.what());
    }
    std::vector<Tensor> p;
    for (const auto& s : layers_[i].parameter_shapes()) p.emplace_back(s);
    params_.push_back(std::move(p));
    if (layers_[i].kind == LayerKind::batchnorm2d) {
      params_.back()[0].fill(1.0);
      running_mean_.emplace_back(Shape{layers_[i].in}, 0.0);
      running_var_.emplace_back(Shape{layers_[i].in}, 1.0);
    } else {
      running_mean_.emplace_back();
      running_var_.emplace_back();
    }
  }
}

std::vector<Tensor*> Network::parameter_list() {
  std::vector<Tensor*> out;
  for (auto& layer : params_)
    for (auto& p : layer) out.push_back(&p);
  return out;
}

std::vector<std::string> Network::parameter_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const bool bn = layers_[i].kind == LayerKind::batchnorm2d;
    for (std::size_t j = 0; j < params_[i].size(); ++j)
      out.push_back(std::to_string(i) + (j == 0 ? (bn ? ".gamma" : ".weight") : (bn ? ".beta" : ".bias")));
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : params_)
    for (const auto& p : layer) n += p.size();
  return n;
}

void Network::initialize(Rng& rng, double stddev) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& p = params_[i];
    switch (layers_[i].kind) {
      case LayerKind::dense:
      case LayerKind::conv2d:
      case LayerKind::conv_transpose2d:
        for (auto& v : p[0].values()) v = stddev * rng.normal();
        p[1].fill(0.0);
        break;
      case LayerKind::batchnorm2d:
        p[0].fill(1.0);
        p[1].fill(0.0);
        running_mean_[i].fill(0.0);
        running_var_[i].fill(1.0);
        break;
      default: break;
    }
  }
}

Activations Network::forward(const Tensor& input) const {
  const std::size_t batch = batch_size_for(input, input_shape_, "layer 0 (" + layers_.front().describe() + ")");
  Activations acts;
  acts.mode = mode_;
  acts.values.reserve(layers_.size() + 1);
  acts.values.push_back(input);
  acts.batch_stats.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& spec = layers_[i];
    const Tensor& x = acts.values.back();
    Shape out_shape{batch};
    out_shape.insert(out_shape.end(), shapes_[i + 1].begin(), shapes_[i + 1].end());
    Tensor y(out_shape);
    switch (spec.kind) {
      case LayerKind::dense: dense_forward(spec, params_[i], x, y, batch); break;
      case LayerKind::conv2d: conv_forward(spec, params_[i], shapes_[i], shapes_[i + 1], x, y, batch); break;
      case LayerKind::conv_transpose2d:
        convt_forward(spec, params_[i], shapes_[i], shapes_[i + 1], x, y, batch);
        break;
      case LayerKind::batchnorm2d:
        batchnorm_forward(spec, params_[i], running_mean_[i], running_var_[i], mode_, shapes_[i], x, y, batch,
                          acts.batch_stats[i]);
        break;
      case LayerKind::relu:
        elementwise(x, y, [](double v) { return v > 0.0 ? v : 0.0; });
        break;
      case LayerKind::leaky_relu:
        elementwise(x, y, [slope = spec.slope](double v) { return v > 0.0 ? v : slope * v; });
        break;
      case LayerKind::tanh:
        elementwise(x, y, [](double v) { return std::tanh(v); });
        break;
      case LayerKind::sigmoid:
        for (std::size_t k = 0; k < x.size(); ++k)
          y[k] = x[k] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[k])) : std::exp(x[k]) / (1.0 + std::exp(x[k]));
        break;
      case LayerKind::reshape:
        std::copy(x.values().begin(), x.values().end(), y.values().begin());
        break;
    }
    acts.values.push_back(std::move(y));
  }
  return acts;
}

void Network::update_running_stats(const Activations& acts) {
  if (acts.mode != Mode::train) return;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& st = acts.batch_stats[i];
    if (layers_[i].kind != LayerKind::batchnorm2d || st.mean.empty()) continue;
    const double unbias = st.count > 1 ? static_cast<double>(st.count) / static_cast<double>(st.count - 1) : 1.0;
    for (std::size_t c = 0; c < st.mean.size(); ++c) {
      running_mean_[i][c] = (1.0 - kBatchNormMomentum) * running_mean_[i][c] + kBatchNormMomentum * st.mean[c];
      running_var_[i][c] =
          (1.0 - kBatchNormMomentum) * running_var_[i][c] + kBatchNormMomentum * st.variance[c] * unbias;
    }
  }
}

Gradients Network::backward(const Activations& acts, const Tensor& output_grad, bool with_params) const {
  return backward_from(acts, layers_.size() - 1, output_grad, with_params);
}

Gradients Network::backward_from(const Activations& acts, std::size_t layer, const Tensor& grad,
                                 bool with_params) const {
  if (acts.mode != mode_)
    throw ModeError("backward called in " + std::string(mode_ == Mode::train ? "train" : "infer") +
                    " mode on activations produced in " + (acts.mode == Mode::train ? "train" : "infer") + " mode");
  if (acts.values.size() != layers_.size() + 1 || layer >= layers_.size())
    throw ShapeError("backward: activations do not match this network");
  require_same_shape(grad, acts.values[layer + 1], "backward: gradient w.r.t. layer " + std::to_string(layer));
  const std::size_t batch = grad.dim(0);

  Gradients out;
  if (with_params) {
    for (const auto& layer_params : params_) {
      std::vector<Tensor> zeros;
      for (const auto& p : layer_params) zeros.emplace_back(p.shape());
      out.params.push_back(std::move(zeros));
    }
  }
  Tensor dy = grad;
  for (std::size_t ii = layer + 1; ii-- > 0;) {
    const auto& spec = layers_[ii];
    const Tensor& x = acts.values[ii];
    const Tensor& y = acts.values[ii + 1];
    Tensor dx(x.shape());
    std::vector<Tensor>* dp = with_params ? &out.params[ii] : nullptr;
    switch (spec.kind) {
      case LayerKind::dense: dense_backward(spec, params_[ii], x, dy, dx, dp, batch); break;
      case LayerKind::conv2d:
        conv_backward(spec, params_[ii], shapes_[ii], shapes_[ii + 1], x, dy, dx, dp, batch);
        break;
      case LayerKind::conv_transpose2d:
        convt_backward(spec, params_[ii], shapes_[ii], shapes_[ii + 1], x, dy, dx, dp, batch);
        break;
      case LayerKind::batchnorm2d:
        batchnorm_backward(spec, params_[ii], running_mean_[ii], running_var_[ii], acts.mode, shapes_[ii], x, dy,
                           dx, dp, batch, acts.batch_stats[ii]);
        break;
      case LayerKind::relu:
        elementwise(x, dy, dx, [](double v, double g) { return v > 0.0 ? g : 0.0; });
        break;
      case LayerKind::leaky_relu:
        elementwise(x, dy, dx, [slope = spec.slope](double v, double g) { return v > 0.0 ? g : slope * g; });
        break;
      case LayerKind::tanh:
        elementwise(y, dy, dx, [](double v, double g) { return g * (1.0 - v * v); });
        break;
      case LayerKind::sigmoid:
        elementwise(y, dy, dx, [](double v, double g) { return g * v * (1.0 - v); });
        break;
      case LayerKind::reshape:
        std::copy(dy.values().begin(), dy.values().end(), dx.values().begin());
        break;
    }
    dy = std::move(dx);
  }
  out.input = std::move(dy);
  return out;
}

}  // namespace gancs
