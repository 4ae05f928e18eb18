#include "gancs/sparse.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "gancs/errors.hpp"

namespace gancs {

namespace {

Eigen::MatrixXd dct_matrix(std::size_t n) {
  Eigen::MatrixXd c(n, n);
  const double dn = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double alpha = k == 0 ? std::sqrt(1.0 / dn) : std::sqrt(2.0 / dn);
    for (std::size_t i = 0; i < n; ++i)
      c(k, i) = alpha * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * dn));
  }
  return c;
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::pair<std::size_t, std::size_t> plane_dims(const Tensor& x) {
  if (x.rank() == 2) return {x.dim(0), x.dim(1)};
  if (x.rank() == 3 && x.dim(0) == 1) return {x.dim(1), x.dim(2)};
  throw ShapeError("2-D DCT expects [H,W] or [1,H,W], got " + shape_string(x.shape()));
}

Eigen::VectorXd to_vector(const Tensor& t) {
  return Eigen::Map<const Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
}

Tensor from_vector(const Eigen::VectorXd& v, Shape shape) {
  Tensor t(std::move(shape));
  std::copy(v.data(), v.data() + v.size(), t.data());
  return t;
}

double soft(double v, double t) { return v > t ? v - t : (v < -t ? v + t : 0.0); }

// Indices of the `count` largest |v|, ties to the lower index.
std::vector<std::size_t> top_indices(const Eigen::VectorXd& v, std::size_t count) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(v.size()));
  std::iota(idx.begin(), idx.end(), 0);
  count = std::min(count, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double x = std::abs(v[static_cast<Eigen::Index>(a)]);
                      const double y = std::abs(v[static_cast<Eigen::Index>(b)]);
                      return x > y || (x == y && a < b);
                    });
  idx.resize(count);
  return idx;
}

Eigen::MatrixXd columns(const Eigen::MatrixXd& phi, const std::vector<std::size_t>& cols) {
  Eigen::MatrixXd out(phi.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = phi.col(static_cast<Eigen::Index>(cols[j]));
  return out;
}

struct CgResult {
  Eigen::VectorXd x;
  bool converged = false;
};

// Conjugate gradients on (ΦᵀΦ + ridge·I) x = Φᵀy from x0.
CgResult cg_normal_equations(const Eigen::MatrixXd& sub, const Eigen::VectorXd& y, Eigen::VectorXd x,
                             double ridge) {
  const Eigen::MatrixXd gram = sub.transpose() * sub + ridge * Eigen::MatrixXd::Identity(sub.cols(), sub.cols());
  const Eigen::VectorXd b = sub.transpose() * y;
  const double target = 1e-14 * std::max(b.norm(), 1e-300);
  Eigen::VectorXd r = b - gram * x;
  Eigen::VectorXd p = r;
  double rr = r.squaredNorm();
  const std::size_t cap = 3 * static_cast<std::size_t>(sub.cols()) + 50;
  for (std::size_t it = 0; it < cap && std::sqrt(rr) > target; ++it) {
    const Eigen::VectorXd gp = gram * p;
    const double pgp = p.dot(gp);
    if (!(pgp > 0.0)) break;
    const double alpha = rr / pgp;
    x += alpha * p;
    r -= alpha * gp;
    const double next = r.squaredNorm();
    p = r + (next / rr) * p;
    rr = next;
  }
  if (!x.allFinite()) throw NumericError("least-squares solve produced non-finite values");
  return {std::move(x), std::sqrt(rr) <= target};
}

// Least squares on a support, retried with a small ridge when CG does not settle.
Eigen::VectorXd support_least_squares(const Eigen::MatrixXd& phi, const std::vector<std::size_t>& support,
                                      const Eigen::VectorXd& y, const Eigen::VectorXd& x0,
                                      std::vector<std::string>& warnings) {
  const Eigen::MatrixXd sub = columns(phi, support);
  CgResult r = cg_normal_equations(sub, y, x0, 0.0);
  if (r.converged) return r.x;
  r = cg_normal_equations(sub, y, x0, 1e-10);
  warnings.push_back("ill-conditioned support of size " + std::to_string(support.size()) +
                     ": solved with 1e-10 ridge");
  return r.x;
}

}  // namespace

DctBasis::DctBasis(std::size_t height, std::size_t width)
    : h_(height), w_(width), ch_(dct_matrix(height)), cw_(dct_matrix(width)) {
  if (height == 0 || width == 0) throw ShapeError("DCT basis needs a nonempty image");
}

Eigen::VectorXd DctBasis::synthesize(const Eigen::VectorXd& w) const {
  if (static_cast<std::size_t>(w.size()) != size()) throw ShapeError("coefficient vector has the wrong size");
  Eigen::Map<const RowMatrix> c(w.data(), static_cast<Eigen::Index>(h_), static_cast<Eigen::Index>(w_));
  RowMatrix s = ch_.transpose() * c * cw_;
  return Eigen::Map<const Eigen::VectorXd>(s.data(), s.size());
}

Eigen::VectorXd DctBasis::analyze(const Eigen::VectorXd& s) const {
  if (static_cast<std::size_t>(s.size()) != size()) throw ShapeError("image vector has the wrong size");
  Eigen::Map<const RowMatrix> x(s.data(), static_cast<Eigen::Index>(h_), static_cast<Eigen::Index>(w_));
  RowMatrix c = ch_ * x * cw_.transpose();
  return Eigen::Map<const Eigen::VectorXd>(c.data(), c.size());
}

Tensor dct2(const Tensor& x) {
  auto [h, w] = plane_dims(x);
  return from_vector(DctBasis(h, w).analyze(to_vector(x)), x.shape());
}

Tensor idct2(const Tensor& x) {
  auto [h, w] = plane_dims(x);
  return from_vector(DctBasis(h, w).synthesize(to_vector(x)), x.shape());
}

std::string to_string(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::omp: return "omp";
    case BaselineMethod::cosamp: return "cosamp";
    case BaselineMethod::ista: return "ista";
  }
  return "?";
}

BaselineMethod baseline_method_from_string(const std::string& s) {
  if (s == "omp") return BaselineMethod::omp;
  if (s == "cosamp") return BaselineMethod::cosamp;
  if (s == "ista") return BaselineMethod::ista;
  throw ConfigError("unknown baseline method '" + s + "' (expected omp, cosamp or ista)");
}

std::size_t BaselineConfig::effective_sparsity(std::size_t n, std::size_t m) const {
  if (sparsity == 0) return std::clamp<std::size_t>((n * 5 + 99) / 100, 1, m);
  if (sparsity > m)
    throw ConfigError("sparsity " + std::to_string(sparsity) + " exceeds the " + std::to_string(m) + " measurements");
  return sparsity;
}

void BaselineConfig::validate() const {
  if (!(l1_weight > 0.0)) throw ConfigError("l1 weight must be positive");
  if (ista_iterations < 1) throw ConfigError("ista needs at least one iteration");
  if (cosamp_iterations < 1) throw ConfigError("cosamp needs at least one iteration");
  if (power_iterations < 50) throw ConfigError("power iteration needs at least 50 steps");
  if (!(residual_tolerance >= 0.0)) throw ConfigError("residual tolerance must be nonnegative");
}

Json BaselineConfig::to_json() const {
  return Json{{"method", to_string(method)},
              {"sparsity", sparsity},
              {"l1_weight", l1_weight},
              {"ista_iterations", ista_iterations},
              {"cosamp_iterations", cosamp_iterations},
              {"power_iterations", power_iterations},
              {"residual_tolerance", residual_tolerance}};
}

BaselineConfig BaselineConfig::from_json(const Json& j) {
  BaselineConfig c;
  ObjectReader r(j, "baseline config");
  c.method = baseline_method_from_string(r.get<std::string>("method", to_string(c.method)));
  c.sparsity = r.get("sparsity", c.sparsity);
  c.l1_weight = r.get("l1_weight", c.l1_weight);
  c.ista_iterations = r.get("ista_iterations", c.ista_iterations);
  c.cosamp_iterations = r.get("cosamp_iterations", c.cosamp_iterations);
  c.power_iterations = r.get("power_iterations", c.power_iterations);
  c.residual_tolerance = r.get("residual_tolerance", c.residual_tolerance);
  r.finish();
  c.validate();
  return c;
}

SparseSolution omp_solve(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y, std::size_t k,
                         double residual_tolerance) {
  const auto m = static_cast<std::size_t>(phi.rows());
  const auto n = static_cast<std::size_t>(phi.cols());
  if (static_cast<std::size_t>(y.size()) != m) throw ShapeError("measurement vector does not match Φ");
  if (k < 1 || k > m) throw ConfigError("sparsity must satisfy 1 <= K <= M");

  SparseSolution sol;
  sol.w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  const double ynorm = y.norm();
  if (ynorm == 0.0) return sol;

  const Eigen::VectorXd col_norms = phi.colwise().norm().transpose();
  std::vector<bool> excluded(n, false);
  for (std::size_t j = 0; j < n; ++j)
    if (col_norms[static_cast<Eigen::Index>(j)] == 0.0) excluded[j] = true;

  // Incremental QR of Φ_S by modified Gram–Schmidt with one re-orthogonalization pass.
  Eigen::MatrixXd q(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  Eigen::MatrixXd rmat = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  Eigen::VectorXd residual = y;
  std::size_t s = 0;
  while (s < k && residual.norm() > residual_tolerance * ynorm) {
    const Eigen::VectorXd corr = phi.transpose() * residual;
    std::size_t best = n;
    double best_score = -1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (excluded[j]) continue;
      const double score = std::abs(corr[static_cast<Eigen::Index>(j)]) / col_norms[static_cast<Eigen::Index>(j)];
      if (score > best_score) {
        best_score = score;
        best = j;
      }
    }
    if (best == n) break;
    excluded[best] = true;
    ++sol.iterations;

    Eigen::VectorXd v = phi.col(static_cast<Eigen::Index>(best));
    Eigen::VectorXd coeff = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s));
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t i = 0; i < s; ++i) {
        const double c = q.col(static_cast<Eigen::Index>(i)).dot(v);
        coeff[static_cast<Eigen::Index>(i)] += c;
        v -= c * q.col(static_cast<Eigen::Index>(i));
      }
    const double vn = v.norm();
    if (vn <= 1e-10 * col_norms[static_cast<Eigen::Index>(best)]) {
      sol.warnings.push_back("atom " + std::to_string(best) + " is dependent on the support; skipped");
      continue;
    }
    q.col(static_cast<Eigen::Index>(s)) = v / vn;
    rmat.col(static_cast<Eigen::Index>(s)).head(static_cast<Eigen::Index>(s)) = coeff;
    rmat(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s)) = vn;
    sol.support.push_back(best);
    ++s;
    residual -= q.col(static_cast<Eigen::Index>(s - 1)).dot(residual) * q.col(static_cast<Eigen::Index>(s - 1));
  }
  if (s == 0) return sol;
  const auto qs = q.leftCols(static_cast<Eigen::Index>(s));
  const Eigen::VectorXd rhs = qs.transpose() * y;
  const Eigen::VectorXd ws = rmat.topLeftCorner(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s))
                                 .triangularView<Eigen::Upper>()
                                 .solve(rhs);
  if (!ws.allFinite()) throw NumericError("OMP least-squares solve produced non-finite values");
  for (std::size_t i = 0; i < s; ++i) sol.w[static_cast<Eigen::Index>(sol.support[i])] = ws[static_cast<Eigen::Index>(i)];
  return sol;
}

SparseSolution cosamp_solve(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y, std::size_t k,
                            std::size_t max_iterations, double residual_tolerance) {
  const auto m = static_cast<std::size_t>(phi.rows());
  const auto n = static_cast<std::size_t>(phi.cols());
  if (static_cast<std::size_t>(y.size()) != m) throw ShapeError("measurement vector does not match Φ");
  if (k < 1 || k > m) throw ConfigError("sparsity must satisfy 1 <= K <= M");

  SparseSolution sol;
  sol.w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  const double ynorm = y.norm();
  if (ynorm == 0.0) return sol;

  Eigen::VectorXd residual = y;
  double rnorm = ynorm;
  std::vector<std::size_t> support;
  for (std::size_t it = 0; it < max_iterations && rnorm > residual_tolerance * ynorm; ++it) {
    const Eigen::VectorXd proxy = phi.transpose() * residual;
    std::vector<std::size_t> merged = top_indices(proxy, 2 * k);
    merged.insert(merged.end(), support.begin(), support.end());
    std::sort(merged.begin(), merged.end());
    merged.erase(std::unique(merged.begin(), merged.end()), merged.end());

    Eigen::VectorXd x0(static_cast<Eigen::Index>(merged.size()));
    for (std::size_t i = 0; i < merged.size(); ++i) x0[static_cast<Eigen::Index>(i)] = sol.w[static_cast<Eigen::Index>(merged[i])];
    const Eigen::VectorXd b = support_least_squares(phi, merged, y, x0, sol.warnings);

    std::vector<std::size_t> keep = top_indices(b, k);
    std::vector<std::size_t> next;
    for (std::size_t i : keep) next.push_back(merged[i]);
    std::sort(next.begin(), next.end());
    // Refit on the pruned support.
    Eigen::VectorXd x1(static_cast<Eigen::Index>(next.size()));
    for (std::size_t i = 0; i < next.size(); ++i)
      x1[static_cast<Eigen::Index>(i)] = b[static_cast<Eigen::Index>(std::lower_bound(merged.begin(), merged.end(), next[i]) - merged.begin())];
    const Eigen::VectorXd wk = support_least_squares(phi, next, y, x1, sol.warnings);

    Eigen::VectorXd candidate = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < next.size(); ++i) candidate[static_cast<Eigen::Index>(next[i])] = wk[static_cast<Eigen::Index>(i)];
    const Eigen::VectorXd cand_residual = y - phi * candidate;
    const double cand_norm = cand_residual.norm();
    ++sol.iterations;
    if (!(cand_norm < rnorm)) break;
    sol.w = std::move(candidate);
    residual = cand_residual;
    rnorm = cand_norm;
    const bool same = next == support;
    support = std::move(next);
    if (same) break;
  }
  sol.support = support;
  return sol;
}

double power_iteration(const Eigen::MatrixXd& phi, std::size_t steps) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(phi.cols()) / std::sqrt(static_cast<double>(phi.cols()));
  double lambda = 0.0;
  for (std::size_t i = 0; i < steps; ++i) {
    Eigen::VectorXd u = phi.transpose() * (phi * v);
    lambda = u.norm();
    if (lambda == 0.0) return 0.0;
    v = u / lambda;
  }
  return lambda;
}

SparseSolution ista_solve(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y, double l1_weight,
                          std::size_t iterations, double lipschitz, std::size_t power_iterations) {
  if (static_cast<std::size_t>(y.size()) != static_cast<std::size_t>(phi.rows()))
    throw ShapeError("measurement vector does not match Φ");
  if (!(l1_weight > 0.0)) throw ConfigError("l1 weight must be positive");
  if (power_iterations < 50) throw ConfigError("power iteration needs at least 50 steps");

  SparseSolution sol;
  sol.lipschitz = lipschitz > 0.0 ? lipschitz : 1.1 * power_iteration(phi, power_iterations);
  sol.w = Eigen::VectorXd::Zero(phi.cols());
  if (sol.lipschitz == 0.0) return sol;
  const double step = 1.0 / sol.lipschitz;
  const double threshold = l1_weight / (2.0 * sol.lipschitz);

  auto objective = [&](const Eigen::VectorXd& w, const Eigen::VectorXd& r) {
    return r.squaredNorm() + l1_weight * w.lpNorm<1>();
  };
  Eigen::VectorXd r = phi * sol.w - y;
  sol.objective.push_back(objective(sol.w, r));
  for (std::size_t it = 0; it < iterations; ++it) {
    Eigen::VectorXd g = sol.w - step * (phi.transpose() * r);
    for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = soft(g[i], threshold);
    if (!g.allFinite()) throw NumericError("ISTA iterate " + std::to_string(it + 1) + " is not finite");
    sol.w = std::move(g);
    r = phi * sol.w - y;
    sol.objective.push_back(objective(sol.w, r));
    ++sol.iterations;
  }
  for (Eigen::Index i = 0; i < sol.w.size(); ++i)
    if (sol.w[i] != 0.0) sol.support.push_back(static_cast<std::size_t>(i));
  return sol;
}

Eigen::MatrixXd sensing_matrix(const ForwardOperator& op, const DctBasis& basis) {
  const Shape& in = op.input_shape();
  if (in.size() != 3 || in[0] != 1 || in[1] != basis.height() || in[2] != basis.width())
    throw ShapeError("sparse baselines need a single-channel operator of the basis size, got " + shape_string(in));
  const std::size_t n = basis.size();
  const std::size_t m = shape_size(op.output_shape());
  Eigen::MatrixXd phi(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (const auto* comp = dynamic_cast<const CompressionOperator*>(&op)) {
    // Row i of AΨ is Ψᵀ applied to row i of A.
    const double* a = comp->matrix().data();
    for (std::size_t i = 0; i < m; ++i) {
      Eigen::Map<const Eigen::VectorXd> row(a + i * n, static_cast<Eigen::Index>(n));
      phi.row(static_cast<Eigen::Index>(i)) = basis.analyze(row).transpose();
    }
    return phi;
  }
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    e[static_cast<Eigen::Index>(j)] = 1.0;
    Tensor atom = from_vector(basis.synthesize(e), in);
    Tensor col = op.apply(atom);
    phi.col(static_cast<Eigen::Index>(j)) = to_vector(col);
    e[static_cast<Eigen::Index>(j)] = 0.0;
  }
  return phi;
}

BaselineResult run_baseline(const ForwardOperator& op, const Tensor& y, const BaselineConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const Shape& in = op.input_shape();
  if (in.size() != 3 || in[0] != 1) throw ShapeError("sparse baselines are grayscale only, got " + shape_string(in));
  if (y.size() != shape_size(op.output_shape())) throw ShapeError("observation does not match the operator output");
  DctBasis basis(in[1], in[2]);
  const Eigen::MatrixXd phi = sensing_matrix(op, basis);
  const Eigen::VectorXd yv = to_vector(y);
  const std::size_t n = basis.size();
  const std::size_t m = static_cast<std::size_t>(phi.rows());

  BaselineResult res;
  switch (config.method) {
    case BaselineMethod::omp:
      res.sparsity = config.effective_sparsity(n, m);
      res.solution = omp_solve(phi, yv, res.sparsity, config.residual_tolerance);
      break;
    case BaselineMethod::cosamp:
      res.sparsity = config.effective_sparsity(n, m);
      res.solution = cosamp_solve(phi, yv, res.sparsity, config.cosamp_iterations, config.residual_tolerance);
      break;
    case BaselineMethod::ista:
      res.solution = ista_solve(phi, yv, config.l1_weight, config.ista_iterations, 0.0, config.power_iterations);
      break;
  }
  res.coefficients = from_vector(res.solution.w, {in[1], in[2]});
  res.reconstruction = from_vector(basis.synthesize(res.solution.w), in);
  for (auto& v : res.reconstruction.values()) v = std::clamp(v, -1.0, 1.0);
  res.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace gancs
