#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gancs/errors.hpp"
#include "gancs/operators.hpp"
#include "support.hpp"

using namespace gancs;
using namespace gancs::testing;

namespace {

Tensor flat(const Tensor& t) { return t.reshaped({t.size()}); }

}  // namespace

TEST_CASE("measurement counts") {
  CHECK(measurement_count(16384, 16) == 1024);
  CHECK(measurement_count(4096, 2) == 2048);
  CHECK(measurement_count(4096, 64) == 64);
  CHECK(measurement_count(4096, 1) == 4096);
  CHECK_THROWS_AS(measurement_count(4096, 0.5), ConfigError);
  CompressionOperator op({1, 128, 128}, 16, 1);
  CHECK(op.output_shape() == Shape{1024});
  CHECK(op.rows() == 1024);
  CHECK(op.cols() == 16384);
}

TEST_CASE("compression matrix is reproducible from its seed and standard normal") {
  CompressionOperator a({1, 32, 32}, 4, 77), b({1, 32, 32}, 4, 77), c({1, 32, 32}, 4, 78);
  CHECK(a.matrix() == b.matrix());
  CHECK(!(a.matrix() == c.matrix()));
  double mean = 0, sq = 0;
  for (double v : a.matrix().values()) {
    mean += v;
    sq += v * v;
  }
  const double n = static_cast<double>(a.matrix().size());
  CHECK(std::abs(mean / n) < 0.02);
  CHECK(std::abs(sq / n - 1.0) < 0.03);
}

TEST_CASE("adjoint identity for every operator kind") {
  Rng rng(2024);
  const Shape shape{1, 32, 32};
  const Shape rgb{3, 16, 32};
  std::size_t trials = 0;
  for (int t = 0; t < 100; ++t) {
    const double cr = std::vector<double>{2, 4, 8, 16, 32, 64}[t % 6];
    CompressionOperator comp(t % 2 ? shape : rgb, cr, rng.next_u64());
    CHECK(adjoint_mismatch(comp, rng) < 1e-10);

    BlurOperator motion(shape, BlurKernel::motion(rng.uniform(0, 360), 1 + 2 * rng.below(7)));
    CHECK(adjoint_mismatch(motion, rng) < 1e-10);

    std::vector<double> w(25);
    for (auto& x : w) x = rng.uniform();
    BlurOperator asym(rgb, BlurKernel::custom(5, w));
    CHECK(adjoint_mismatch(asym, rng) < 1e-10);

    OcclusionOperator occ(shape, leaf_occlusion_mask(32, 32, rng.uniform(0.1, 0.4), rng.next_u64()));
    CHECK(adjoint_mismatch(occ, rng) < 1e-10);

    IdentityOperator id(shape);
    CHECK(adjoint_mismatch(id, rng) < 1e-10);
    ++trials;
  }
  CHECK(trials == 100);
}

TEST_CASE("batched application equals one-at-a-time application bit for bit") {
  Rng rng(5);
  CompressionOperator op({1, 32, 32}, 8, 3);
  std::vector<Tensor> xs, vs;
  for (int i = 0; i < 7; ++i) {
    xs.push_back(normal_tensor(op.input_shape(), rng));
    vs.push_back(normal_tensor(op.output_shape(), rng));
  }
  std::vector<const Tensor*> px, pv;
  for (int i = 0; i < 7; ++i) {
    px.push_back(&xs[i]);
    pv.push_back(&vs[i]);
  }
  auto ys = op.apply(px);
  auto us = op.adjoint(pv);
  for (int i = 0; i < 7; ++i) {
    CHECK(ys[i] == op.apply(xs[i]));
    CHECK(us[i] == op.adjoint(vs[i]));
  }
}

TEST_CASE("compression is linear without noise and matches the matrix product") {
  Rng rng(8);
  CompressionOperator op({1, 16, 16}, 4, 9);
  Tensor s1 = normal_tensor(op.input_shape(), rng), s2 = normal_tensor(op.input_shape(), rng);
  const double alpha = 0.7, beta = -1.3;
  Tensor lhs = op.apply(alpha * s1 + beta * s2);
  Tensor rhs = alpha * op.apply(s1) + beta * op.apply(s2);
  CHECK(relative_error(lhs, rhs) < 1e-10);

  Tensor y = op.apply(s1);
  for (std::size_t m = 0; m < op.rows(); m += 13) {
    double acc = 0;
    for (std::size_t n = 0; n < op.cols(); ++n) acc += op.matrix()[m * op.cols() + n] * s1[n];
    CHECK(y[m] == doctest::Approx(acc).epsilon(1e-12));
  }
  CHECK_THROWS_AS(op.apply(Tensor({1, 16, 15})), ShapeError);
  CHECK_THROWS_AS(op.adjoint(Tensor({3})), ShapeError);
}

TEST_CASE("noise model") {
  NoiseModel none{0.0};
  NoiseModel five{0.05};
  CHECK(five.delta() == doctest::Approx(0.1));
  CHECK(NoiseModel{0.1}.delta() == doctest::Approx(0.2));

  Rng rng(1);
  Tensor y({100}, 0.5);
  Tensor before = y;
  CHECK(none.add_noise(y, rng) == 0.0);
  CHECK(y == before);

  CompressionOperator op({1, 16, 16}, 4, 9);
  op.set_noise(0.0, 3);
  Tensor s = normal_tensor(op.input_shape(), rng);
  Observation obs = observe(op, s);
  CHECK(obs.sigma == 0.0);
  CHECK(obs.y == op.apply(s));

  op.set_noise(0.05, 3);
  Observation noisy = observe(op, s);
  CHECK(noisy.sigma > 0.0);
  CHECK(noisy.sigma <= 0.1);
  CHECK(!(noisy.y == obs.y));
  CHECK(observe(op, s).y == noisy.y);
}

TEST_CASE("noise sigma is uniform on [0, delta]") {
  NoiseModel five{0.05};
  Rng rng(31337);
  std::vector<double> sigmas(10000);
  for (auto& s : sigmas) s = five.sample_sigma(rng);
  std::sort(sigmas.begin(), sigmas.end());
  const double n = static_cast<double>(sigmas.size());
  double ks = 0;
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    CHECK((sigmas[i] >= 0.0 && sigmas[i] <= five.delta()));
    const double cdf = sigmas[i] / five.delta();
    ks = std::max({ks, std::abs(cdf - static_cast<double>(i) / n), std::abs(cdf - static_cast<double>(i + 1) / n)});
  }
  CHECK(ks < 0.02);
}

TEST_CASE("blur kernels") {
  BlurKernel k1 = BlurKernel::motion(33, 1);
  CHECK(k1.degree() == 1);
  CHECK(k1.at(0, 0) == 1.0);
  CHECK_THROWS_AS(BlurKernel::motion(0, 4), ConfigError);

  for (double angle : {0.0, 17.0, 45.0, 90.0, 135.0, 200.0}) {
    BlurKernel k = BlurKernel::motion(angle, 13);
    double sum = 0;
    for (double w : k.weights()) sum += w;
    CHECK(std::abs(sum - 1.0) < 1e-12);
    // Motion kernels are symmetric under a half turn.
    for (std::size_t i = 0; i < 13; ++i)
      for (std::size_t j = 0; j < 13; ++j) CHECK(k.at(i, j) == k.at(12 - i, 12 - j));
  }
  BlurKernel h = BlurKernel::motion(0, 13);
  for (std::size_t j = 0; j < 13; ++j) CHECK(h.at(6, j) == doctest::Approx(1.0 / 13));
  BlurKernel v = BlurKernel::motion(90, 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(v.at(i, 2) == doctest::Approx(0.2));
  // 45 degrees runs from lower left to upper right with rows pointing down.
  BlurKernel d = BlurKernel::motion(45, 3);
  CHECK(d.at(0, 2) > 0);
  CHECK(d.at(2, 0) > 0);
  CHECK(d.at(0, 0) == 0);
}

TEST_CASE("blur operator examples") {
  const Shape shape{1, 32, 32};
  Rng rng(4);
  Tensor s = normal_tensor(shape, rng);
  CHECK(BlurOperator(shape, BlurKernel::motion(0, 1)).apply(s) == s);

  BlurOperator b13(shape, BlurKernel::motion(0, 13));
  Tensor constant(shape, 0.4);
  Tensor out = b13.apply(constant);
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 6; j < 26; ++j) CHECK(out[i * 32 + j] == doctest::Approx(0.4).epsilon(1e-14));

  // Vertical one-pixel line, horizontal kernel: a band 13 pixels wide at 1/13.
  Tensor line(shape);
  for (std::size_t i = 0; i < 32; ++i) line[i * 32 + 15] = 1.0;
  Tensor spread = b13.apply(line);
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 32; ++j) {
      const double expected = (j >= 9 && j <= 21) ? 1.0 / 13.0 : 0.0;
      CHECK(spread[i * 32 + j] == doctest::Approx(expected).epsilon(1e-14));
    }

  // Symmetric kernels give adjoint = forward.
  BlurOperator diag(shape, BlurKernel::motion(30, 7));
  CHECK(relative_error(diag.apply(s), diag.adjoint(s)) < 1e-14);

  // Mass preservation for images supported away from the border.
  Tensor interior(shape);
  for (std::size_t i = 8; i < 24; ++i)
    for (std::size_t j = 8; j < 24; ++j) interior[i * 32 + j] = rng.uniform();
  double before = 0, after = 0;
  for (double x : interior.values()) before += x;
  for (double x : diag.apply(interior).values()) after += x;
  CHECK(std::abs(after - before) <= 1e-10 * before);

  CHECK_THROWS_AS(BlurOperator(Shape{1, 8, 8}, BlurKernel::motion(0, 13)), ConfigError);
}

TEST_CASE("occlusion masks and operator") {
  BinaryMask m = leaf_occlusion_mask(128, 128, 0.25, 11);
  const double occluded = static_cast<double>(128 * 128 - m.count());
  CHECK(occluded >= 0.23 * 16384);
  CHECK(occluded <= 0.27 * 16384);
  CHECK(leaf_occlusion_mask(128, 128, 0.25, 11) == m);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    for (double target : {0.1, 0.25, 0.4}) {
      BinaryMask mm = leaf_occlusion_mask(64, 64, target, seed);
      CHECK(std::abs((1.0 - mm.fraction()) - target) <= 0.02);
    }
  }
  CHECK_THROWS_AS(leaf_occlusion_mask(64, 64, 1.5, 1), ConfigError);

  const Shape shape{3, 16, 16};
  Rng rng(9);
  Tensor s = normal_tensor(shape, rng);
  CHECK(OcclusionOperator(shape, BinaryMask(16, 16, 1)).apply(s) == s);
  Tensor zero = OcclusionOperator(shape, BinaryMask(16, 16, 0)).apply(s);
  for (double v : zero.values()) CHECK(v == 0.0);

  OcclusionOperator occ(shape, leaf_occlusion_mask(16, 16, 0.25, 3), -1.0);
  CHECK(occ.adjoint(s) == occ.apply(s));
  Tensor shown = occ.display(s);
  Tensor observed = occ.apply(s);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < 256; ++k) {
      const std::size_t idx = c * 256 + k;
      if (occ.visible().values[k]) {
        CHECK(observed[idx] == s[idx]);
        CHECK(shown[idx] == s[idx]);
      } else {
        CHECK(observed[idx] == 0.0);
        CHECK(shown[idx] == -1.0);
      }
    }
  CHECK_THROWS_AS(OcclusionOperator(shape, BinaryMask(8, 16, 1)), ShapeError);
}

TEST_CASE("descriptors round trip and rebuild identical operators") {
  const Shape shape{1, 32, 32};
  OperatorDescriptor comp;
  comp.kind = OperatorKind::compression;
  comp.cr = 8;
  comp.seed = 42;
  comp.nl = 0.05;
  comp.noise_seed = 7;
  CHECK(OperatorDescriptor::from_json(comp.to_json()) == comp);
  auto a = make_operator(comp, shape);
  auto b = make_operator(OperatorDescriptor::from_json(comp.to_json()), shape);
  Rng rng(1);
  Tensor s = normal_tensor(shape, rng);
  CHECK(observe(*a, s).y == observe(*b, s).y);
  CHECK(a->descriptor() == comp);

  OperatorDescriptor blur;
  blur.kind = OperatorKind::blur;
  blur.angle = 30;
  blur.degree = 13;
  CHECK(OperatorDescriptor::from_json(blur.to_json()) == blur);
  CHECK(make_operator(blur, shape)->kind() == OperatorKind::blur);

  OperatorDescriptor occ;
  occ.kind = OperatorKind::occlusion;
  occ.coverage = 0.3;
  occ.seed = 5;
  occ.fill_value = 1.0;
  CHECK(OperatorDescriptor::from_json(occ.to_json()) == occ);
  auto o = make_operator(occ, shape);
  CHECK(std::abs(static_cast<const OcclusionOperator&>(*o).occluded_fraction() - 0.3) <= 0.02);

  Json bad = comp.to_json();
  bad["crr"] = 3;
  CHECK_THROWS_AS(OperatorDescriptor::from_json(bad), ConfigError);
  bad = comp.to_json();
  bad["kind"] = "wavelet";
  CHECK_THROWS_AS(OperatorDescriptor::from_json(bad), ConfigError);
}
