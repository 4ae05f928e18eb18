#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gancs/errors.hpp"
#include "gancs/experiment.hpp"
#include "gancs/stats.hpp"

using namespace gancs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("gancs_test_experiment_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ModelFile tiny_model(std::uint64_t seed) {
  GanArchitecture a;
  a.height = a.width = 32;
  a.latent_dim = 6;
  a.g_base = 3;
  a.d_base = 2;
  ModelFile m;
  m.generator = GeneratorModel(a);
  Rng rng(seed);
  m.generator.net.initialize(rng, 0.3);
  m.generator.net.set_mode(Mode::train);
  for (int i = 0; i < 2; ++i)
    m.generator.net.update_running_stats(m.generator.net.forward(sample_latent(8, a.latent_dim, rng)));
  m.generator.net.set_mode(Mode::infer);
  m.discriminator = DiscriminatorModel(a);
  m.discriminator->net.initialize(rng, 0.1);
  m.corpus_seed = 17;
  m.training_seconds = 1.5;
  return m;
}

ExperimentConfig small_config(const fs::path& out) {
  ExperimentConfig c;
  c.corpus.height = c.corpus.width = 32;
  c.corpus.train_count = 4;
  c.corpus.validation_count = 3;
  c.methods = {"gan", "omp", "ista"};
  c.crs = {2, 4};
  c.nls = {0.0, 0.1};
  c.output_dir = out;
  c.record_wall_time = false;
  c.mosaic_images = 1;
  c.recovery.iterations = 15;
  c.recovery.restarts = 3;
  c.baseline.ista_iterations = 30;
  c.segmenter.window = 5;
  c.segmenter.min_area = 2;
  return c;
}

}  // namespace

TEST_CASE("model files round trip bit for bit") {
  const fs::path dir = scratch("model");
  const ModelFile m = tiny_model(3);
  save_model(dir / "m.gpcs", m);
  const ModelFile back = load_model(dir / "m.gpcs");
  CHECK(back.architecture() == m.architecture());
  CHECK(back.corpus_seed == 17);
  CHECK(back.training_seconds == 1.5);
  REQUIRE(back.discriminator.has_value());
  Rng rng(4);
  const Tensor z = sample_latent(5, 6, rng);
  CHECK(back.generator.generate(z) == m.generator.generate(z));

  std::string bytes = slurp(dir / "m.gpcs");
  {
    std::string bad = bytes;
    bad[bad.size() - 12] ^= 0x01;
    std::ofstream(dir / "corrupt.gpcs", std::ios::binary) << bad;
    CHECK_THROWS_WITH_AS(load_model(dir / "corrupt.gpcs"), doctest::Contains("checksum"), FormatError);
  }
  {
    std::string bad = bytes;
    bad[4] = 2;
    std::ofstream(dir / "version.gpcs", std::ios::binary) << bad;
    CHECK_THROWS_WITH_AS(load_model(dir / "version.gpcs"), doctest::Contains("version"), FormatError);
  }
  {
    std::ofstream(dir / "short.gpcs", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_model(dir / "short.gpcs"), FormatError);
  }
  std::ofstream(dir / "magic.gpcs", std::ios::binary) << "NOPE" << bytes.substr(4);
  CHECK_THROWS_AS(load_model(dir / "magic.gpcs"), FormatError);
}

TEST_CASE("observation files round trip") {
  const fs::path dir = scratch("obs");
  Rng rng(5);
  const Tensor s = normal_tensor({1, 16, 16}, rng);
  CompressionOperator op({1, 16, 16}, 4, 9);
  op.set_noise(0.05, 12);
  const Observation obs = observe(op, s);
  save_observation(dir / "y.obs", obs);
  const Observation back = load_observation(dir / "y.obs");
  CHECK(back.y == obs.y);
  CHECK(back.sigma == obs.sigma);
  CHECK(back.descriptor == obs.descriptor);
  CHECK(back.image_shape == obs.image_shape);
  std::string bytes = slurp(dir / "y.obs");
  bytes[bytes.size() - 9] ^= 0x10;
  std::ofstream(dir / "bad.obs", std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_observation(dir / "bad.obs"), FormatError);
}

TEST_CASE("experiment config is strict") {
  ExperimentConfig c = small_config("out");
  const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.recovery == c.recovery);
  CHECK(back.blur == c.blur);

  Json j = c.to_json();
  j["learning_rate"] = 0.1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = c.to_json();
  j["blur"]["sigma"] = 1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = c.to_json();
  j["crs"] = "4";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  c.methods = {"gan", "bp"};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config("out");
  c.crs = {0.5};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config("out");
  c.blur.degree = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config("out");
  c.model = "/nonexistent/model.gpcs";
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("result rows format and parse") {
  ResultRow r;
  r.image_id = "2041";
  r.method = "cosamp";
  r.operator_kind = "compression";
  r.cr = 16;
  r.nl = 0.05;
  r.k_or_lambda1 = 205;
  r.f1 = 0.1 + 0.2;
  r.accuracy = 0.9921875;
  r.seed = 18446744073709551615ULL;
  const std::string line = format_row(r);
  CHECK(line.find(",,") != std::string::npos);  // L_min is empty for baselines
  const ResultRow back = parse_row(line);
  CHECK(format_row(back) == line);
  CHECK(back.f1 == r.f1);
  CHECK(!back.L_min);
  r.L_min = 1.25e-3;
  CHECK(parse_row(format_row(r)).L_min == 1.25e-3);
  CHECK_THROWS_AS(parse_row("a,b,c"), FormatError);
  CHECK_THROWS_AS(parse_row("1,gan,compression,x,0,0,1,,0,0,0,0,0,1"), FormatError);
}

TEST_CASE("csv sorting keeps header and footer") {
  const fs::path dir = scratch("sort");
  std::ofstream(dir / "in.csv") << "h1,h2\nb,2\na,9\n# note,1\nc,0\n";
  sort_csv(dir / "in.csv", dir / "out.csv");
  CHECK(slurp(dir / "out.csv") == "h1,h2\na,9\nb,2\nc,0\n# note,1\n");
}

TEST_CASE("statistics helpers") {
  CHECK(mean({1, 2, 3, 4}) == 2.5);
  CHECK(stddev({2, 4, 4, 4, 5, 5, 7, 9}) == doctest::Approx(2.138089935299395));
  CHECK(quantile({1, 2, 3, 4, 5}, 0.25) == 2.0);
  CHECK(quantile({1, 2}, 0.5) == 1.5);
  const FiveNumber f = five_number({5, 1, 3, 2, 4});
  CHECK(f.min == 1);
  CHECK(f.median == 3);
  CHECK(f.max == 5);

  CHECK(*pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
  CHECK(*spearman({1, 2, 3, 4}, {10, 100, 1000, 10000}) == doctest::Approx(1.0));
  CHECK(*spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(average_ranks({10, 20, 20, 30}) == std::vector<double>{1, 2.5, 2.5, 4});
  // Textbook example with Σd² = 4 and n = 5: ρ = 1 − 6·4/(5·24) = 0.8.
  CHECK(*spearman({1, 2, 3, 4, 5}, {2, 1, 4, 3, 5}) == doctest::Approx(0.8));
  CHECK(!pearson({1, 1, 1}, {1, 2, 3}));
  CHECK(!spearman({1, 2, 3}, {5, 5, 5}));
}

TEST_CASE("principal axis of a mask") {
  BinaryMask h(21, 21), v(21, 21), d(21, 21);
  for (std::size_t k = 2; k < 19; ++k) {
    h.at(10, k) = 1;
    v.at(k, 10) = 1;
    d.at(20 - k, k) = 1;  // rising to the right
  }
  CHECK(principal_axis_degrees(h) == doctest::Approx(0.0));
  CHECK(std::abs(principal_axis_degrees(v)) == doctest::Approx(90.0));
  CHECK(principal_axis_degrees(d) == doctest::Approx(45.0));
}

TEST_CASE("compression sweeps") {
  const fs::path dir = scratch("sweep");
  save_model(dir / "m.gpcs", tiny_model(6));
  ExperimentConfig c = small_config(dir / "a");
  Experiment ex(c, load_model(dir / "m.gpcs"));
  REQUIRE(ex.images().size() == 3);

  const StudyOutcome cr = ex.cr_sweep();
  CHECK(cr.failures.empty());
  CHECK(cr.rows.size() == 3 * 2 * 3);
  const StudyOutcome noise = ex.noise_sweep();
  CHECK(noise.rows.size() == 3 * 2 * 2 * 3);

  // The noiseless part of the noise sweep reproduces the CR sweep.
  std::vector<std::string> zero;
  for (const auto& r : noise.rows)
    if (r.nl == 0.0) zero.push_back(format_row(r));
  std::vector<std::string> plain;
  for (const auto& r : cr.rows) plain.push_back(format_row(r));
  CHECK(zero == plain);

  const auto from_disk = read_results(dir / "a" / "cr_sweep.csv");
  REQUIRE(from_disk.size() == cr.rows.size());
  for (std::size_t i = 0; i < cr.rows.size(); ++i) CHECK(format_row(from_disk[i]) == format_row(cr.rows[i]));
  for (const auto& r : cr.rows) {
    CHECK(r.restarts == (r.method == "gan" ? 3u : 0u));
    CHECK(r.L_min.has_value() == (r.method == "gan"));
    CHECK(r.f1 >= 0.0);
    CHECK(r.f1 <= 1.0);
  }
  CHECK(fs::exists(dir / "a" / "cr_sweep_summary.csv"));
  CHECK(fs::exists(dir / "a" / "cr_sweep_mosaic.png"));
  CHECK(fs::exists(dir / "a" / "cr_sweep_mosaic.png.txt"));

  // Same results with two workers and on a second run.
  c.output_dir = dir / "b";
  c.threads = 2;
  Experiment ex2(c, load_model(dir / "m.gpcs"));
  ex2.cr_sweep();
  CHECK(slurp(dir / "a" / "cr_sweep.csv") == slurp(dir / "b" / "cr_sweep.csv"));

  // Baselines alone need no model; GAN studies do.
  c.methods = {"cosamp"};
  Experiment baselines(c, std::nullopt);
  CHECK(baselines.cr_sweep().rows.size() == 6);
  CHECK_THROWS_AS(baselines.blur_study(), ConfigError);
}

TEST_CASE("timing report") {
  const fs::path dir = scratch("timing");
  CsvAppender csv(dir / "r.csv", kResultHeader);
  std::vector<std::string> lines;
  for (double t : {1.0, 2.0, 6.0}) {
    ResultRow r;
    r.image_id = "0";
    r.method = "omp";
    r.operator_kind = "compression";
    r.wall_time_seconds = t;
    lines.push_back(format_row(r));
    r.method = "gan";
    r.wall_time_seconds = 10 * t;
    lines.push_back(format_row(r));
  }
  csv.append(lines);
  timing_report({dir / "r.csv"}, 120.0, dir / "timing.csv");
  CHECK(slurp(dir / "timing.csv") == "method,rows,mean_wall_time_seconds\nomp,3,3\ngan,3,30\ngan_training,1,120\n");
}

TEST_CASE("restoration studies") {
  const fs::path dir = scratch("restore");
  ExperimentConfig c = small_config(dir);
  c.blur.degree = 1;
  c.blur.restarts = 2;
  c.occlusion.restarts = 2;
  Experiment ex(c, tiny_model(8));
  const StudyOutcome blur = ex.blur_study();
  CHECK(blur.failures.empty());
  REQUIRE(blur.rows.size() == 6);
  // A one-pixel kernel leaves the image unchanged.
  for (std::size_t i = 0; i < 3; ++i) {
    const ResultRow& before = blur.rows[2 * i];
    CHECK(before.method == "degraded");
    const StudyImage& img = ex.images()[i];
    CHECK(before.f1 == evaluate_masks(segment(img.image, c.segmenter), img.truth).f1);
  }
  CHECK(blur.summary.contains("growth_rate"));

  const StudyOutcome occ = ex.occlusion_study();
  CHECK(occ.failures.empty());
  CHECK(occ.rows.size() == 6);
  CHECK(occ.rows[0].operator_kind == "occlusion");
  CHECK(fs::exists(dir / "occlusion_study_mosaic.png"));
}

TEST_CASE("restart and correlation studies") {
  const fs::path dir = scratch("restarts");
  ExperimentConfig c = small_config(dir);
  c.restart_study.crs = {2, 4};
  c.restart_study.images = 2;
  c.correlation.cr = 4;
  c.correlation.trials = 6;
  Experiment ex(c, tiny_model(9));
  const StudyOutcome rs = ex.restart_study();
  CHECK(rs.restart_records.size() == 2 * 2 * 3);
  for (std::size_t i = 1; i < rs.restart_records.size(); ++i) {
    const auto& a = rs.restart_records[i - 1];
    const auto& b = rs.restart_records[i];
    if (a.image_id == b.image_id && a.cr == b.cr) {
      CHECK(b.k == a.k + 1);
      CHECK(b.L_min <= a.L_min);
    }
  }
  const StudyOutcome corr = ex.loss_correlation();
  CHECK(corr.correlation_records.size() == 6);
  CHECK(corr.summary.contains("spearman_L_min_f1"));
  const std::string text = slurp(dir / "loss_correlation.csv");
  CHECK(text.find("# spearman_L_min_f1,") != std::string::npos);
}
