#include "gancs/experiment.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "gancs/errors.hpp"
#include "gancs/image.hpp"
#include "gancs/stats.hpp"

namespace gancs {

namespace fs = std::filesystem;

const char* const kResultHeader =
    "image_id,method,operator_kind,cr,nl,k_or_lambda1,restarts,L_min,accuracy,precision,recall,f1,"
    "wall_time_seconds,seed";

namespace {

const std::vector<std::string> kMethods{"gan", "omp", "cosamp", "ista"};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string optional_double(std::optional<double> v) {
  if (!v) return "undefined";
  return format_double(*v);
}

// Runs work(i) for i in [0, count) on `threads` workers and hands results to
// emit(i, result) in index order on the calling thread.
template <typename Result, typename Work, typename Emit>
void for_each_ordered(std::size_t count, std::size_t threads, Work work, Emit emit) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      Result r = work(i);
      emit(i, r);
    }
    return;
  }
  std::vector<std::optional<Result>> results(count);
  std::mutex mutex;
  std::condition_variable ready;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mutex);
        if (next >= count) return;
        i = next++;
      }
      Result r = work(i);
      {
        std::lock_guard lock(mutex);
        results[i] = std::move(r);
      }
      ready.notify_all();
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, count); ++t) pool.emplace_back(worker);
  for (std::size_t i = 0; i < count; ++i) {
    std::unique_lock lock(mutex);
    ready.wait(lock, [&] { return results[i].has_value(); });
    Result r = std::move(*results[i]);
    results[i].reset();
    lock.unlock();
    emit(i, r);
  }
  for (auto& t : pool) t.join();
}

std::unique_ptr<ForwardOperator> compression_for(const Shape& shape, double cr, const CellSeeds& seeds, double nl) {
  std::unique_ptr<ForwardOperator> op;
  if (cr == 1.0) {
    OperatorDescriptor d;
    d.kind = OperatorKind::identity;
    op = std::make_unique<IdentityOperator>(shape, d);
  } else {
    op = std::make_unique<CompressionOperator>(shape, cr, seeds.op);
  }
  op->set_noise(nl, seeds.noise);
  return op;
}

Json doubles_json(const std::vector<double>& v) { return Json(v); }

void fill_metrics(ResultRow& row, const MetricReport& m) {
  row.accuracy = m.accuracy;
  row.precision = m.precision;
  row.recall = m.recall;
  row.f1 = m.f1;
}

std::string describe(double cr, double nl) {
  return "cr=" + format_double(cr) + " nl=" + format_double(nl);
}

void write_failures(const fs::path& path, const std::vector<Failure>& failures) {
  std::string text = "image_id,condition,message\n";
  for (const auto& f : failures) {
    std::string msg = f.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    text += f.image_id + "," + f.condition + "," + msg + "\n";
  }
  write_text_atomic(path, text);
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_join(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + fields[i];
  return out;
}

std::string format_row(const ResultRow& r) {
  return csv_join({r.image_id, r.method, r.operator_kind, format_double(r.cr), format_double(r.nl),
                   format_double(r.k_or_lambda1), std::to_string(r.restarts), r.L_min ? format_double(*r.L_min) : "",
                   format_double(r.accuracy), format_double(r.precision), format_double(r.recall), format_double(r.f1),
                   format_double(r.wall_time_seconds), std::to_string(r.seed)});
}

ResultRow parse_row(const std::string& line) {
  const auto f = split_csv(line);
  if (f.size() != 14) throw FormatError("result row has " + std::to_string(f.size()) + " fields, expected 14: " + line);
  try {
    ResultRow r;
    r.image_id = f[0];
    r.method = f[1];
    r.operator_kind = f[2];
    r.cr = std::stod(f[3]);
    r.nl = std::stod(f[4]);
    r.k_or_lambda1 = std::stod(f[5]);
    r.restarts = std::stoul(f[6]);
    if (!f[7].empty()) r.L_min = std::stod(f[7]);
    r.accuracy = std::stod(f[8]);
    r.precision = std::stod(f[9]);
    r.recall = std::stod(f[10]);
    r.f1 = std::stod(f[11]);
    r.wall_time_seconds = std::stod(f[12]);
    r.seed = std::stoull(f[13]);
    return r;
  } catch (const std::logic_error&) {
    throw FormatError("malformed result row: " + line);
  }
}

std::vector<ResultRow> read_results(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kResultHeader) throw FormatError(path.string() + ": unexpected header");
  std::vector<ResultRow> rows;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') rows.push_back(parse_row(line));
  return rows;
}

CsvAppender::CsvAppender(fs::path path, const std::string& header) : path_(std::move(path)) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  write_text_atomic(path_, header + "\n");
}

void CsvAppender::append(const std::vector<std::string>& lines) {
  std::string chunk;
  for (const auto& l : lines) chunk += l + "\n";
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  out << chunk;
  out.flush();
  if (!out) throw FormatError("append failed for " + path_.string());
}

// ---- configuration ------------------------------------------------------

void ExperimentConfig::validate() const {
  corpus.validate();
  if (methods.empty()) throw ConfigError("experiment needs at least one method");
  for (const auto& m : methods)
    if (std::find(kMethods.begin(), kMethods.end(), m) == kMethods.end())
      throw ConfigError("unknown method '" + m + "' (expected gan, omp, cosamp or ista)");
  if (crs.empty()) throw ConfigError("experiment needs at least one compression ratio");
  for (double cr : crs)
    if (!(cr >= 1.0)) throw ConfigError("compression ratios must be at least 1");
  if (nls.empty()) throw ConfigError("experiment needs at least one noise level");
  for (double nl : nls)
    if (!(nl >= 0.0)) throw ConfigError("noise levels must be nonnegative");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  recovery.validate();
  baseline.validate();
  segmenter.validate();
  if (blur.degree < 1 || blur.degree % 2 == 0) throw ConfigError("blur degree must be odd");
  if (blur.angle_policy != "orthogonal" && blur.angle_policy != "fixed")
    throw ConfigError("blur angle_policy must be 'orthogonal' or 'fixed'");
  if (blur.restarts < 1 || occlusion.restarts < 1) throw ConfigError("studies need at least one restart");
  if (!(occlusion.coverage > 0.0 && occlusion.coverage < 1.0)) throw ConfigError("occlusion coverage must be in (0,1)");
  if (restart_study.crs.empty() || restart_study.images < 1) throw ConfigError("restart study needs CRs and images");
  if (!(correlation.cr >= 1.0) || correlation.trials < 2 || correlation.images < 1)
    throw ConfigError("correlation study needs CR >= 1, at least 2 trials and 1 image");
  if (!corpus_dir.empty() && !fs::is_directory(corpus_dir))
    throw ConfigError("corpus directory " + corpus_dir.string() + " does not exist");
  if (!model.empty() && !fs::is_regular_file(model)) throw ConfigError("model file " + model.string() + " does not exist");
}

Json ExperimentConfig::to_json() const {
  return Json{{"corpus", corpus.to_json()},
              {"corpus_dir", corpus_dir.string()},
              {"model", model.string()},
              {"methods", methods},
              {"crs", doubles_json(crs)},
              {"nls", doubles_json(nls)},
              {"images", images},
              {"seed", seed},
              {"output_dir", output_dir.string()},
              {"threads", threads},
              {"record_wall_time", record_wall_time},
              {"mosaic_images", mosaic_images},
              {"recovery", recovery.to_json()},
              {"baseline", baseline.to_json()},
              {"segmenter", segmenter.to_json()},
              {"blur",
               {{"degree", blur.degree}, {"angle_policy", blur.angle_policy}, {"angle", blur.angle}, {"restarts", blur.restarts}}},
              {"occlusion",
               {{"coverage", occlusion.coverage}, {"fill_value", occlusion.fill_value}, {"restarts", occlusion.restarts}}},
              {"restart_study", {{"crs", doubles_json(restart_study.crs)}, {"images", restart_study.images}}},
              {"correlation", {{"cr", correlation.cr}, {"trials", correlation.trials}, {"images", correlation.images}}}};
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  ExperimentConfig c;
  ObjectReader r(j, "experiment config");
  if (r.has("corpus")) c.corpus = CorpusConfig::from_json(r.child("corpus"));
  c.corpus_dir = r.get<std::string>("corpus_dir", "");
  c.model = r.get<std::string>("model", "");
  c.methods = r.get("methods", c.methods);
  c.crs = r.get("crs", c.crs);
  c.nls = r.get("nls", c.nls);
  c.images = r.get("images", c.images);
  c.seed = r.get("seed", c.seed);
  c.output_dir = r.get<std::string>("output_dir", c.output_dir.string());
  c.threads = r.get("threads", c.threads);
  c.record_wall_time = r.get("record_wall_time", c.record_wall_time);
  c.mosaic_images = r.get("mosaic_images", c.mosaic_images);
  if (r.has("recovery")) c.recovery = RecoveryConfig::from_json(r.child("recovery"));
  if (r.has("baseline")) c.baseline = BaselineConfig::from_json(r.child("baseline"));
  if (r.has("segmenter")) c.segmenter = SegmenterParams::from_json(r.child("segmenter"));
  if (r.has("blur")) {
    ObjectReader b(r.child("blur"), "blur settings");
    c.blur.degree = b.get("degree", c.blur.degree);
    c.blur.angle_policy = b.get("angle_policy", c.blur.angle_policy);
    c.blur.angle = b.get("angle", c.blur.angle);
    c.blur.restarts = b.get("restarts", c.blur.restarts);
    b.finish();
  }
  if (r.has("occlusion")) {
    ObjectReader o(r.child("occlusion"), "occlusion settings");
    c.occlusion.coverage = o.get("coverage", c.occlusion.coverage);
    c.occlusion.fill_value = o.get("fill_value", c.occlusion.fill_value);
    c.occlusion.restarts = o.get("restarts", c.occlusion.restarts);
    o.finish();
  }
  if (r.has("restart_study")) {
    ObjectReader s(r.child("restart_study"), "restart study settings");
    c.restart_study.crs = s.get("crs", c.restart_study.crs);
    c.restart_study.images = s.get("images", c.restart_study.images);
    s.finish();
  }
  if (r.has("correlation")) {
    ObjectReader s(r.child("correlation"), "correlation settings");
    c.correlation.cr = s.get("cr", c.correlation.cr);
    c.correlation.trials = s.get("trials", c.correlation.trials);
    c.correlation.images = s.get("images", c.correlation.images);
    s.finish();
  }
  r.finish();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  ExperimentConfig c = from_json(read_json_file(path));
  // Relative paths in a config file are relative to the file.
  const fs::path base = path.parent_path();
  if (!c.corpus_dir.empty() && c.corpus_dir.is_relative()) c.corpus_dir = base / c.corpus_dir;
  if (!c.model.empty() && c.model.is_relative()) c.model = base / c.model;
  if (c.output_dir.is_relative()) c.output_dir = base / c.output_dir;
  c.validate();
  return c;
}

// ---- images and seeds -----------------------------------------------------

std::vector<StudyImage> study_images(const ExperimentConfig& config, std::size_t limit) {
  std::size_t count = config.images;
  if (limit && (!count || limit < count)) count = limit;
  std::vector<StudyImage> out;
  auto add = [&](const Sample& s) {
    if (!s.mask) return;
    out.push_back({std::to_string(s.index), s.image, *s.mask});
  };
  if (!config.corpus_dir.empty()) {
    Corpus corpus = load_corpus(config.corpus_dir);
    for (const Sample* s : corpus.validation()) {
      if (count && out.size() >= count) break;
      add(*s);
    }
  } else {
    const CorpusConfig& c = config.corpus;
    for (std::size_t i = 0; i < c.validation_count && (!count || out.size() < count); ++i)
      add(generate_sample(c, c.train_count + i));
  }
  if (out.empty()) throw ConfigError("no validation images with ground-truth masks");
  return out;
}

CellSeeds cell_seeds(std::uint64_t master, std::size_t image_index, double cr, double nl) {
  CellSeeds s;
  s.cell = derive_seed(master, {static_cast<std::uint64_t>(image_index), std::bit_cast<std::uint64_t>(cr)});
  s.op = derive_seed(s.cell, 1);
  s.recovery = derive_seed(s.cell, 2);
  s.noise = derive_seed(s.cell, {3, std::bit_cast<std::uint64_t>(nl)});
  return s;
}

double principal_axis_degrees(const BinaryMask& mask) {
  double n = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < mask.height; ++i)
    for (std::size_t j = 0; j < mask.width; ++j)
      if (mask.at(i, j)) {
        n += 1;
        sx += static_cast<double>(j);
        sy -= static_cast<double>(i);
      }
  if (n < 2) return 0.0;
  const double mx = sx / n, my = sy / n;
  double cxx = 0, cyy = 0, cxy = 0;
  for (std::size_t i = 0; i < mask.height; ++i)
    for (std::size_t j = 0; j < mask.width; ++j)
      if (mask.at(i, j)) {
        const double dx = static_cast<double>(j) - mx, dy = -static_cast<double>(i) - my;
        cxx += dx * dx;
        cyy += dy * dy;
        cxy += dx * dy;
      }
  return 0.5 * std::atan2(2.0 * cxy, cxx - cyy) * 180.0 / std::numbers::pi;
}

// ---- experiment -------------------------------------------------------------

Experiment::Experiment(ExperimentConfig config, std::optional<ModelFile> model, std::ostream* log)
    : config_(std::move(config)), model_(std::move(model)), log_(log) {
  config_.validate();
  images_ = study_images(config_);
  if (model_) {
    const Shape expected = model_->architecture().image_shape();
    if (images_.front().image.shape() != expected)
      throw ConfigError("model generates " + shape_string(expected) + " images but the corpus has " +
                        shape_string(images_.front().image.shape()));
    model_->generator.net.set_mode(Mode::infer);
  }
}

const GeneratorModel& Experiment::generator() const {
  if (!model_) throw ConfigError("this study needs a trained model (set 'model' in the config)");
  return model_->generator;
}

void Experiment::note(const std::string& message) const {
  if (log_) *log_ << message << std::endl;
}

ResultRow Experiment::compression_cell(const StudyImage& img, std::size_t image_index, const std::string& method,
                                       double cr, double nl, Tensor* reconstruction) const {
  const auto start = Clock::now();
  const CellSeeds seeds = cell_seeds(config_.seed, image_index, cr, nl);
  ResultRow row;
  row.image_id = img.id;
  row.method = method;
  row.operator_kind = to_string(cr == 1.0 ? OperatorKind::identity : OperatorKind::compression);
  row.cr = cr;
  row.nl = nl;
  row.seed = seeds.cell;
  Tensor recon;
  if (method == "gan") {
    const auto op = compression_for(img.image.shape(), cr, seeds, nl);
    const Observation obs = observe(*op, img.image);
    RecoveryConfig rc = config_.recovery;
    rc.seed = seeds.recovery;
    RecoveryResult res = recover(generator(), *op, obs.y, rc);
    recon = std::move(res.reconstruction);
    row.k_or_lambda1 = rc.lambda;
    row.restarts = rc.restarts;
    row.L_min = res.L_min;
  } else {
    const Tensor gray = img.image.dim(0) == 1 ? img.image : channel_mean(img.image);
    const auto op = compression_for(gray.shape(), cr, seeds, nl);
    const Observation obs = observe(*op, gray);
    BaselineConfig bc = config_.baseline;
    bc.method = baseline_method_from_string(method);
    BaselineResult res = run_baseline(*op, obs.y, bc);
    recon = std::move(res.reconstruction);
    row.k_or_lambda1 = bc.method == BaselineMethod::ista ? bc.l1_weight : static_cast<double>(res.sparsity);
  }
  fill_metrics(row, evaluate_masks(segment(recon, config_.segmenter), img.truth));
  if (reconstruction) *reconstruction = std::move(recon);
  row.wall_time_seconds = config_.record_wall_time ? seconds_since(start) : 0.0;
  return row;
}

namespace {

struct CellGroup {
  std::vector<ResultRow> rows;
  std::vector<Failure> failures;
  std::vector<Tensor> tiles;
  std::vector<std::string> labels;
};

}  // namespace

StudyOutcome Experiment::compression_grid(const std::string& name, const std::vector<double>& nls) {
  StudyOutcome out;
  const fs::path dir = config_.output_dir;
  fs::create_directories(dir);
  CsvAppender csv(dir / (name + ".csv"), kResultHeader);
  const std::string mosaic_method =
      std::find(config_.methods.begin(), config_.methods.end(), "gan") != config_.methods.end() ? "gan"
                                                                                               : config_.methods.front();
  std::vector<Tensor> tiles;
  std::vector<std::string> labels;

  for_each_ordered<CellGroup>(
      images_.size(), config_.threads,
      [&](std::size_t i) {
        CellGroup g;
        const StudyImage& img = images_[i];
        const bool tile = i < config_.mosaic_images;
        if (tile) {
          g.tiles.push_back(img.image);
          g.labels.push_back(img.id + " original");
        }
        for (double cr : config_.crs)
          for (double nl : nls)
            for (const auto& method : config_.methods) {
              try {
                Tensor recon;
                g.rows.push_back(compression_cell(img, i, method, cr, nl, &recon));
                if (tile && method == mosaic_method && nl == nls.front()) {
                  g.tiles.push_back(recon.dim(0) == img.image.dim(0) ? recon : adapt_channels(recon, img.image.dim(0)));
                  g.labels.push_back(img.id + " " + method + " " + describe(cr, nl));
                }
              } catch (const std::exception& e) {
                g.failures.push_back({img.id, method + " " + describe(cr, nl), e.what()});
              }
            }
        return g;
      },
      [&](std::size_t i, CellGroup& g) {
        std::vector<std::string> lines;
        for (const auto& r : g.rows) lines.push_back(format_row(r));
        csv.append(lines);
        out.rows.insert(out.rows.end(), g.rows.begin(), g.rows.end());
        out.failures.insert(out.failures.end(), g.failures.begin(), g.failures.end());
        for (const auto& f : g.failures) note("failure: image " + f.image_id + " " + f.condition + ": " + f.message);
        tiles.insert(tiles.end(), g.tiles.begin(), g.tiles.end());
        labels.insert(labels.end(), g.labels.begin(), g.labels.end());
        note(name + ": image " + std::to_string(i + 1) + "/" + std::to_string(images_.size()) + " done");
      });
  out.files.push_back(csv.path());

  // Box-plot summary per method and condition.
  std::map<std::tuple<std::string, double, double>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : out.rows) {
    auto& g = groups[{r.method, r.cr, r.nl}];
    g.first.push_back(r.f1);
    g.second.push_back(r.accuracy);
  }
  std::string text =
      "method,cr,nl,count,f1_min,f1_q1,f1_median,f1_q3,f1_max,f1_mean,accuracy_min,accuracy_q1,accuracy_median,"
      "accuracy_q3,accuracy_max,accuracy_mean\n";
  for (const auto& method : config_.methods)
    for (double cr : config_.crs)
      for (double nl : nls) {
        auto it = groups.find({method, cr, nl});
        if (it == groups.end()) continue;
        const auto& [f1, acc] = it->second;
        const FiveNumber a = five_number(f1), b = five_number(acc);
        text += csv_join({method, format_double(cr), format_double(nl), std::to_string(f1.size()),
                          format_double(a.min), format_double(a.q1), format_double(a.median), format_double(a.q3),
                          format_double(a.max), format_double(mean(f1)), format_double(b.min), format_double(b.q1),
                          format_double(b.median), format_double(b.q3), format_double(b.max),
                          format_double(mean(acc))}) +
                "\n";
      }
  write_text_atomic(dir / (name + "_summary.csv"), text);
  out.files.push_back(dir / (name + "_summary.csv"));
  if (!tiles.empty()) {
    write_labeled_mosaic(dir / (name + "_mosaic.png"), tiles, labels, 1 + config_.crs.size());
    out.files.push_back(dir / (name + "_mosaic.png"));
  }
  write_failures(dir / (name + "_failures.csv"), out.failures);
  return out;
}

StudyOutcome Experiment::cr_sweep() { return compression_grid("cr_sweep", {0.0}); }

StudyOutcome Experiment::noise_sweep() { return compression_grid("noise_sweep", config_.nls); }

StudyOutcome Experiment::restart_study() {
  StudyOutcome out;
  const fs::path dir = config_.output_dir;
  fs::create_directories(dir);
  CsvAppender csv(dir / "restart_study.csv", "image_id,cr,k,L_min,accuracy,precision,recall,f1,seed");
  const std::size_t n = std::min(config_.restart_study.images, images_.size());
  const GeneratorModel& g = generator();
  struct Group {
    std::vector<RestartRecord> records;
    std::vector<std::string> lines;
    std::vector<ResultRow> rows;
    std::vector<Failure> failures;
  };
  for_each_ordered<Group>(
      n, config_.threads,
      [&](std::size_t i) {
        Group grp;
        const StudyImage& img = images_[i];
        for (double cr : config_.restart_study.crs) {
          try {
            const auto start = Clock::now();
            const CellSeeds seeds = cell_seeds(config_.seed, i, cr, 0.0);
            const auto op = compression_for(img.image.shape(), cr, seeds, 0.0);
            const Observation obs = observe(*op, img.image);
            RecoveryConfig rc = config_.recovery;
            rc.seed = seeds.recovery;
            const RecoveryResult res = recover(g, *op, obs.y, rc);
            std::size_t best = 0;
            for (std::size_t k = 1; k <= res.restarts.size(); ++k) {
              if (res.per_restart_losses[k - 1] < res.per_restart_losses[best]) best = k - 1;
              const RestartOutcome& o = res.restarts[best];
              if (o.failed) continue;
              const Tensor recon = g.generate(o.z).reshaped(img.image.shape());
              const MetricReport m = evaluate_masks(segment(recon, config_.segmenter), img.truth);
              grp.records.push_back({img.id, cr, k, o.loss, m.accuracy, m.f1});
              grp.lines.push_back(csv_join({img.id, format_double(cr), std::to_string(k), format_double(o.loss),
                                            format_double(m.accuracy), format_double(m.precision),
                                            format_double(m.recall), format_double(m.f1), std::to_string(seeds.cell)}));
              if (k == res.restarts.size()) {
                ResultRow row;
                row.image_id = img.id;
                row.method = "gan";
                row.operator_kind = to_string(op->kind());
                row.cr = cr;
                row.k_or_lambda1 = rc.lambda;
                row.restarts = rc.restarts;
                row.L_min = res.L_min;
                fill_metrics(row, m);
                row.wall_time_seconds = config_.record_wall_time ? seconds_since(start) : 0.0;
                row.seed = seeds.cell;
                grp.rows.push_back(row);
              }
            }
          } catch (const std::exception& e) {
            grp.failures.push_back({img.id, describe(cr, 0.0), e.what()});
          }
        }
        return grp;
      },
      [&](std::size_t i, Group& grp) {
        csv.append(grp.lines);
        out.restart_records.insert(out.restart_records.end(), grp.records.begin(), grp.records.end());
        out.rows.insert(out.rows.end(), grp.rows.begin(), grp.rows.end());
        out.failures.insert(out.failures.end(), grp.failures.begin(), grp.failures.end());
        note("restart study: image " + std::to_string(i + 1) + "/" + std::to_string(n) + " done");
      });
  out.files.push_back(csv.path());

  std::string text = "cr,k,images,accuracy_mean,accuracy_std,f1_mean,f1_std,L_min_mean\n";
  for (double cr : config_.restart_study.crs)
    for (std::size_t k = 1; k <= config_.recovery.restarts; ++k) {
      std::vector<double> acc, f1, loss;
      for (const auto& r : out.restart_records)
        if (r.cr == cr && r.k == k) {
          acc.push_back(r.accuracy);
          f1.push_back(r.f1);
          loss.push_back(r.L_min);
        }
      if (acc.empty()) continue;
      text += csv_join({format_double(cr), std::to_string(k), std::to_string(acc.size()), format_double(mean(acc)),
                        format_double(stddev(acc)), format_double(mean(f1)), format_double(stddev(f1)),
                        format_double(mean(loss))}) +
              "\n";
    }
  write_text_atomic(dir / "restart_study_summary.csv", text);
  out.files.push_back(dir / "restart_study_summary.csv");
  write_failures(dir / "restart_study_failures.csv", out.failures);
  return out;
}

StudyOutcome Experiment::loss_correlation() {
  StudyOutcome out;
  const fs::path dir = config_.output_dir;
  fs::create_directories(dir);
  const GeneratorModel& g = generator();
  const double cr = config_.correlation.cr;
  const std::size_t n = std::min(config_.correlation.images, images_.size());
  std::string text = "image_id,restart,L_min,accuracy,f1\n";
  for (std::size_t i = 0; i < n; ++i) {
    const StudyImage& img = images_[i];
    try {
      const CellSeeds seeds = cell_seeds(config_.seed, i, cr, 0.0);
      const auto op = compression_for(img.image.shape(), cr, seeds, 0.0);
      const Observation obs = observe(*op, img.image);
      RecoveryConfig rc = config_.recovery;
      rc.seed = seeds.recovery;
      rc.restarts = config_.correlation.trials;
      std::vector<std::uint64_t> restart_seeds;
      for (std::size_t r = 0; r < rc.restarts; ++r) restart_seeds.push_back(restart_seed(rc.seed, r));
      const RecoveryResult res = recover_with_seeds(g, *op, obs.y, rc, restart_seeds);
      for (std::size_t r = 0; r < res.restarts.size(); ++r) {
        const RestartOutcome& o = res.restarts[r];
        if (o.failed) continue;
        const Tensor recon = g.generate(o.z).reshaped(img.image.shape());
        const MetricReport m = evaluate_masks(segment(recon, config_.segmenter), img.truth);
        out.correlation_records.push_back({img.id, r, o.loss, m.accuracy, m.f1});
        text += csv_join({img.id, std::to_string(r), format_double(o.loss), format_double(m.accuracy),
                          format_double(m.f1)}) +
                "\n";
      }
    } catch (const std::exception& e) {
      out.failures.push_back({img.id, describe(cr, 0.0), e.what()});
    }
    note("correlation study: image " + std::to_string(i + 1) + "/" + std::to_string(n) + " done");
  }
  std::vector<double> loss, acc, f1;
  for (const auto& r : out.correlation_records) {
    loss.push_back(r.L_min);
    acc.push_back(r.accuracy);
    f1.push_back(r.f1);
  }
  const auto s_f1 = spearman(loss, f1), p_f1 = pearson(loss, f1);
  const auto s_acc = spearman(loss, acc), p_acc = pearson(loss, acc);
  text += "# spearman_L_min_f1," + optional_double(s_f1) + "\n";
  text += "# pearson_L_min_f1," + optional_double(p_f1) + "\n";
  text += "# spearman_L_min_accuracy," + optional_double(s_acc) + "\n";
  text += "# pearson_L_min_accuracy," + optional_double(p_acc) + "\n";
  write_text_atomic(dir / "loss_correlation.csv", text);
  out.files.push_back(dir / "loss_correlation.csv");
  auto opt = [](std::optional<double> v) { return v ? Json(*v) : Json(nullptr); };
  out.summary = Json{{"spearman_L_min_f1", opt(s_f1)},
                     {"pearson_L_min_f1", opt(p_f1)},
                     {"spearman_L_min_accuracy", opt(s_acc)},
                     {"pearson_L_min_accuracy", opt(p_acc)},
                     {"trials", out.correlation_records.size()}};
  write_failures(dir / "loss_correlation_failures.csv", out.failures);
  return out;
}

StudyOutcome Experiment::restoration_study(const std::string& name) {
  StudyOutcome out;
  const fs::path dir = config_.output_dir;
  fs::create_directories(dir);
  CsvAppender csv(dir / (name + ".csv"), kResultHeader);
  const GeneratorModel& g = generator();
  const bool blur = name == "blur_study";
  std::vector<Tensor> tiles;
  std::vector<std::string> labels;

  for_each_ordered<CellGroup>(
      images_.size(), config_.threads,
      [&](std::size_t i) {
        CellGroup grp;
        const StudyImage& img = images_[i];
        const Shape& shape = img.image.shape();
        try {
          auto start = Clock::now();
          const CellSeeds seeds = cell_seeds(config_.seed, i, 1.0, 0.0);
          OperatorDescriptor d;
          std::unique_ptr<ForwardOperator> op;
          const OcclusionOperator* occ = nullptr;
          if (blur) {
            d.kind = OperatorKind::blur;
            d.degree = config_.blur.degree;
            d.angle = config_.blur.angle_policy == "orthogonal" ? principal_axis_degrees(img.truth) + 90.0
                                                                : config_.blur.angle;
            op = make_operator(d, shape);
          } else {
            d.kind = OperatorKind::occlusion;
            d.seed = seeds.op;
            d.coverage = config_.occlusion.coverage;
            d.fill_value = config_.occlusion.fill_value;
            op = make_operator(d, shape);
            occ = dynamic_cast<const OcclusionOperator*>(op.get());
          }
          const Observation obs = observe(*op, img.image);
          Tensor degraded = obs.y.reshaped(shape);
          if (occ) degraded = occ->display(degraded);
          ResultRow before;
          before.image_id = img.id;
          before.method = "degraded";
          before.operator_kind = to_string(d.kind);
          before.seed = seeds.cell;
          fill_metrics(before, evaluate_masks(segment(degraded, config_.segmenter), img.truth));
          before.wall_time_seconds = config_.record_wall_time ? seconds_since(start) : 0.0;

          start = Clock::now();
          RecoveryConfig rc = config_.recovery;
          rc.seed = seeds.recovery;
          rc.restarts = blur ? config_.blur.restarts : config_.occlusion.restarts;
          const RecoveryResult res = recover(g, *op, obs.y, rc);
          ResultRow after = before;
          after.method = "gan";
          after.k_or_lambda1 = rc.lambda;
          after.restarts = rc.restarts;
          after.L_min = res.L_min;
          const BinaryMask seg_after = segment(res.reconstruction, config_.segmenter);
          fill_metrics(after, evaluate_masks(seg_after, img.truth));
          after.wall_time_seconds = config_.record_wall_time ? seconds_since(start) : 0.0;
          grp.rows = {before, after};
          if (i < config_.mosaic_images) {
            const std::size_t c = shape[0];
            grp.tiles = {img.image, degraded, res.reconstruction,
                         adapt_channels(from_image8(mask_to_image8(img.truth)), c),
                         adapt_channels(from_image8(mask_to_image8(segment(degraded, config_.segmenter))), c),
                         adapt_channels(from_image8(mask_to_image8(seg_after)), c)};
            for (const char* what : {"original", "degraded", "recovered", "truth mask", "degraded mask", "recovered mask"})
              grp.labels.push_back(img.id + " " + what);
          }
        } catch (const std::exception& e) {
          grp.failures.push_back({img.id, name, e.what()});
        }
        return grp;
      },
      [&](std::size_t i, CellGroup& grp) {
        std::vector<std::string> lines;
        for (const auto& r : grp.rows) lines.push_back(format_row(r));
        csv.append(lines);
        out.rows.insert(out.rows.end(), grp.rows.begin(), grp.rows.end());
        out.failures.insert(out.failures.end(), grp.failures.begin(), grp.failures.end());
        tiles.insert(tiles.end(), grp.tiles.begin(), grp.tiles.end());
        labels.insert(labels.end(), grp.labels.begin(), grp.labels.end());
        note(name + ": image " + std::to_string(i + 1) + "/" + std::to_string(images_.size()) + " done");
      });
  out.files.push_back(csv.path());

  std::vector<double> before, after;
  for (const auto& r : out.rows) (r.method == "degraded" ? before : after).push_back(r.f1);
  if (!before.empty()) {
    const double mb = mean(before), ma = mean(after);
    const std::optional<double> growth = mb > 0 ? std::optional<double>((ma - mb) / mb) : std::nullopt;
    out.summary = Json{{"images", before.size()},    {"f1_before_mean", mb}, {"f1_before_std", stddev(before)},
                       {"f1_after_mean", ma},        {"f1_after_std", stddev(after)},
                       {"growth_rate", growth ? Json(*growth) : Json(nullptr)}};
    write_text_atomic(dir / (name + "_summary.csv"),
                      "images,f1_before_mean,f1_before_std,f1_after_mean,f1_after_std,growth_rate\n" +
                          csv_join({std::to_string(before.size()), format_double(mb), format_double(stddev(before)),
                                    format_double(ma), format_double(stddev(after)), optional_double(growth)}) +
                          "\n");
    out.files.push_back(dir / (name + "_summary.csv"));
  }
  if (!tiles.empty()) {
    write_labeled_mosaic(dir / (name + "_mosaic.png"), tiles, labels, 6);
    out.files.push_back(dir / (name + "_mosaic.png"));
  }
  write_failures(dir / (name + "_failures.csv"), out.failures);
  return out;
}

StudyOutcome Experiment::blur_study() { return restoration_study("blur_study"); }

StudyOutcome Experiment::occlusion_study() { return restoration_study("occlusion_study"); }

// ---- reports ------------------------------------------------------------------

void timing_report(const std::vector<fs::path>& results, std::optional<double> training_seconds, const fs::path& out) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> times;
  for (const auto& path : results)
    for (const auto& r : read_results(path)) {
      if (!times.count(r.method)) order.push_back(r.method);
      times[r.method].push_back(r.wall_time_seconds);
    }
  std::string text = "method,rows,mean_wall_time_seconds\n";
  for (const auto& m : order)
    text += csv_join({m, std::to_string(times[m].size()), format_double(mean(times[m]))}) + "\n";
  if (training_seconds) text += "gan_training,1," + format_double(*training_seconds) + "\n";
  write_text_atomic(out, text);
}

void sort_csv(const fs::path& in, const fs::path& out) {
  std::ifstream file(in);
  if (!file) throw FormatError("cannot read " + in.string());
  std::string header, line;
  if (!std::getline(file, header)) throw FormatError(in.string() + " is empty");
  std::vector<std::string> data, footer;
  while (std::getline(file, line)) {
    if (line.empty()) continue;
    (line[0] == '#' ? footer : data).push_back(line);
  }
  std::sort(data.begin(), data.end());
  std::string text = header + "\n";
  for (const auto& l : data) text += l + "\n";
  for (const auto& l : footer) text += l + "\n";
  write_text_atomic(out, text);
}

void write_labeled_mosaic(const fs::path& png, const std::vector<Tensor>& tiles, const std::vector<std::string>& labels,
                          std::size_t cols) {
  if (tiles.size() != labels.size()) throw ShapeError("mosaic needs one label per tile");
  if (tiles.empty()) return;
  write_png(png, to_image8(mosaic(tiles, cols)));
  std::string text = "row,col,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i)
    text += std::to_string(i / cols) + "," + std::to_string(i % cols) + "," + labels[i] + "\n";
  fs::path side = png;
  side += ".txt";
  write_text_atomic(side, text);
}

}  // namespace gancs
