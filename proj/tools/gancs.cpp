#include <CLI11.hpp>

#include <chrono>
#include <iostream>
#include <optional>
#include <string>

#include "gancs/corpus.hpp"
#include "gancs/errors.hpp"
#include "gancs/experiment.hpp"
#include "gancs/gan.hpp"
#include "gancs/image.hpp"
#include "gancs/model_io.hpp"
#include "gancs/recovery.hpp"
#include "gancs/segmentation.hpp"
#include "gancs/sparse.hpp"

using namespace gancs;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
};

// Accepts either a path to a JSON file or an inline JSON object.
Json json_argument(const std::string& arg) {
  if (!arg.empty() && arg.front() == '{') {
    try {
      return Json::parse(arg);
    } catch (const Json::exception& e) {
      throw ConfigError(std::string("invalid inline JSON: ") + e.what());
    }
  }
  return read_json_file(arg);
}

const std::string& require_out(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  return g.out;
}

Tensor read_tensor_image(const fs::path& path) { return from_image8(read_image(path)); }

CorpusConfig corpus_config(const Globals& g) {
  CorpusConfig c = g.config.empty() ? CorpusConfig{} : CorpusConfig::from_json(json_argument(g.config));
  if (g.seed) c.master_seed = *g.seed;
  c.validate();
  return c;
}

int gen_corpus(const Globals& g) {
  const Corpus corpus = generate_corpus(corpus_config(g));
  save_corpus(corpus, require_out(g));
  std::cout << "wrote " << corpus.samples.size() << " samples to " << g.out << "\n";
  return 0;
}

int ingest(const Globals& g, const std::string& in) {
  const Corpus corpus = ingest_directory(in, corpus_config(g), std::cerr);
  save_corpus(corpus, require_out(g));
  std::cout << "ingested " << corpus.samples.size() << " images into " << g.out << "\n";
  return 0;
}

int train(const Globals& g, const std::string& corpus_dir, std::optional<std::size_t> epochs, std::string loss_csv) {
  const Corpus corpus = load_corpus(corpus_dir);
  GanArchitecture arch;
  arch.height = corpus.config.height;
  arch.width = corpus.config.width;
  arch.channels = corpus.config.channels;
  GanTrainConfig training;
  if (!g.config.empty()) {
    const Json j = json_argument(g.config);
    ObjectReader r(j, "training config");
    if (r.has("architecture")) arch = GanArchitecture::from_json(r.child("architecture"));
    if (r.has("training")) training = GanTrainConfig::from_json(r.child("training"));
    r.finish();
  }
  if (epochs) training.max_epochs = *epochs;
  if (g.seed) training.seed = *g.seed;
  arch.validate();
  training.validate();
  if (arch.image_shape() != Shape{corpus.config.channels, corpus.config.height, corpus.config.width})
    throw ConfigError("architecture image shape does not match the corpus");

  std::vector<Tensor> images;
  for (const Sample* s : corpus.train()) images.push_back(s->image);
  const auto start = std::chrono::steady_clock::now();
  TrainResult result = train_gan(images, arch, training, [](const TrainRecord& rec) {
    if (rec.step % 50 == 0)
      std::cerr << "epoch " << rec.epoch << " step " << rec.step << " d_loss " << rec.d_loss << " g_loss " << rec.g_loss
                << "\n";
  });
  ModelFile model;
  model.generator = std::move(result.generator);
  model.discriminator = std::move(result.discriminator);
  model.training = training;
  model.corpus_seed = corpus.config.master_seed;
  model.training_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  save_model(require_out(g), model);
  if (loss_csv.empty()) loss_csv = g.out + ".loss.csv";
  write_loss_csv(loss_csv, result.history);
  std::cout << "trained " << result.d_steps << " discriminator steps in " << model.training_seconds << " s\n";
  return 0;
}

std::unique_ptr<ForwardOperator> operator_for(const Observation& obs, const std::string& descriptor) {
  OperatorDescriptor d = descriptor.empty() ? obs.descriptor : OperatorDescriptor::from_json(json_argument(descriptor));
  auto op = make_operator(d, obs.image_shape);
  if (op->output_shape() != obs.y.shape()) throw ShapeError("operator does not match the observation");
  return op;
}

int degrade(const Globals& g, const std::string& in, const std::string& descriptor, const std::string& preview) {
  if (descriptor.empty()) throw ConfigError("--operator is required");
  OperatorDescriptor d = OperatorDescriptor::from_json(json_argument(descriptor));
  if (g.seed) d.noise_seed = *g.seed;
  const Tensor image = read_tensor_image(in);
  const auto op = make_operator(d, image.shape());
  const Observation obs = observe(*op, image);
  save_observation(require_out(g), obs);
  if (!preview.empty()) {
    Tensor shown = obs.y;
    if (auto* occ = dynamic_cast<const OcclusionOperator*>(op.get())) shown = occ->display(obs.y.reshaped(image.shape()));
    if (shown.size() != image.size()) throw ConfigError("a preview needs an image-shaped observation");
    write_png(preview, to_image8(shown.reshaped(image.shape())));
  }
  std::cout << "wrote observation of " << obs.y.size() << " values (sigma " << obs.sigma << ")\n";
  return 0;
}

int recover_cmd(const Globals& g, const std::string& model_path, const std::string& descriptor, const std::string& in,
                std::optional<std::size_t> restarts, const std::string& trace) {
  const ModelFile model = load_model(model_path);
  const Observation obs = load_observation(in);
  const auto op = operator_for(obs, descriptor);
  RecoveryConfig config;
  bool restarts_set = false;
  if (!g.config.empty()) {
    const Json j = json_argument(g.config);
    config = RecoveryConfig::from_json(j);
    restarts_set = j.contains("restarts");
  }
  if (!restarts_set) config.restarts = RecoveryConfig::default_restarts(op->kind());
  if (restarts) config.restarts = *restarts;
  if (g.seed) config.seed = *g.seed;
  if (!trace.empty()) config.record_trace = true;
  const RecoveryResult result = recover(model.generator, *op, obs.y, config);
  write_png(require_out(g), to_image8(result.reconstruction));
  if (!trace.empty()) write_trace_csv(trace, result);
  std::cout << Json{{"L_min", result.L_min},
                    {"L_c", result.L_c},
                    {"L_p", result.L_p},
                    {"best_restart", result.best_restart},
                    {"restarts", config.restarts},
                    {"wall_time_seconds", result.wall_time_seconds}}
                   .dump()
            << "\n";
  return 0;
}

int baseline_cmd(const Globals& g, const std::string& method, const std::string& descriptor, const std::string& in,
                 std::optional<std::size_t> k, std::optional<double> l1) {
  const Observation obs = load_observation(in);
  const auto op = operator_for(obs, descriptor);
  BaselineConfig config = g.config.empty() ? BaselineConfig{} : BaselineConfig::from_json(json_argument(g.config));
  if (!method.empty()) config.method = baseline_method_from_string(method);
  if (k) config.sparsity = *k;
  if (l1) config.l1_weight = *l1;
  config.validate();
  const BaselineResult result = run_baseline(*op, obs.y, config);
  write_png(require_out(g), to_image8(result.reconstruction));
  for (const auto& w : result.solution.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << Json{{"method", to_string(config.method)},
                    {"k", result.sparsity},
                    {"l1_weight", config.l1_weight},
                    {"iterations", result.solution.iterations},
                    {"wall_time_seconds", result.wall_time_seconds}}
                   .dump()
            << "\n";
  return 0;
}

int segment_cmd(const Globals& g, const std::string& in, const std::string& params_path) {
  const std::string& params_arg = params_path.empty() ? g.config : params_path;
  const SegmenterParams params = params_arg.empty() ? SegmenterParams{} : SegmenterParams::from_json(json_argument(params_arg));
  const BinaryMask mask = segment(read_tensor_image(in), params);
  write_png(require_out(g), mask_to_image8(mask));
  return 0;
}

int evaluate_cmd(const std::string& pred, const std::string& truth) {
  const MetricReport m = evaluate_masks(mask_from_image8(read_image(pred)), mask_from_image8(read_image(truth)));
  std::cout << csv_join({format_double(m.accuracy), format_double(m.precision), format_double(m.recall),
                         format_double(m.f1)})
            << "\n";
  return 0;
}

int sweep(const Globals& g, const std::string& study, const std::string& model_override) {
  if (g.config.empty()) throw ConfigError("sweep needs --config");
  ExperimentConfig config = ExperimentConfig::load(g.config);
  if (g.seed) config.seed = *g.seed;
  if (!g.out.empty()) config.output_dir = g.out;
  if (g.threads) config.threads = *g.threads;
  if (!model_override.empty()) config.model = model_override;
  std::optional<ModelFile> model;
  if (!config.model.empty()) model = load_model(config.model);
  Experiment experiment(config, std::move(model), &std::cerr);
  StudyOutcome outcome;
  if (study == "cr")
    outcome = experiment.cr_sweep();
  else if (study == "noise")
    outcome = experiment.noise_sweep();
  else if (study == "restart")
    outcome = experiment.restart_study();
  else if (study == "correlation")
    outcome = experiment.loss_correlation();
  else if (study == "blur")
    outcome = experiment.blur_study();
  else
    outcome = experiment.occlusion_study();
  for (const auto& f : outcome.files) std::cout << "wrote " << f.string() << "\n";
  if (!outcome.summary.empty()) std::cout << outcome.summary.dump() << "\n";
  if (!outcome.failures.empty()) {
    std::cerr << outcome.failures.size() << " per-image failures\n";
    return 1;
  }
  return 0;
}

int timing(const Globals& g, const std::vector<std::string>& results, const std::string& model_path) {
  std::vector<fs::path> paths(results.begin(), results.end());
  std::optional<double> training;
  if (!model_path.empty()) training = load_model(model_path).training_seconds;
  timing_report(paths, training, require_out(g));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"GAN-based compressive sensing for crack images"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Config file (or inline JSON) for the subcommand");
  app.add_option("--seed", g.seed, "Seed override");
  app.add_option("--out", g.out, "Output path");
  app.add_option("--threads", g.threads, "Worker threads for sweeps")->check(CLI::PositiveNumber);

  int code = 0;

  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic crack corpus");
  gen->callback([&] { code = gen_corpus(g); });

  std::string in;
  auto* ing = app.add_subcommand("ingest", "Import a directory of images as an unlabeled corpus");
  ing->add_option("--in", in, "Image directory")->required()->check(CLI::ExistingDirectory);
  ing->callback([&] { code = ingest(g, in); });

  std::string corpus_dir, loss_csv;
  std::optional<std::size_t> epochs;
  auto* tr = app.add_subcommand("train", "Train the generator and discriminator");
  tr->add_option("--corpus", corpus_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--epochs", epochs, "Epoch override");
  tr->add_option("--loss", loss_csv, "Loss history CSV (default <out>.loss.csv)");
  tr->callback([&] { code = train(g, corpus_dir, epochs, loss_csv); });

  std::string descriptor, preview;
  auto* deg = app.add_subcommand("degrade", "Apply a forward operator to an image and save the observation");
  deg->add_option("--in", in, "Input PNG")->required()->check(CLI::ExistingFile);
  deg->add_option("--operator", descriptor, "Operator descriptor (file or inline JSON)")->required();
  deg->add_option("--preview", preview, "PNG of the degraded image");
  deg->callback([&] { code = degrade(g, in, descriptor, preview); });

  std::string model_path, trace;
  std::optional<std::size_t> restarts;
  auto* rec = app.add_subcommand("recover", "Recover an image from an observation with the generator");
  rec->add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile);
  rec->add_option("--operator", descriptor, "Operator descriptor (defaults to the one stored with the observation)");
  rec->add_option("--in", in, "Observation file")->required()->check(CLI::ExistingFile);
  rec->add_option("--restarts", restarts, "Number of restarts")->check(CLI::PositiveNumber);
  rec->add_option("--trace", trace, "Loss trace CSV");
  rec->callback([&] { code = recover_cmd(g, model_path, descriptor, in, restarts, trace); });

  std::string method;
  std::optional<std::size_t> k;
  std::optional<double> l1;
  auto* base = app.add_subcommand("baseline", "Sparse-recovery baseline in the DCT basis");
  base->add_option("--method", method, "omp, cosamp or ista")->check(CLI::IsMember({"omp", "cosamp", "ista"}));
  base->add_option("--operator", descriptor, "Operator descriptor (defaults to the one stored with the observation)");
  base->add_option("--in", in, "Observation file")->required()->check(CLI::ExistingFile);
  base->add_option("--k", k, "Sparsity for omp/cosamp");
  base->add_option("--l1", l1, "l1 weight for ista");
  base->callback([&] { code = baseline_cmd(g, method, descriptor, in, k, l1); });

  std::string params;
  auto* seg = app.add_subcommand("segment", "Segment cracks in an image");
  seg->add_option("--in", in, "Input PNG")->required()->check(CLI::ExistingFile);
  seg->add_option("--params", params, "Segmenter parameters (file or inline JSON)");
  seg->callback([&] { code = segment_cmd(g, in, params); });

  std::string pred, truth;
  auto* ev = app.add_subcommand("evaluate", "Score a predicted mask against ground truth");
  ev->add_option("--pred", pred, "Predicted mask PNG")->required()->check(CLI::ExistingFile);
  ev->add_option("--truth", truth, "Ground-truth mask PNG")->required()->check(CLI::ExistingFile);
  ev->callback([&] { code = evaluate_cmd(pred, truth); });

  std::string study;
  auto* sw = app.add_subcommand("sweep", "Run a study over the validation images");
  sw->add_option("study", study, "cr, noise, restart, correlation, blur or occlusion")
      ->required()
      ->check(CLI::IsMember({"cr", "noise", "restart", "correlation", "blur", "occlusion"}));
  sw->add_option("--model", model_path, "Model file (overrides the config)");
  sw->callback([&] { code = sweep(g, study, model_path); });

  std::vector<std::string> results;
  auto* tim = app.add_subcommand("timing", "Mean wall time per method from result CSVs");
  tim->add_option("--results", results, "Result CSVs")->required()->check(CLI::ExistingFile);
  tim->add_option("--model", model_path, "Model file whose training time is reported");
  tim->callback([&] { code = timing(g, results, model_path); });

  std::string sort_in;
  auto* rep = app.add_subcommand("report", "Post-process result files");
  rep->add_option("--sort", sort_in, "CSV whose data lines are sorted into --out")->required()->check(CLI::ExistingFile);
  rep->callback([&] {
    sort_csv(sort_in, require_out(g));
    code = 0;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return code;
}
