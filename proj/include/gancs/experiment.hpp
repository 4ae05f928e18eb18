#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gancs/corpus.hpp"
#include "gancs/json_io.hpp"
#include "gancs/model_io.hpp"
#include "gancs/recovery.hpp"
#include "gancs/segmentation.hpp"
#include "gancs/sparse.hpp"

namespace gancs {

struct BlurStudySettings {
  std::size_t degree = 13;
  std::string angle_policy = "orthogonal";  // "orthogonal" to the crack axis, or "fixed"
  double angle = 0.0;                       // degrees, used by the fixed policy
  std::size_t restarts = 5;
  friend bool operator==(const BlurStudySettings&, const BlurStudySettings&) = default;
};

struct OcclusionStudySettings {
  double coverage = 0.25;
  double fill_value = 0.0;
  std::size_t restarts = 5;
  friend bool operator==(const OcclusionStudySettings&, const OcclusionStudySettings&) = default;
};

struct RestartStudySettings {
  std::vector<double> crs{2, 64};
  std::size_t images = 10;
  friend bool operator==(const RestartStudySettings&, const RestartStudySettings&) = default;
};

struct CorrelationSettings {
  double cr = 16;
  std::size_t trials = 100;
  std::size_t images = 1;
  friend bool operator==(const CorrelationSettings&, const CorrelationSettings&) = default;
};

/// Everything a study needs. Read from JSON with unknown keys rejected.
struct ExperimentConfig {
  CorpusConfig corpus;
  std::filesystem::path corpus_dir;  // saved corpus; empty regenerates from `corpus`
  std::filesystem::path model;
  std::vector<std::string> methods{"gan", "omp", "cosamp", "ista"};
  std::vector<double> crs{2, 4, 8, 16, 32, 64};
  std::vector<double> nls{0.0, 0.05, 0.1};
  std::size_t images = 0;  // validation images used; 0 means all
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "results";
  std::size_t threads = 1;
  bool record_wall_time = true;
  std::size_t mosaic_images = 4;
  RecoveryConfig recovery;
  BaselineConfig baseline;
  SegmenterParams segmenter;
  BlurStudySettings blur;
  OcclusionStudySettings occlusion;
  RestartStudySettings restart_study;
  CorrelationSettings correlation;

  /// Checks values and that referenced files exist.
  void validate() const;
  Json to_json() const;
  static ExperimentConfig from_json(const Json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// One row per (image, method, condition).
struct ResultRow {
  std::string image_id;
  std::string method;
  std::string operator_kind;
  double cr = 1.0;
  double nl = 0.0;
  double k_or_lambda1 = 0.0;
  std::size_t restarts = 0;
  std::optional<double> L_min;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
  double wall_time_seconds = 0.0;
  std::uint64_t seed = 0;
};

extern const char* const kResultHeader;
std::string format_row(const ResultRow& row);
ResultRow parse_row(const std::string& line);
std::vector<ResultRow> read_results(const std::filesystem::path& path);

/// CSV written row group by row group; each group is one append of complete lines.
class CsvAppender {
 public:
  CsvAppender(std::filesystem::path path, const std::string& header);
  void append(const std::vector<std::string>& lines);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct StudyImage {
  std::string id;
  Tensor image;  // [C,H,W]
  BinaryMask truth;
};

/// Validation images (with ground truth) selected by the config.
std::vector<StudyImage> study_images(const ExperimentConfig& config, std::size_t limit = 0);

struct Failure {
  std::string image_id;
  std::string condition;
  std::string message;
};

/// Best-of-k quality for one image in the restart study.
struct RestartRecord {
  std::string image_id;
  double cr = 0.0;
  std::size_t k = 0;
  double L_min = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

/// One restart of the loss/quality correlation study.
struct CorrelationRecord {
  std::string image_id;
  std::size_t restart = 0;
  double L_min = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

struct StudyOutcome {
  std::vector<ResultRow> rows;
  std::vector<Failure> failures;
  std::vector<std::filesystem::path> files;
  std::vector<RestartRecord> restart_records;
  std::vector<CorrelationRecord> correlation_records;
  Json summary = Json::object();
};

/// Seeds of one (image, CR) cell, independent of noise level and method.
struct CellSeeds {
  std::uint64_t cell, op, recovery, noise;
};
CellSeeds cell_seeds(std::uint64_t master, std::size_t image_index, double cr, double nl);

/// Runs the studies. `model` may be empty when no GAN method is involved.
class Experiment {
 public:
  Experiment(ExperimentConfig config, std::optional<ModelFile> model, std::ostream* log = nullptr);

  const ExperimentConfig& config() const { return config_; }

  StudyOutcome cr_sweep();
  StudyOutcome noise_sweep();
  StudyOutcome restart_study();
  StudyOutcome loss_correlation();
  StudyOutcome blur_study();
  StudyOutcome occlusion_study();

  /// Result rows for one compression cell (a single method on a single image).
  ResultRow compression_cell(const StudyImage& img, std::size_t image_index, const std::string& method, double cr,
                             double nl, Tensor* reconstruction = nullptr) const;
  const std::vector<StudyImage>& images() const { return images_; }

 private:
  StudyOutcome compression_grid(const std::string& name, const std::vector<double>& nls);
  StudyOutcome restoration_study(const std::string& name);
  const GeneratorModel& generator() const;
  void note(const std::string& message) const;

  ExperimentConfig config_;
  std::optional<ModelFile> model_;
  std::ostream* log_;
  std::vector<StudyImage> images_;
};

/// Angle (degrees, counter-clockwise from +x) of the mask's principal axis.
double principal_axis_degrees(const BinaryMask& mask);

/// Per-method mean wall time from result CSVs, with GAN training time listed once.
void timing_report(const std::vector<std::filesystem::path>& results, std::optional<double> training_seconds,
                   const std::filesystem::path& out);

/// Sorts the data lines of a CSV, keeping the header (and '#' footer lines) in place.
void sort_csv(const std::filesystem::path& in, const std::filesystem::path& out);

/// PNG mosaic plus "<png>.txt" mapping each cell to a label.
void write_labeled_mosaic(const std::filesystem::path& png, const std::vector<Tensor>& tiles,
                          const std::vector<std::string>& labels, std::size_t cols);

/// Joins fields with commas.
std::string csv_join(const std::vector<std::string>& fields);
std::string format_double(double v);

}  // namespace gancs
