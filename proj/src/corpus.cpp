#include "gancs/corpus.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "gancs/errors.hpp"
#include "gancs/rng.hpp"

namespace gancs {
namespace {

namespace fs = std::filesystem;

struct Point {
  double x, y;  // x = column, y = row, pixel centers at integer coordinates
};

struct Stroke {
  std::vector<Point> points;
  std::vector<double> widths;
  double length() const { return points.empty() ? 0.0 : static_cast<double>(points.size() - 1); }
};

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Sum of value-noise octaves; octave o has a (4·2^o + 1)² lattice and amplitude a/2^o.
std::vector<double> value_noise(const CorpusConfig& cfg, Rng& rng) {
  const std::size_t h = cfg.height, w = cfg.width;
  std::vector<double> field(h * w, 0.0);
  for (std::size_t o = 0; o < cfg.noise_octaves; ++o) {
    const std::size_t cells = std::size_t{4} << o;
    const double amp = cfg.noise_amplitude / static_cast<double>(std::size_t{1} << o);
    std::vector<double> lattice((cells + 1) * (cells + 1));
    for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < h; ++i) {
      const double gy = (static_cast<double>(i) + 0.5) / static_cast<double>(h) * static_cast<double>(cells);
      const auto y0 = std::min(static_cast<std::size_t>(gy), cells - 1);
      const double ty = smoothstep(gy - static_cast<double>(y0));
      for (std::size_t j = 0; j < w; ++j) {
        const double gx = (static_cast<double>(j) + 0.5) / static_cast<double>(w) * static_cast<double>(cells);
        const auto x0 = std::min(static_cast<std::size_t>(gx), cells - 1);
        const double tx = smoothstep(gx - static_cast<double>(x0));
        auto at = [&](std::size_t y, std::size_t x) { return lattice[y * (cells + 1) + x]; };
        const double top = (1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1);
        const double bottom = (1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1);
        field[i * w + j] += amp * ((1 - ty) * top + ty * bottom);
      }
    }
  }
  return field;
}

bool inside(const CorpusConfig& cfg, Point p) {
  return p.x >= -0.5 && p.y >= -0.5 && p.x <= static_cast<double>(cfg.width) - 0.5 &&
         p.y <= static_cast<double>(cfg.height) - 0.5;
}

// Random walk with unit steps. Heading jitter is bounded to ±75° around the
// initial heading so strokes traverse rather than curl.
Stroke walk(const CorpusConfig& cfg, Rng& rng, Point start, double heading, double max_length, double base_width) {
  Stroke s;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double freq = rng.uniform(0.03, 0.12);
  const double limit = 75.0 * std::numbers::pi / 180.0;
  double theta = heading;
  Point p = start;
  for (std::size_t step = 0; step <= static_cast<std::size_t>(max_length); ++step) {
    if (!inside(cfg, p)) break;
    s.points.push_back(p);
    const double wv = base_width * (1.0 + 0.25 * std::sin(phase + freq * static_cast<double>(step)));
    s.widths.push_back(std::clamp(wv, cfg.width_min, cfg.width_max));
    theta += cfg.waviness * 0.35 * rng.normal();
    theta = std::clamp(theta, heading - limit, heading + limit);
    p = {p.x + std::cos(theta), p.y + std::sin(theta)};
  }
  return s;
}

Stroke main_stroke(const CorpusConfig& cfg, Rng& rng) {
  const double w = static_cast<double>(cfg.width), h = static_cast<double>(cfg.height);
  const double min_length = 0.5 * std::min(w, h);
  const double max_length = 1.6 * std::max(w, h);
  Stroke best;
  for (int attempt = 0; attempt < 20; ++attempt) {
    const auto side = rng.below(4);
    const double t = rng.uniform(0.15, 0.85);
    Point start{};
    double inward = 0.0;
    switch (side) {
      case 0: start = {t * (w - 1), 0.0}, inward = std::numbers::pi / 2; break;      // top edge, heading down
      case 1: start = {t * (w - 1), h - 1}, inward = -std::numbers::pi / 2; break;   // bottom edge
      case 2: start = {0.0, t * (h - 1)}, inward = 0.0; break;                        // left edge
      default: start = {w - 1, t * (h - 1)}, inward = std::numbers::pi; break;        // right edge
    }
    const double heading = inward + rng.uniform(-0.6, 0.6);
    const double base_width = rng.uniform(cfg.width_min, cfg.width_max);
    Stroke s = walk(cfg, rng, start, heading, max_length, base_width);
    if (s.length() >= min_length) return s;
    if (s.length() > best.length()) best = std::move(s);
  }
  return best;
}

double segment_distance(Point p, Point a, Point b, double& t) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  t = len2 > 0 ? std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0) : 0.0;
  const double cx = a.x + t * dx - p.x, cy = a.y + t * dy - p.y;
  return std::sqrt(cx * cx + cy * cy);
}

// For every pixel within half-width of a stroke, keeps the smallest normalized
// distance d / (w/2) in `profile` (values ≤ 1 are inside the crack).
void rasterize(const CorpusConfig& cfg, const Stroke& s, std::vector<double>& profile) {
  const auto W = static_cast<long>(cfg.width), H = static_cast<long>(cfg.height);
  auto stamp = [&](Point a, Point b, double wa, double wb) {
    const double reach = std::max(wa, wb) / 2.0 + 1.0;
    const long i0 = std::max(0L, static_cast<long>(std::floor(std::min(a.y, b.y) - reach)));
    const long i1 = std::min(H - 1, static_cast<long>(std::ceil(std::max(a.y, b.y) + reach)));
    const long j0 = std::max(0L, static_cast<long>(std::floor(std::min(a.x, b.x) - reach)));
    const long j1 = std::min(W - 1, static_cast<long>(std::ceil(std::max(a.x, b.x) + reach)));
    for (long i = i0; i <= i1; ++i)
      for (long j = j0; j <= j1; ++j) {
        double t = 0.0;
        const double d = segment_distance({static_cast<double>(j), static_cast<double>(i)}, a, b, t);
        const double half = std::max(0.5, ((1 - t) * wa + t * wb) / 2.0);
        auto& cell = profile[static_cast<std::size_t>(i * W + j)];
        cell = std::min(cell, d / half);
      }
  };
  if (s.points.size() == 1) stamp(s.points[0], s.points[0], s.widths[0], s.widths[0]);
  for (std::size_t k = 1; k < s.points.size(); ++k) stamp(s.points[k - 1], s.points[k], s.widths[k - 1], s.widths[k]);
}

std::string sample_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu.png", index);
  return buf;
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

}  // namespace

// ---- config ---------------------------------------------------------------

void CorpusConfig::validate() const {
  auto pow2 = [](std::size_t v) { return v >= 32 && (v & (v - 1)) == 0; };
  if (!pow2(height) || !pow2(width)) throw ConfigError("corpus image size must be powers of two >= 32");
  if (channels != 1 && channels != 3) throw ConfigError("corpus channels must be 1 or 3");
  if (train_count < 1 || validation_count < 1) throw ConfigError("corpus counts must be >= 1");
  if (!(width_min >= 1.0 && width_min <= width_max && width_max <= 4.0))
    throw ConfigError("crack width range must be a nonempty subrange of [1, 4]");
  if (!(branch_probability >= 0.0 && branch_probability <= 1.0))
    throw ConfigError("branch probability must lie in [0, 1]");
  if (!(waviness >= 0.0)) throw ConfigError("waviness must be nonnegative");
  if (!(depth_min > 0.0 && depth_min <= depth_max)) throw ConfigError("crack depth range must be positive");
}

Json CorpusConfig::to_json() const {
  return Json{{"height", height},
              {"width", width},
              {"channels", channels},
              {"train_count", train_count},
              {"validation_count", validation_count},
              {"master_seed", master_seed},
              {"width_min", width_min},
              {"width_max", width_max},
              {"branch_probability", branch_probability},
              {"waviness", waviness},
              {"depth_min", depth_min},
              {"depth_max", depth_max},
              {"base_level", base_level},
              {"noise_amplitude", noise_amplitude},
              {"noise_octaves", noise_octaves},
              {"grain", grain}};
}

CorpusConfig CorpusConfig::from_json(const Json& j) {
  CorpusConfig c;
  ObjectReader r(j, "corpus config");
  c.height = r.get("height", c.height);
  c.width = r.get("width", c.width);
  c.channels = r.get("channels", c.channels);
  c.train_count = r.get("train_count", c.train_count);
  c.validation_count = r.get("validation_count", c.validation_count);
  c.master_seed = r.get("master_seed", c.master_seed);
  c.width_min = r.get("width_min", c.width_min);
  c.width_max = r.get("width_max", c.width_max);
  c.branch_probability = r.get("branch_probability", c.branch_probability);
  c.waviness = r.get("waviness", c.waviness);
  c.depth_min = r.get("depth_min", c.depth_min);
  c.depth_max = r.get("depth_max", c.depth_max);
  c.base_level = r.get("base_level", c.base_level);
  c.noise_amplitude = r.get("noise_amplitude", c.noise_amplitude);
  c.noise_octaves = r.get("noise_octaves", c.noise_octaves);
  c.grain = r.get("grain", c.grain);
  r.finish();
  c.validate();
  return c;
}

// ---- generation -----------------------------------------------------------

std::vector<const Sample*> Corpus::split(Split which) const {
  std::vector<const Sample*> out;
  for (const auto& s : samples)
    if (s.split == which) out.push_back(&s);
  return out;
}

std::uint64_t sample_seed(std::uint64_t master_seed, std::size_t index) { return derive_seed(master_seed, index); }

Sample generate_sample(const CorpusConfig& cfg, std::size_t index) {
  cfg.validate();
  Sample s;
  s.index = index;
  s.seed = sample_seed(cfg.master_seed, index);
  s.split = index < cfg.train_count ? Split::train : Split::validation;
  Rng rng(s.seed);

  const std::size_t h = cfg.height, w = cfg.width, plane = h * w;
  const std::vector<double> noise = value_noise(cfg, rng);
  std::array<double, 3> tint{0.0, 0.0, 0.0};
  if (cfg.channels == 3)
    for (auto& t : tint) t = rng.uniform(-0.05, 0.05);

  Stroke trunk = main_stroke(cfg, rng);
  std::vector<Stroke> strokes;
  if (rng.bernoulli(cfg.branch_probability) && trunk.points.size() > 8) {
    const auto n = trunk.points.size();
    const std::size_t anchor = n / 4 + rng.below(n / 2);
    const Point a = trunk.points[anchor];
    const Point b = trunk.points[std::min(anchor + 1, n - 1)];
    const double along = std::atan2(b.y - a.y, b.x - a.x);
    const double turn = rng.uniform(0.4, 1.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    const double length = rng.uniform(0.25, 0.5) * trunk.length();
    const double bw = std::max(cfg.width_min, 0.6 * trunk.widths[anchor]);
    strokes.push_back(walk(cfg, rng, a, along + turn, length, bw));
  }
  strokes.insert(strokes.begin(), std::move(trunk));

  std::vector<double> profile(plane, 2.0);
  for (const auto& st : strokes) rasterize(cfg, st, profile);

  const double depth = rng.uniform(cfg.depth_min, cfg.depth_max);
  s.mask = BinaryMask(h, w);
  s.image = Tensor({cfg.channels, h, w});
  for (std::size_t i = 0; i < plane; ++i) {
    const double grain = cfg.grain * rng.uniform(-1.0, 1.0);
    const bool crack = profile[i] <= 1.0;
    s.mask->values[i] = crack ? 1 : 0;
    const double dark = crack ? depth * (0.85 + 0.15 * (1.0 - profile[i] * profile[i])) : 0.0;
    for (std::size_t c = 0; c < cfg.channels; ++c)
      s.image[c * plane + i] = std::clamp(cfg.base_level + tint[c] + noise[i] + grain - dark, -1.0, 1.0);
  }
  return s;
}

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  Corpus corpus{config, {}};
  const std::size_t total = config.train_count + config.validation_count;
  corpus.samples.reserve(total);
  for (std::size_t i = 0; i < total; ++i) corpus.samples.push_back(generate_sample(config, i));
  return corpus;
}

std::size_t connected_components(const BinaryMask& mask) {
  std::vector<int> label(mask.values.size(), 0);
  std::size_t count = 0;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.values.size(); ++start) {
    if (!mask.values[start] || label[start]) continue;
    ++count;
    label[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const long i = static_cast<long>(p / mask.width), j = static_cast<long>(p % mask.width);
      for (long di = -1; di <= 1; ++di)
        for (long dj = -1; dj <= 1; ++dj) {
          const long ni = i + di, nj = j + dj;
          if (ni < 0 || nj < 0 || ni >= static_cast<long>(mask.height) || nj >= static_cast<long>(mask.width)) continue;
          const auto q = static_cast<std::size_t>(ni) * mask.width + static_cast<std::size_t>(nj);
          if (mask.values[q] && !label[q]) {
            label[q] = 1;
            stack.push_back(q);
          }
        }
    }
  }
  return count;
}

// ---- ingestion and persistence -----------------------------------------

Corpus ingest_directory(const fs::path& dir, const CorpusConfig& config, std::ostream& log) {
  if (!fs::is_directory(dir)) throw ConfigError("ingest: not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("ingest: directory is empty: " + dir.string());

  Corpus corpus{config, {}};
  for (const auto& file : files) {
    Image8 img;
    try {
      img = read_image(file);
    } catch (const FormatError& e) {
      log << "warning: skipping " << file.string() << ": " << e.what() << "\n";
      continue;
    }
    Sample s;
    s.index = corpus.samples.size();
    s.seed = 0;
    s.split = s.index < config.validation_count ? Split::validation : Split::train;
    s.source = file.filename().string();
    s.image = adapt_channels(resize_bilinear(from_image8(img), config.height, config.width), config.channels);
    corpus.samples.push_back(std::move(s));
  }
  if (corpus.samples.empty()) throw ConfigError("ingest: no decodable images in " + dir.string());
  return corpus;
}

std::uint32_t sample_checksum(const Image8& image, const std::optional<BinaryMask>& mask) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, image.pixels.data(), static_cast<uInt>(image.pixels.size()));
  if (mask) crc = crc32(crc, mask->values.data(), static_cast<uInt>(mask->values.size()));
  return static_cast<std::uint32_t>(crc);
}

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  Json records = Json::array();
  for (const auto& s : corpus.samples) {
    const Image8 img = to_image8(s.image);
    const std::string name = sample_name(s.index);
    write_png(dir / "images" / name, img);
    Json rec{{"index", s.index},
             {"split", s.split == Split::train ? "train" : "validation"},
             {"seed", s.seed},
             {"image", "images/" + name}};
    if (s.mask) {
      write_png(dir / "masks" / name, mask_to_image8(*s.mask));
      rec["mask"] = "masks/" + name;
    }
    if (!s.source.empty()) rec["source"] = s.source;
    rec["checksum"] = hex32(sample_checksum(img, s.mask));
    records.push_back(std::move(rec));
  }
  Json manifest{{"format", "gancs-corpus"}, {"version", 1}, {"config", corpus.config.to_json()}, {"samples", records}};
  write_json_file(dir / "manifest.json", manifest);
}

Corpus load_corpus(const fs::path& dir) {
  const Json manifest = read_json_file(dir / "manifest.json");
  if (manifest.value("format", "") != "gancs-corpus" || manifest.value("version", 0) != 1)
    throw FormatError("not a version-1 corpus manifest: " + (dir / "manifest.json").string());
  Corpus corpus;
  try {
    corpus.config = CorpusConfig::from_json(manifest.at("config"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("corpus manifest config: ") + e.what());
  }
  for (const auto& rec : manifest.at("samples")) {
    Sample s;
    s.index = rec.at("index").get<std::size_t>();
    s.seed = rec.at("seed").get<std::uint64_t>();
    s.split = rec.at("split").get<std::string>() == "train" ? Split::train : Split::validation;
    s.source = rec.value("source", "");
    const Image8 img = read_image(dir / rec.at("image").get<std::string>());
    if (img.width != corpus.config.width || img.height != corpus.config.height ||
        img.channels != corpus.config.channels)
      throw FormatError("sample " + std::to_string(s.index) + " does not match the manifest geometry");
    if (rec.contains("mask")) {
      s.mask = mask_from_image8(read_image(dir / rec.at("mask").get<std::string>()));
      if (s.mask->height != img.height || s.mask->width != img.width)
        throw FormatError("mask " + std::to_string(s.index) + " does not match the image geometry");
    }
    if (hex32(sample_checksum(img, s.mask)) != rec.at("checksum").get<std::string>())
      throw FormatError("checksum mismatch for sample " + std::to_string(s.index));
    s.image = from_image8(img);
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace gancs
