#include "gancs/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "gancs/errors.hpp"

namespace gancs {

namespace {

constexpr char kMagic[4] = {'G', 'P', 'C', 'S'};
constexpr char kObservationMagic[8] = {'G', 'P', 'C', 'S', 'O', 'B', 'S', '1'};

struct Entry {
  std::string name;
  Tensor* tensor;
};

std::vector<Entry> network_entries(Network& net, const std::string& prefix) {
  std::vector<Entry> out;
  std::vector<Tensor*> params = net.parameter_list();
  std::vector<std::string> names = net.parameter_names();
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({prefix + "." + names[i], params[i]});
  for (std::size_t l = 0; l < net.running_mean().size(); ++l) {
    if (net.running_mean()[l].empty()) continue;
    out.push_back({prefix + "." + std::to_string(l) + ".running_mean", &net.running_mean()[l]});
    out.push_back({prefix + "." + std::to_string(l) + ".running_var", &net.running_var()[l]});
  }
  return out;
}

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos, const std::string& what) {
  if (pos + sizeof(T) > in.size()) throw FormatError("model file truncated in " + what);
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    value |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return value;
}

std::uint32_t crc_of(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

Json shape_json(const Shape& s) { return Json(std::vector<std::size_t>(s.begin(), s.end())); }

}  // namespace

void save_model(const std::filesystem::path& path, const ModelFile& model) {
  ModelFile copy = model;
  std::vector<Entry> entries = network_entries(copy.generator.net, "generator");
  if (copy.discriminator) {
    if (!(copy.discriminator->arch == copy.generator.arch))
      throw ConfigError("generator and discriminator architectures differ");
    auto d = network_entries(copy.discriminator->net, "discriminator");
    entries.insert(entries.end(), d.begin(), d.end());
  }

  Json tensors = Json::array();
  std::string payload;
  for (const auto& e : entries) {
    tensors.push_back(Json{{"name", e.name}, {"shape", shape_json(e.tensor->shape())}});
    for (double v : e.tensor->values()) put_le(payload, std::bit_cast<std::uint64_t>(v));
  }
  Json manifest{{"architecture", model.generator.arch.to_json()},
                {"training", model.training.to_json()},
                {"corpus_seed", model.corpus_seed},
                {"training_seconds", model.training_seconds},
                {"has_discriminator", model.discriminator.has_value()},
                {"running_statistics", true},
                {"tensors", tensors}};
  const std::string text = manifest.dump();

  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kModelFileVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out += payload;
  put_le<std::uint32_t>(out, crc_of(payload.data(), payload.size()));
  write_text_atomic(path, out);
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " (" + path.string() + ")";

  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("not a model file: bad magic" + where);
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(bytes, pos, "header");
  if (version != kModelFileVersion)
    throw FormatError("unsupported model file version " + std::to_string(version) + where);
  const auto manifest_size = get_le<std::uint64_t>(bytes, pos, "header");
  if (manifest_size > bytes.size() - pos) throw FormatError("model file truncated in manifest" + where);

  Json manifest;
  try {
    manifest = Json::parse(bytes.substr(pos, manifest_size));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("model manifest is not valid JSON: " + std::string(e.what()) + where);
  }
  pos += manifest_size;

  ModelFile model;
  std::vector<Json> listed;
  try {
    ObjectReader r(manifest, "model manifest");
    const GanArchitecture arch = GanArchitecture::from_json(r.child("architecture"));
    model.training = GanTrainConfig::from_json(r.child("training"));
    model.corpus_seed = r.required<std::uint64_t>("corpus_seed");
    model.training_seconds = r.get("training_seconds", 0.0);
    const bool has_d = r.required<bool>("has_discriminator");
    r.get("running_statistics", true);
    listed = r.required<std::vector<Json>>("tensors");
    r.finish();
    model.generator = GeneratorModel(arch);
    if (has_d) model.discriminator = DiscriminatorModel(arch);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad model manifest: ") + e.what() + where);
  }

  std::vector<Entry> entries = network_entries(model.generator.net, "generator");
  if (model.discriminator) {
    auto d = network_entries(model.discriminator->net, "discriminator");
    entries.insert(entries.end(), d.begin(), d.end());
  }
  if (listed.size() != entries.size())
    throw FormatError("model manifest lists " + std::to_string(listed.size()) + " tensors, architecture needs " +
                      std::to_string(entries.size()) + where);

  std::size_t payload_size = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Json& t = listed[i];
    if (!t.is_object() || t.value("name", "") != entries[i].name ||
        t.value("shape", Json::array()) != shape_json(entries[i].tensor->shape()))
      throw FormatError("model tensor " + std::to_string(i) + " does not match the architecture (expected " +
                        entries[i].name + " " + shape_string(entries[i].tensor->shape()) + ")" + where);
    payload_size += 8 * entries[i].tensor->size();
  }
  if (bytes.size() - pos != payload_size + 4)
    throw FormatError("model payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                      std::to_string(payload_size + 4) + where);
  const std::size_t payload_start = pos;
  std::size_t crc_pos = payload_start + payload_size;
  const auto stored = get_le<std::uint32_t>(bytes, crc_pos, "checksum");
  if (stored != crc_of(bytes.data() + payload_start, payload_size))
    throw FormatError("model payload checksum mismatch" + where);

  for (auto& e : entries)
    for (auto& v : e.tensor->values()) v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos, "payload"));

  model.generator.net.set_mode(Mode::infer);
  if (model.discriminator) model.discriminator->net.set_mode(Mode::infer);
  return model;
}

void save_observation(const std::filesystem::path& path, const Observation& obs) {
  Json manifest{{"descriptor", obs.descriptor.to_json()},
                {"image_shape", shape_json(obs.image_shape)},
                {"sigma", obs.sigma},
                {"shape", shape_json(obs.y.shape())}};
  const std::string text = manifest.dump();
  std::string out(kObservationMagic, 8);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  std::string payload;
  for (double v : obs.y.values()) put_le(payload, std::bit_cast<std::uint64_t>(v));
  out += payload;
  put_le<std::uint32_t>(out, crc_of(payload.data(), payload.size()));
  write_text_atomic(path, out);
}

Observation load_observation(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open observation file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " (" + path.string() + ")";
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kObservationMagic, 8) != 0)
    throw FormatError("not an observation file: bad magic" + where);
  std::size_t pos = 8;
  const auto manifest_size = get_le<std::uint64_t>(bytes, pos, "header");
  if (manifest_size > bytes.size() - pos) throw FormatError("observation file truncated in manifest" + where);
  Observation obs;
  try {
    const Json manifest = Json::parse(bytes.substr(pos, manifest_size));
    ObjectReader r(manifest, "observation manifest");
    obs.descriptor = OperatorDescriptor::from_json(r.child("descriptor"));
    obs.image_shape = r.required<Shape>("image_shape");
    obs.sigma = r.required<double>("sigma");
    obs.y = Tensor(r.required<Shape>("shape"));
    r.finish();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("observation manifest is not valid JSON: " + std::string(e.what()) + where);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad observation manifest: ") + e.what() + where);
  }
  pos += manifest_size;
  const std::size_t payload_size = 8 * obs.y.size();
  if (bytes.size() - pos != payload_size + 4)
    throw FormatError("observation payload has the wrong length" + where);
  std::size_t crc_pos = pos + payload_size;
  if (get_le<std::uint32_t>(bytes, crc_pos, "checksum") != crc_of(bytes.data() + pos, payload_size))
    throw FormatError("observation payload checksum mismatch" + where);
  for (auto& v : obs.y.values()) v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos, "payload"));
  return obs;
}

}  // namespace gancs
