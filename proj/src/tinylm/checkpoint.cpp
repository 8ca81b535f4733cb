#include "polneuron/checkpoint.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "polneuron/error.hpp"

namespace polneuron::tinylm {

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'N', 'L', 'M', 'C', 'K', 'P', 'T'};

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0x00000000000000ffULL) << 56) | ((v & 0x000000000000ff00ULL) << 40) |
        ((v & 0x0000000000ff0000ULL) << 24) | ((v & 0x00000000ff000000ULL) << 8) |
        ((v & 0x000000ff00000000ULL) >> 8) | ((v & 0x0000ff0000000000ULL) >> 24) |
        ((v & 0x00ff000000000000ULL) >> 40) | ((v & 0xff00000000000000ULL) >> 56);
  }
  return v;
}

void put_u64(std::string& out, std::uint64_t v) {
  v = to_le(v);
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  return to_le(v);
}

template <class T>
T field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key))
    fail(ErrorKind::Schema, where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::Schema, where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},     {"d_model", c.d_model},
          {"d_ff", c.d_ff},             {"n_heads", c.n_heads},
          {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
          {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j, const std::string& where) {
  ModelConfig c;
  c.n_layers = field<std::size_t>(j, "n_layers", where);
  c.d_model = field<std::size_t>(j, "d_model", where);
  c.d_ff = field<std::size_t>(j, "d_ff", where);
  c.n_heads = field<std::size_t>(j, "n_heads", where);
  c.vocab_size = field<std::size_t>(j, "vocab_size", where);
  c.max_seq_len = field<std::size_t>(j, "max_seq_len", where);
  c.seed = field<std::uint64_t>(j, "seed", where);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const ModelVariant& variant,
                     const nlohmann::json& metadata) {
  variant.validate();
  const auto& params = variant.params;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : params.layout().tensors())
    tensors.push_back({{"name", t.name}, {"shape", t.shape}});
  nlohmann::json header = {
      {"format_version", kCheckpointFormatVersion},
      {"config", config_to_json(params.config())},
      {"variant",
       {{"leaning", std::string(to_string(variant.leaning))},
        {"topic", variant.topic ? nlohmann::json(*variant.topic) : nlohmann::json(nullptr)}}},
      {"tensors", tensors},
      {"metadata", metadata}};
  const std::string header_text = header.dump();

  std::string blob(kMagic.begin(), kMagic.end());
  put_u64(blob, header_text.size());
  blob += header_text;
  blob.reserve(blob.size() + params.size() * 8);
  for (double v : params.data()) put_u64(blob, std::bit_cast<std::uint64_t>(v));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) fail(ErrorKind::Io, "failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open checkpoint '" + path.string() + "'");
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint '" + path.string() + "'";

  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic.data(), kMagic.size()) != 0)
    fail(ErrorKind::Schema, where + ": missing or bad field 'magic'");
  const std::uint64_t header_len = get_u64(blob.data() + 8);
  if (header_len > blob.size() - 16)
    fail(ErrorKind::Schema, where + ": truncated field 'header'");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(16, header_len));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Schema, where + ": field 'header' is not valid JSON (" + e.what() + ")");
  }
  const int version = field<int>(header, "format_version", where);
  if (version != kCheckpointFormatVersion)
    fail(ErrorKind::Schema, where + ": unsupported field 'format_version' = " +
                                std::to_string(version));
  if (!header.contains("config"))
    fail(ErrorKind::Schema, where + ": missing field 'config'");
  ModelConfig config = config_from_json(header["config"], where + " config");
  try {
    config.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Schema, where + ": invalid field 'config': " + e.what());
  }

  const auto& variant_json = header.contains("variant") ? header["variant"] : nlohmann::json();
  const auto leaning = leaning_from_string(field<std::string>(variant_json, "leaning", where));
  std::optional<std::string> topic;
  if (variant_json.contains("topic") && !variant_json["topic"].is_null())
    topic = field<std::string>(variant_json, "topic", where);

  Checkpoint ckpt{ModelVariant{Parameters(config), topic, leaning},
                  header.contains("metadata") ? header["metadata"] : nlohmann::json()};
  auto& params = ckpt.variant.params;

  if (!header.contains("tensors") || !header["tensors"].is_array())
    fail(ErrorKind::Schema, where + ": missing field 'tensors'");
  const auto& listed = header["tensors"];
  const auto& expected = params.layout().tensors();
  if (listed.size() != expected.size())
    fail(ErrorKind::Schema, where + ": field 'tensors' lists " + std::to_string(listed.size()) +
                                " tensors, config implies " + std::to_string(expected.size()));

  std::size_t cursor = 16 + header_len;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& t = expected[i];
    const auto name = field<std::string>(listed[i], "name", where);
    const auto shape = field<std::vector<std::size_t>>(listed[i], "shape", where);
    if (name != t.name || shape != t.shape)
      fail(ErrorKind::Schema, where + ": tensor '" + name + "' does not match the config layout");
    const std::size_t bytes = t.size * 8;
    if (blob.size() - cursor < bytes)
      fail(ErrorKind::Schema, where + ": truncated data for tensor '" + t.name + "'");
    double* dst = params.at(t.offset);
    for (std::size_t k = 0; k < t.size; ++k) {
      dst[k] = std::bit_cast<double>(get_u64(blob.data() + cursor + k * 8));
      if (!std::isfinite(dst[k]))
        fail(ErrorKind::Schema, where + ": non-finite value in tensor '" + t.name + "'");
    }
    cursor += bytes;
  }
  if (cursor != blob.size())
    fail(ErrorKind::Schema, where + ": " + std::to_string(blob.size() - cursor) +
                                " trailing bytes after field 'tensors'");
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  auto ckpt = load_checkpoint(path);
  if (!ckpt.variant.params.config().same_shape(expected))
    fail(ErrorKind::Config, "checkpoint '" + path.string() +
                                "' config does not match the expected model config");
  return ckpt;
}

}  // namespace polneuron::tinylm
