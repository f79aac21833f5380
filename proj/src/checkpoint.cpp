#include "mlt/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "mlt/errors.hpp"
#include "mlt/tensor_io.hpp"

namespace mlt {

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw CorruptFileError("checkpoint truncated in preamble");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

nlohmann::json read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != std::string(kCheckpointMagic, 4)) {
    throw CorruptFileError(path.string() + ": not a checkpoint (bad magic)");
  }
  const std::uint64_t length = get_u64(in);
  if (length > (1u << 30)) throw CorruptFileError(path.string() + ": implausible header length");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
    throw CorruptFileError(path.string() + ": checkpoint truncated in header");
  }
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(path.string() + ": unreadable checkpoint header: " + e.what());
  }
}

}  // namespace

void save_checkpoint(const ModelParams& params, const ModelConfig& cfg, const std::filesystem::path& path) {
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  const auto named = params.named();
  for (const auto& p : named) {
    const std::size_t bytes = tensor_byte_size(p.tensor);
    manifest.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  const nlohmann::json header = {{"format", "mlt-checkpoint"},
                                 {"version", 1},
                                 {"config", cfg.to_json()},
                                 {"parameters", manifest}};
  const std::string text = header.dump();
  atomic_write(path, [&](std::ostream& out) {
    out.write(kCheckpointMagic, 4);
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : named) write_tensor(out, p.tensor);
  });
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_header(in, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const nlohmann::json header = read_header(in, path);
  const std::streamoff payload_start = in.tellg();

  ModelConfig cfg;
  try {
    if (header.at("format") != "mlt-checkpoint" || header.at("version") != 1) {
      throw CorruptFileError(path.string() + ": unsupported checkpoint format");
    }
    cfg = ModelConfig::from_json(header.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  if (expected && !(*expected == cfg)) {
    throw ConfigError(path.string() + ": checkpoint config " + cfg.to_json().dump() +
                      " does not match expected " + expected->to_json().dump());
  }

  Checkpoint ck{cfg, zero_params(cfg)};
  auto named = ck.params.named();
  const auto& manifest = header.at("parameters");
  if (!manifest.is_array() || manifest.size() != named.size()) {
    throw CorruptFileError(path.string() + ": parameter manifest does not match the config");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& entry = manifest[i];
    if (entry.value("name", std::string()) != named[i].name) {
      throw CorruptFileError(path.string() + ": expected parameter " + named[i].name);
    }
    in.seekg(payload_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    if (!in) throw CorruptFileError(path.string() + ": checkpoint truncated");
    Tensor t = read_tensor(in);
    if (t.shape() != named[i].tensor.shape()) {
      throw CorruptFileError(path.string() + ": parameter " + named[i].name + " has shape " +
                             shape_str(t.shape()) + ", expected " + shape_str(named[i].tensor.shape()));
    }
    auto dst = named[i].tensor.mutable_data();
    std::copy(t.data().begin(), t.data().end(), dst.begin());
  }
  return ck;
}

}  // namespace mlt
