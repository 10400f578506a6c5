#include "iclcot/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>
#include <zlib.h>

namespace iclcot {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

namespace {

using Kind = CheckpointError::Kind;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

Transformer<float> parse_checkpoint(const std::vector<std::uint8_t>& bytes);

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> serialize_checkpoint(const Transformer<float>& model) {
  const auto layout = parameter_layout(model.config());
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& spec : layout) {
    manifest.push_back({{"name", spec.name},
                        {"shape", {spec.rows, spec.cols}},
                        {"offset", offset},
                        {"dtype", "f32"}});
    offset += spec.rows * spec.cols * sizeof(float);
  }
  const nlohmann::json header = {{"format", "iclcot-checkpoint"},
                                 {"model", model.config()},
                                 {"tensors", manifest},
                                 {"payload_bytes", offset}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t payload_begin = out.size();
  for (const auto& p : model.parameters()) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(p.data().data());
    out.insert(out.end(), raw, raw + p.size() * sizeof(float));
  }
  put_u32(out, crc32_of(out.data() + payload_begin, out.size() - payload_begin));
  return out;
}

Transformer<float> parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError(Kind::kMalformedHeader, "checkpoint: bad magic");
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) {
    throw CheckpointError(Kind::kTruncated, "checkpoint: header length exceeds file size");
  }
  nlohmann::json header;
  ModelConfig cfg;
  std::uint64_t payload_bytes = 0;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + header_len);
    cfg = header.at("model").get<ModelConfig>();
    cfg.validate();
    payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kMalformedHeader, std::string("checkpoint header: ") + e.what());
  } catch (const ContractError& e) {
    throw CheckpointError(Kind::kMalformedHeader, std::string("checkpoint header: ") + e.what());
  }

  const auto layout = parameter_layout(cfg);
  const auto& tensors = header.at("tensors");
  if (!tensors.is_array() || tensors.size() != layout.size()) {
    throw CheckpointError(Kind::kShapeMismatch, "checkpoint: tensor manifest does not match model layout");
  }
  std::uint64_t expected_offset = 0;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& t = tensors[i];
    const auto shape = t.at("shape").get<std::vector<std::size_t>>();
    if (t.at("name").get<std::string>() != layout[i].name || shape.size() != 2 ||
        shape[0] != layout[i].rows || shape[1] != layout[i].cols ||
        t.at("offset").get<std::uint64_t>() != expected_offset || t.at("dtype") != "f32") {
      throw CheckpointError(Kind::kShapeMismatch,
                            "checkpoint: manifest entry " + std::to_string(i) + " does not match " +
                                layout[i].name + " " + shape_string(layout[i].rows, layout[i].cols));
    }
    expected_offset += layout[i].rows * layout[i].cols * sizeof(float);
  }
  if (payload_bytes != expected_offset) {
    throw CheckpointError(Kind::kShapeMismatch, "checkpoint: payload size disagrees with manifest");
  }

  const std::size_t payload_begin = 16 + header_len;
  if (bytes.size() < payload_begin + payload_bytes + 4) {
    throw CheckpointError(Kind::kTruncated, "checkpoint: payload truncated (" +
                                                std::to_string(bytes.size() - payload_begin) +
                                                " of " + std::to_string(payload_bytes + 4) + " bytes)");
  }
  if (bytes.size() != payload_begin + payload_bytes + 4) {
    throw CheckpointError(Kind::kMalformedHeader, "checkpoint: trailing bytes after checksum");
  }
  const std::uint8_t* payload = bytes.data() + payload_begin;
  const std::uint32_t stored = get_u32(payload + payload_bytes);
  if (stored != crc32_of(payload, payload_bytes)) {
    throw CheckpointError(Kind::kChecksum, "checkpoint: payload CRC32 mismatch");
  }

  std::vector<Matrix<float>> params;
  params.reserve(layout.size());
  for (const auto& spec : layout) {
    Matrix<float> m(spec.rows, spec.cols);
    std::memcpy(m.data().data(), payload, m.size() * sizeof(float));
    payload += m.size() * sizeof(float);
    params.push_back(std::move(m));
  }
  return Transformer<float>(cfg, std::move(params));
}

Transformer<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  try {
    return parse_checkpoint(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kMalformedHeader, std::string("checkpoint header: ") + e.what());
  }
}

void save_checkpoint(const Transformer<float>& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::kIo, "cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::kIo, "short write to " + path.string());
}

Transformer<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kIo, "cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

Transformer<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  auto model = load_checkpoint(path);
  if (!(model.config() == expected)) {
    nlohmann::json have = model.config();
    nlohmann::json want = expected;
    throw CheckpointError(Kind::kConfigMismatch, "checkpoint model config " + have.dump() +
                                                     " differs from runtime config " + want.dump());
  }
  return model;
}

}  // namespace iclcot
