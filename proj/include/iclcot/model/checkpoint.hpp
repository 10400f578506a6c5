#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iclcot/model/transformer.hpp"

namespace iclcot {

class CheckpointError : public Error {
 public:
  enum class Kind { kIo, kMalformedHeader, kShapeMismatch, kTruncated, kChecksum, kConfigMismatch };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr char kCheckpointMagic[8] = {'I', 'C', 'L', 'C', 'O', 'T', '0', '1'};

// Layout: magic, u64 LE header length, JSON header, raw LE f32 payload in
// manifest order, u32 LE CRC32 of the payload.
std::vector<std::uint8_t> serialize_checkpoint(const Transformer<float>& model);
Transformer<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Transformer<float>& model, const std::filesystem::path& path);
Transformer<float> load_checkpoint(const std::filesystem::path& path);
// Refuses a checkpoint whose stored model config differs from `expected`.
Transformer<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size);

}  // namespace iclcot
