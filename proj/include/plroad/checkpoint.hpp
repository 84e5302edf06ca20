#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace plroad {

/// One named float32 array in a checkpoint.
struct CheckpointRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian): "PLRD", u32 version, u32 record count, then per
/// record: u16 name length, name bytes, u32 rank, rank x u32 dims, float32
/// payload in row-major order.
std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                                                const std::string& origin = "<memory>");

/// Writes via a temporary file and rename.
void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace plroad
