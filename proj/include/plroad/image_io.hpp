#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace plroad {

/// 8-bit raster, `channels` interleaved samples per pixel (1 or 3).
struct ByteImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> data;
  bool operator==(const ByteImage&) const = default;
};

/// Single-channel float32 raster, rows stored top to bottom in memory.
struct FloatImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> data;
  bool operator==(const FloatImage&) const = default;
};

/// Binary PPM (P6, maxval 255).
std::vector<std::uint8_t> encode_ppm(const ByteImage& image);
/// Binary PGM (P5, maxval 255).
std::vector<std::uint8_t> encode_pgm(const ByteImage& image);
/// Grayscale PFM ("Pf", scale -1.0 = little-endian); rows written bottom-up
/// as the format prescribes.
std::vector<std::uint8_t> encode_pfm(const FloatImage& image);

ByteImage decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& origin);
ByteImage decode_pgm(const std::vector<std::uint8_t>& bytes, const std::string& origin);
FloatImage decode_pfm(const std::vector<std::uint8_t>& bytes, const std::string& origin);

void write_ppm(const std::filesystem::path& path, const ByteImage& image);
void write_pgm(const std::filesystem::path& path, const ByteImage& image);
void write_pfm(const std::filesystem::path& path, const FloatImage& image);
ByteImage read_ppm(const std::filesystem::path& path);
ByteImage read_pgm(const std::filesystem::path& path);
FloatImage read_pfm(const std::filesystem::path& path);

}  // namespace plroad
