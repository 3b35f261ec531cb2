#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace verse::png {

/// Decoded raster. Samples are stored interleaved, one uint16 per channel
/// sample regardless of the source bit depth. Paletted images keep their
/// palette indices (channels = 1, paletted = true).
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  bool paletted = false;
  std::vector<std::uint16_t> samples;
};

Raster decode(const std::vector<std::uint8_t>& bytes);
Raster read_file(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_gray16(int width, int height, const std::vector<std::uint16_t>& samples);
std::vector<std::uint8_t> encode_gray8(int width, int height, const std::vector<std::uint8_t>& samples);
/// 8-bit paletted image; index i is shown with a fixed distinct colour.
std::vector<std::uint8_t> encode_indexed(int width, int height, const std::vector<std::uint8_t>& indices);

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace verse::png
