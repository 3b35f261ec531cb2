#include "verse/png_io.hpp"

#include <png.h>

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>

#include "verse/errors.hpp"

namespace verse::png {

namespace {

struct ReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void read_cb(png_structp p, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(p));
  if (cur->pos + n > cur->bytes->size()) png_error(p, "unexpected end of PNG data");
  std::memcpy(out, cur->bytes->data() + cur->pos, n);
  cur->pos += n;
}

void write_cb(png_structp p, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
  out->insert(out->end(), data, data + n);
}

void flush_cb(png_structp) {}

[[noreturn]] void error_cb(png_structp, png_const_charp msg) { throw FormatError(std::string("PNG: ") + msg); }
void warning_cb(png_structp, png_const_charp) {}

std::vector<std::uint8_t> encode(int width, int height, int bit_depth, int color_type, int channels,
                                 const std::uint8_t* rows, const png_color* palette, int palette_size) {
  if (width <= 0 || height <= 0) throw ContractError("PNG dimensions must be positive");
  std::vector<std::uint8_t> out;
  png_structp p = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warning_cb);
  png_infop info = png_create_info_struct(p);
  try {
    png_set_write_fn(p, &out, write_cb, flush_cb);
    png_set_compression_level(p, 6);
    png_set_IHDR(p, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    if (palette) png_set_PLTE(p, info, palette, palette_size);
    png_write_info(p, info);
    const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
    for (int y = 0; y < height; ++y) png_write_row(p, const_cast<png_bytep>(rows + stride * y));
    png_write_end(p, nullptr);
  } catch (...) {
    png_destroy_write_struct(&p, &info);
    throw;
  }
  png_destroy_write_struct(&p, &info);
  return out;
}

}  // namespace

Raster decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw FormatError("not a PNG stream");
  png_structp p = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warning_cb);
  png_infop info = png_create_info_struct(p);
  Raster r;
  try {
    ReadCursor cur{&bytes, 0};
    png_set_read_fn(p, &cur, read_cb);
    png_read_info(p, info);
    const int color = png_get_color_type(p, info);
    int depth = png_get_bit_depth(p, info);
    r.width = static_cast<int>(png_get_image_width(p, info));
    r.height = static_cast<int>(png_get_image_height(p, info));
    r.paletted = color == PNG_COLOR_TYPE_PALETTE;
    if (depth < 8) {
      if (color == PNG_COLOR_TYPE_GRAY && !r.paletted) png_set_expand_gray_1_2_4_to_8(p);
      else png_set_packing(p);
      depth = 8;
    }
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(p);
    png_read_update_info(p, info);
    r.channels = png_get_channels(p, info);
    r.bit_depth = depth;
    const std::size_t rowbytes = png_get_rowbytes(p, info);
    std::vector<std::uint8_t> buf(rowbytes * r.height);
    std::vector<png_bytep> rows(r.height);
    for (int y = 0; y < r.height; ++y) rows[y] = buf.data() + rowbytes * y;
    png_read_image(p, rows.data());
    png_read_end(p, nullptr);

    const std::size_t n = static_cast<std::size_t>(r.width) * r.height * r.channels;
    r.samples.resize(n);
    for (int y = 0; y < r.height; ++y) {
      const std::uint8_t* row = rows[y];
      std::uint16_t* dst = r.samples.data() + static_cast<std::size_t>(y) * r.width * r.channels;
      for (int i = 0; i < r.width * r.channels; ++i)
        dst[i] = depth == 16 ? static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1]) : row[i];
    }
  } catch (...) {
    png_destroy_read_struct(&p, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&p, &info, nullptr);
  return r;
}

Raster read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode(bytes);
  } catch (const FormatError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_gray16(int width, int height, const std::vector<std::uint16_t>& samples) {
  if (samples.size() != static_cast<std::size_t>(width) * height) throw ContractError("gray16 sample count mismatch");
  std::vector<std::uint8_t> be(samples.size() * 2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    be[2 * i] = static_cast<std::uint8_t>(samples[i] >> 8);
    be[2 * i + 1] = static_cast<std::uint8_t>(samples[i] & 0xff);
  }
  return encode(width, height, 16, PNG_COLOR_TYPE_GRAY, 1, be.data(), nullptr, 0);
}

std::vector<std::uint8_t> encode_gray8(int width, int height, const std::vector<std::uint8_t>& samples) {
  if (samples.size() != static_cast<std::size_t>(width) * height) throw ContractError("gray8 sample count mismatch");
  return encode(width, height, 8, PNG_COLOR_TYPE_GRAY, 1, samples.data(), nullptr, 0);
}

std::vector<std::uint8_t> encode_indexed(int width, int height, const std::vector<std::uint8_t>& indices) {
  if (indices.size() != static_cast<std::size_t>(width) * height) throw ContractError("index count mismatch");
  static const std::array<png_color, 8> base = {{{0, 0, 0},
                                                  {230, 57, 70},
                                                  {42, 157, 143},
                                                  {69, 123, 157},
                                                  {233, 196, 106},
                                                  {244, 162, 97},
                                                  {131, 56, 236},
                                                  {255, 255, 255}}};
  std::array<png_color, 256> palette{};
  for (int i = 0; i < 256; ++i) palette[i] = base[i % base.size()];
  return encode(width, height, 8, PNG_COLOR_TYPE_PALETTE, 1, indices.data(), palette.data(), 256);
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace verse::png
