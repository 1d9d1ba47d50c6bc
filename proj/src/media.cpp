#include "lshift/media.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string_view>

namespace lshift {

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_le16(std::vector<std::uint8_t>& out, int v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
}

void png_chunk(std::vector<std::uint8_t>& out, std::string_view type,
               const std::vector<std::uint8_t>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type.begin(), type.end());
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

std::uint8_t palette_index(const std::uint8_t* rgb) {
  return static_cast<std::uint8_t>((rgb[0] >> 5) << 5 | (rgb[1] >> 5) << 2 | (rgb[2] >> 6));
}

class BitWriter {
 public:
  void put(int code, int size) {
    acc_ |= static_cast<std::uint32_t>(code) << bits_;
    bits_ += size;
    while (bits_ >= 8) {
      bytes.push_back(static_cast<std::uint8_t>(acc_ & 0xFF));
      acc_ >>= 8;
      bits_ -= 8;
    }
  }
  void flush() {
    if (bits_ > 0) bytes.push_back(static_cast<std::uint8_t>(acc_ & 0xFF));
    acc_ = 0;
    bits_ = 0;
  }
  std::vector<std::uint8_t> bytes;

 private:
  std::uint32_t acc_ = 0;
  int bits_ = 0;
};

// Variable-width LZW over 8-bit indices, GIF flavour (clear = 256, end = 257).
std::vector<std::uint8_t> lzw_encode(const std::vector<std::uint8_t>& indices) {
  constexpr int kClear = 256, kEnd = 257, kMaxCode = 4095;
  std::vector<std::int16_t> next(4096 * 256, -1);
  BitWriter w;
  int size = 9, last = kEnd;
  w.put(kClear, size);
  int prefix = -1;
  for (std::uint8_t px : indices) {
    if (prefix < 0) {
      prefix = px;
      continue;
    }
    const std::size_t key = static_cast<std::size_t>(prefix) * 256 + px;
    if (next[key] >= 0) {
      prefix = next[key];
      continue;
    }
    w.put(prefix, size);
    next[key] = static_cast<std::int16_t>(++last);
    if (last >= (1 << size)) ++size;
    if (last == kMaxCode) {
      w.put(kClear, size);
      std::fill(next.begin(), next.end(), std::int16_t{-1});
      size = 9;
      last = kEnd;
    }
    prefix = px;
  }
  if (prefix >= 0) w.put(prefix, size);
  w.put(kEnd, size);
  w.flush();
  return std::move(w.bytes);
}

void check(const Image8& img) {
  if (img.width < 1 || img.height < 1 ||
      img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3)
    throw std::invalid_argument("image buffer does not match its dimensions");
}

}  // namespace

Image8 to_image(std::span<const float> planar, int height, int width, int upscale) {
  if (upscale < 1) throw std::invalid_argument("upscale must be >= 1");
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  if (planar.size() != 3 * plane) throw std::invalid_argument("to_image: expected (3,H,W) data");
  Image8 img{width * upscale, height * upscale, {}};
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(planar[c * plane + (y / upscale) * width + x / upscale], 0.f, 1.f);
        img.rgb[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.f));
      }
  return img;
}

std::vector<std::uint8_t> encode_png(const Image8& img) {
  check(img);
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.height) * (img.width * 3 + 1));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    const auto* row = img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3;
    raw.insert(raw.end(), row, row + img.width * 3);
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(packed_size);
  if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw std::runtime_error("PNG compression failed");
  packed.resize(packed_size);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit RGB, no interlace
  png_chunk(out, "IHDR", ihdr);
  png_chunk(out, "IDAT", packed);
  png_chunk(out, "IEND", {});
  return out;
}

std::vector<std::uint8_t> encode_ppm(const Image8& img) {
  check(img);
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

std::vector<std::uint8_t> encode_gif(const std::vector<Image8>& frames, int delay_cs) {
  if (frames.empty()) throw std::invalid_argument("GIF needs at least one frame");
  for (const auto& f : frames) {
    check(f);
    if (f.width != frames[0].width || f.height != frames[0].height)
      throw std::invalid_argument("GIF frames differ in size");
  }
  const int w = frames[0].width, h = frames[0].height;
  std::vector<std::uint8_t> out = {'G', 'I', 'F', '8', '9', 'a'};
  put_le16(out, w);
  put_le16(out, h);
  out.insert(out.end(), {0xF7, 0, 0});  // global 256-entry table, 8-bit colour
  for (int i = 0; i < 256; ++i) {
    out.push_back(static_cast<std::uint8_t>((i >> 5) * 255 / 7));
    out.push_back(static_cast<std::uint8_t>(((i >> 2) & 7) * 255 / 7));
    out.push_back(static_cast<std::uint8_t>((i & 3) * 255 / 3));
  }
  const std::string_view loop = "NETSCAPE2.0";
  out.insert(out.end(), {0x21, 0xFF, 0x0B});
  out.insert(out.end(), loop.begin(), loop.end());
  out.insert(out.end(), {0x03, 0x01, 0x00, 0x00, 0x00});
  for (const auto& f : frames) {
    out.insert(out.end(), {0x21, 0xF9, 0x04, 0x00});
    put_le16(out, delay_cs);
    out.insert(out.end(), {0x00, 0x00});
    out.push_back(0x2C);
    put_le16(out, 0);
    put_le16(out, 0);
    put_le16(out, w);
    put_le16(out, h);
    out.push_back(0x00);
    std::vector<std::uint8_t> indices(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = palette_index(&f.rgb[i * 3]);
    const auto lzw = lzw_encode(indices);
    out.push_back(8);  // minimum code size
    for (std::size_t i = 0; i < lzw.size(); i += 255) {
      const std::size_t n = std::min<std::size_t>(255, lzw.size() - i);
      out.push_back(static_cast<std::uint8_t>(n));
      out.insert(out.end(), lzw.begin() + static_cast<std::ptrdiff_t>(i),
                 lzw.begin() + static_cast<std::ptrdiff_t>(i + n));
    }
    out.push_back(0x00);
  }
  out.push_back(0x3B);
  return out;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace lshift
