#pragma once

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgqn/tensor.hpp"

// Minimal PNG reader/writer. Covers what the toolkit needs: writing RGB8
// frames (saliency panels, plots) and reading 8-bit grayscale/RGB/RGBA
// non-interlaced files as user-supplied distractor images.

namespace sgqn {

namespace png_detail {

inline void put_u32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(uint8_t(x >> 24));
  v.push_back(uint8_t(x >> 16));
  v.push_back(uint8_t(x >> 8));
  v.push_back(uint8_t(x));
}

inline uint32_t get_u32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void append_chunk(std::vector<uint8_t>& out, const char type[4],
                         const uint8_t* data, size_t len) {
  put_u32(out, static_cast<uint32_t>(len));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  if (len) out.insert(out.end(), data, data + len);
  uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + start, static_cast<uInt>(4 + len));
  put_u32(out, crc);
}

inline uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return uint8_t(a);
  if (pb <= pc) return uint8_t(b);
  return uint8_t(c);
}

}  // namespace png_detail

// Encodes interleaved RGB8 rows (row-major, width*3 bytes per row).
inline std::vector<uint8_t> encode_png_rgb(const std::vector<uint8_t>& rgb, int width,
                                           int height) {
  using namespace png_detail;
  if (width <= 0 || height <= 0 || rgb.size() != size_t(width) * height * 3)
    throw std::invalid_argument("encode_png_rgb: buffer does not match dimensions");

  std::vector<uint8_t> raw(size_t(height) * (1 + size_t(width) * 3));
  for (int y = 0; y < height; ++y) {
    uint8_t* row = raw.data() + size_t(y) * (1 + size_t(width) * 3);
    row[0] = 0;  // filter: none
    std::memcpy(row + 1, rgb.data() + size_t(y) * width * 3, size_t(width) * 3);
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("encode_png_rgb: deflate failed");
  compressed.resize(bound);

  std::vector<uint8_t> out{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  uint8_t ihdr[13];
  ihdr[0] = uint8_t(width >> 24); ihdr[1] = uint8_t(width >> 16);
  ihdr[2] = uint8_t(width >> 8);  ihdr[3] = uint8_t(width);
  ihdr[4] = uint8_t(height >> 24); ihdr[5] = uint8_t(height >> 16);
  ihdr[6] = uint8_t(height >> 8);  ihdr[7] = uint8_t(height);
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // color type RGB
  ihdr[10] = 0; ihdr[11] = 0; ihdr[12] = 0;
  append_chunk(out, "IHDR", ihdr, 13);
  append_chunk(out, "IDAT", compressed.data(), compressed.size());
  append_chunk(out, "IEND", nullptr, 0);
  return out;
}

// img is [3,H,W] with values in [0,1]; quantized by round(v*255).
inline void write_png_rgb(const std::string& path, const Tensor<float>& img) {
  if (img.ndim() != 3 || img.dim(0) != 3)
    throw std::invalid_argument("write_png_rgb: expects [3,H,W], got " + shape_str(img.shape));
  const int H = img.dim(1), W = img.dim(2);
  std::vector<uint8_t> rgb(size_t(H) * W * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = img[(int64_t(c) * H + y) * W + x];
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        rgb[(size_t(y) * W + x) * 3 + c] = uint8_t(std::lround(v * 255.f));
      }
  const std::vector<uint8_t> bytes = encode_png_rgb(rgb, W, H);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_png_rgb: cannot open '" + path + "'");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw std::runtime_error("write_png_rgb: write failed for '" + path + "'");
}

// Decodes 8-bit gray / RGB / RGBA non-interlaced PNG into [3,H,W] floats
// in [0,1] (gray replicated, alpha dropped).
inline Tensor<float> decode_png_rgb(const std::vector<uint8_t>& bytes) {
  using namespace png_detail;
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw std::invalid_argument("decode_png_rgb: not a PNG file");

  int width = 0, height = 0, bit_depth = 0, color_type = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  bool seen_iend = false;
  while (pos + 8 <= bytes.size() && !seen_iend) {
    const uint32_t len = get_u32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size())
      throw std::invalid_argument("decode_png_rgb: truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const uint8_t* data = bytes.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw std::invalid_argument("decode_png_rgb: bad IHDR");
      width = int(get_u32(data));
      height = int(get_u32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      if (data[12] != 0)
        throw std::invalid_argument("decode_png_rgb: interlaced PNG not supported");
      if (bit_depth != 8)
        throw std::invalid_argument("decode_png_rgb: only 8-bit depth supported");
      if (color_type != 0 && color_type != 2 && color_type != 6)
        throw std::invalid_argument(
            "decode_png_rgb: only grayscale, RGB, and RGBA color types supported");
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      seen_iend = true;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0) throw std::invalid_argument("decode_png_rgb: missing IHDR");
  if (idat.empty()) throw std::invalid_argument("decode_png_rgb: missing IDAT");

  const int ch = color_type == 0 ? 1 : (color_type == 2 ? 3 : 4);
  const size_t stride = size_t(width) * ch;
  std::vector<uint8_t> raw(size_t(height) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  const int zrc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || raw_len != raw.size())
    throw std::invalid_argument("decode_png_rgb: inflate failed");

  // undo per-scanline filters in place
  std::vector<uint8_t> img(size_t(height) * stride);
  for (int y = 0; y < height; ++y) {
    const uint8_t filter = raw[size_t(y) * (stride + 1)];
    const uint8_t* src = raw.data() + size_t(y) * (stride + 1) + 1;
    uint8_t* dst = img.data() + size_t(y) * stride;
    const uint8_t* up = y > 0 ? img.data() + size_t(y - 1) * stride : nullptr;
    for (size_t i = 0; i < stride; ++i) {
      const int a = i >= size_t(ch) ? dst[i - ch] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= size_t(ch)) ? up[i - ch] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw std::invalid_argument("decode_png_rgb: bad filter byte");
      }
      dst[i] = uint8_t(v);
    }
  }

  Tensor<float> out({3, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const uint8_t* px = img.data() + size_t(y) * stride + size_t(x) * ch;
      for (int c = 0; c < 3; ++c) {
        const uint8_t v = ch == 1 ? px[0] : px[c];
        out[(int64_t(c) * height + y) * width + x] = float(v) / 255.0f;
      }
    }
  return out;
}

inline Tensor<float> read_png_rgb(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_png_rgb: cannot open '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return decode_png_rgb(bytes);
}

// Bilinear resample of [C,H,W] to [C,oh,ow] using pixel-center alignment.
inline Tensor<float> resize_bilinear(const Tensor<float>& img, int oh, int ow) {
  if (img.ndim() != 3) throw std::invalid_argument("resize_bilinear: expects [C,H,W]");
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("resize_bilinear: bad target size");
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<float> out({C, oh, ow});
  const float sy = float(H) / float(oh), sx = float(W) / float(ow);
  for (int y = 0; y < oh; ++y) {
    float fy = (y + 0.5f) * sy - 0.5f;
    fy = fy < 0.f ? 0.f : (fy > float(H - 1) ? float(H - 1) : fy);
    const int y0 = int(fy);
    const int y1 = y0 + 1 < H ? y0 + 1 : y0;
    const float wy = fy - float(y0);
    for (int x = 0; x < ow; ++x) {
      float fx = (x + 0.5f) * sx - 0.5f;
      fx = fx < 0.f ? 0.f : (fx > float(W - 1) ? float(W - 1) : fx);
      const int x0 = int(fx);
      const int x1 = x0 + 1 < W ? x0 + 1 : x0;
      const float wx = fx - float(x0);
      for (int c = 0; c < C; ++c) {
        const float* p = img.ptr() + int64_t(c) * H * W;
        const float v = (1 - wy) * ((1 - wx) * p[y0 * W + x0] + wx * p[y0 * W + x1]) +
                        wy * ((1 - wx) * p[y1 * W + x0] + wx * p[y1 * W + x1]);
        out[(int64_t(c) * oh + y) * ow + x] = v;
      }
    }
  }
  return out;
}

}  // namespace sgqn
