#pragma once

// Image decoding/encoding and the deterministic resize used by the pipeline.
// Decoded images are Tensor<float>[h, w, c] holding u8-valued floats 0..255.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#ifdef MIC_HAVE_JPEG
#include <cstdio>
#include <jpeglib.h>
#endif

#include "mic/tensor.hpp"

namespace mic {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Image = Tensor<float>;

enum class ImageFormat { Unknown, Pgm, Png, Jpeg };

inline ImageFormat sniff_format(std::span<const std::uint8_t> b) {
  if (b.size() >= 2 && b[0] == 'P' && b[1] == '5') return ImageFormat::Pgm;
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (b.size() >= 8 && std::memcmp(b.data(), kPngSig, 8) == 0) return ImageFormat::Png;
  if (b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF) return ImageFormat::Jpeg;
  return ImageFormat::Unknown;
}

inline bool jpeg_supported() {
#ifdef MIC_HAVE_JPEG
  return true;
#else
  return false;
#endif
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> b) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

namespace detail {

inline Image decode_pgm(std::span<const std::uint8_t> b) {
  std::size_t pos = 2;
  auto next_token = [&]() -> unsigned long {
    for (;;) {
      while (pos < b.size() && std::isspace(b[pos])) ++pos;
      if (pos < b.size() && b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= b.size() || !std::isdigit(b[pos])) throw ImageError("PGM: malformed header");
    unsigned long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos++] - '0');
      if (v > (1ul << 24)) throw ImageError("PGM: header value too large");
    }
    return v;
  };
  const auto w = next_token(), h = next_token(), maxval = next_token();
  if (w == 0 || h == 0) throw ImageError("PGM: zero dimension");
  if (maxval == 0 || maxval > 255) throw ImageError("PGM: only 8-bit maxval (1..255) is supported");
  if (pos >= b.size() || !std::isspace(b[pos])) throw ImageError("PGM: malformed header");
  ++pos;
  if (b.size() - pos < w * h) throw ImageError("PGM: truncated pixel data");
  Image img({h, w, 1});
  for (std::size_t i = 0; i < w * h; ++i)
    img[i] = maxval == 255 ? float(b[pos + i]) : std::round(float(b[pos + i]) * 255.0f / maxval);
  return img;
}

inline Image decode_png(std::span<const std::uint8_t> b) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, b.data(), b.size()))
    throw ImageError(std::string("PNG: ") + image.message);
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ImageError("PNG: " + msg);
  }
  const std::size_t c = color ? 3 : 1;
  Image img({image.height, image.width, c});
  for (std::size_t i = 0; i < buf.size(); ++i) img[i] = float(buf[i]);
  return img;
}

#ifdef MIC_HAVE_JPEG
struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

inline Image decode_jpeg(std::span<const std::uint8_t> b) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> pixels;
  std::size_t h = 0, w = 0, c = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageError(std::string("JPEG: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, b.data(), static_cast<unsigned long>(b.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  h = cinfo.output_height;
  w = cinfo.output_width;
  c = std::size_t(cinfo.output_components);
  pixels.resize(h * w * c);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + std::size_t(cinfo.output_scanline) * w * c;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  Image img({h, w, c});
  for (std::size_t i = 0; i < pixels.size(); ++i) img[i] = float(pixels[i]);
  return img;
}
#endif

}  // namespace detail

/// Converts a 1- or 3-channel image to `channels` (1 or 3). Grayscale is
/// replicated; RGB to one channel uses luma 0.299 R + 0.587 G + 0.114 B.
inline Image convert_channels(const Image& img, std::size_t channels) {
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  if (channels == c) return img;
  if (c == 1) {
    Image out({h, w, channels});
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t k = 0; k < channels; ++k) out[p * channels + k] = img[p];
    return out;
  }
  if (c == 3 && channels == 1) {
    Image out({h, w, 1});
    for (std::size_t p = 0; p < h * w; ++p)
      out[p] = 0.299f * img[3 * p] + 0.587f * img[3 * p + 1] + 0.114f * img[3 * p + 2];
    return out;
  }
  throw ImageError("cannot convert " + std::to_string(c) + "-channel image to " +
                   std::to_string(channels) + " channels");
}

/// Decodes PGM (P5), PNG, or (when built with libjpeg) JPEG. `channels` = 0
/// keeps the stored channel count.
inline Image decode_image(std::span<const std::uint8_t> bytes, std::size_t channels = 0) {
  Image img;
  switch (sniff_format(bytes)) {
    case ImageFormat::Pgm: img = detail::decode_pgm(bytes); break;
    case ImageFormat::Png: img = detail::decode_png(bytes); break;
    case ImageFormat::Jpeg:
#ifdef MIC_HAVE_JPEG
      img = detail::decode_jpeg(bytes);
      break;
#else
      throw ImageError("JPEG input but this build has no JPEG support (MIC_WITH_JPEG=OFF)");
#endif
    case ImageFormat::Unknown:
      throw ImageError("unrecognized image container (expected PGM P5, PNG, or JPEG)");
  }
  return channels == 0 ? img : convert_channels(img, channels);
}

inline Image load_image(const std::filesystem::path& path, std::size_t channels = 0) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_image(bytes, channels);
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

inline std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l));
}

inline std::vector<std::uint8_t> encode_pgm(const Image& img) {
  if (img.rank() != 3 || img.dim(2) != 1) throw ImageError("PGM encoding needs [h,w,1]");
  const std::string header =
      "P5\n" + std::to_string(img.dim(1)) + " " + std::to_string(img.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (auto v : img.data()) out.push_back(to_u8(v));
  return out;
}

/// 8-bit PNG, color type 0 (c = 1) or 2 (c = 3).
inline std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3))
    throw ImageError("PNG encoding needs [h,w,1] or [h,w,3]");
  std::vector<std::uint8_t> px(img.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_u8(img[i]);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(img.dim(1));
  image.height = png_uint_32(img.dim(0));
  image.format = img.dim(2) == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, px.data(), 0, nullptr))
    throw ImageError(std::string("PNG encode: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, px.data(), 0, nullptr))
    throw ImageError(std::string("PNG encode: ") + image.message);
  out.resize(size);
  return out;
}

/// Bilinear resize of [h,w,c] with half-pixel centers:
/// src = (dst + 0.5) * (in / out) - 0.5, clamped to the border.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 3) throw DimensionError("resize expects [h,w,c], got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h == out_h && w == out_w) return x;
  Tensor<T> y({out_h, out_w, c});
  const double sy = double(h) / double(out_h), sx = double(w) / double(out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const double fy = std::clamp((double(i) + 0.5) * sy - 0.5, 0.0, double(h - 1));
    const auto y0 = std::size_t(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - double(y0);
    for (std::size_t j = 0; j < out_w; ++j) {
      const double fx = std::clamp((double(j) + 0.5) * sx - 0.5, 0.0, double(w - 1));
      const auto x0 = std::size_t(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - double(x0);
      for (std::size_t k = 0; k < c; ++k) {
        const double a = x[(y0 * w + x0) * c + k], b = x[(y0 * w + x1) * c + k];
        const double d = x[(y1 * w + x0) * c + k], e = x[(y1 * w + x1) * c + k];
        const double top = a + (b - a) * wx, bot = d + (e - d) * wx;
        const double lo = std::min({a, b, d, e}), hi = std::max({a, b, d, e});
        y[(i * out_w + j) * c + k] = static_cast<T>(std::clamp(top + (bot - top) * wy, lo, hi));
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> rescale(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / T(255);
  return y;
}

}  // namespace mic
