#include "regopt/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "regopt/errors.hpp"

namespace regopt {
namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) fail(ErrorKind::IoError, "truncated raw image");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

}  // namespace

ImageBuffer::ImageBuffer(int h, int w, int c, float fill)
    : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {
  if (h <= 0 || w <= 0 || c <= 0) fail(ErrorKind::ShapeMismatch, "image dimensions must be positive");
}

void ImageBuffer::clamp01() {
  for (float& v : data) v = std::clamp(v, 0.0f, 1.0f);
}

ad::Tensor to_tensor(const ImageBuffer& img, bool batch) {
  ad::Shape shape = batch ? ad::Shape{1, img.channels, img.height, img.width}
                          : ad::Shape{img.channels, img.height, img.width};
  ad::Tensor t(std::move(shape));
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < img.channels; ++c) t[c * plane + p] = img.data[p * img.channels + c];
  return t;
}

ad::Tensor stack(std::span<const ImageBuffer> imgs) {
  if (imgs.empty()) fail(ErrorKind::ShapeMismatch, "stack: no images");
  const ImageBuffer& f = imgs.front();
  ad::Tensor t({static_cast<int>(imgs.size()), f.channels, f.height, f.width});
  const std::size_t plane = static_cast<std::size_t>(f.height) * f.width;
  const std::size_t per = plane * f.channels;
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    if (!imgs[i].same_dims(f)) fail(ErrorKind::ShapeMismatch, "stack: image dimensions differ");
    for (std::size_t p = 0; p < plane; ++p)
      for (int c = 0; c < f.channels; ++c) t[i * per + c * plane + p] = imgs[i].data[p * f.channels + c];
  }
  return t;
}

ImageBuffer from_tensor(const ad::Tensor& t, int index) {
  const bool batch = t.rank() == 4;
  if (!batch && t.rank() != 3) fail(ErrorKind::ShapeMismatch, "from_tensor: need [N,C,H,W] or [C,H,W]");
  const int c = t.dim(batch ? 1 : 0), h = t.dim(batch ? 2 : 1), w = t.dim(batch ? 3 : 2);
  ImageBuffer img(h, w, c);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double* src = t.data() + (batch ? static_cast<std::size_t>(index) * c * plane : 0);
  for (std::size_t p = 0; p < plane; ++p)
    for (int ci = 0; ci < c; ++ci)
      img.data[p * c + ci] = static_cast<float>(std::clamp(src[ci * plane + p], 0.0, 1.0));
  return img;
}

namespace {

// libpng reports errors through longjmp, so these helpers keep only trivially
// destructible locals alive across setjmp.
bool png_write_rows(std::FILE* f, int w, int h, int c, const unsigned char* pixels) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, w, h, 8, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) png_write_row(png, pixels + static_cast<std::size_t>(y) * w * c);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

struct PngHeader {
  int w = 0, h = 0, c = 0;
};

// Two passes: header first (pixels null), then rows into a caller buffer.
bool png_read_rows(std::FILE* f, PngHeader* hdr, unsigned char* pixels) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, f);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  hdr->w = static_cast<int>(png_get_image_width(png, info));
  hdr->h = static_cast<int>(png_get_image_height(png, info));
  hdr->c = png_get_channels(png, info);
  if (pixels)
    for (int y = 0; y < hdr->h; ++y) png_read_row(png, pixels + static_cast<std::size_t>(y) * hdr->w * hdr->c, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

}  // namespace

void write_png(const std::filesystem::path& path, const ImageBuffer& img) {
  if (img.channels != 1 && img.channels != 3) fail(ErrorKind::IoError, "write_png: 1 or 3 channels only");
  std::vector<unsigned char> pixels(img.data.size());
  for (std::size_t i = 0; i < pixels.size(); ++i)
    pixels[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.0f, 1.0f) * 255.0f));
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) fail(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  if (!png_write_rows(f.get(), img.width, img.height, img.channels, pixels.data()))
    fail(ErrorKind::IoError, "libpng write failed: " + path.string());
}

ImageBuffer read_png(const std::filesystem::path& path) {
  PngHeader hdr;
  {
    std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f) fail(ErrorKind::IoError, "cannot open " + path.string());
    if (!png_read_rows(f.get(), &hdr, nullptr)) fail(ErrorKind::IoError, "libpng read failed: " + path.string());
  }
  std::vector<unsigned char> pixels(static_cast<std::size_t>(hdr.w) * hdr.h * hdr.c);
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f || !png_read_rows(f.get(), &hdr, pixels.data()))
    fail(ErrorKind::IoError, "libpng read failed: " + path.string());
  ImageBuffer img(hdr.h, hdr.w, hdr.c);
  for (std::size_t i = 0; i < pixels.size(); ++i) img.data[i] = pixels[i] / 255.0f;
  return img;
}

void write_raw(const std::filesystem::path& path, const ImageBuffer& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  os.write("RIMG", 4);
  put_u32(os, static_cast<std::uint32_t>(img.height));
  put_u32(os, static_cast<std::uint32_t>(img.width));
  put_u32(os, static_cast<std::uint32_t>(img.channels));
  for (float v : img.data) put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) fail(ErrorKind::IoError, "write failed: " + path.string());
}

ImageBuffer read_raw(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::IoError, "cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "RIMG", 4) != 0) fail(ErrorKind::IoError, "bad raw magic: " + path.string());
  const auto h = get_u32(is), w = get_u32(is), c = get_u32(is);
  if (h == 0 || w == 0 || c == 0 || h > 1u << 16 || w > 1u << 16 || c > 64)
    fail(ErrorKind::IoError, "bad raw dimensions: " + path.string());
  ImageBuffer img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  for (float& v : img.data) v = std::bit_cast<float>(get_u32(is));
  return img;
}

ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma, int radius) {
  std::vector<double> k(2 * radius + 1);
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) s += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= s;
  const int h = img.height, w = img.width, c = img.channels;
  std::vector<double> tmp(img.data.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d)
          if (x + d >= 0 && x + d < w) acc += k[d + radius] * img.at(y, x + d, ch);
        tmp[(static_cast<std::size_t>(y) * w + x) * c + ch] = acc;
      }
  ImageBuffer out(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d)
          if (y + d >= 0 && y + d < h) acc += k[d + radius] * tmp[(static_cast<std::size_t>(y + d) * w + x) * c + ch];
        out.at(y, x, ch) = static_cast<float>(acc);
      }
  out.clamp01();
  return out;
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_dims(b)) fail(ErrorKind::ShapeMismatch, "psnr: dimensions differ");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  return mse > 0.0 ? 10.0 * std::log10(1.0 / mse) : INFINITY;
}

}  // namespace regopt
