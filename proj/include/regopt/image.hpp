#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "regopt/autodiff.hpp"

namespace regopt {

/// H x W x C samples in [0,1], row-major, channel-last.
struct ImageBuffer {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  ImageBuffer() = default;
  ImageBuffer(int h, int w, int c, float fill = 0.0f);

  float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool same_dims(const ImageBuffer& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  void clamp01();
};

/// [1,C,H,W] (or [C,H,W] with batch = false).
ad::Tensor to_tensor(const ImageBuffer& img, bool batch = true);
/// Stacks equally sized images into [N,C,H,W].
ad::Tensor stack(std::span<const ImageBuffer> imgs);
/// Sample `index` of an [N,C,H,W] tensor (or a [C,H,W] tensor), clamped to [0,1].
ImageBuffer from_tensor(const ad::Tensor& t, int index = 0);

/// 8-bit PNG; 1 channel is written as gray, 3 as RGB.
void write_png(const std::filesystem::path& path, const ImageBuffer& img);
ImageBuffer read_png(const std::filesystem::path& path);

/// Raw sidecar: "RIMG", u32 h, u32 w, u32 c, little-endian f32 samples.
void write_raw(const std::filesystem::path& path, const ImageBuffer& img);
ImageBuffer read_raw(const std::filesystem::path& path);

/// Separable Gaussian blur with zero padding; kernel size 2*radius+1.
ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma, int radius);

/// Peak signal-to-noise ratio in dB for [0,1] images.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

}  // namespace regopt
