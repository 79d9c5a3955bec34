#include "regopt/warp.hpp"

#include <cmath>

#include "regopt/errors.hpp"

namespace regopt {

double bilinear_sample(const ImageBuffer& img, double x, double y, int channel) {
  if (!(x > -1.0 && x < img.width && y > -1.0 && y < img.height)) return 0.0;
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto px = [&](int yy, int xx) -> double {
    if (xx < 0 || yy < 0 || xx >= img.width || yy >= img.height) return 0.0;
    return img.at(yy, xx, channel);
  };
  return (1.0 - fy) * ((1.0 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
         fy * ((1.0 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

std::vector<Point2> pixel_centers(int out_h, int out_w) {
  std::vector<Point2> pts;
  pts.reserve(static_cast<std::size_t>(out_h) * out_w);
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j) pts.push_back(to_normalized({static_cast<double>(j), static_cast<double>(i)}, out_h, out_w));
  return pts;
}

PointAffine normalized_to_pixel(int height, int width) {
  return {static_cast<double>(width), 0.5 * width - 0.5, static_cast<double>(height), 0.5 * height - 0.5};
}

Point2 to_pixel(Point2 p, int height, int width) { return {(p.x + 0.5) * width - 0.5, (p.y + 0.5) * height - 0.5}; }

Point2 to_normalized(Point2 p, int height, int width) {
  return {(p.x + 0.5) / width - 0.5, (p.y + 0.5) / height - 0.5};
}

ad::Var warp_template(ad::Tape& t, ad::Var tmpl, ad::Var h, int out_h, int out_w) {
  const ad::Tensor& mv = t.value(tmpl);
  if (mv.rank() != 3) fail(ErrorKind::ShapeMismatch, "warp_template: template must be [C,H,W]");
  const int n = t.value(h).dim(0);
  ad::Var t8 = dlt(t, h);
  ad::Var coords = project_points(t, t8, pixel_centers(out_h, out_w), normalized_to_pixel(mv.dim(1), mv.dim(2)));
  return ad::bilinear_sample(t, tmpl, ad::reshape(t, coords, {n, out_h, out_w, 2}));
}

ImageBuffer warp_template(const ImageBuffer& m, const ControlPoints& h, int out_h, int out_w) {
  ad::Tape t;
  ad::Var tv = t.constant(to_tensor(m, false));
  ad::Var hv = t.constant(ad::Tensor({1, 8}, std::vector<double>(h.begin(), h.end())));
  return from_tensor(t.value(warp_template(t, tv, hv, out_h, out_w)));
}

ImageBuffer concat(const ImageBuffer& a, const ImageBuffer& b) {
  if (a.height != b.height || a.width != b.width)
    fail(ErrorKind::ShapeMismatch, "concat: height/width differ");
  ImageBuffer out(a.height, a.width, a.channels + b.channels);
  const std::size_t plane = static_cast<std::size_t>(a.height) * a.width;
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < a.channels; ++c) out.data[p * out.channels + c] = a.data[p * a.channels + c];
    for (int c = 0; c < b.channels; ++c) out.data[p * out.channels + a.channels + c] = b.data[p * b.channels + c];
  }
  return out;
}

}  // namespace regopt
