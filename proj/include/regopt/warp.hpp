#pragma once

// Differentiable template warping.
//
// Pixel (i, j) of a W x H raster sits at normalized ((j + 0.5)/W - 0.5,
// (i + 0.5)/H - 0.5). Continuous pixel coordinates put pixel centers on
// integers; samples outside the raster read as zero.

#include <vector>

#include "regopt/autodiff.hpp"
#include "regopt/geometry.hpp"
#include "regopt/image.hpp"

namespace regopt {

/// Bilinear interpolation at continuous pixel coordinates (x, y).
double bilinear_sample(const ImageBuffer& img, double x, double y, int channel);

/// Normalized centers of an out_h x out_w raster, row-major.
std::vector<Point2> pixel_centers(int out_h, int out_w);
/// Normalized coordinates -> continuous pixel coordinates of a raster.
PointAffine normalized_to_pixel(int height, int width);

Point2 to_pixel(Point2 normalized, int height, int width);
Point2 to_normalized(Point2 pixel, int height, int width);

/// tmpl [C,Ht,Wt], h [N,8] -> [N,C,out_h,out_w].
ad::Var warp_template(ad::Tape& t, ad::Var tmpl, ad::Var h, int out_h, int out_w);

ImageBuffer warp_template(const ImageBuffer& m, const ControlPoints& h, int out_h, int out_w);

/// Channel concatenation, a first. Throws ShapeMismatch.
ImageBuffer concat(const ImageBuffer& a, const ImageBuffer& b);

}  // namespace regopt
