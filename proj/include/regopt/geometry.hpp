#pragma once

// Four-point homography parameterization.
//
// h = [u1,v1,u2,v2,u3,v3,u4,v4] holds the template-plane positions of four
// fixed view-plane reference points. All coordinates are normalized: the
// view and the template raster each span [-0.5, 0.5]^2, origin at the center,
// y pointing down. T maps view coordinates to template coordinates and is
// stored row-major with T[2][2] = 1.

#include <array>
#include <vector>

#include "regopt/autodiff.hpp"

namespace regopt {

class Rng;

using ControlPoints = std::array<double, 8>;
using Mat3 = std::array<double, 9>;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Corners of the lower three-fifths of the view.
inline constexpr ControlPoints kRefPoints = {-0.5, 0.1, -0.5, 0.5, 0.5, 0.5, 0.5, 0.1};

struct PerturbConfig {
  double delta_g = 0.05;
  double delta_l = 0.02;
};

Mat3 identity3();
Mat3 multiply(const Mat3& a, const Mat3& b);
Mat3 translation(double tx, double ty);
double determinant(const Mat3& m);

/// Homography taking ref[k] to h[k]. Throws DegenerateHomography.
Mat3 dlt(const ControlPoints& ref, const ControlPoints& h);
inline Mat3 dlt(const ControlPoints& h) { return dlt(kRefPoints, h); }

/// Throws PointAtInfinity when |w| <= 1e-12.
Point2 apply(const Mat3& t, Point2 p);
/// Returns the homogeneous w of T*[p,1] without dividing.
double homogeneous_w(const Mat3& t, Point2 p);

/// Inverse renormalized to [2][2] = 1. Throws DegenerateHomography.
Mat3 invert(const Mat3& t);

/// Control points of T: T applied to the reference points.
ControlPoints control_points(const Mat3& t);

/// Hierarchical uniform noise. Draw order: global x, global y, then the eight
/// local offsets in coordinate order.
ControlPoints perturb(const ControlPoints& h_gt, const PerturbConfig& cfg, Rng& rng);

/// Adds (tx, ty) to all four control points.
ControlPoints shifted(const ControlPoints& h, double tx, double ty);

/// Max |a[i] - b[i]|.
double linf(const ControlPoints& a, const ControlPoints& b);

// ---------------------------------------------------------------------------
// Taped versions. Batched over the leading axis.

/// h [N,8] -> the eight free entries of T [N,8] (T[2][2] = 1 implied),
/// through solve-linear-8x8 so gradients reach h.
ad::Var dlt(ad::Tape& t, ad::Var h);

/// Affine applied to projected points: (x*sx + ox, y*sy + oy).
struct PointAffine {
  double sx = 1.0, ox = 0.0, sy = 1.0, oy = 0.0;
};

/// T8 [N,8], pts [P,2] (constant) -> [N,P,2]. Points whose homogeneous w is
/// not above 1e-12 lie beyond the horizon; they are written as a far
/// out-of-range sentinel and receive no gradient.
ad::Var project_points(ad::Tape& t, ad::Var t8, const std::vector<Point2>& pts, PointAffine affine = {});

inline constexpr double kBeyondHorizon = -1e6;

}  // namespace regopt
