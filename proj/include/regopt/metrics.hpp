#pragma once

// Ground-truth registration error metrics.
//
// IoU_whole is measured in the view plane: the full template boundary is
// projected into the view by each homography and the two regions compared.
// IoU_part is measured in the template plane over the visible region only.
// Regions whose projection is non-convex or crosses the horizon fall back to
// raster IoU over a 3x-extended frame.

#include <array>
#include <functional>
#include <string_view>
#include <vector>

#include "regopt/geometry.hpp"

namespace regopt {

using Polygon = std::vector<Point2>;
using Quad = std::array<Point2, 4>;

/// [-0.5, 0.5]^2, counter-clockwise in a y-down frame read as y-up.
Quad unit_quad();

double signed_area(const Polygon& p);
/// |shoelace| / 2.
double polygon_area(const Polygon& p);
bool is_convex(const Polygon& p);

/// Sutherland-Hodgman: subject clipped by a convex polygon of either winding.
Polygon clip_polygon(const Polygon& subject, const Polygon& clip);

/// IoU of two convex polygons.
double convex_iou(const Polygon& a, const Polygon& b);

/// Region membership predicate for raster IoU.
using Region = std::function<bool(Point2)>;
/// IoU by sampling res x res cell centers of [lo, hi]^2.
double raster_iou(const Region& a, const Region& b, double lo, double hi, int res);

double iou_whole(const ControlPoints& h_est, const ControlPoints& h_gt, const Quad& template_bounds = unit_quad());
double iou_part(const ControlPoints& h_est, const ControlPoints& h_gt, const Quad& template_bounds = unit_quad(),
                const Quad& view_bounds = unit_quad());

/// Raster variants over a res x res grid of the 3x frame; used as fallbacks.
double iou_whole_raster(const ControlPoints& h_est, const ControlPoints& h_gt, const Quad& template_bounds, int res);
double iou_part_raster(const ControlPoints& h_est, const ControlPoints& h_gt, const Quad& template_bounds,
                       const Quad& view_bounds, int res);

/// Mean distance, in normalized view units, between grid points p and
/// inv(T_est) * T_gt * p over a grid_n x grid_n grid of pixel centers.
double reprojection_error(const ControlPoints& h_est, const ControlPoints& h_gt, int grid_n = 64);

/// Max over u in {0, 63} of the vertical gap between v = tan(a)u + b lines.
double intercept_error(double a_est, double b_est, double a_gt, double b_gt);

enum class Metric { IouWhole, IouPart, Reproj, Intercept };

std::string_view to_string(Metric m);
/// Throws InvalidConfig.
Metric metric_from_string(std::string_view s);

}  // namespace regopt
