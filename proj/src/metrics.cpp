#include "regopt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "regopt/errors.hpp"

namespace regopt {
namespace {

constexpr double kTiny = 1e-12;
constexpr double kFrame = 1.5;  // half-width of the 3x raster frame
constexpr int kFallbackRes = 600;

double cross(Point2 o, Point2 a, Point2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

Polygon to_polygon(const Quad& q) { return Polygon(q.begin(), q.end()); }

bool inside_convex(const Polygon& poly, Point2 p) {
  const double orient = signed_area(poly) >= 0 ? 1.0 : -1.0;
  for (std::size_t i = 0; i < poly.size(); ++i)
    if (orient * cross(poly[i], poly[(i + 1) % poly.size()], p) < 0) return false;
  return true;
}

// Maps a convex polygon through T; nullopt when any vertex lands at or
// beyond the horizon of `front` (the mapping whose w must stay positive).
std::optional<Polygon> project_front(const Polygon& poly, const Mat3& t, const Mat3& front_check,
                                     bool check_on_source) {
  Polygon out;
  out.reserve(poly.size());
  for (Point2 p : poly) {
    const double w = homogeneous_w(t, p);
    if (!(std::abs(w) > kTiny)) return std::nullopt;
    const Point2 q = regopt::apply(t, p);
    const double wf = homogeneous_w(front_check, check_on_source ? p : q);
    if (!(wf > kTiny)) return std::nullopt;
    out.push_back(q);
  }
  return out;
}

// q -> inv(T) q when it lands strictly in front of T.
std::optional<Point2> back_project(const Mat3& t, const Mat3& t_inv, Point2 q) {
  if (!(std::abs(homogeneous_w(t_inv, q)) > kTiny)) return std::nullopt;
  const Point2 p = regopt::apply(t_inv, q);
  if (!(homogeneous_w(t, p) > kTiny)) return std::nullopt;
  return p;
}

}  // namespace

Quad unit_quad() { return {{{-0.5, -0.5}, {0.5, -0.5}, {0.5, 0.5}, {-0.5, 0.5}}}; }

double signed_area(const Polygon& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Point2 a = p[i], b = p[(i + 1) % p.size()];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * s;
}

double polygon_area(const Polygon& p) { return std::abs(signed_area(p)); }

bool is_convex(const Polygon& p) {
  if (p.size() < 3) return false;
  int sign = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double c = cross(p[i], p[(i + 1) % p.size()], p[(i + 2) % p.size()]);
    if (std::abs(c) <= kTiny) continue;
    const int s = c > 0 ? 1 : -1;
    if (sign != 0 && s != sign) return false;
    sign = s;
  }
  return sign != 0;
}

Polygon clip_polygon(const Polygon& subject, const Polygon& clip) {
  if (subject.empty() || clip.size() < 3) return {};
  const double orient = signed_area(clip) >= 0 ? 1.0 : -1.0;
  Polygon out = subject;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Point2 a = clip[e], b = clip[(e + 1) % clip.size()];
    const Polygon in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Point2 p = in[i], q = in[(i + 1) % in.size()];
      const double dp = orient * cross(a, b, p), dq = orient * cross(a, b, q);
      if (dp >= 0) out.push_back(p);
      if ((dp >= 0) != (dq >= 0)) {
        const double s = dp / (dp - dq);
        out.push_back({p.x + s * (q.x - p.x), p.y + s * (q.y - p.y)});
      }
    }
  }
  if (out.size() < 3) return {};
  return out;
}

double convex_iou(const Polygon& a, const Polygon& b) {
  const double inter = polygon_area(clip_polygon(a, b));
  const double uni = polygon_area(a) + polygon_area(b) - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double raster_iou(const Region& a, const Region& b, double lo, double hi, int res) {
  const double step = (hi - lo) / res;
  long inter = 0, uni = 0;
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j) {
      const Point2 p{lo + (j + 0.5) * step, lo + (i + 0.5) * step};
      const bool ia = a(p), ib = b(p);
      inter += ia && ib;
      uni += ia || ib;
    }
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

double iou_whole_raster(const ControlPoints& h_est, const ControlPoints& h_gt, const Quad& template_bounds, int res) {
  const Polygon bounds = to_polygon(template_bounds);
  auto region = [&](const Mat3& t) {
    return [t, &bounds](Point2 p) {
      const double w = homogeneous_w(t, p);
      return w > kTiny && inside_convex(bounds, regopt::apply(t, p));
    };
  };
  return raster_iou(region(dlt(h_est)), region(dlt(h_gt)), -kFrame, kFrame, res);
}

double iou_whole(const ControlPoints& h_est, const ControlPoints& h_gt, const Quad& template_bounds) {
  const Mat3 te = dlt(h_est), tg = dlt(h_gt);
  const Polygon bounds = to_polygon(template_bounds);
  // Template -> view; every projected vertex must sit in front of the camera.
  const auto pe = project_front(bounds, invert(te), te, false);
  const auto pg = project_front(bounds, invert(tg), tg, false);
  if (pe && pg && is_convex(*pe) && is_convex(*pg)) return convex_iou(*pe, *pg);
  return iou_whole_raster(h_est, h_gt, template_bounds, kFallbackRes);
}

double iou_part_raster(const ControlPoints& h_est, const ControlPoints& h_gt, const Quad& template_bounds,
                       const Quad& view_bounds, int res) {
  const Mat3 te = dlt(h_est), tg = dlt(h_gt);
  const Mat3 te_inv = invert(te), tg_inv = invert(tg);
  const Polygon bounds = to_polygon(template_bounds), view = to_polygon(view_bounds);
  // q belongs to the region of T when inv(T) q is a view point whose
  // ground-truth template position is inside the template.
  auto region = [&](const Mat3& t, const Mat3& t_inv) {
    return [&, t, t_inv](Point2 q) {
      const auto p = back_project(t, t_inv, q);
      if (!p || !inside_convex(view, *p)) return false;
      if (!(homogeneous_w(tg, *p) > kTiny)) return false;
      return inside_convex(bounds, regopt::apply(tg, *p));
    };
  };
  return raster_iou(region(tg, tg_inv), region(te, te_inv), -kFrame, kFrame, res);
}

double iou_part(const ControlPoints& h_est, const ControlPoints& h_gt, const Quad& template_bounds,
                const Quad& view_bounds) {
  const Mat3 te = dlt(h_est), tg = dlt(h_gt);
  const Polygon bounds = to_polygon(template_bounds);
  const auto seen = project_front(to_polygon(view_bounds), tg, tg, true);
  if (seen && is_convex(*seen)) {
    const Polygon visible = clip_polygon(*seen, bounds);
    if (visible.empty()) return 0.0;
    // Visible region back to the view by the ground truth, forward by the estimate.
    const auto in_view = project_front(visible, invert(tg), tg, false);
    if (in_view) {
      const auto remapped = project_front(*in_view, te, te, true);
      if (remapped && is_convex(*remapped)) return convex_iou(visible, *remapped);
    }
  }
  return iou_part_raster(h_est, h_gt, template_bounds, view_bounds, kFallbackRes);
}

double reprojection_error(const ControlPoints& h_est, const ControlPoints& h_gt, int grid_n) {
  if (grid_n <= 0) fail(ErrorKind::InvalidConfig, "reprojection_error: grid_n must be positive");
  const Mat3 tg = dlt(h_gt), te_inv = invert(dlt(h_est));
  double total = 0.0;
  for (int i = 0; i < grid_n; ++i)
    for (int j = 0; j < grid_n; ++j) {
      const Point2 p{(j + 0.5) / grid_n - 0.5, (i + 0.5) / grid_n - 0.5};
      const Point2 back = regopt::apply(te_inv, regopt::apply(tg, p));
      total += std::hypot(back.x - p.x, back.y - p.y);
    }
  return total / (static_cast<double>(grid_n) * grid_n);
}

double intercept_error(double a_est, double b_est, double a_gt, double b_gt) {
  double worst = 0.0;
  for (double u : {0.0, 63.0})
    worst = std::max(worst, std::abs(std::tan(a_est) * u + b_est - std::tan(a_gt) * u - b_gt));
  return worst;
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::IouWhole: return "iou_whole";
    case Metric::IouPart: return "iou_part";
    case Metric::Reproj: return "reproj";
    case Metric::Intercept: return "intercept";
  }
  return "?";
}

Metric metric_from_string(std::string_view s) {
  for (Metric m : {Metric::IouWhole, Metric::IouPart, Metric::Reproj, Metric::Intercept})
    if (to_string(m) == s) return m;
  fail(ErrorKind::InvalidConfig, "unknown metric '" + std::string(s) + "'");
}

}  // namespace regopt
