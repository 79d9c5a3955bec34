#include "regopt/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "regopt/errors.hpp"
#include "regopt/rng.hpp"

namespace regopt {
namespace {

constexpr double kTiny = 1e-12;

void build_system(const ControlPoints& ref, const ControlPoints& h, double a[64], double b[8]) {
  std::fill_n(a, 64, 0.0);
  for (int k = 0; k < 4; ++k) {
    const double u = ref[2 * k], v = ref[2 * k + 1];
    const double x = h[2 * k], y = h[2 * k + 1];
    double* r0 = a + (2 * k) * 8;
    double* r1 = a + (2 * k + 1) * 8;
    r0[0] = u, r0[1] = v, r0[2] = 1.0, r0[6] = -u * x, r0[7] = -v * x;
    r1[3] = u, r1[4] = v, r1[5] = 1.0, r1[6] = -u * y, r1[7] = -v * y;
    b[2 * k] = x;
    b[2 * k + 1] = y;
  }
}

}  // namespace

Mat3 identity3() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 multiply(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
      c[i * 3 + j] = s;
    }
  return c;
}

Mat3 translation(double tx, double ty) { return {1, 0, tx, 0, 1, ty, 0, 0, 1}; }

double determinant(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 dlt(const ControlPoints& ref, const ControlPoints& h) {
  double a[64], b[8], x[8];
  build_system(ref, h, a, b);
  ad::solve8(a, b, x);
  Mat3 t{x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], 1.0};
  if (!(std::abs(determinant(t)) > kTiny)) fail(ErrorKind::DegenerateHomography, "dlt: singular homography");
  return t;
}

double homogeneous_w(const Mat3& t, Point2 p) { return t[6] * p.x + t[7] * p.y + t[8]; }

Point2 apply(const Mat3& t, Point2 p) {
  const double w = homogeneous_w(t, p);
  if (!(std::abs(w) > kTiny)) fail(ErrorKind::PointAtInfinity, "apply: point maps to infinity");
  return {(t[0] * p.x + t[1] * p.y + t[2]) / w, (t[3] * p.x + t[4] * p.y + t[5]) / w};
}

Mat3 invert(const Mat3& m) {
  const double det = determinant(m);
  if (!(std::abs(det) > kTiny)) fail(ErrorKind::DegenerateHomography, "invert: |det| <= 1e-12");
  Mat3 adj{m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
           m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
           m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3]};
  const double s = adj[8];
  if (!(std::abs(s / det) > kTiny)) fail(ErrorKind::DegenerateHomography, "invert: inverse has [2][2] = 0");
  for (double& v : adj) v /= s;
  return adj;
}

ControlPoints control_points(const Mat3& t) {
  ControlPoints h{};
  for (int k = 0; k < 4; ++k) {
    const Point2 p = apply(t, {kRefPoints[2 * k], kRefPoints[2 * k + 1]});
    h[2 * k] = p.x;
    h[2 * k + 1] = p.y;
  }
  return h;
}

ControlPoints perturb(const ControlPoints& h_gt, const PerturbConfig& cfg, Rng& rng) {
  const double gx = rng.uniform(-cfg.delta_g, cfg.delta_g);
  const double gy = rng.uniform(-cfg.delta_g, cfg.delta_g);
  ControlPoints out = h_gt;
  for (int i = 0; i < 8; ++i) out[i] += (i % 2 == 0 ? gx : gy) + rng.uniform(-cfg.delta_l, cfg.delta_l);
  return out;
}

ControlPoints shifted(const ControlPoints& h, double tx, double ty) {
  ControlPoints out = h;
  for (int k = 0; k < 4; ++k) {
    out[2 * k] += tx;
    out[2 * k + 1] += ty;
  }
  return out;
}

double linf(const ControlPoints& a, const ControlPoints& b) {
  double m = 0.0;
  for (int i = 0; i < 8; ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ad::Var dlt(ad::Tape& t, ad::Var h) {
  const ad::Tensor& hv = t.value(h);
  if (hv.rank() != 2 || hv.dim(1) != 8)
    fail(ErrorKind::ShapeMismatch, "dlt: expected [N,8], got " + ad::shape_string(hv.shape()));
  const int n = hv.dim(0);
  // A(h) = C0 + h * J, linear in h.
  ad::Tensor j({8, 64}), c0({64});
  for (int k = 0; k < 4; ++k) {
    const double u = kRefPoints[2 * k], v = kRefPoints[2 * k + 1];
    const int r0 = (2 * k) * 8, r1 = (2 * k + 1) * 8;
    c0[r0 + 0] = u, c0[r0 + 1] = v, c0[r0 + 2] = 1.0;
    c0[r1 + 3] = u, c0[r1 + 4] = v, c0[r1 + 5] = 1.0;
    j[(2 * k) * 64 + r0 + 6] = -u, j[(2 * k) * 64 + r0 + 7] = -v;
    j[(2 * k + 1) * 64 + r1 + 6] = -u, j[(2 * k + 1) * 64 + r1 + 7] = -v;
  }
  ad::Var a = ad::add(t, ad::matmul(t, h, t.constant(std::move(j))), t.constant(std::move(c0)));
  ad::Var x = ad::solve_linear8(t, ad::reshape(t, a, {n, 8, 8}), h);
  const ad::Tensor& xv = t.value(x);
  for (int i = 0; i < n; ++i) {
    const double* p = xv.data() + i * 8;
    const Mat3 m{p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], 1.0};
    if (!(std::abs(determinant(m)) > kTiny)) fail(ErrorKind::DegenerateHomography, "dlt: singular homography");
  }
  return x;
}

ad::Var project_points(ad::Tape& t, ad::Var t8, const std::vector<Point2>& pts, PointAffine af) {
  const ad::Tensor& tv = t.value(t8);
  if (tv.rank() != 2 || tv.dim(1) != 8)
    fail(ErrorKind::ShapeMismatch, "project_points: expected [N,8], got " + ad::shape_string(tv.shape()));
  const int n = tv.dim(0);
  const int np = static_cast<int>(pts.size());
  ad::Tensor out({n, np, 2});
  for (int i = 0; i < n; ++i) {
    const double* m = tv.data() + i * 8;
    for (int k = 0; k < np; ++k) {
      const double u = pts[k].x, v = pts[k].y;
      const double w = m[6] * u + m[7] * v + 1.0;
      double* o = out.data() + (static_cast<std::size_t>(i) * np + k) * 2;
      if (!(w > kTiny)) {
        o[0] = o[1] = kBeyondHorizon;
        continue;
      }
      o[0] = (m[0] * u + m[1] * v + m[2]) / w * af.sx + af.ox;
      o[1] = (m[3] * u + m[4] * v + m[5]) / w * af.sy + af.oy;
    }
  }
  return t.record(ad::OpKind::Custom, {t8}, std::move(out),
                  [t8, pts, af, n, np](const ad::Tape& tp, const ad::Tensor& g, std::span<ad::Tensor* const> gin) {
                    const ad::Tensor& tv = tp.value(t8);
                    for (int i = 0; i < n; ++i) {
                      const double* m = tv.data() + i * 8;
                      double* gm = gin[0]->data() + i * 8;
                      for (int k = 0; k < np; ++k) {
                        const double u = pts[k].x, v = pts[k].y;
                        const double w = m[6] * u + m[7] * v + 1.0;
                        if (!(w > kTiny)) continue;
                        const double X = m[0] * u + m[1] * v + m[2];
                        const double Y = m[3] * u + m[4] * v + m[5];
                        const std::size_t o = (static_cast<std::size_t>(i) * np + k) * 2;
                        const double gx = g[o] * af.sx / w, gy = g[o + 1] * af.sy / w;
                        gm[0] += gx * u, gm[1] += gx * v, gm[2] += gx;
                        gm[3] += gy * u, gm[4] += gy * v, gm[5] += gy;
                        const double gw = -(gx * X + gy * Y) / w;
                        gm[6] += gw * u, gm[7] += gw * v;
                      }
                    }
                  });
}

}  // namespace regopt
