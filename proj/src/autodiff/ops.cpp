#include <algorithm>
#include <cmath>
#include <limits>

#include "gemm.hpp"
#include "regopt/autodiff.hpp"
#include "regopt/errors.hpp"

namespace regopt::ad {
namespace {

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  fail(ErrorKind::ShapeMismatch,
       std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

template <class F>
Var unary(Tape& t, OpKind kind, Var x, F&& f, BackwardFn bw) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return t.record(kind, {x}, std::move(out), std::move(bw));
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!is_suffix(av.shape(), bv.shape())) shape_error("add", av.shape(), bv.shape());
  const std::size_t bn = bv.size();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % bn];
  return t.record(OpKind::Add, {a, b}, std::move(out),
                  [bn](const Tape&, const Tensor& g, std::span<Tensor* const> gin) {
                    if (gin[0]) gin[0]->accumulate(g);
                    if (gin[1])
                      for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i % bn] += g[i];
                  });
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!is_suffix(av.shape(), bv.shape())) shape_error("sub", av.shape(), bv.shape());
  const std::size_t bn = bv.size();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i % bn];
  return t.record(OpKind::Sub, {a, b}, std::move(out),
                  [bn](const Tape&, const Tensor& g, std::span<Tensor* const> gin) {
                    if (gin[0]) gin[0]->accumulate(g);
                    if (gin[1])
                      for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i % bn] -= g[i];
                  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.shape() != bv.shape()) shape_error("mul", av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return t.record(OpKind::Mul, {a, b}, std::move(out),
                  [a, b](const Tape& tp, const Tensor& g, std::span<Tensor* const> gin) {
                    const Tensor& av = tp.value(a);
                    const Tensor& bv = tp.value(b);
                    if (gin[0])
                      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * bv[i];
                    if (gin[1])
                      for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * av[i];
                  });
}

Var scale(Tape& t, Var a, double s) {
  return unary(t, OpKind::ScalarMul, a, [s](double x) { return s * x; },
               [s](const Tape&, const Tensor& g, std::span<Tensor* const> gin) {
                 for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += s * g[i];
               });
}

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) shape_error("matmul", av.shape(), bv.shape());
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  detail::gemm_acc(m, n, k, av.data(), k, bv.data(), n, out.data(), n);
  return t.record(OpKind::Matmul, {a, b}, std::move(out),
                  [a, b, m, n, k](const Tape& tp, const Tensor& g, std::span<Tensor* const> gin) {
                    const Tensor& av = tp.value(a);
                    const Tensor& bv = tp.value(b);
                    if (gin[0]) {
                      std::vector<double> bt(static_cast<std::size_t>(n) * k);
                      detail::transpose(k, n, bv.data(), bt.data());
                      detail::gemm_acc(m, k, n, g.data(), n, bt.data(), k, gin[0]->data(), k);
                    }
                    if (gin[1]) {
                      std::vector<double> at(static_cast<std::size_t>(k) * m);
                      detail::transpose(m, k, av.data(), at.data());
                      detail::gemm_acc(k, n, m, at.data(), m, g.data(), n, gin[1]->data(), n);
                    }
                  });
}

namespace {

struct ConvGeom {
  int c, h, w, ks, stride, pad, ho, wo;
  int kk() const { return c * ks * ks; }
  int q() const { return ho * wo; }
};

// Output columns [lo, hi) whose input column ox*stride - pad + k is in range.
inline void valid_range(int k, int stride, int pad, int in, int out, int& lo, int& hi) {
  const int first = pad - k, last = in - 1 + pad - k;
  lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  hi = last < 0 ? 0 : std::min(out, last / stride + 1);
  lo = std::min(lo, hi);
}

// Column buffer [kk, q] for one sample.
void im2col(const ConvGeom& g, const double* src, double* col) {
  const int q = g.q();
  for (int ci = 0; ci < g.c; ++ci) {
    const double* plane = src + static_cast<long>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.ks; ++ky) {
      for (int kx = 0; kx < g.ks; ++kx) {
        double* dst = col + static_cast<long>((ci * g.ks + ky) * g.ks + kx) * q;
        int lo, hi;
        valid_range(kx, g.stride, g.pad, g.w, g.wo, lo, hi);
        for (int oy = 0; oy < g.ho; ++oy) {
          double* d = dst + oy * g.wo;
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(d, g.wo, 0.0);
            continue;
          }
          std::fill_n(d, lo, 0.0);
          const double* s = plane + iy * g.w;
          const int off = kx - g.pad;
          if (g.stride == 1) {
            for (int ox = lo; ox < hi; ++ox) d[ox] = s[ox + off];
          } else {
            for (int ox = lo; ox < hi; ++ox) d[ox] = s[ox * g.stride + off];
          }
          std::fill(d + hi, d + g.wo, 0.0);
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* col, double* dst) {
  const int q = g.q();
  for (int ci = 0; ci < g.c; ++ci) {
    double* plane = dst + static_cast<long>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.ks; ++ky) {
      for (int kx = 0; kx < g.ks; ++kx) {
        const double* src = col + static_cast<long>((ci * g.ks + ky) * g.ks + kx) * q;
        int lo, hi;
        valid_range(kx, g.stride, g.pad, g.w, g.wo, lo, hi);
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* s = src + oy * g.wo;
          double* d = plane + iy * g.w;
          const int off = kx - g.pad;
          for (int ox = lo; ox < hi; ++ox) d[ox * g.stride + off] += s[ox];
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Tape& t, Var x, Var w, Var bias, int stride, int pad) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3))
    shape_error("conv2d", xv.shape(), wv.shape());
  if (stride < 1 || pad < 0) fail(ErrorKind::ShapeMismatch, "conv2d: stride must be >= 1 and pad >= 0");
  const int n = xv.dim(0), co = wv.dim(0), ks = wv.dim(2);
  ConvGeom geo{xv.dim(1), xv.dim(2), xv.dim(3), ks, stride, pad, 0, 0};
  geo.ho = (geo.h + 2 * pad - ks) / stride + 1;
  geo.wo = (geo.w + 2 * pad - ks) / stride + 1;
  if (geo.ho <= 0 || geo.wo <= 0) shape_error("conv2d", xv.shape(), wv.shape());
  if (bias.valid() && (t.value(bias).rank() != 1 || t.value(bias).dim(0) != co))
    shape_error("conv2d bias", wv.shape(), t.value(bias).shape());

  const int kk = geo.kk(), q = geo.q();
  const long in_stride = static_cast<long>(geo.c) * geo.h * geo.w;
  std::vector<double> col(static_cast<std::size_t>(kk) * q);
  Tensor out({n, co, geo.ho, geo.wo});
  for (int ni = 0; ni < n; ++ni) {
    double* dst = out.data() + static_cast<long>(ni) * co * q;
    if (bias.valid()) {
      const Tensor& bv = t.value(bias);
      for (int o = 0; o < co; ++o) std::fill_n(dst + static_cast<long>(o) * q, q, bv[o]);
    }
    im2col(geo, xv.data() + ni * in_stride, col.data());
    detail::gemm_acc(co, q, kk, wv.data(), kk, col.data(), q, dst, q);
  }

  std::vector<Var> inputs{x, w};
  if (bias.valid()) inputs.push_back(bias);
  return t.record(
      OpKind::Conv2d, std::move(inputs), std::move(out),
      [x, w, geo, n, co, in_stride](const Tape& tp, const Tensor& g, std::span<Tensor* const> gin) {
        const int kk = geo.kk(), q = geo.q();
        if (gin.size() > 2 && gin[2]) {
          for (int o = 0; o < co; ++o) {
            double s = 0.0;
            for (int ni = 0; ni < n; ++ni) {
              const double* row = g.data() + (static_cast<long>(ni) * co + o) * q;
              for (int i = 0; i < q; ++i) s += row[i];
            }
            (*gin[2])[o] += s;
          }
        }
        std::vector<double> col, w_t, gcol;
        if (gin[1]) col.resize(static_cast<std::size_t>(kk) * q);
        if (gin[0]) {
          w_t.resize(static_cast<std::size_t>(kk) * co);
          detail::transpose(co, kk, tp.value(w).data(), w_t.data());
          gcol.resize(static_cast<std::size_t>(kk) * q);
        }
        const Tensor& xv = tp.value(x);
        for (int ni = 0; ni < n; ++ni) {
          const double* go = g.data() + static_cast<long>(ni) * co * q;
          if (gin[1]) {
            im2col(geo, xv.data() + ni * in_stride, col.data());
            detail::gemm_abt_acc(co, kk, q, go, q, col.data(), q, gin[1]->data(), kk);
          }
          if (gin[0]) {
            detail::gemm_set(kk, q, co, w_t.data(), co, go, q, gcol.data(), q);
            col2im_add(geo, gcol.data(), gin[0]->data() + ni * in_stride);
          }
        }
      });
}

Var dense(Tape& t, Var x, Var w, Var bias) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1)) shape_error("dense", xv.shape(), wv.shape());
  const int n = xv.dim(0), in = xv.dim(1), o = wv.dim(0);
  if (bias.valid() && (t.value(bias).rank() != 1 || t.value(bias).dim(0) != o))
    shape_error("dense bias", wv.shape(), t.value(bias).shape());
  Tensor out({n, o});
  if (bias.valid()) {
    const Tensor& bv = t.value(bias);
    for (int i = 0; i < n; ++i) std::copy_n(bv.data(), o, out.data() + static_cast<long>(i) * o);
  }
  std::vector<double> w_t(static_cast<std::size_t>(in) * o);
  detail::transpose(o, in, wv.data(), w_t.data());
  detail::gemm_acc(n, o, in, xv.data(), in, w_t.data(), o, out.data(), o);
  std::vector<Var> inputs{x, w};
  if (bias.valid()) inputs.push_back(bias);
  return t.record(OpKind::Dense, std::move(inputs), std::move(out),
                  [x, w, n, in, o](const Tape& tp, const Tensor& g, std::span<Tensor* const> gin) {
                    if (gin[0]) {
                      detail::gemm_acc(n, in, o, g.data(), o, tp.value(w).data(), in, gin[0]->data(), in);
                    }
                    if (gin[1]) {
                      std::vector<double> g_t(static_cast<std::size_t>(o) * n);
                      detail::transpose(n, o, g.data(), g_t.data());
                      detail::gemm_acc(o, in, n, g_t.data(), n, tp.value(x).data(), in, gin[1]->data(), in);
                    }
                    if (gin.size() > 2 && gin[2]) {
                      for (int i = 0; i < n; ++i)
                        for (int j = 0; j < o; ++j) (*gin[2])[j] += g[static_cast<std::size_t>(i) * o + j];
                    }
                  });
}

Var relu(Tape& t, Var x) {
  return unary(t, OpKind::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
               [x](const Tape& tp, const Tensor& g, std::span<Tensor* const> gin) {
                 const Tensor& xv = tp.value(x);
                 for (std::size_t i = 0; i < g.size(); ++i)
                   if (xv[i] > 0.0) (*gin[0])[i] += g[i];
               });
}

Var leaky_relu(Tape& t, Var x, double slope) {
  return unary(t, OpKind::LeakyRelu, x, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [x, slope](const Tape& tp, const Tensor& g, std::span<Tensor* const> gin) {
                 const Tensor& xv = tp.value(x);
                 for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += xv[i] > 0.0 ? g[i] : slope * g[i];
               });
}

Var sigmoid(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  const int self = static_cast<int>(t.size());
  return t.record(OpKind::Sigmoid, {x}, std::move(out),
                  [self](const Tape& tp, const Tensor& g, std::span<Tensor* const> gin) {
                    const Tensor& y = tp.value(Var{self});
                    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * y[i] * (1.0 - y[i]);
                  });
}

Var square(Tape& t, Var x) {
  return unary(t, OpKind::Square, x, [](double v) { return v * v; },
               [x](const Tape& tp, const Tensor& g, std::span<Tensor* const> gin) {
                 const Tensor& xv = tp.value(x);
                 for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += 2.0 * xv[i] * g[i];
               });
}

Var sum(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
  return t.record(OpKind::Sum, {x}, Tensor::scalar(s),
                  [](const Tape&, const Tensor& g, std::span<Tensor* const> gin) {
                    const double gv = g[0];
                    for (std::size_t i = 0; i < gin[0]->size(); ++i) (*gin[0])[i] += gv;
                  });
}

Var mean(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
  const double inv = 1.0 / static_cast<double>(xv.size());
  return t.record(OpKind::Mean, {x}, Tensor::scalar(s * inv),
                  [inv](const Tape&, const Tensor& g, std::span<Tensor* const> gin) {
                    const double gv = g[0] * inv;
                    for (std::size_t i = 0; i < gin[0]->size(); ++i) (*gin[0])[i] += gv;
                  });
}

Var l2_squared_distance(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.shape() != bv.shape()) shape_error("l2-squared-distance", av.shape(), bv.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  return t.record(OpKind::L2SquaredDistance, {a, b}, Tensor::scalar(s),
                  [a, b](const Tape& tp, const Tensor& g, std::span<Tensor* const> gin) {
                    const Tensor& av = tp.value(a);
                    const Tensor& bv = tp.value(b);
                    for (std::size_t i = 0; i < av.size(); ++i) {
                      const double d = 2.0 * g[0] * (av[i] - bv[i]);
                      if (gin[0]) (*gin[0])[i] += d;
                      if (gin[1]) (*gin[1])[i] -= d;
                    }
                  });
}

Var max_pool2(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 4 || xv.dim(2) < 2 || xv.dim(3) < 2) shape_error("max-pool", xv.shape(), {2, 2});
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int ho = h / 2, wo = w / 2;
  Tensor out({n, c, ho, wo});
  std::vector<int> argmax(out.size());
  std::size_t o = 0;
  for (int p = 0; p < n * c; ++p) {
    const double* src = xv.data() + static_cast<long>(p) * h * w;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox, ++o) {
        int best = (2 * oy) * w + 2 * ox;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (src[idx] > src[best]) best = idx;
          }
        out[o] = src[best];
        argmax[o] = p * h * w + best;
      }
    }
  }
  return t.record(OpKind::MaxPool2, {x}, std::move(out),
                  [argmax = std::move(argmax)](const Tape&, const Tensor& g, std::span<Tensor* const> gin) {
                    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[argmax[i]] += g[i];
                  });
}

Var bilinear_sample(Tape& t, Var img, Var coords) {
  const Tensor& iv = t.value(img);
  const Tensor& cv = t.value(coords);
  if ((iv.rank() != 3 && iv.rank() != 4) || cv.rank() != 4 || cv.dim(3) != 2)
    shape_error("bilinear-sample", iv.shape(), cv.shape());
  const bool shared = iv.rank() == 3;
  const int n = cv.dim(0), ho = cv.dim(1), wo = cv.dim(2);
  const int c = shared ? iv.dim(0) : iv.dim(1);
  const int h = shared ? iv.dim(1) : iv.dim(2);
  const int w = shared ? iv.dim(2) : iv.dim(3);
  if (!shared && iv.dim(0) != n) shape_error("bilinear-sample", iv.shape(), cv.shape());
  const int q = ho * wo;
  const long plane = static_cast<long>(h) * w;

  Tensor out({n, c, ho, wo});
  for (int ni = 0; ni < n; ++ni) {
    const double* base = iv.data() + (shared ? 0 : static_cast<long>(ni) * c * plane);
    for (int p = 0; p < q; ++p) {
      const double x = cv[(static_cast<std::size_t>(ni) * q + p) * 2];
      const double y = cv[(static_cast<std::size_t>(ni) * q + p) * 2 + 1];
      if (!(x > -1.0 && x < w && y > -1.0 && y < h)) continue;  // all four taps outside (or NaN)
      const int x0 = static_cast<int>(std::floor(x));
      const int y0 = static_cast<int>(std::floor(y));
      const double fx = x - x0, fy = y - y0;
      const bool in_x0 = x0 >= 0, in_x1 = x0 + 1 < w, in_y0 = y0 >= 0, in_y1 = y0 + 1 < h;
      for (int ci = 0; ci < c; ++ci) {
        const double* pl = base + ci * plane;
        const double v00 = (in_y0 && in_x0) ? pl[y0 * w + x0] : 0.0;
        const double v01 = (in_y0 && in_x1) ? pl[y0 * w + x0 + 1] : 0.0;
        const double v10 = (in_y1 && in_x0) ? pl[(y0 + 1) * w + x0] : 0.0;
        const double v11 = (in_y1 && in_x1) ? pl[(y0 + 1) * w + x0 + 1] : 0.0;
        out[(static_cast<std::size_t>(ni) * c + ci) * q + p] =
            (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
      }
    }
  }
  return t.record(
      OpKind::BilinearSample, {img, coords}, std::move(out),
      [img, coords, shared, n, c, h, w, q, plane](const Tape& tp, const Tensor& g, std::span<Tensor* const> gin) {
        const Tensor& iv = tp.value(img);
        const Tensor& cv = tp.value(coords);
        for (int ni = 0; ni < n; ++ni) {
          const long off = shared ? 0 : static_cast<long>(ni) * c * plane;
          const double* base = iv.data() + off;
          for (int p = 0; p < q; ++p) {
            const std::size_t ci2 = (static_cast<std::size_t>(ni) * q + p) * 2;
            const double x = cv[ci2];
            const double y = cv[ci2 + 1];
            if (!(x > -1.0 && x < w && y > -1.0 && y < h)) continue;
            const int x0 = static_cast<int>(std::floor(x));
            const int y0 = static_cast<int>(std::floor(y));
            const double fx = x - x0, fy = y - y0;
            const bool in_x0 = x0 >= 0, in_x1 = x0 + 1 < w, in_y0 = y0 >= 0, in_y1 = y0 + 1 < h;
            double gx = 0.0, gy = 0.0;
            for (int ci = 0; ci < c; ++ci) {
              const double go = g[(static_cast<std::size_t>(ni) * c + ci) * q + p];
              const double* pl = base + ci * plane;
              const double v00 = (in_y0 && in_x0) ? pl[y0 * w + x0] : 0.0;
              const double v01 = (in_y0 && in_x1) ? pl[y0 * w + x0 + 1] : 0.0;
              const double v10 = (in_y1 && in_x0) ? pl[(y0 + 1) * w + x0] : 0.0;
              const double v11 = (in_y1 && in_x1) ? pl[(y0 + 1) * w + x0 + 1] : 0.0;
              gx += go * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
              gy += go * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
              if (gin[0]) {
                double* gp = gin[0]->data() + off + ci * plane;
                if (in_y0 && in_x0) gp[y0 * w + x0] += go * (1.0 - fx) * (1.0 - fy);
                if (in_y0 && in_x1) gp[y0 * w + x0 + 1] += go * fx * (1.0 - fy);
                if (in_y1 && in_x0) gp[(y0 + 1) * w + x0] += go * (1.0 - fx) * fy;
                if (in_y1 && in_x1) gp[(y0 + 1) * w + x0 + 1] += go * fx * fy;
              }
            }
            if (gin[1]) {
              (*gin[1])[ci2] += gx;
              (*gin[1])[ci2 + 1] += gy;
            }
          }
        }
      });
}

namespace {

// Solves a x = b in place (a row-major 8x8) with partial pivoting.
void solve8_inplace(double a[64], double b[8], double x[8]) {
  for (int col = 0; col < 8; ++col) {
    int piv = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(a[r * 8 + col]) > std::abs(a[piv * 8 + col])) piv = r;
    if (!(std::abs(a[piv * 8 + col]) > 1e-12))
      fail(ErrorKind::DegenerateHomography, "8x8 system is singular (pivot below 1e-12)");
    if (piv != col) {
      for (int k = 0; k < 8; ++k) std::swap(a[col * 8 + k], a[piv * 8 + k]);
      std::swap(b[col], b[piv]);
    }
    const double inv = 1.0 / a[col * 8 + col];
    for (int r = col + 1; r < 8; ++r) {
      const double f = a[r * 8 + col] * inv;
      if (f == 0.0) continue;
      for (int k = col; k < 8; ++k) a[r * 8 + k] -= f * a[col * 8 + k];
      b[r] -= f * b[col];
    }
  }
  for (int r = 7; r >= 0; --r) {
    double s = b[r];
    for (int k = r + 1; k < 8; ++k) s -= a[r * 8 + k] * x[k];
    x[r] = s / a[r * 8 + r];
  }
}

}  // namespace

void solve8(const double* a, const double* b, double* x) {
  double m[64], r[8];
  std::copy_n(a, 64, m);
  std::copy_n(b, 8, r);
  solve8_inplace(m, r, x);
}

Var solve_linear8(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  const bool batched = av.rank() == 3;
  const bool ok = batched ? (av.dim(1) == 8 && av.dim(2) == 8 && bv.rank() == 2 && bv.dim(0) == av.dim(0) &&
                             bv.dim(1) == 8)
                          : (av.rank() == 2 && av.dim(0) == 8 && av.dim(1) == 8 && bv.rank() == 1 && bv.dim(0) == 8);
  if (!ok) shape_error("solve-linear-8x8", av.shape(), bv.shape());
  const int n = batched ? av.dim(0) : 1;
  Tensor out(bv.shape());
  for (int i = 0; i < n; ++i) {
    double m[64], r[8];
    std::copy_n(av.data() + i * 64, 64, m);
    std::copy_n(bv.data() + i * 8, 8, r);
    solve8_inplace(m, r, out.data() + i * 8);
  }
  const int self = static_cast<int>(t.size());
  return t.record(OpKind::SolveLinear8, {a, b}, std::move(out),
                  [a, n, self](const Tape& tp, const Tensor& g, std::span<Tensor* const> gin) {
                    const Tensor& av = tp.value(a);
                    const Tensor& xv = tp.value(Var{self});
                    for (int i = 0; i < n; ++i) {
                      double at[64], gx[8], gb[8];
                      for (int r = 0; r < 8; ++r)
                        for (int c = 0; c < 8; ++c) at[r * 8 + c] = av[i * 64 + c * 8 + r];
                      std::copy_n(g.data() + i * 8, 8, gx);
                      solve8_inplace(at, gx, gb);
                      if (gin[1])
                        for (int r = 0; r < 8; ++r) (*gin[1])[i * 8 + r] += gb[r];
                      if (gin[0])
                        for (int r = 0; r < 8; ++r)
                          for (int c = 0; c < 8; ++c) (*gin[0])[i * 64 + r * 8 + c] -= gb[r] * xv[i * 8 + c];
                    }
                  });
}

Var concat_channels(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rank() != 4 || bv.rank() != 4 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) ||
      av.dim(3) != bv.dim(3))
    shape_error("concat-channels", av.shape(), bv.shape());
  const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const long plane = static_cast<long>(av.dim(2)) * av.dim(3);
  Tensor out({n, ca + cb, av.dim(2), av.dim(3)});
  for (int i = 0; i < n; ++i) {
    std::copy_n(av.data() + i * ca * plane, ca * plane, out.data() + i * (ca + cb) * plane);
    std::copy_n(bv.data() + i * cb * plane, cb * plane, out.data() + (i * (ca + cb) + ca) * plane);
  }
  return t.record(OpKind::ConcatChannels, {a, b}, std::move(out),
                  [n, ca, cb, plane](const Tape&, const Tensor& g, std::span<Tensor* const> gin) {
                    for (int i = 0; i < n; ++i) {
                      const double* src = g.data() + i * (ca + cb) * plane;
                      if (gin[0]) {
                        double* d = gin[0]->data() + i * ca * plane;
                        for (long k = 0; k < ca * plane; ++k) d[k] += src[k];
                      }
                      if (gin[1]) {
                        double* d = gin[1]->data() + i * cb * plane;
                        for (long k = 0; k < cb * plane; ++k) d[k] += src[ca * plane + k];
                      }
                    }
                  });
}

Var reshape(Tape& t, Var a, Shape shape) {
  const Tensor& av = t.value(a);
  if (num_elements(shape) != av.size()) shape_error("reshape", av.shape(), shape);
  return t.record(OpKind::Reshape, {a}, av.reshaped(std::move(shape)),
                  [](const Tape&, const Tensor& g, std::span<Tensor* const> gin) { gin[0]->accumulate(g); });
}

Var spectral_norm(Tape& t, Var w, const Tensor& u, const Tensor& v) {
  const Tensor& wv = t.value(w);
  const int rows = wv.dim(0);
  const int cols = static_cast<int>(wv.size() / rows);
  if (static_cast<int>(u.size()) != rows || static_cast<int>(v.size()) != cols)
    shape_error("spectral-norm", wv.shape(), {static_cast<int>(u.size()), static_cast<int>(v.size())});
  double sigma = 0.0;
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += wv[static_cast<std::size_t>(r) * cols + c] * v[c];
    sigma += u[r] * s;
  }
  if (!(std::abs(sigma) > 1e-12)) fail(ErrorKind::ZeroMatrix, "spectral-norm: sigma vanishes");
  Tensor out(wv.shape());
  for (std::size_t i = 0; i < wv.size(); ++i) out[i] = wv[i] / sigma;
  return t.record(OpKind::SpectralNorm, {w}, std::move(out),
                  [w, u, v, sigma, rows, cols](const Tape& tp, const Tensor& g, std::span<Tensor* const> gin) {
                    const Tensor& wv = tp.value(w);
                    double gw = 0.0;
                    for (std::size_t i = 0; i < wv.size(); ++i) gw += g[i] * wv[i];
                    const double k = gw / (sigma * sigma);
                    for (int r = 0; r < rows; ++r)
                      for (int c = 0; c < cols; ++c) {
                        const std::size_t i = static_cast<std::size_t>(r) * cols + c;
                        (*gin[0])[i] += g[i] / sigma - k * u[r] * v[c];
                      }
                  });
}

}  // namespace regopt::ad
