#include "regopt/infer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "regopt/errors.hpp"

namespace regopt {

void parallel_chunks(std::size_t n, int chunk, int jobs, const std::function<void(std::size_t, std::size_t)>& fn) {
  if (chunk < 1) fail(ErrorKind::InvalidConfig, "batch must be positive");
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  const int workers = static_cast<int>(std::min<std::size_t>(std::max(jobs, 1), n_chunks));
  if (workers <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) fn(c * chunk, std::min(n, (c + 1) * chunk));
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t c; (c = next++) < n_chunks;) {
        try {
          fn(c * chunk, std::min(n, (c + 1) * chunk));
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
          next = n_chunks;
        }
      }
    });
  for (std::thread& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

namespace {

void optimize_chunk(const Objective& objective, const std::vector<Params>& starts, const OptimOptions& opts,
                    std::size_t lo, std::size_t hi, std::vector<OptimResult>& out) {
  const std::size_t n = hi - lo;
  const std::size_t dim = starts[lo].size();
  std::vector<std::size_t> items(n);
  std::vector<Params> cur(n), m(n, Params(dim, 0.0)), v(n, Params(dim, 0.0));
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<bool> active(n, true);
  for (std::size_t k = 0; k < n; ++k) {
    items[k] = lo + k;
    cur[k] = starts[lo + k];
    if (cur[k].size() != dim) fail(ErrorKind::ShapeMismatch, "optimize_h: ragged starts");
    if (opts.degenerate && opts.degenerate(cur[k]))
      fail(ErrorKind::DegenerateHomography, "optimize_h: starting estimate " + std::to_string(lo + k) + " is degenerate");
    out[lo + k].h = cur[k];
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int it = 0;; ++it) {
    std::vector<Params> rows(n);
    for (std::size_t k = 0; k < n; ++k) {
      if (active[k] && opts.degenerate && opts.degenerate(cur[k])) {
        active[k] = false;
        out[lo + k].degenerate = true;
      }
      rows[k] = active[k] ? cur[k] : out[lo + k].h;
    }
    if (std::none_of(active.begin(), active.end(), [](bool a) { return a; })) break;
    ad::Tape t;
    ad::Var p = t.variable(params_tensor(rows));
    ad::Var f = objective(t, p, items);
    const ad::Tensor& fv = t.value(f);
    if (fv.size() != n) fail(ErrorKind::ShapeMismatch, "objective must return one value per row");
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k]) continue;
      OptimResult& r = out[lo + k];
      r.trace.records.push_back({it, cur[k], fv[k]});
      if (fv[k] < best[k]) {
        best[k] = fv[k];
        r.h = cur[k];
        r.trace.best_index = static_cast<int>(r.trace.records.size()) - 1;
      }
    }
    if (it == opts.max_iters) break;
    const ad::Tensor g = t.backward(ad::sum(t, f))[p];
    const double c1 = 1.0 - std::pow(b1, it + 1), c2 = 1.0 - std::pow(b2, it + 1);
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k]) continue;
      for (std::size_t j = 0; j < dim; ++j) {
        const double gj = g[k * dim + j];
        m[k][j] = b1 * m[k][j] + (1 - b1) * gj;
        v[k][j] = b2 * v[k][j] + (1 - b2) * gj * gj;
        cur[k][j] -= opts.lr * (m[k][j] / c1) / (std::sqrt(v[k][j] / c2) + eps);
      }
    }
  }
}

std::vector<ImageBuffer> pick(std::span<const ImageBuffer> images, std::span<const std::size_t> items) {
  std::vector<ImageBuffer> out;
  out.reserve(items.size());
  for (std::size_t i : items) out.push_back(images[i]);
  return out;
}

}  // namespace

std::vector<OptimResult> optimize_h(const Objective& objective, const std::vector<Params>& starts,
                                    const OptimOptions& opts) {
  if (opts.max_iters < 0) fail(ErrorKind::InvalidConfig, "max_iters must be nonnegative");
  std::vector<OptimResult> out(starts.size());
  parallel_chunks(starts.size(), opts.batch, opts.jobs,
                  [&](std::size_t lo, std::size_t hi) { optimize_chunk(objective, starts, opts, lo, hi, out); });
  return out;
}

Objective quadratic_objective(std::vector<Params> centers) {
  return [centers = std::move(centers)](ad::Tape& t, ad::Var p, std::span<const std::size_t> items) {
    std::vector<Params> c;
    for (std::size_t i : items) c.push_back(centers.at(i));
    ad::Var d = ad::sub(t, p, t.constant(params_tensor(c)));
    const int dim = t.value(p).dim(1);
    return ad::matmul(t, ad::mul(t, d, d), t.constant(ad::Tensor({dim, 1}, 1.0)));
  };
}

Objective error_objective(const Task& task, const Model& err_model, std::span<const ImageBuffer> images) {
  return [&task, &err_model, images](ad::Tape& t, ad::Var p, std::span<const std::size_t> items) {
    ad::Var x = ad::concat_channels(t, t.constant(stack(pick(images, items))), task.render(t, p));
    return forward(t, err_model, x);
  };
}

std::vector<Params> predict_reg(const Model& reg_model, std::span<const ImageBuffer> images, int batch, int jobs) {
  std::vector<Params> out(images.size());
  parallel_chunks(images.size(), batch, jobs, [&](std::size_t lo, std::size_t hi) {
    ad::Tape t;
    const ad::Tensor& y = t.value(forward(t, reg_model, t.constant(stack(images.subspan(lo, hi - lo)))));
    for (std::size_t i = lo; i < hi; ++i) out[i] = row(y, static_cast<int>(i - lo));
  });
  return out;
}

std::vector<std::vector<double>> score_hypotheses(const Task& task, const Model& err_model,
                                                  std::span<const ImageBuffer> images,
                                                  const std::vector<Params>& hypotheses, int batch, int jobs) {
  const std::size_t d = hypotheses.size();
  if (d == 0) fail(ErrorKind::EmptyDatabase, "no hypotheses to score");
  // Renders do not depend on the image, so they are made once.
  std::vector<ad::Tensor> renders(d);
  parallel_chunks(d, batch, jobs, [&](std::size_t lo, std::size_t hi) {
    ad::Tape t;
    const std::vector<Params> rows(hypotheses.begin() + lo, hypotheses.begin() + hi);
    const ad::Tensor& r = t.value(task.render(t, t.constant(params_tensor(rows))));
    const std::size_t per = r.size() / (hi - lo);
    for (std::size_t k = lo; k < hi; ++k)
      renders[k] = ad::Tensor({1, r.dim(1), r.dim(2), r.dim(3)},
                              std::vector<double>(r.data() + (k - lo) * per, r.data() + (k - lo + 1) * per));
  });
  std::vector<std::vector<double>> out(images.size(), std::vector<double>(d));
  parallel_chunks(images.size(), 1, jobs, [&](std::size_t lo, std::size_t) {
    const ad::Tensor img = to_tensor(images[lo]);
    const int c1 = img.dim(1), c2 = renders[0].dim(1), h = img.dim(2), w = img.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t b = 0; b < d; b += batch) {
      const std::size_t e = std::min(d, b + batch);
      ad::Tensor x({static_cast<int>(e - b), c1 + c2, h, w});
      for (std::size_t k = b; k < e; ++k) {
        double* dst = x.data() + (k - b) * (c1 + c2) * plane;
        std::copy(img.data(), img.data() + c1 * plane, dst);
        std::copy(renders[k].data(), renders[k].data() + c2 * plane, dst + c1 * plane);
      }
      ad::Tape t;
      const ad::Tensor& y = t.value(forward(t, err_model, t.constant(std::move(x))));
      for (std::size_t k = b; k < e; ++k) out[lo][k] = y[k - b];
    }
  });
  return out;
}

std::vector<OptimResult> register_images(const Task& task, const Model& reg_model, const Model& err_model,
                                         std::span<const ImageBuffer> images, const OptimOptions& opts) {
  const std::vector<Params> h0 = predict_reg(reg_model, images, opts.batch, opts.jobs);
  return optimize_h(error_objective(task, err_model, images), h0, opts);
}

std::vector<std::size_t> nn_search(const Task& task, const Model& err_model, std::span<const ImageBuffer> images,
                                   const std::vector<Params>& database, int batch, int jobs) {
  if (database.empty()) fail(ErrorKind::EmptyDatabase, "nearest-neighbour database is empty");
  const auto scores = score_hypotheses(task, err_model, images, database, batch, jobs);
  std::vector<std::size_t> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i)
    out[i] = static_cast<std::size_t>(std::min_element(scores[i].begin(), scores[i].end()) - scores[i].begin());
  return out;
}

std::vector<OptimResult> nno(const Task& task, const Model& err_model, std::span<const ImageBuffer> images,
                             const std::vector<Params>& database, const OptimOptions& opts) {
  const std::vector<std::size_t> idx = nn_search(task, err_model, images, database, opts.batch, opts.jobs);
  std::vector<Params> starts;
  for (std::size_t i : idx) starts.push_back(database[i]);
  return optimize_h(error_objective(task, err_model, images), starts, opts);
}

std::vector<Params> ffr_refine(const Task& task, const Model& refine_model, std::span<const ImageBuffer> images,
                               const std::vector<Params>& starts, int batch, int jobs) {
  if (starts.size() != images.size()) fail(ErrorKind::ShapeMismatch, "ffr_refine: one start per image");
  std::vector<Params> out(images.size());
  parallel_chunks(images.size(), batch, jobs, [&](std::size_t lo, std::size_t hi) {
    ad::Tape t;
    ad::Var h0 = t.constant(params_tensor({starts.begin() + lo, starts.begin() + hi}));
    ad::Var x = ad::concat_channels(t, t.constant(stack(images.subspan(lo, hi - lo))), task.render(t, h0));
    const ad::Tensor& y = t.value(ad::add(t, h0, forward(t, refine_model, x)));
    for (std::size_t i = lo; i < hi; ++i) out[i] = row(y, static_cast<int>(i - lo));
  });
  return out;
}

}  // namespace regopt
