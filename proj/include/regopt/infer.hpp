#pragma once

// Inference by optimization: descend the predicted error from a starting
// estimate, plus the database and feed-forward refinement baselines.

#include <functional>
#include <span>
#include <vector>

#include "regopt/image.hpp"
#include "regopt/model.hpp"
#include "regopt/task.hpp"

namespace regopt {

/// Rows of params [N,dim] belong to items (indices into the caller's data);
/// returns one objective value per row, [N,1]. Rows must not interact.
using Objective = std::function<ad::Var(ad::Tape&, ad::Var params, std::span<const std::size_t> items)>;

struct OptimOptions {
  int max_iters = 400;
  double lr = 1e-3;
  int batch = 64;  // items optimized together on one tape
  int jobs = 1;
  /// Iterates failing this stop their element (best-so-far is kept).
  std::function<bool(const Params&)> degenerate;
};

struct TraceRecord {
  int iteration = 0;
  Params h;
  double predicted_err = 0.0;
};

struct OptimTrace {
  std::vector<TraceRecord> records;
  int best_index = 0;
};

struct OptimResult {
  Params h;  // iterate with the lowest objective
  OptimTrace trace;
  bool degenerate = false;  // an iterate degenerated and the run stopped early
};

/// Fresh Adam state per item. Throws DegenerateHomography when a start is
/// itself degenerate.
std::vector<OptimResult> optimize_h(const Objective& objective, const std::vector<Params>& starts,
                                    const OptimOptions& opts);

/// sum_k (h_k - c_k)^2 against per-item centers.
Objective quadratic_objective(std::vector<Params> centers);
/// Learned error of images[item] against the rendered hypothesis.
Objective error_objective(const Task& task, const Model& err_model, std::span<const ImageBuffer> images);

std::vector<Params> predict_reg(const Model& reg_model, std::span<const ImageBuffer> images, int batch = 64,
                                int jobs = 1);

/// Predicted error for every (image, hypothesis) pair, [image][hypothesis].
std::vector<std::vector<double>> score_hypotheses(const Task& task, const Model& err_model,
                                                  std::span<const ImageBuffer> images,
                                                  const std::vector<Params>& hypotheses, int batch = 64, int jobs = 1);

/// predict_reg followed by optimize_h.
std::vector<OptimResult> register_images(const Task& task, const Model& reg_model, const Model& err_model,
                                         std::span<const ImageBuffer> images, const OptimOptions& opts);

/// Index of the database entry with the lowest predicted error per image;
/// ties go to the lowest index. Throws EmptyDatabase.
std::vector<std::size_t> nn_search(const Task& task, const Model& err_model, std::span<const ImageBuffer> images,
                                   const std::vector<Params>& database, int batch = 64, int jobs = 1);

/// nn_search followed by optimize_h.
std::vector<OptimResult> nno(const Task& task, const Model& err_model, std::span<const ImageBuffer> images,
                             const std::vector<Params>& database, const OptimOptions& opts);

/// h0 + refine(concat(I, render(h0))).
std::vector<Params> ffr_refine(const Task& task, const Model& refine_model, std::span<const ImageBuffer> images,
                               const std::vector<Params>& starts, int batch = 64, int jobs = 1);

/// Runs fn(lo, hi) over [0, n) in chunks of `chunk`, on up to `jobs` threads.
void parallel_chunks(std::size_t n, int chunk, int jobs, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace regopt
