#include "regopt/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "regopt/errors.hpp"

namespace regopt {

std::string_view to_string(InferMode m) {
  switch (m) {
    case InferMode::Full: return "full";
    case InferMode::Sff: return "sff";
    case InferMode::Ffr: return "ffr";
    case InferMode::Nn: return "nn";
    case InferMode::Nno: return "nno";
  }
  return "?";
}

InferMode infer_mode_from_string(std::string_view s) {
  for (InferMode m : {InferMode::Full, InferMode::Sff, InferMode::Ffr, InferMode::Nn, InferMode::Nno})
    if (to_string(m) == s) return m;
  fail(ErrorKind::InvalidConfig, "unknown mode '" + std::string(s) + "' (full, sff, ffr, nn, nno)");
}

std::vector<Metric> report_metrics(TaskKind kind) {
  if (kind == TaskKind::Lines) return {Metric::Intercept};
  return {Metric::IouWhole, Metric::IouPart, Metric::Reproj};
}

double metric_value(const Task& task, Metric m, const Params& est, const Params& gt) {
  const bool iou = m == Metric::IouWhole || m == Metric::IouPart;
  try {
    if (task.degenerate(est)) return iou ? 0.0 : kDegeneratePenalty;
    const double e = task.error(m, est, gt);
    return iou ? 1.0 - e : e;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidConfig) throw;
    return iou ? 0.0 : kDegeneratePenalty;
  }
}

void check_compatible(const Task& task, const Model& model, int in_channels, int outputs, const std::string& what) {
  const ModelSpec& s = model.spec;
  if (s.in_channels != in_channels || s.in_height != task.view_height() || s.in_width != task.view_width() ||
      model.outputs() != outputs)
    fail(ErrorKind::CheckpointMismatch, what + " checkpoint expects " + std::to_string(s.in_channels) + "x" +
                                            std::to_string(s.in_height) + "x" + std::to_string(s.in_width) + " -> " +
                                            std::to_string(model.outputs()) + ", task needs " +
                                            std::to_string(in_channels) + "x" + std::to_string(task.view_height()) + "x" +
                                            std::to_string(task.view_width()) + " -> " + std::to_string(outputs));
}

namespace {

const Model& need(const Model* m, const char* name, InferMode mode) {
  if (!m) fail(ErrorKind::InvalidConfig, std::string("mode ") + std::string(to_string(mode)) + " needs a " + name + " model");
  return *m;
}

}  // namespace

EvalResult evaluate(const Task& task, InferMode mode, const EvalModels& models, const std::vector<Sample>& samples,
                    const OptimOptions& opts) {
  if (samples.empty()) fail(ErrorKind::EmptyDataset, "no samples to evaluate");
  std::vector<ImageBuffer> images;
  images.reserve(samples.size());
  for (const Sample& s : samples) images.push_back(s.image);

  EvalResult r;
  r.metrics = report_metrics(task.kind());
  r.samples.resize(samples.size());
  OptimOptions o = opts;
  if (!o.degenerate) o.degenerate = [&task](const Params& p) { return task.degenerate(p); };

  auto optimize = [&](const std::vector<Params>& starts) {
    const Objective obj = error_objective(task, need(models.err, "error", mode), images);
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<OptimResult> res = optimize_h(obj, starts, o);
    r.optimizer_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (std::size_t i = 0; i < res.size(); ++i) {
      r.samples[i].h = res[i].h;
      r.samples[i].iterations = static_cast<int>(res[i].trace.records.size()) - 1;
      r.samples[i].degenerate = res[i].degenerate;
      r.optimizer_iterations += r.samples[i].iterations;
    }
  };
  auto database = [&]() -> const std::vector<Params>& {
    if (!models.database || models.database->empty()) fail(ErrorKind::EmptyDatabase, "mode needs a nonempty database");
    return *models.database;
  };

  switch (mode) {
    case InferMode::Sff:
    case InferMode::Full: {
      const std::vector<Params> h0 = predict_reg(need(models.reg, "registration", mode), images, o.batch, o.jobs);
      if (mode == InferMode::Full) {
        optimize(h0);
      } else {
        for (std::size_t i = 0; i < h0.size(); ++i) r.samples[i].h = h0[i];
      }
      break;
    }
    case InferMode::Ffr: {
      const std::vector<Params> h0 = predict_reg(need(models.reg, "registration", mode), images, o.batch, o.jobs);
      const std::vector<Params> h = ffr_refine(task, need(models.ffr, "refinement", mode), images, h0, o.batch, o.jobs);
      for (std::size_t i = 0; i < h.size(); ++i) r.samples[i].h = h[i];
      break;
    }
    case InferMode::Nn:
    case InferMode::Nno: {
      const std::vector<Params>& db = database();
      const auto idx = nn_search(task, need(models.err, "error", mode), images, db, o.batch, o.jobs);
      std::vector<Params> starts;
      for (std::size_t k : idx) starts.push_back(db[k]);
      if (mode == InferMode::Nno) {
        optimize(starts);
      } else {
        for (std::size_t i = 0; i < starts.size(); ++i) r.samples[i].h = starts[i];
      }
      break;
    }
  }
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (Metric m : r.metrics) r.samples[i].metrics.push_back(metric_value(task, m, r.samples[i].h, samples[i].params));
  return r;
}

double mean(std::vector<double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) fail(ErrorKind::ShapeMismatch, "spearman needs two equal series of length >= 2");
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double ma = mean(ra), mb = mean(rb);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

nlohmann::json report_json(const Task& task, InferMode mode, const EvalResult& r, const std::vector<Sample>& samples) {
  nlohmann::json j;
  j["version"] = 1;
  j["mode"] = to_string(mode);
  j["task"] = to_string(task.kind());
  j["count"] = r.samples.size();
  int degenerate = 0;
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const SampleResult& s = r.samples[i];
    degenerate += s.degenerate;
    nlohmann::json e = {{"index", i}, {"h", s.h}, {"gt", samples[i].params}, {"iterations", s.iterations},
                        {"degenerate", s.degenerate}};
    for (std::size_t k = 0; k < r.metrics.size(); ++k) e[std::string(to_string(r.metrics[k]))] = s.metrics[k];
    per.push_back(std::move(e));
  }
  j["degenerate"] = degenerate;
  nlohmann::json metrics = nlohmann::json::object();
  for (std::size_t k = 0; k < r.metrics.size(); ++k) {
    std::vector<double> v;
    for (const SampleResult& s : r.samples) v.push_back(s.metrics[k]);
    metrics[std::string(to_string(r.metrics[k]))] = {{"mean", mean(v)}, {"median", median(v)}};
  }
  j["metrics"] = metrics;
  j["per_sample"] = per;
  return j;
}

}  // namespace regopt
