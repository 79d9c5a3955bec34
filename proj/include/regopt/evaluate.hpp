#pragma once

// Runs one inference mode over a set of samples and scores the estimates.

#include <string>
#include <vector>

#include "json.hpp"
#include "regopt/infer.hpp"

namespace regopt {

enum class InferMode { Full, Sff, Ffr, Nn, Nno };

std::string_view to_string(InferMode m);
/// "full", "sff", "ffr", "nn", "nno". Throws InvalidConfig.
InferMode infer_mode_from_string(std::string_view s);

struct EvalModels {
  const Model* reg = nullptr;  // full, sff, ffr
  const Model* err = nullptr;  // full, nn, nno
  const Model* ffr = nullptr;  // ffr
  const std::vector<Params>* database = nullptr;  // nn, nno
};

struct SampleResult {
  Params h;
  std::vector<double> metrics;  // parallel to EvalResult::metrics
  int iterations = 0;           // optimizer steps taken
  bool degenerate = false;
};

struct EvalResult {
  std::vector<Metric> metrics;
  std::vector<SampleResult> samples;
  long optimizer_iterations = 0;  // summed over samples
  double optimizer_seconds = 0.0;
};

/// Metrics reported for a task: IoU_whole, IoU_part and reprojection for
/// fields, intercept error for lines.
std::vector<Metric> report_metrics(TaskKind kind);

/// IoU metrics as IoU (higher is better); others as errors. Estimates that
/// cannot be scored count as IoU 0 / error kDegeneratePenalty.
double metric_value(const Task& task, Metric m, const Params& est, const Params& gt);
inline constexpr double kDegeneratePenalty = 1.0;

/// Checks that a model's input/output layout fits the task. Throws
/// CheckpointMismatch.
void check_compatible(const Task& task, const Model& model, int in_channels, int outputs, const std::string& what);

EvalResult evaluate(const Task& task, InferMode mode, const EvalModels& models, const std::vector<Sample>& samples,
                    const OptimOptions& opts);

double mean(std::vector<double> v);
double median(std::vector<double> v);
/// Rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// {version, mode, task, count, degenerate, metrics: {name: {mean, median}},
/// per_sample: [...]}; contains no timing.
nlohmann::json report_json(const Task& task, InferMode mode, const EvalResult& r, const std::vector<Sample>& samples);

}  // namespace regopt
