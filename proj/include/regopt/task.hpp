#pragma once

// A registration task: how hypotheses are parameterized, rendered, perturbed
// and scored. Field registration uses the 8 control-point coordinates; line
// fitting uses (a, b / kLineScale).

#include <memory>
#include <vector>

#include "regopt/autodiff.hpp"
#include "regopt/geometry.hpp"
#include "regopt/metrics.hpp"
#include "regopt/synth.hpp"

namespace regopt {

class Rng;

using Params = std::vector<double>;

class Task {
 public:
  virtual ~Task() = default;

  virtual TaskKind kind() const = 0;
  virtual int dim() const = 0;
  int view_height() const { return 64; }
  int view_width() const { return 64; }
  /// Channels of a rendered hypothesis; the error model sees twice this.
  int channels() const { return 3; }

  /// params [N,dim] -> rendered hypotheses [N,C,H,W], differentiable.
  virtual ad::Var render(ad::Tape& t, ad::Var params) const = 0;
  /// Ground-truth error of est against gt in the metric's natural units
  /// (1 - IoU for IoU metrics). Throws InvalidConfig for foreign metrics.
  virtual double error(Metric m, const Params& est, const Params& gt) const = 0;
  virtual Params perturb(const Params& gt, Rng& rng) const = 0;
  /// Untrained registration output (bias of the regression head).
  virtual Params prior() const = 0;
  /// True when the hypothesis cannot be rendered or scored.
  virtual bool degenerate(const Params& p) const = 0;
  virtual Metric default_metric() const = 0;
};

class FieldTask final : public Task {
 public:
  FieldTask(FieldTemplate tmpl, PerturbConfig perturb = {});

  TaskKind kind() const override { return TaskKind::Field; }
  int dim() const override { return 8; }
  ad::Var render(ad::Tape& t, ad::Var params) const override;
  double error(Metric m, const Params& est, const Params& gt) const override;
  Params perturb(const Params& gt, Rng& rng) const override;
  Params prior() const override { return Params(kRefPoints.begin(), kRefPoints.end()); }
  bool degenerate(const Params& p) const override;
  Metric default_metric() const override { return Metric::IouWhole; }

  const FieldTemplate& field() const { return tmpl_; }
  const PerturbConfig& perturb_config() const { return perturb_; }

 private:
  FieldTemplate tmpl_;
  ad::Tensor raster_;  // [C,H,W]
  PerturbConfig perturb_;
};

class LineTask final : public Task {
 public:
  explicit LineTask(LinePerturb perturb = {});

  TaskKind kind() const override { return TaskKind::Lines; }
  int dim() const override { return 2; }
  ad::Var render(ad::Tape& t, ad::Var params) const override;
  double error(Metric m, const Params& est, const Params& gt) const override;
  Params perturb(const Params& gt, Rng& rng) const override;
  Params prior() const override { return {0.0, 0.5}; }
  bool degenerate(const Params& p) const override;
  Metric default_metric() const override { return Metric::Intercept; }

 private:
  ad::Tensor tmpl_;
  LinePerturb perturb_;
};

/// Task for a loaded or generated dataset.
std::unique_ptr<Task> make_task(const Dataset& ds);

ControlPoints to_control_points(const Params& p);
/// [N,dim] tensor of parameter rows.
ad::Tensor params_tensor(const std::vector<Params>& rows);
Params row(const ad::Tensor& t, int i);

}  // namespace regopt
