#include "regopt/task.hpp"

#include <algorithm>
#include <cmath>

#include "regopt/errors.hpp"
#include "regopt/rng.hpp"
#include "regopt/warp.hpp"

namespace regopt {

FieldTask::FieldTask(FieldTemplate tmpl, PerturbConfig perturb)
    : tmpl_(std::move(tmpl)), raster_(to_tensor(tmpl_.raster, false)), perturb_(perturb) {}

ad::Var FieldTask::render(ad::Tape& t, ad::Var params) const {
  return warp_template(t, t.constant(raster_), params, view_height(), view_width());
}

double FieldTask::error(Metric m, const Params& est, const Params& gt) const {
  const ControlPoints e = to_control_points(est), g = to_control_points(gt);
  switch (m) {
    case Metric::IouWhole: return 1.0 - iou_whole(e, g, tmpl_.boundary);
    case Metric::IouPart: return 1.0 - iou_part(e, g, tmpl_.boundary);
    case Metric::Reproj: return reprojection_error(e, g);
    case Metric::Intercept: break;
  }
  fail(ErrorKind::InvalidConfig, "metric " + std::string(to_string(m)) + " does not apply to field registration");
}

Params FieldTask::perturb(const Params& gt, Rng& rng) const {
  const ControlPoints p = regopt::perturb(to_control_points(gt), perturb_, rng);
  return Params(p.begin(), p.end());
}

bool FieldTask::degenerate(const Params& p) const {
  try {
    invert(dlt(to_control_points(p)));
    return false;
  } catch (const Error&) {
    return true;
  }
}

LineTask::LineTask(LinePerturb perturb) : tmpl_(line_template()), perturb_(perturb) {}

ad::Var LineTask::render(ad::Tape& t, ad::Var params) const {
  return render_line_hypothesis(t, t.constant(tmpl_), params);
}

double LineTask::error(Metric m, const Params& est, const Params& gt) const {
  if (m != Metric::Intercept)
    fail(ErrorKind::InvalidConfig, "metric " + std::string(to_string(m)) + " does not apply to line fitting");
  return intercept_error(est.at(0), est.at(1) * kLineScale, gt.at(0), gt.at(1) * kLineScale);
}

Params LineTask::perturb(const Params& gt, Rng& rng) const {
  const LineParams p = perturb_line({gt.at(0), gt.at(1) * kLineScale}, rng, perturb_);
  return {p.a, p.b / kLineScale};
}

bool LineTask::degenerate(const Params& p) const {
  return !(std::abs(p.at(0)) < 0.49 * 3.14159265358979323846) || !std::isfinite(p.at(1));
}

std::unique_ptr<Task> make_task(const Dataset& ds) {
  if (ds.kind == TaskKind::Lines) return std::make_unique<LineTask>();
  if (!ds.field) fail(ErrorKind::InvalidConfig, "field dataset without a template");
  return std::make_unique<FieldTask>(*ds.field);
}

ControlPoints to_control_points(const Params& p) {
  if (p.size() != 8) fail(ErrorKind::ShapeMismatch, "expected 8 control-point coordinates");
  ControlPoints h;
  std::copy(p.begin(), p.end(), h.begin());
  return h;
}

ad::Tensor params_tensor(const std::vector<Params>& rows) {
  if (rows.empty()) fail(ErrorKind::ShapeMismatch, "params_tensor: no rows");
  const int d = static_cast<int>(rows[0].size());
  ad::Tensor t({static_cast<int>(rows.size()), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<int>(rows[i].size()) != d) fail(ErrorKind::ShapeMismatch, "params_tensor: ragged rows");
    std::copy(rows[i].begin(), rows[i].end(), t.data() + i * d);
  }
  return t;
}

Params row(const ad::Tensor& t, int i) {
  const int d = t.dim(1);
  return Params(t.data() + static_cast<std::size_t>(i) * d, t.data() + static_cast<std::size_t>(i + 1) * d);
}

}  // namespace regopt
