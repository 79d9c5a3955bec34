#include "regopt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "json.hpp"
#include "regopt/errors.hpp"
#include "regopt/rng.hpp"
#include "regopt/warp.hpp"

namespace regopt {

void adam_step(std::span<ad::Tensor* const> params, std::span<const ad::Tensor> grads, AdamState& st) {
  if (params.size() != grads.size()) fail(ErrorKind::ShapeMismatch, "adam_step: params/grads count differ");
  if (st.m.empty()) {
    for (const ad::Tensor* p : params) {
      st.m.emplace_back(p->shape());
      st.v.emplace_back(p->shape());
    }
  }
  if (st.m.size() != params.size()) fail(ErrorKind::ShapeMismatch, "adam_step: state size differs");
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Tensor& p = *params[k];
    const ad::Tensor& g = grads[k];
    if (p.shape() != g.shape() || p.shape() != st.m[k].shape())
      fail(ErrorKind::ShapeMismatch, "adam_step: shape " + ad::shape_string(g.shape()) + " vs " + ad::shape_string(p.shape()));
    double* m = st.m[k].data();
    double* v = st.v[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      const double mh = m[i] / c1, vh = v[i] / c2;
      p[i] -= st.lr * mh / (std::sqrt(vh) + st.epsilon);
    }
  }
}

double loss_init(const Params& h_gt, const Params& h_hat) {
  if (h_gt.size() != h_hat.size()) fail(ErrorKind::ShapeMismatch, "loss_init: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < h_gt.size(); ++i) s += (h_gt[i] - h_hat[i]) * (h_gt[i] - h_hat[i]);
  return s;
}

double loss_error(double true_err, double predicted) { return (true_err - predicted) * (true_err - predicted); }

// ---------------------------------------------------------------------------

namespace {

ImageBuffer resample(const ImageBuffer& img, const Mat3& view_to_src) {
  ImageBuffer out(img.height, img.width, img.channels);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j) {
      const Point2 p = to_normalized({static_cast<double>(j), static_cast<double>(i)}, img.height, img.width);
      const Point2 s = to_pixel(regopt::apply(view_to_src, p), img.height, img.width);
      for (int c = 0; c < img.channels; ++c) out.at(i, j, c) = static_cast<float>(bilinear_sample(img, s.x, s.y, c));
    }
  out.clamp01();
  return out;
}

}  // namespace

Augmented crop_view(const ImageBuffer& img, const ControlPoints& h, double ratio, double cx, double cy) {
  const double s = std::sqrt(ratio);
  const Mat3 c{s, 0, cx, 0, s, cy, 0, 0, 1};
  return {resample(img, c), control_points(multiply(dlt(h), c))};
}

Augmented flip_view(const ImageBuffer& img, const ControlPoints& h) {
  ImageBuffer out(img.height, img.width, img.channels);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j)
      for (int c = 0; c < img.channels; ++c) out.at(i, j, c) = img.at(i, img.width - 1 - j, c);
  const Mat3 f{-1, 0, 0, 0, 1, 0, 0, 0, 1};
  return {std::move(out), control_points(multiply(dlt(h), f))};
}

ImageBuffer add_shadow(const ImageBuffer& img, double tx, double ty, double rot_deg, double scale) {
  ImageBuffer mask(img.height, img.width, 1);
  const double half = 0.25 * img.width * scale;
  const double cx = 0.25 * img.width + tx, cy = 0.25 * img.height + ty;
  const double r = rot_deg * 3.14159265358979323846 / 180.0, cr = std::cos(r), sr = std::sin(r);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j) {
      const double dx = j - cx, dy = i - cy;
      const double u = dx * cr + dy * sr, v = -dx * sr + dy * cr;
      mask.at(i, j, 0) = std::abs(u) <= half && std::abs(v) <= half ? 1.0f : 0.0f;
    }
  mask = gaussian_blur(mask, 2.0, 4);
  ImageBuffer out = img;
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j)
      for (int c = 0; c < img.channels; ++c) out.at(i, j, c) *= 1.0f - 0.5f * mask.at(i, j, 0);
  return out;
}

Augmented augment(const ImageBuffer& img, const ControlPoints& h, Rng& rng, const AugmentFlags& flags) {
  const double ratio = rng.uniform(0.9, 1.0);
  const double room = 0.5 * (1.0 - std::sqrt(ratio));
  const double cx = rng.uniform(-room, room), cy = rng.uniform(-room, room);
  const bool coin = rng.uniform() < 0.5;
  const double tx = rng.uniform(0, 0.5 * img.width), ty = rng.uniform(0, 0.5 * img.width);
  const double rot = rng.uniform(0, 45), scale = rng.uniform(0.5, 2.0);
  Augmented out{img, h};
  if (flags.crop) out = crop_view(out.image, out.h, ratio, cx, cy);
  if (flags.flip && coin) out = flip_view(out.image, out.h);
  if (flags.shadow) out.image = add_shadow(out.image, tx, ty, rot, scale);
  return out;
}

// ---------------------------------------------------------------------------

Head head_for(Metric m) { return m == Metric::IouWhole || m == Metric::IouPart ? Head::Sigmoid : Head::Square; }

double target_ceiling(Metric m) {
  switch (m) {
    case Metric::Reproj: return 0.5;
    case Metric::Intercept: return 20.0;
    default: return std::numeric_limits<double>::infinity();
  }
}

ModelSpec reg_spec(const Task& task, const Arch& arch) {
  ModelSpec s = compact_cnn(task.channels(), task.view_height(), arch.channels, arch.hidden, task.dim(), Head::None, false);
  s.output_bias = task.prior();
  return s;
}

ModelSpec err_spec(const Task& task, const Arch& arch, Metric target, bool spectral) {
  return compact_cnn(2 * task.channels(), task.view_height(), arch.channels, arch.hidden, 1, head_for(target), spectral);
}

ModelSpec ffr_spec(const Task& task, const Arch& arch) {
  ModelSpec s = compact_cnn(2 * task.channels(), task.view_height(), arch.channels, arch.hidden, task.dim(), Head::None, false);
  s.output_bias.assign(static_cast<std::size_t>(task.dim()), 0.0);
  return s;
}

TrainData stored_data(const Task& task, std::vector<Sample> samples, double val_fraction, std::uint64_t seed) {
  if (samples.empty()) fail(ErrorKind::EmptyDataset, "no training samples");
  std::size_t n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(samples.size())));
  if (n_val >= samples.size()) n_val = samples.size() - 1;
  TrainData d;
  d.task = &task;
  d.val.assign(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n_val));
  samples.erase(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n_val));
  auto train = std::make_shared<std::vector<Sample>>(std::move(samples));
  auto perm = std::make_shared<std::vector<std::size_t>>();
  auto epoch = std::make_shared<std::uint64_t>(~0ull);
  d.sample = [train, perm, epoch, seed](std::uint64_t idx) {
    const std::size_t n = train->size();
    const std::uint64_t e = idx / n;
    if (e != *epoch) {
      perm->resize(n);
      std::iota(perm->begin(), perm->end(), std::size_t{0});
      Rng rng(seed, "shuffle", e);
      for (std::size_t i = n; i > 1; --i) std::swap((*perm)[i - 1], (*perm)[rng.below(i)]);
      *epoch = e;
    }
    return (*train)[(*perm)[idx % n]];
  };
  return d;
}

TrainData online_data(const Task& task, std::function<Sample(std::uint64_t)> gen, std::size_t val_count) {
  TrainData d;
  d.task = &task;
  for (std::size_t i = 0; i < val_count; ++i) d.val.push_back(gen((1ull << 40) + i));
  d.sample = std::move(gen);
  return d;
}

void write_log(std::ostream& os, const std::vector<LogRecord>& log, bool with_time) {
  for (const LogRecord& r : log) {
    nlohmann::json j = {{"step", r.step}, {"train_loss", r.train_loss}};
    j["val_loss"] = r.val_loss ? nlohmann::json(*r.val_loss) : nlohmann::json(nullptr);
    if (with_time) j["wallclock_s"] = r.wallclock_s;
    os << j.dump() << '\n';
  }
}

std::vector<Params> validation_hypotheses(const TrainData& data, std::uint64_t seed) {
  std::vector<Params> out;
  for (std::size_t i = 0; i < data.val.size(); ++i) {
    Rng rng(seed, "val.perturb", i);
    out.push_back(data.task->perturb(data.val[i].params, rng));
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

struct Batch {
  std::vector<ImageBuffer> images;
  std::vector<Params> gt;
};

Batch draw_batch(const TrainData& data, const TrainConfig& cfg, int step) {
  Batch b;
  for (int k = 0; k < cfg.batch_size; ++k) {
    const std::uint64_t idx = static_cast<std::uint64_t>(step) * cfg.batch_size + k;
    Sample s = data.sample(idx);
    const AugmentFlags& f = cfg.augment;
    if ((f.crop || f.flip || f.shadow) && data.task->kind() == TaskKind::Field) {
      Rng rng(cfg.seed, "augment", idx);
      Augmented a = augment(s.image, to_control_points(s.params), rng, f);
      s.image = std::move(a.image);
      s.params.assign(a.h.begin(), a.h.end());
    }
    b.images.push_back(std::move(s.image));
    b.gt.push_back(std::move(s.params));
  }
  return b;
}

double clipped_error(const Task& task, Metric m, const Params& est, const Params& gt) {
  return std::min(task.error(m, est, gt), target_ceiling(m));
}

ad::Tensor column(const std::vector<double>& v) {
  return ad::Tensor({static_cast<int>(v.size()), 1}, v);
}

// Mean-over-batch squared error; returns the loss and applies one Adam step.
double fit_step(ad::Tape& t, ad::Var out, const ad::Tensor& target, const ForwardResult& fr, Model& model,
                AdamState& adam) {
  const int n = target.dim(0);
  ad::Var loss = ad::scale(t, ad::l2_squared_distance(t, out, t.constant(target)), 1.0 / n);
  const ad::Gradients g = t.backward(loss);
  std::vector<ad::Tensor> grads;
  for (ad::Var p : fr.params) grads.push_back(g[p]);
  std::vector<ad::Tensor*> params = model.parameters();
  adam_step(params, grads, adam);
  return t.value(loss).item();
}

template <class Fn>
void for_chunks(std::size_t n, int chunk, Fn&& fn) {
  for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(chunk)) fn(lo, std::min(n, lo + chunk));
}

double val_reg(const TrainData& data, const Model& model, int chunk) {
  double total = 0.0;
  for_chunks(data.val.size(), chunk, [&](std::size_t lo, std::size_t hi) {
    std::vector<ImageBuffer> imgs;
    for (std::size_t i = lo; i < hi; ++i) imgs.push_back(data.val[i].image);
    ad::Tape t;
    const ad::Tensor& out = t.value(forward(t, model, t.constant(stack(imgs))));
    for (std::size_t i = lo; i < hi; ++i) total += loss_init(data.val[i].params, row(out, static_cast<int>(i - lo)));
  });
  return total / static_cast<double>(data.val.size());
}

double val_err(const TrainData& data, const Model& model, const std::vector<Params>& hyps,
               const std::vector<double>& targets, int chunk) {
  double total = 0.0;
  for_chunks(data.val.size(), chunk, [&](std::size_t lo, std::size_t hi) {
    std::vector<ImageBuffer> imgs;
    std::vector<Params> hs;
    for (std::size_t i = lo; i < hi; ++i) imgs.push_back(data.val[i].image), hs.push_back(hyps[i]);
    ad::Tape t;
    ad::Var x = ad::concat_channels(t, t.constant(stack(imgs)), data.task->render(t, t.constant(params_tensor(hs))));
    const ad::Tensor& out = t.value(forward(t, model, x));
    for (std::size_t i = lo; i < hi; ++i) total += loss_error(targets[i], out[i - lo]);
  });
  return total / static_cast<double>(data.val.size());
}

double val_ffr(const TrainData& data, const Model& model, const std::vector<Params>& starts, int chunk) {
  double total = 0.0;
  for_chunks(data.val.size(), chunk, [&](std::size_t lo, std::size_t hi) {
    std::vector<ImageBuffer> imgs;
    std::vector<Params> hs;
    for (std::size_t i = lo; i < hi; ++i) imgs.push_back(data.val[i].image), hs.push_back(starts[i]);
    ad::Tape t;
    ad::Var h0 = t.constant(params_tensor(hs));
    ad::Var x = ad::concat_channels(t, t.constant(stack(imgs)), data.task->render(t, h0));
    const ad::Tensor& out = t.value(ad::add(t, h0, forward(t, model, x)));
    for (std::size_t i = lo; i < hi; ++i) total += loss_init(data.val[i].params, row(out, static_cast<int>(i - lo)));
  });
  return total / static_cast<double>(data.val.size());
}

// Shared loop: logging, periodic validation, early stopping with best-model
// restore. step_fn performs one update and returns the training loss;
// val_fn returns the validation loss; snapshot/restore copy model state.
struct Loop {
  std::function<double(int)> step_fn;
  std::function<double()> val_fn;
  std::function<void()> snapshot;
  std::function<void()> restore;
};

void run_loop(const TrainConfig& cfg, bool has_val, Loop& loop, std::vector<LogRecord>& log, int& best_step,
              double& best_val) {
  const auto t0 = Clock::now();
  double acc = 0.0;
  int acc_n = 0, bad = 0;
  best_val = std::numeric_limits<double>::infinity();
  best_step = 0;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    const double loss = loop.step_fn(step - 1);
    if (!std::isfinite(loss)) fail(ErrorKind::InvalidConfig, "training diverged (non-finite loss)");
    acc += loss;
    ++acc_n;
    const bool validate = has_val && (step % cfg.val_every == 0 || step == cfg.max_steps);
    if (step % cfg.log_every == 0 || validate || step == cfg.max_steps) {
      LogRecord r;
      r.step = step;
      r.train_loss = acc / acc_n;
      acc = 0.0;
      acc_n = 0;
      if (validate) {
        r.val_loss = loop.val_fn();
        if (*r.val_loss < best_val) {
          best_val = *r.val_loss;
          best_step = step;
          bad = 0;
          loop.snapshot();
        } else {
          ++bad;
        }
      }
      r.wallclock_s = std::chrono::duration<double>(Clock::now() - t0).count();
      log.push_back(r);
      if (bad >= cfg.patience) break;
    }
  }
  if (has_val && best_step > 0) loop.restore();
}

void check_data(const TrainData& data) {
  if (!data.task || !data.sample) fail(ErrorKind::EmptyDataset, "no training stream");
}

}  // namespace

TrainResult train_reg(const TrainData& data, const TrainConfig& cfg, const Arch& arch) {
  check_data(data);
  TrainResult res;
  Rng init(cfg.seed, "init.reg");
  res.model = init_model(reg_spec(*data.task, arch), init);
  Model best = res.model;
  AdamState adam;
  adam.lr = cfg.lr;
  Loop loop;
  loop.step_fn = [&](int step) {
    Batch b = draw_batch(data, cfg, step);
    ad::Tape t;
    ForwardResult fr = forward(t, res.model, t.constant(stack(b.images)), Mode::Train);
    return fit_step(t, fr.out, params_tensor(b.gt), fr, res.model, adam);
  };
  loop.val_fn = [&] { return val_reg(data, res.model, cfg.batch_size); };
  loop.snapshot = [&] { best = res.model; };
  loop.restore = [&] { res.model = best; };
  run_loop(cfg, !data.val.empty(), loop, res.log, res.best_step, res.best_val);
  res.model.meta = {{"kind", "reg"}, {"task", to_string(data.task->kind())}, {"seed", cfg.seed},
                    {"best_step", res.best_step}};
  return res;
}

TrainResult train_err(const TrainData& data, const TrainConfig& cfg, const Arch& arch, bool spectral) {
  check_data(data);
  const Task& task = *data.task;
  TrainResult res;
  Rng init(cfg.seed, "init.err");
  res.model = init_model(err_spec(task, arch, cfg.target, spectral), init);
  Model best = res.model;
  AdamState adam;
  adam.lr = cfg.lr;
  const std::vector<Params> val_h = validation_hypotheses(data, cfg.seed);
  std::vector<double> val_t;
  for (std::size_t i = 0; i < data.val.size(); ++i)
    val_t.push_back(clipped_error(task, cfg.target, val_h[i], data.val[i].params));
  Loop loop;
  loop.step_fn = [&](int step) {
    Batch b = draw_batch(data, cfg, step);
    std::vector<Params> hyps;
    std::vector<double> targets;
    for (int k = 0; k < cfg.batch_size; ++k) {
      Rng rng(cfg.seed, "perturb", static_cast<std::uint64_t>(step) * cfg.batch_size + k);
      hyps.push_back(task.perturb(b.gt[k], rng));
      targets.push_back(clipped_error(task, cfg.target, hyps.back(), b.gt[k]));
    }
    ad::Tape t;
    ad::Var x = ad::concat_channels(t, t.constant(stack(b.images)), task.render(t, t.constant(params_tensor(hyps))));
    ForwardResult fr = forward(t, res.model, x, Mode::Train);
    return fit_step(t, fr.out, column(targets), fr, res.model, adam);
  };
  loop.val_fn = [&] { return val_err(data, res.model, val_h, val_t, cfg.batch_size); };
  loop.snapshot = [&] { best = res.model; };
  loop.restore = [&] { res.model = best; };
  run_loop(cfg, !data.val.empty(), loop, res.log, res.best_step, res.best_val);
  res.model.meta = {{"kind", "err"},
                    {"task", to_string(task.kind())},
                    {"target", to_string(cfg.target)},
                    {"target_ceiling", std::isfinite(target_ceiling(cfg.target)) ? nlohmann::json(target_ceiling(cfg.target))
                                                                                 : nlohmann::json(nullptr)},
                    {"spectral", spectral},
                    {"seed", cfg.seed},
                    {"best_step", res.best_step}};
  return res;
}

TrainResult train_ffr(const TrainData& data, const TrainConfig& cfg, const Arch& arch) {
  check_data(data);
  const Task& task = *data.task;
  TrainResult res;
  Rng init(cfg.seed, "init.ffr");
  res.model = init_model(ffr_spec(task, arch), init);
  Model best = res.model;
  AdamState adam;
  adam.lr = cfg.lr;
  const std::vector<Params> val_h = validation_hypotheses(data, cfg.seed);
  Loop loop;
  loop.step_fn = [&](int step) {
    Batch b = draw_batch(data, cfg, step);
    std::vector<Params> starts;
    for (int k = 0; k < cfg.batch_size; ++k) {
      Rng rng(cfg.seed, "perturb", static_cast<std::uint64_t>(step) * cfg.batch_size + k);
      starts.push_back(task.perturb(b.gt[k], rng));
    }
    ad::Tape t;
    ad::Var h0 = t.constant(params_tensor(starts));
    ad::Var x = ad::concat_channels(t, t.constant(stack(b.images)), task.render(t, h0));
    ForwardResult fr = forward(t, res.model, x, Mode::Train);
    return fit_step(t, ad::add(t, h0, fr.out), params_tensor(b.gt), fr, res.model, adam);
  };
  loop.val_fn = [&] { return val_ffr(data, res.model, val_h, cfg.batch_size); };
  loop.snapshot = [&] { best = res.model; };
  loop.restore = [&] { res.model = best; };
  run_loop(cfg, !data.val.empty(), loop, res.log, res.best_step, res.best_val);
  res.model.meta = {{"kind", "ffr"}, {"task", to_string(task.kind())}, {"seed", cfg.seed}, {"best_step", res.best_step}};
  return res;
}

CoupledResult train_coupled(const TrainData& data, const TrainConfig& cfg, const Arch& arch, bool spectral) {
  check_data(data);
  const Task& task = *data.task;
  CoupledResult res;
  Rng init_r(cfg.seed, "init.reg"), init_e(cfg.seed, "init.err");
  res.reg.model = init_model(reg_spec(task, arch), init_r);
  res.err.model = init_model(err_spec(task, arch, cfg.target, spectral), init_e);
  Model best_reg = res.reg.model, best_err = res.err.model;
  AdamState adam_r, adam_e;
  adam_r.lr = adam_e.lr = cfg.lr;

  // Hypotheses the error model must score come from the registration model.
  auto score = [&](const std::vector<Params>& preds, const std::vector<Params>& gt) {
    std::vector<double> targets;
    std::vector<Params> usable = preds;
    for (std::size_t k = 0; k < preds.size(); ++k) {
      if (task.degenerate(preds[k])) usable[k] = task.prior();
      targets.push_back(clipped_error(task, cfg.target, usable[k], gt[k]));
    }
    return std::pair{usable, targets};
  };

  Loop loop;
  loop.step_fn = [&](int step) {
    Batch b = draw_batch(data, cfg, step);
    ad::Tensor images = stack(b.images);
    std::vector<Params> preds;
    double loss_r;
    {
      ad::Tape t;
      ForwardResult fr = forward(t, res.reg.model, t.constant(images), Mode::Train);
      for (int k = 0; k < cfg.batch_size; ++k) preds.push_back(row(t.value(fr.out), k));
      loss_r = fit_step(t, fr.out, params_tensor(b.gt), fr, res.reg.model, adam_r);
    }
    auto [hyps, targets] = score(preds, b.gt);
    ad::Tape t;
    ad::Var x = ad::concat_channels(t, t.constant(images), task.render(t, t.constant(params_tensor(hyps))));
    ForwardResult fr = forward(t, res.err.model, x, Mode::Train);
    return loss_r + fit_step(t, fr.out, column(targets), fr, res.err.model, adam_e);
  };
  loop.val_fn = [&] {
    std::vector<Params> preds, gt;
    for_chunks(data.val.size(), cfg.batch_size, [&](std::size_t lo, std::size_t hi) {
      std::vector<ImageBuffer> imgs;
      for (std::size_t i = lo; i < hi; ++i) imgs.push_back(data.val[i].image), gt.push_back(data.val[i].params);
      ad::Tape t;
      const ad::Tensor& out = t.value(forward(t, res.reg.model, t.constant(stack(imgs))));
      for (std::size_t i = lo; i < hi; ++i) preds.push_back(row(out, static_cast<int>(i - lo)));
    });
    auto [hyps, targets] = score(preds, gt);
    return val_reg(data, res.reg.model, cfg.batch_size) + val_err(data, res.err.model, hyps, targets, cfg.batch_size);
  };
  loop.snapshot = [&] { best_reg = res.reg.model, best_err = res.err.model; };
  loop.restore = [&] { res.reg.model = best_reg, res.err.model = best_err; };
  run_loop(cfg, !data.val.empty(), loop, res.err.log, res.err.best_step, res.err.best_val);
  res.reg.log = res.err.log;
  res.reg.best_step = res.err.best_step;
  res.reg.best_val = res.err.best_val;
  res.reg.model.meta = {{"kind", "reg"}, {"task", to_string(task.kind())}, {"seed", cfg.seed}, {"coupled", true}};
  res.err.model.meta = {{"kind", "err"},         {"task", to_string(task.kind())}, {"target", to_string(cfg.target)},
                        {"spectral", spectral},  {"seed", cfg.seed},               {"coupled", true}};
  return res;
}

}  // namespace regopt
