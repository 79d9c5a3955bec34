#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "regopt/model.hpp"
#include "regopt/task.hpp"

namespace regopt {

struct AdamState {
  std::vector<ad::Tensor> m, v;  // allocated on the first step
  long t = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam update in place. Throws ShapeMismatch.
void adam_step(std::span<ad::Tensor* const> params, std::span<const ad::Tensor> grads, AdamState& state);

/// ||h_gt - h_hat||^2
double loss_init(const Params& h_gt, const Params& h_hat);
/// (true_err - predicted)^2
double loss_error(double true_err, double predicted);

// ---------------------------------------------------------------------------
// Augmentation for homography-labelled views.

struct AugmentFlags {
  bool crop = false;
  bool flip = false;
  bool shadow = false;
};

struct Augmented {
  ImageBuffer image;
  ControlPoints h;
};

/// Keeps a centered-at-(cx, cy) window of the given area ratio and resizes it
/// back; h is composed with the window transform.
Augmented crop_view(const ImageBuffer& img, const ControlPoints& h, double ratio, double cx, double cy);
Augmented flip_view(const ImageBuffer& img, const ControlPoints& h);
/// Square patch of side width/2, scaled, rotated about its center and moved
/// by (tx, ty) px from the top-left quadrant center; darkened to 50% with
/// edges blurred by a 9-tap Gaussian.
ImageBuffer add_shadow(const ImageBuffer& img, double tx, double ty, double rot_deg, double scale);

/// Draw order: ratio, cx, cy, flip coin, shadow tx, ty, rotation, scale;
/// all eight are drawn whatever the flags.
Augmented augment(const ImageBuffer& img, const ControlPoints& h, Rng& rng, const AugmentFlags& flags);

// ---------------------------------------------------------------------------
// Training.

struct Arch {
  std::vector<int> channels = {16, 32, 64, 64};
  int hidden = 128;
};

Head head_for(Metric m);
/// Targets are clipped to this before training (infinite for IoU metrics).
double target_ceiling(Metric m);

ModelSpec reg_spec(const Task& task, const Arch& arch);
ModelSpec err_spec(const Task& task, const Arch& arch, Metric target, bool spectral);
/// 2C-channel input, dim outputs added to the starting estimate.
ModelSpec ffr_spec(const Task& task, const Arch& arch);

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 32;
  int max_steps = 2000;
  int val_every = 500;
  int patience = 10;
  int log_every = 50;
  AugmentFlags augment;
  Metric target = Metric::IouWhole;
  std::uint64_t seed = 0;
};

/// Training stream (indexed by a global sample counter) and a fixed
/// validation set.
struct TrainData {
  const Task* task = nullptr;
  std::function<Sample(std::uint64_t)> sample;
  std::vector<Sample> val;
};

/// Stored samples: the first val_fraction are held out, the rest visited in
/// a fresh permutation each epoch. Throws EmptyDataset.
TrainData stored_data(const Task& task, std::vector<Sample> samples, double val_fraction, std::uint64_t seed);
/// Fresh samples from gen(index); validation uses indices from 2^40 on.
TrainData online_data(const Task& task, std::function<Sample(std::uint64_t)> gen, std::size_t val_count);

struct LogRecord {
  int step = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double wallclock_s = 0.0;
};

/// NDJSON, one record per line; wallclock omitted when with_time is false.
void write_log(std::ostream& os, const std::vector<LogRecord>& log, bool with_time = true);

struct TrainResult {
  Model model;
  std::vector<LogRecord> log;
  int best_step = 0;
  double best_val = 0.0;
};

/// Adam on mean loss_init; early stopping on validation loss.
TrainResult train_reg(const TrainData& data, const TrainConfig& cfg, const Arch& arch);
/// Decoupled: hypotheses are perturbations of the ground truth.
TrainResult train_err(const TrainData& data, const TrainConfig& cfg, const Arch& arch, bool spectral);
/// Feed-forward refinement from perturbed starts, trained with loss_init.
TrainResult train_ffr(const TrainData& data, const TrainConfig& cfg, const Arch& arch);

struct CoupledResult {
  TrainResult reg;
  TrainResult err;
};

/// Both models in one loop; the error model scores the registration model's
/// current predictions. Validation loss is the sum of both.
CoupledResult train_coupled(const TrainData& data, const TrainConfig& cfg, const Arch& arch, bool spectral);

/// Error-model validation inputs: sample i perturbed with Rng(seed, "val.perturb", i).
std::vector<Params> validation_hypotheses(const TrainData& data, std::uint64_t seed);

}  // namespace regopt
