#pragma once

// Synthetic data: procedural field templates, camera poses and rendered
// views, plus the line-fitting task.
//
// Line images use pixel coordinates (u = column, v = row, integer pixel
// centers) and the line v = tan(a) u + b.

#include <filesystem>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "regopt/autodiff.hpp"
#include "regopt/geometry.hpp"
#include "regopt/image.hpp"
#include "regopt/metrics.hpp"

namespace regopt {

class Rng;

enum class FieldStyle { Soccer, Hockey };

std::string_view to_string(FieldStyle s);
/// Accepts "soccer" and "hockey". Throws InvalidConfig.
FieldStyle field_style_from_string(std::string_view s);

struct FieldTemplate {
  FieldStyle style = FieldStyle::Soccer;
  ImageBuffer raster;  // white line art on a dark field
  Quad boundary = unit_quad();
  std::vector<Point2> landmarks;  // normalized template coordinates; [0] is the center spot
};

FieldTemplate gen_field_template(FieldStyle style, Rng& rng, int height = 128, int width = 192);

struct CameraRanges {
  double scale_spread = 0.5;  // scale ~ U(1 - spread, 1 + spread)
  double rot_deg = 10.0;
  double trans = 0.3;
  double jitter = 0.05;
};

/// h_ref under a random similarity about the origin, plus per-coordinate
/// jitter. Draw order: scale, rotation, tx, ty, eight jitters; repeated on
/// rejection, at most 100 attempts (then SamplingExhausted).
ControlPoints sample_camera_h(Rng& rng, const CameraRanges& ranges = {});

struct ViewConfig {
  int height = 64;
  int width = 64;
  double noise_sigma = 0.05;
  double tint = 0.1;  // per-channel offset ~ U(-tint, tint)
  bool distractor = true;
};

/// Warped template + tint + optional ellipse + Gaussian noise, clamped.
/// Draw order: 3 tint, then noise in data order; the ellipse uses the
/// "ellipse" fork so toggling it leaves the noise unchanged.
ImageBuffer render_view(const FieldTemplate& tmpl, const ControlPoints& h_gt, const ViewConfig& cfg, Rng& rng);

/// Filled ellipse drawn opaquely over img; consumes 8 draws (cx, cy, two
/// semi-axes ~ U(4, 20) px, rotation, rgb).
void draw_ellipse(ImageBuffer& img, Rng& rng);

// ---------------------------------------------------------------------------
// Line fitting.

inline constexpr int kLineSize = 64;
/// Line parameters enter optimization as (a, b / kLineScale).
inline constexpr double kLineScale = 64.0;

struct LineParams {
  double a = 0.0;  // radians
  double b = 0.0;  // pixels at u = 0
};

struct LineImageConfig {
  double noise_sigma = 0.05;
  bool distractor = true;
};

struct LineSample {
  ImageBuffer image;
  LineParams line;
};

/// Line intensity falls off linearly from full at 0.5 px to zero at 1.5 px
/// perpendicular distance. Draw order: pivot u, pivot v, angle, rgb, then
/// noise; the ellipse uses the "ellipse" fork.
LineSample gen_line_image(Rng& rng, const LineImageConfig& cfg = {});

/// Line of the given color on black, no noise.
ImageBuffer draw_line(const LineParams& line, const std::array<double, 3>& color);

/// x-invariant horizontal line template [3, kLineTemplateRows, 1]: Gaussian
/// profile (sigma 1 px) centered on the middle row.
ad::Tensor line_template();
inline constexpr int kLineTemplateRows = 33;

/// ab [N,2] = (a, b / kLineScale) -> sampling coordinates [N,64,64,2] that
/// rotate the template by a about (0, b).
ad::Var line_coords(ad::Tape& t, ad::Var ab);

/// Differentiable hypothesis rendering, [N,3,64,64].
ad::Var render_line_hypothesis(ad::Tape& t, ad::Var tmpl, ad::Var ab);
ImageBuffer render_line_hypothesis(double a, double b);

struct LinePerturb {
  double delta_a = 0.1 * 3.14159265358979323846;
  double delta_b = 5.0;
};

/// Draw order: alpha_a, alpha_b.
LineParams perturb_line(const LineParams& line, Rng& rng, const LinePerturb& cfg = {});

// ---------------------------------------------------------------------------
// Datasets.

enum class TaskKind { Field, Lines };

std::string_view to_string(TaskKind k);
TaskKind task_kind_from_string(std::string_view s);

struct Sample {
  ImageBuffer image;
  /// Field: h[8]. Lines: (a, b / kLineScale).
  std::vector<double> params;
};

struct FieldGenConfig {
  FieldStyle style = FieldStyle::Soccer;
  CameraRanges camera;
  ViewConfig view;
};

struct Dataset {
  TaskKind kind = TaskKind::Field;
  std::optional<FieldTemplate> field;  // field datasets only
  std::vector<Sample> samples;
  nlohmann::json config = nlohmann::json::object();  // generation settings
};

/// Template from Rng(seed, "template"); sample i from Rng(seed, "sample", i).
FieldTemplate dataset_template(std::uint64_t seed, FieldStyle style);
Sample gen_field_sample(const FieldTemplate& tmpl, std::uint64_t seed, std::uint64_t index, const FieldGenConfig& cfg);
Sample gen_line_sample(std::uint64_t seed, std::uint64_t index, const LineImageConfig& cfg);

nlohmann::json field_config_json(const FieldGenConfig& c);
/// Missing keys keep their defaults. Throws InvalidConfig.
FieldGenConfig field_config_from_json(const nlohmann::json& j);
LineImageConfig line_config_from_json(const nlohmann::json& j);
/// Fresh samples from the distribution a dataset was generated with (same
/// template for fields), indexed under `seed`.
std::function<Sample(std::uint64_t)> sample_generator(const Dataset& ds, std::uint64_t seed);

Dataset generate_field_dataset(std::size_t count, std::uint64_t seed, const FieldGenConfig& cfg = {});
Dataset generate_line_dataset(std::size_t count, std::uint64_t seed, const LineImageConfig& cfg = {});

/// meta.json + NNNNNN.png (+ NNNNNN.rimg when raw is set) + template files.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds, bool raw = true);
/// Reads raw sidecars when present, PNGs otherwise. Throws IoError.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace regopt
