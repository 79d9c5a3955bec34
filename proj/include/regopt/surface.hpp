#pragma once

// Error surfaces over control-point translations and descent paths on them.

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "regopt/infer.hpp"

namespace regopt {

/// res x res translations t_j = (j - res/2) * (2 * range / res); the origin is
/// a grid point.
struct GridConfig {
  int resolution = 50;
  double range = 0.5;
};

double grid_coord(const GridConfig& g, int j);

struct SurfaceArgmin {
  double tx = 0.0;
  double ty = 0.0;
  double value = 0.0;
};

struct SurfaceGrid {
  GridConfig grid;
  std::vector<double> values;  // row-major, row = ty index

  double at(int iy, int ix) const { return values[static_cast<std::size_t>(iy) * grid.resolution + ix]; }
  SurfaceArgmin argmin() const;
  double min() const;
  double max() const;
};

/// Adds (tx, ty) to each of the four control points.
Params translated(const Params& h, double tx, double ty);

SurfaceGrid predicted_surface(const Task& task, const Model& err_model, const ImageBuffer& image, const Params& h_gt,
                              const GridConfig& grid, int batch = 64, int jobs = 1);
SurfaceGrid true_surface(const Task& task, Metric metric, const Params& h_gt, const GridConfig& grid);
/// Elementwise mean. Throws ShapeMismatch on differing grids.
SurfaceGrid mean_surface(std::span<const SurfaceGrid> surfaces);

/// Translations [N,2] -> values [N,1]; rows independent.
using TranslationObjective = std::function<ad::Var(ad::Tape&, ad::Var t)>;

TranslationObjective model_translation_objective(const Task& task, const Model& err_model, const ImageBuffer& image,
                                                 const Params& h_gt);
/// |t|^2
TranslationObjective quadratic_translation_objective();

enum class PathOptimizer { Sgd, Adam };

struct PathOptions {
  PathOptimizer optimizer = PathOptimizer::Adam;
  double lr = 1e-2;
  int steps = 200;
};

/// One path per start, each steps + 1 points long (start included).
std::vector<std::vector<Point2>> trace_paths(const TranslationObjective& objective, const std::vector<Point2>& starts,
                                             const PathOptions& opts);

/// `tx,ty,value` rows in grid order.
void write_surface_csv(const std::filesystem::path& path, const SurfaceGrid& s);
/// Grayscale, min-max normalized; dark = low.
void write_surface_png(const std::filesystem::path& path, const SurfaceGrid& s);
/// {min, max, argmin, resolution, range}
void write_surface_json(const std::filesystem::path& path, const SurfaceGrid& s);
/// stem.csv, stem.png and stem.json in dir.
void write_surface(const std::filesystem::path& dir, const std::string& stem, const SurfaceGrid& s);

}  // namespace regopt
