#include "regopt/surface.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "regopt/errors.hpp"

namespace regopt {

double grid_coord(const GridConfig& g, int j) { return (j - g.resolution / 2) * (2.0 * g.range / g.resolution); }

SurfaceArgmin SurfaceGrid::argmin() const {
  const auto it = std::min_element(values.begin(), values.end());
  const int k = static_cast<int>(it - values.begin());
  return {grid_coord(grid, k % grid.resolution), grid_coord(grid, k / grid.resolution), *it};
}

double SurfaceGrid::min() const { return *std::min_element(values.begin(), values.end()); }
double SurfaceGrid::max() const { return *std::max_element(values.begin(), values.end()); }

Params translated(const Params& h, double tx, double ty) {
  Params out = h;
  for (std::size_t i = 0; i + 1 < out.size(); i += 2) out[i] += tx, out[i + 1] += ty;
  return out;
}

namespace {

void check_grid(const GridConfig& g) {
  if (g.resolution < 1 || !(g.range > 0)) fail(ErrorKind::InvalidConfig, "surface grid needs resolution >= 1 and range > 0");
}

std::vector<Params> grid_hypotheses(const Params& h_gt, const GridConfig& g) {
  std::vector<Params> out;
  for (int iy = 0; iy < g.resolution; ++iy)
    for (int ix = 0; ix < g.resolution; ++ix) out.push_back(translated(h_gt, grid_coord(g, ix), grid_coord(g, iy)));
  return out;
}

// [2,dim]: row 0 moves x coordinates, row 1 moves y coordinates.
ad::Tensor translation_basis(int dim) {
  ad::Tensor e({2, dim});
  for (int i = 0; i < dim; ++i) e[static_cast<std::size_t>((i % 2) * dim + i)] = 1.0;
  return e;
}

}  // namespace

SurfaceGrid predicted_surface(const Task& task, const Model& err_model, const ImageBuffer& image, const Params& h_gt,
                              const GridConfig& grid, int batch, int jobs) {
  check_grid(grid);
  const std::vector<ImageBuffer> one{image};
  return {grid, score_hypotheses(task, err_model, one, grid_hypotheses(h_gt, grid), batch, jobs)[0]};
}

SurfaceGrid true_surface(const Task& task, Metric metric, const Params& h_gt, const GridConfig& grid) {
  check_grid(grid);
  SurfaceGrid s{grid, {}};
  for (const Params& h : grid_hypotheses(h_gt, grid)) s.values.push_back(task.error(metric, h, h_gt));
  return s;
}

SurfaceGrid mean_surface(std::span<const SurfaceGrid> surfaces) {
  if (surfaces.empty()) fail(ErrorKind::EmptyDataset, "no surfaces to average");
  SurfaceGrid m{surfaces[0].grid, std::vector<double>(surfaces[0].values.size(), 0.0)};
  for (const SurfaceGrid& s : surfaces) {
    if (s.grid.resolution != m.grid.resolution || s.grid.range != m.grid.range)
      fail(ErrorKind::ShapeMismatch, "surfaces on different grids");
    for (std::size_t i = 0; i < s.values.size(); ++i) m.values[i] += s.values[i];
  }
  for (double& v : m.values) v /= static_cast<double>(surfaces.size());
  return m;
}

TranslationObjective model_translation_objective(const Task& task, const Model& err_model, const ImageBuffer& image,
                                                 const Params& h_gt) {
  return [&task, &err_model, img = to_tensor(image), h_gt](ad::Tape& t, ad::Var tr) {
    const int n = t.value(tr).dim(0), dim = static_cast<int>(h_gt.size());
    ad::Var h = ad::add(t, ad::matmul(t, tr, t.constant(translation_basis(dim))), t.constant(ad::Tensor({dim}, h_gt)));
    ad::Tensor imgs({n, img.dim(1), img.dim(2), img.dim(3)});
    for (int k = 0; k < n; ++k) std::copy(img.data(), img.data() + img.size(), imgs.data() + k * img.size());
    return forward(t, err_model, ad::concat_channels(t, t.constant(std::move(imgs)), task.render(t, h)));
  };
}

TranslationObjective quadratic_translation_objective() {
  return [](ad::Tape& t, ad::Var tr) {
    return ad::matmul(t, ad::mul(t, tr, tr), t.constant(ad::Tensor({2, 1}, 1.0)));
  };
}

std::vector<std::vector<Point2>> trace_paths(const TranslationObjective& objective, const std::vector<Point2>& starts,
                                             const PathOptions& opts) {
  std::vector<std::vector<Point2>> paths;
  for (Point2 p : starts) paths.push_back({p});
  if (starts.empty() || opts.steps <= 0) return paths;
  const std::size_t n = starts.size();
  ad::Tensor cur({static_cast<int>(n), 2});
  for (std::size_t k = 0; k < n; ++k) cur[2 * k] = starts[k].x, cur[2 * k + 1] = starts[k].y;
  std::vector<double> m(2 * n, 0.0), v(2 * n, 0.0);
  for (int s = 1; s <= opts.steps; ++s) {
    ad::Tape t;
    ad::Var tr = t.variable(cur);
    const ad::Tensor g = t.backward(ad::sum(t, objective(t, tr)))[tr];
    for (std::size_t i = 0; i < 2 * n; ++i) {
      if (opts.optimizer == PathOptimizer::Sgd) {
        cur[i] -= opts.lr * g[i];
        continue;
      }
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      cur[i] -= opts.lr * (m[i] / (1 - std::pow(0.9, s))) / (std::sqrt(v[i] / (1 - std::pow(0.999, s))) + 1e-8);
    }
    for (std::size_t k = 0; k < n; ++k) paths[k].push_back({cur[2 * k], cur[2 * k + 1]});
  }
  return paths;
}

void write_surface_csv(const std::filesystem::path& path, const SurfaceGrid& s) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::IoError, "cannot write " + path.string());
  os << "tx,ty,value\n";
  char buf[96];
  const int r = s.grid.resolution;
  for (int iy = 0; iy < r; ++iy)
    for (int ix = 0; ix < r; ++ix) {
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.9g\n", grid_coord(s.grid, ix), grid_coord(s.grid, iy), s.at(iy, ix));
      os << buf;
    }
  if (!os) fail(ErrorKind::IoError, "write failed: " + path.string());
}

void write_surface_png(const std::filesystem::path& path, const SurfaceGrid& s) {
  const int r = s.grid.resolution;
  const double lo = s.min(), hi = s.max();
  ImageBuffer img(r, r, 1);
  for (int iy = 0; iy < r; ++iy)
    for (int ix = 0; ix < r; ++ix)
      img.at(iy, ix, 0) = hi > lo ? static_cast<float>((s.at(iy, ix) - lo) / (hi - lo)) : 0.0f;
  write_png(path, img);
}

void write_surface_json(const std::filesystem::path& path, const SurfaceGrid& s) {
  const SurfaceArgmin a = s.argmin();
  const nlohmann::json j = {{"min", s.min()},
                            {"max", s.max()},
                            {"argmin", {{"tx", a.tx}, {"ty", a.ty}, {"value", a.value}}},
                            {"resolution", s.grid.resolution},
                            {"range", s.grid.range}};
  std::ofstream os(path);
  if (!os) fail(ErrorKind::IoError, "cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void write_surface(const std::filesystem::path& dir, const std::string& stem, const SurfaceGrid& s) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::IoError, "cannot create " + dir.string());
  write_surface_csv(dir / (stem + ".csv"), s);
  write_surface_png(dir / (stem + ".png"), s);
  write_surface_json(dir / (stem + ".json"), s);
}

}  // namespace regopt
