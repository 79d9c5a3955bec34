#include "regopt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "regopt/errors.hpp"
#include "regopt/rng.hpp"
#include "regopt/warp.hpp"

namespace regopt {
namespace {

constexpr double kPi = 3.14159265358979323846;

struct Vec {
  double x, y;
};

double seg_dist(Vec p, Vec a, Vec b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double s = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  s = std::clamp(s, 0.0, 1.0);
  return std::hypot(p.x - a.x - s * dx, p.y - a.y - s * dy);
}

double circle_dist(Vec p, Vec c, double r) { return std::abs(std::hypot(p.x - c.x, p.y - c.y) - r); }

// Outline of an axis-aligned box with rounded corners.
double rounded_box_dist(Vec p, Vec lo, Vec hi, double r) {
  const double cx = 0.5 * (lo.x + hi.x), cy = 0.5 * (lo.y + hi.y);
  const double hx = 0.5 * (hi.x - lo.x) - r, hy = 0.5 * (hi.y - lo.y) - r;
  const double qx = std::abs(p.x - cx) - hx, qy = std::abs(p.y - cy) - hy;
  const double outside = std::hypot(std::max(qx, 0.0), std::max(qy, 0.0));
  const double sdf = outside + std::min(std::max(qx, qy), 0.0) - r;
  return std::abs(sdf);
}

// Open rectangle: three sides of a box attached to a vertical base line.
double box3_dist(Vec p, double x_base, double x_far, double y0, double y1) {
  return std::min({seg_dist(p, {x_base, y0}, {x_far, y0}), seg_dist(p, {x_far, y0}, {x_far, y1}),
                   seg_dist(p, {x_far, y1}, {x_base, y1})});
}

Point2 pixel_to_norm(Vec p, int h, int w) { return to_normalized({p.x, p.y}, h, w); }

}  // namespace

std::string_view to_string(FieldStyle s) { return s == FieldStyle::Soccer ? "soccer" : "hockey"; }

FieldStyle field_style_from_string(std::string_view s) {
  if (s == "soccer") return FieldStyle::Soccer;
  if (s == "hockey") return FieldStyle::Hockey;
  fail(ErrorKind::InvalidConfig, "unknown field style '" + std::string(s) + "'");
}

FieldTemplate gen_field_template(FieldStyle style, Rng& rng, int height, int width) {
  FieldTemplate ft;
  ft.style = style;
  ft.raster = ImageBuffer(height, width, 3);
  const double base[2][3] = {{0.06, 0.26, 0.09}, {0.14, 0.16, 0.22}};
  double bg[3];
  for (int c = 0; c < 3; ++c) bg[c] = base[style == FieldStyle::Hockey][c] + rng.uniform(-0.03, 0.03);
  const double lw = rng.uniform(2.5, 3.5);
  const double H = height, W = width;
  const double m = 0.04 * H;
  const Vec c{0.5 * (W - 1), 0.5 * (H - 1)};
  const double radius = rng.uniform(0.13, 0.16) * H;
  const Vec lo{m, m}, hi{W - 1 - m, H - 1 - m};

  std::vector<Vec> marks = {c};
  auto dist = [&](Vec p) {
    double d = std::min(seg_dist(p, {c.x, lo.y}, {c.x, hi.y}), circle_dist(p, c, radius));
    d = std::min(d, std::max(0.0, std::hypot(p.x - c.x, p.y - c.y) - 1.5));
    if (style == FieldStyle::Soccer) {
      d = std::min(d, rounded_box_dist(p, lo, hi, 0.0));
      const double pd = 0.16 * W, ph = 0.25 * H, gd = 0.055 * W, gh = 0.12 * H;
      d = std::min({d, box3_dist(p, lo.x, lo.x + pd, c.y - ph, c.y + ph), box3_dist(p, hi.x, hi.x - pd, c.y - ph, c.y + ph),
                    box3_dist(p, lo.x, lo.x + gd, c.y - gh, c.y + gh), box3_dist(p, hi.x, hi.x - gd, c.y - gh, c.y + gh)});
    } else {
      d = std::min(d, rounded_box_dist(p, lo, hi, 0.25 * H));
      const double blue = 0.17 * W, goal = 0.07 * W, inset = 0.1 * H;
      for (double sx : {-1.0, 1.0}) {
        d = std::min(d, seg_dist(p, {c.x + sx * blue, lo.y}, {c.x + sx * blue, hi.y}));
        const double gx = sx < 0 ? lo.x + goal : hi.x - goal;
        d = std::min(d, seg_dist(p, {gx, lo.y + inset}, {gx, hi.y - inset}));
        for (double sy : {-1.0, 1.0}) d = std::min(d, circle_dist(p, {c.x + sx * 0.32 * W, c.y + sy * 0.22 * H}, 0.11 * H));
      }
    }
    return d;
  };
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j) {
      const double cov = std::clamp(0.5 * lw + 0.5 - dist({static_cast<double>(j), static_cast<double>(i)}), 0.0, 1.0);
      for (int ch = 0; ch < 3; ++ch) ft.raster.at(i, j, ch) = static_cast<float>(bg[ch] * (1 - cov) + cov);
    }

  marks.push_back(lo), marks.push_back({hi.x, lo.y}), marks.push_back(hi), marks.push_back({lo.x, hi.y});
  marks.push_back({c.x, lo.y}), marks.push_back({c.x, hi.y});
  if (style == FieldStyle::Soccer) {
    const double pd = 0.16 * W, ph = 0.25 * H;
    for (double y : {c.y - ph, c.y + ph}) marks.push_back({lo.x + pd, y}), marks.push_back({hi.x - pd, y});
  } else {
    for (double sx : {-1.0, 1.0})
      for (double sy : {-1.0, 1.0}) marks.push_back({c.x + sx * 0.32 * W, c.y + sy * 0.22 * H});
  }
  for (Vec p : marks) ft.landmarks.push_back(pixel_to_norm(p, height, width));
  return ft;
}

ControlPoints sample_camera_h(Rng& rng, const CameraRanges& r) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double s = rng.uniform(1.0 - r.scale_spread, 1.0 + r.scale_spread);
    const double rot = rng.uniform(-r.rot_deg, r.rot_deg) * kPi / 180.0;
    const double tx = rng.uniform(-r.trans, r.trans), ty = rng.uniform(-r.trans, r.trans);
    ControlPoints h{};
    for (int k = 0; k < 4; ++k) {
      const double x = kRefPoints[2 * k], y = kRefPoints[2 * k + 1];
      h[2 * k] = s * (std::cos(rot) * x - std::sin(rot) * y) + tx;
      h[2 * k + 1] = s * (std::sin(rot) * x + std::cos(rot) * y) + ty;
    }
    for (double& v : h) v += rng.uniform(-r.jitter, r.jitter);
    try {
      const Mat3 t = dlt(h);
      invert(t);
      // The whole view must stay in front of the camera.
      bool front = true;
      for (Point2 p : unit_quad()) front = front && homogeneous_w(t, p) > 1e-3;
      if (front) return h;
    } catch (const Error&) {
    }
  }
  fail(ErrorKind::SamplingExhausted, "sample_camera_h: 100 degenerate draws");
}

void draw_ellipse(ImageBuffer& img, Rng& rng) {
  const double cx = rng.uniform(0, img.width), cy = rng.uniform(0, img.height);
  const double ax = rng.uniform(4, 20), ay = rng.uniform(4, 20);
  const double rot = rng.uniform(0, kPi);
  double col[3];
  for (double& v : col) v = rng.uniform();
  const double cr = std::cos(rot), sr = std::sin(rot);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j) {
      const double dx = j - cx, dy = i - cy;
      const double u = (dx * cr + dy * sr) / ax, v = (-dx * sr + dy * cr) / ay;
      if (u * u + v * v <= 1.0)
        for (int c = 0; c < img.channels && c < 3; ++c) img.at(i, j, c) = static_cast<float>(col[c]);
    }
}

namespace {

void add_noise(ImageBuffer& img, double sigma, Rng& rng) {
  if (sigma > 0)
    for (float& v : img.data) v = static_cast<float>(v + sigma * rng.normal());
  img.clamp01();
}

}  // namespace

ImageBuffer render_view(const FieldTemplate& tmpl, const ControlPoints& h_gt, const ViewConfig& cfg, Rng& rng) {
  ImageBuffer img = warp_template(tmpl.raster, h_gt, cfg.height, cfg.width);
  double tint[3];
  for (double& v : tint) v = rng.uniform(-1.0, 1.0) * cfg.tint;
  if (cfg.tint > 0)
    for (std::size_t i = 0; i < img.data.size(); ++i)
      img.data[i] = static_cast<float>(img.data[i] + tint[i % img.channels % 3]);
  Rng ellipse = rng.fork("ellipse");
  if (cfg.distractor) draw_ellipse(img, ellipse);
  add_noise(img, cfg.noise_sigma, rng);
  return img;
}

// ---------------------------------------------------------------------------

ImageBuffer draw_line(const LineParams& line, const std::array<double, 3>& color) {
  ImageBuffer img(kLineSize, kLineSize, 3);
  const double ta = std::tan(line.a), ca = std::cos(line.a);
  for (int v = 0; v < kLineSize; ++v)
    for (int u = 0; u < kLineSize; ++u) {
      const double d = std::abs(ta * u - v + line.b) * ca;
      const double cov = std::clamp(1.5 - d, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) img.at(v, u, c) = static_cast<float>(color[c] * cov);
    }
  return img;
}

LineSample gen_line_image(Rng& rng, const LineImageConfig& cfg) {
  const double pu = rng.uniform(0, kLineSize - 1), pv = rng.uniform(0, kLineSize - 1);
  const double a = rng.uniform(-0.4 * kPi, 0.4 * kPi);
  std::array<double, 3> color;
  for (double& v : color) v = rng.uniform(0.2, 1.0);
  LineSample s{ImageBuffer(), {a, pv - std::tan(a) * pu}};
  s.image = draw_line(s.line, color);
  Rng ellipse = rng.fork("ellipse");
  if (cfg.distractor) draw_ellipse(s.image, ellipse);
  add_noise(s.image, cfg.noise_sigma, rng);
  return s;
}

ad::Tensor line_template() {
  ad::Tensor t({3, kLineTemplateRows, 1});
  const int mid = kLineTemplateRows / 2;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < kLineTemplateRows; ++r) t[c * kLineTemplateRows + r] = std::exp(-0.5 * (r - mid) * (r - mid));
  return t;
}

ad::Var line_coords(ad::Tape& t, ad::Var ab) {
  const ad::Tensor& p = t.value(ab);
  if (p.rank() != 2 || p.dim(1) != 2) fail(ErrorKind::ShapeMismatch, "line_coords: expected [N,2]");
  const int n = p.dim(0);
  constexpr int S = kLineSize;
  const double mid = kLineTemplateRows / 2;
  ad::Tensor out({n, S, S, 2});
  for (int i = 0; i < n; ++i) {
    const double a = p[2 * i], b = p[2 * i + 1] * kLineScale;
    const double ca = std::cos(a), sa = std::sin(a);
    double* o = out.data() + static_cast<std::size_t>(i) * S * S * 2;
    for (int v = 0; v < S; ++v)
      for (int u = 0; u < S; ++u) {
        o[(v * S + u) * 2] = 0.0;
        o[(v * S + u) * 2 + 1] = mid + (v - b) * ca - u * sa;
      }
  }
  return t.record(ad::OpKind::Custom, {ab}, std::move(out),
                  [ab, n](const ad::Tape& tp, const ad::Tensor& g, std::span<ad::Tensor* const> gin) {
                    const ad::Tensor& p = tp.value(ab);
                    for (int i = 0; i < n; ++i) {
                      const double a = p[2 * i], b = p[2 * i + 1] * kLineScale;
                      const double ca = std::cos(a), sa = std::sin(a);
                      const double* gi = g.data() + static_cast<std::size_t>(i) * S * S * 2;
                      double ga = 0.0, gy = 0.0;
                      for (int v = 0; v < S; ++v)
                        for (int u = 0; u < S; ++u) {
                          const double go = gi[(v * S + u) * 2 + 1];
                          ga += go * (-(v - b) * sa - u * ca);
                          gy += go;
                        }
                      (*gin[0])[2 * i] += ga;
                      (*gin[0])[2 * i + 1] += gy * -ca * kLineScale;
                    }
                  });
}

ad::Var render_line_hypothesis(ad::Tape& t, ad::Var tmpl, ad::Var ab) {
  return ad::bilinear_sample(t, tmpl, line_coords(t, ab));
}

ImageBuffer render_line_hypothesis(double a, double b) {
  ad::Tape t;
  ad::Var out = render_line_hypothesis(t, t.constant(line_template()),
                                       t.constant(ad::Tensor({1, 2}, std::vector<double>{a, b / kLineScale})));
  return from_tensor(t.value(out));
}

LineParams perturb_line(const LineParams& line, Rng& rng, const LinePerturb& cfg) {
  const double da = rng.uniform(-cfg.delta_a, cfg.delta_a);
  const double db = rng.uniform(-cfg.delta_b, cfg.delta_b);
  return {line.a + da, line.b + db};
}

// ---------------------------------------------------------------------------

std::string_view to_string(TaskKind k) { return k == TaskKind::Field ? "field" : "lines"; }

TaskKind task_kind_from_string(std::string_view s) {
  if (s == "field") return TaskKind::Field;
  if (s == "lines") return TaskKind::Lines;
  fail(ErrorKind::InvalidConfig, "unknown task '" + std::string(s) + "'");
}

FieldTemplate dataset_template(std::uint64_t seed, FieldStyle style) {
  Rng rng(seed, "template");
  return gen_field_template(style, rng);
}

Sample gen_field_sample(const FieldTemplate& tmpl, std::uint64_t seed, std::uint64_t index, const FieldGenConfig& cfg) {
  Rng rng(seed, "sample", index);
  Rng pose = rng.fork("pose");
  const ControlPoints h = sample_camera_h(pose, cfg.camera);
  Rng view = rng.fork("view");
  return {render_view(tmpl, h, cfg.view, view), std::vector<double>(h.begin(), h.end())};
}

Sample gen_line_sample(std::uint64_t seed, std::uint64_t index, const LineImageConfig& cfg) {
  Rng rng(seed, "sample", index);
  LineSample s = gen_line_image(rng, cfg);
  return {std::move(s.image), {s.line.a, s.line.b / kLineScale}};
}

nlohmann::json field_config_json(const FieldGenConfig& c) {
  return {{"style", to_string(c.style)},
          {"camera", {{"scale_spread", c.camera.scale_spread}, {"rot_deg", c.camera.rot_deg}, {"trans", c.camera.trans},
                      {"jitter", c.camera.jitter}}},
          {"view", {{"height", c.view.height}, {"width", c.view.width}, {"noise_sigma", c.view.noise_sigma},
                    {"tint", c.view.tint}, {"distractor", c.view.distractor}}}};
}

FieldGenConfig field_config_from_json(const nlohmann::json& j) {
  FieldGenConfig c;
  try {
    c.style = field_style_from_string(j.value("style", std::string("soccer")));
    if (j.contains("camera")) {
      const auto& k = j["camera"];
      c.camera = {k.value("scale_spread", c.camera.scale_spread), k.value("rot_deg", c.camera.rot_deg),
                  k.value("trans", c.camera.trans), k.value("jitter", c.camera.jitter)};
    }
    if (j.contains("view")) {
      const auto& v = j["view"];
      c.view = {v.value("height", c.view.height), v.value("width", c.view.width), v.value("noise_sigma", c.view.noise_sigma),
                v.value("tint", c.view.tint), v.value("distractor", c.view.distractor)};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("field generation config: ") + e.what());
  }
  return c;
}

LineImageConfig line_config_from_json(const nlohmann::json& j) {
  LineImageConfig c;
  try {
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.distractor = j.value("distractor", c.distractor);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("line generation config: ") + e.what());
  }
  return c;
}

std::function<Sample(std::uint64_t)> sample_generator(const Dataset& ds, std::uint64_t seed) {
  if (ds.kind == TaskKind::Lines) {
    const LineImageConfig cfg = line_config_from_json(ds.config);
    return [cfg, seed](std::uint64_t i) { return gen_line_sample(seed, i, cfg); };
  }
  if (!ds.field) fail(ErrorKind::InvalidConfig, "field dataset without a template");
  const FieldGenConfig cfg = field_config_from_json(ds.config);
  return [tmpl = *ds.field, cfg, seed](std::uint64_t i) { return gen_field_sample(tmpl, seed, i, cfg); };
}

Dataset generate_field_dataset(std::size_t count, std::uint64_t seed, const FieldGenConfig& cfg) {
  Dataset ds;
  ds.kind = TaskKind::Field;
  ds.field = dataset_template(seed, cfg.style);
  ds.config = field_config_json(cfg);
  ds.config["seed"] = seed;
  for (std::size_t i = 0; i < count; ++i) ds.samples.push_back(gen_field_sample(*ds.field, seed, i, cfg));
  return ds;
}

Dataset generate_line_dataset(std::size_t count, std::uint64_t seed, const LineImageConfig& cfg) {
  Dataset ds;
  ds.kind = TaskKind::Lines;
  ds.config = {{"noise_sigma", cfg.noise_sigma}, {"distractor", cfg.distractor}, {"seed", seed}};
  for (std::size_t i = 0; i < count; ++i) ds.samples.push_back(gen_line_sample(seed, i, cfg));
  return ds;
}

namespace {

std::string index_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

ImageBuffer read_image(const std::filesystem::path& dir, const nlohmann::json& entry) {
  if (entry.contains("raw") && std::filesystem::exists(dir / entry["raw"].get<std::string>()))
    return read_raw(dir / entry["raw"].get<std::string>());
  return read_png(dir / entry.at("image").get<std::string>());
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& ds, bool raw) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json meta;
  meta["version"] = 1;
  meta["task"] = to_string(ds.kind);
  const int h = ds.samples.empty() ? (ds.kind == TaskKind::Lines ? kLineSize : 64) : ds.samples[0].image.height;
  const int w = ds.samples.empty() ? (ds.kind == TaskKind::Lines ? kLineSize : 64) : ds.samples[0].image.width;
  meta["image"] = {{"height", h}, {"width", w}, {"channels", 3}};
  meta["config"] = ds.config;
  if (ds.field) {
    write_png(dir / "template.png", ds.field->raster);
    nlohmann::json tj = {{"image", "template.png"}, {"style", to_string(ds.field->style)}};
    if (raw) {
      write_raw(dir / "template.rimg", ds.field->raster);
      tj["raw"] = "template.rimg";
    }
    nlohmann::json marks = nlohmann::json::array();
    for (Point2 p : ds.field->landmarks) marks.push_back({p.x, p.y});
    tj["landmarks"] = marks;
    meta["template"] = tj;
  }
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    const std::string stem = index_name(i);
    write_png(dir / (stem + ".png"), s.image);
    nlohmann::json e = {{"image", stem + ".png"}};
    if (raw) {
      write_raw(dir / (stem + ".rimg"), s.image);
      e["raw"] = stem + ".rimg";
    }
    if (ds.kind == TaskKind::Field) {
      e["h"] = s.params;
    } else {
      e["a"] = s.params.at(0);
      e["b"] = s.params.at(1) * kLineScale;
    }
    list.push_back(e);
  }
  meta["samples"] = list;
  std::ofstream os(dir / "meta.json");
  os << meta.dump(2) << '\n';
  if (!os) fail(ErrorKind::IoError, "cannot write " + (dir / "meta.json").string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "meta.json");
  if (!is) fail(ErrorKind::IoError, "no meta.json in " + dir.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(is);
    if (meta.at("version").get<int>() != 1) fail(ErrorKind::IoError, "unsupported dataset version");
    Dataset ds;
    ds.kind = task_kind_from_string(meta.at("task").get<std::string>());
    ds.config = meta.value("config", nlohmann::json::object());
    if (ds.kind == TaskKind::Field) {
      const auto& tj = meta.at("template");
      FieldTemplate ft;
      ft.style = field_style_from_string(tj.at("style").get<std::string>());
      ft.raster = read_image(dir, tj);
      for (const auto& p : tj.at("landmarks")) ft.landmarks.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      ds.field = std::move(ft);
    }
    for (const auto& e : meta.at("samples")) {
      Sample s;
      s.image = read_image(dir, e);
      if (ds.kind == TaskKind::Field) {
        s.params = e.at("h").get<std::vector<double>>();
        if (s.params.size() != 8) fail(ErrorKind::IoError, "sample h must have 8 entries");
      } else {
        s.params = {e.at("a").get<double>(), e.at("b").get<double>() / kLineScale};
      }
      ds.samples.push_back(std::move(s));
    }
    return ds;
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::IoError, "malformed meta.json in " + dir.string() + ": " + ex.what());
  }
}

}  // namespace regopt
