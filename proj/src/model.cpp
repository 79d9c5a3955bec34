#include "regopt/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "regopt/errors.hpp"
#include "regopt/rng.hpp"

namespace regopt {
namespace {

bool weighted(LayerKind k) { return k == LayerKind::Conv || k == LayerKind::Dense; }

LayerKind layer_kind_from_string(std::string_view s) {
  for (LayerKind k : {LayerKind::Conv, LayerKind::Dense, LayerKind::LeakyRelu, LayerKind::Relu, LayerKind::MaxPool})
    if (to_string(k) == s) return k;
  fail(ErrorKind::CheckpointMismatch, "unknown layer kind '" + std::string(s) + "'");
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

constexpr std::uint16_t kCheckpointVersion = 1;

void put_bytes(std::ostream& os, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_bytes(std::istream& is, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    const int c = is.get();
    if (c == EOF) fail(ErrorKind::IoError, "truncated checkpoint");
    v |= static_cast<std::uint64_t>(c) << (8 * i);
  }
  return v;
}

void put_f32s(std::ostream& os, const ad::Tensor& t) {
  for (double v : t.values()) put_bytes(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
}

void get_f32s(std::istream& is, ad::Tensor& t) {
  for (double& v : t.values()) v = std::bit_cast<float>(static_cast<std::uint32_t>(get_bytes(is, 4)));
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Dense: return "dense";
    case LayerKind::LeakyRelu: return "leaky_relu";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "max_pool";
  }
  return "?";
}

std::string_view to_string(Head head) {
  switch (head) {
    case Head::None: return "none";
    case Head::Sigmoid: return "sigmoid";
    case Head::Square: return "square";
  }
  return "?";
}

Head head_from_string(std::string_view s) {
  for (Head h : {Head::None, Head::Sigmoid, Head::Square})
    if (to_string(h) == s) return h;
  fail(ErrorKind::InvalidSpec, "unknown head '" + std::string(s) + "'");
}

ModelSpec compact_cnn(int in_channels, int size, const std::vector<int>& channels, int hidden, int outputs,
                      Head head, bool spectral) {
  ModelSpec spec;
  spec.in_channels = in_channels;
  spec.in_height = spec.in_width = size;
  for (int c : channels) {
    spec.layers.push_back({LayerKind::Conv, c, 3, 2, 1, spectral});
    spec.layers.push_back({LayerKind::LeakyRelu});
  }
  spec.layers.push_back({LayerKind::Dense, hidden, 0, 0, 0, spectral});
  spec.layers.push_back({LayerKind::LeakyRelu});
  spec.layers.push_back({LayerKind::Dense, outputs, 0, 0, 0, spectral});
  spec.head = head;
  return spec;
}

int Model::outputs() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    if (it->spec.kind == LayerKind::Dense) return it->spec.out;
  return 0;
}

std::vector<ad::Tensor*> Model::parameters() {
  std::vector<ad::Tensor*> p;
  for (Layer& l : layers)
    if (weighted(l.spec.kind)) {
      p.push_back(&l.w);
      p.push_back(&l.b);
    }
  return p;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.w.size() + l.b.size();
  return n;
}

Model init_model(const ModelSpec& spec, Rng& rng) {
  if (spec.in_channels <= 0 || spec.in_height <= 0 || spec.in_width <= 0)
    fail(ErrorKind::InvalidSpec, "input dimensions must be positive");
  Model m;
  m.spec = spec;
  int c = spec.in_channels, h = spec.in_height, w = spec.in_width;
  bool flat = false;
  int last_dense = -1;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& ls = spec.layers[i];
    Layer layer;
    layer.spec = ls;
    if (ls.kind == LayerKind::Conv) {
      if (flat) fail(ErrorKind::InvalidSpec, "conv after dense");
      if (ls.out <= 0 || ls.kernel <= 0 || ls.stride <= 0 || ls.pad < 0)
        fail(ErrorKind::InvalidSpec, "bad conv layer " + std::to_string(i));
      layer.w = ad::Tensor({ls.out, c, ls.kernel, ls.kernel});
      layer.b = ad::Tensor({ls.out});
      h = (h + 2 * ls.pad - ls.kernel) / ls.stride + 1;
      w = (w + 2 * ls.pad - ls.kernel) / ls.stride + 1;
      if (h <= 0 || w <= 0) fail(ErrorKind::InvalidSpec, "conv layer " + std::to_string(i) + " shrinks input to nothing");
      c = ls.out;
    } else if (ls.kind == LayerKind::Dense) {
      if (ls.out <= 0) fail(ErrorKind::InvalidSpec, "bad dense layer " + std::to_string(i));
      const int in = flat ? c : c * h * w;
      layer.w = ad::Tensor({ls.out, in});
      layer.b = ad::Tensor({ls.out});
      flat = true;
      c = ls.out;
      h = w = 1;
      last_dense = static_cast<int>(i);
    } else if (ls.kind == LayerKind::MaxPool) {
      if (flat || h < 2 || w < 2) fail(ErrorKind::InvalidSpec, "max-pool needs a spatial input");
      h /= 2;
      w /= 2;
    }
    if (weighted(ls.kind)) {
      Rng wr = rng.fork("init.w", i);
      const double fan_in = static_cast<double>(layer.w.size() / layer.w.dim(0));
      const double s = std::sqrt(6.0 / fan_in);
      for (double& v : layer.w.values()) v = wr.uniform(-s, s);
      if (ls.spectral) {
        Rng ur = rng.fork("init.u", i);
        std::vector<double> u(static_cast<std::size_t>(layer.w.dim(0)));
        for (double& v : u) v = ur.normal();
        const double nu = norm(u);
        for (double& v : u) v /= nu;
        layer.u = ad::Tensor::vector(std::move(u));
      }
    }
    m.layers.push_back(std::move(layer));
  }
  if (last_dense < 0) fail(ErrorKind::InvalidSpec, "model needs a final dense layer");
  if (!spec.output_bias.empty()) {
    Layer& out = m.layers[last_dense];
    if (static_cast<int>(spec.output_bias.size()) != out.spec.out)
      fail(ErrorKind::InvalidSpec, "output bias length does not match outputs");
    out.w.fill(0.0);
    for (int i = 0; i < out.spec.out; ++i) out.b[i] = spec.output_bias[i];
    if (out.spec.spectral) fail(ErrorKind::InvalidSpec, "zero-initialized output layer cannot be spectrally normalized");
  }
  // Settle sigma for spectral layers so inference before training is defined.
  for (Layer& l : m.layers)
    if (l.spec.spectral && weighted(l.spec.kind)) {
      SpectralResult r = spectral_normalize(l.w, l.u, 1);
      l.u = std::move(r.u);
      l.sigma = r.sigma;
    }
  return m;
}

SpectralResult spectral_normalize(const ad::Tensor& w, const ad::Tensor& u0, int n_iters) {
  const int rows = w.dim(0);
  const int cols = static_cast<int>(w.size() / rows);
  if (static_cast<int>(u0.size()) != rows) fail(ErrorKind::ShapeMismatch, "spectral_normalize: u length");
  double wn = 0.0;
  for (double v : w.values()) wn += v * v;
  if (!(wn > 0.0)) fail(ErrorKind::ZeroMatrix, "spectral_normalize: ||W|| = 0");
  std::vector<double> u(u0.values().begin(), u0.values().end()), v(cols);
  auto wt_u = [&] {
    std::fill(v.begin(), v.end(), 0.0);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) v[c] += w[static_cast<std::size_t>(r) * cols + c] * u[r];
    const double n = norm(v);
    if (!(n > 0.0)) fail(ErrorKind::ZeroMatrix, "spectral_normalize: W^T u = 0");
    for (double& x : v) x /= n;
  };
  auto w_v = [&] {
    for (int r = 0; r < rows; ++r) {
      double s = 0.0;
      for (int c = 0; c < cols; ++c) s += w[static_cast<std::size_t>(r) * cols + c] * v[c];
      u[r] = s;
    }
    const double n = norm(u);
    if (!(n > 0.0)) fail(ErrorKind::ZeroMatrix, "spectral_normalize: W v = 0");
    for (double& x : u) x /= n;
  };
  for (int it = 0; it < n_iters; ++it) {
    wt_u();
    w_v();
  }
  if (n_iters == 0) wt_u();
  double sigma = 0.0;
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += w[static_cast<std::size_t>(r) * cols + c] * v[c];
    sigma += u[r] * s;
  }
  if (!(std::abs(sigma) > 0.0)) fail(ErrorKind::ZeroMatrix, "spectral_normalize: sigma = 0");
  SpectralResult res{ad::Tensor(w.shape()), ad::Tensor::vector(std::move(u)), ad::Tensor::vector(std::move(v)), sigma};
  for (std::size_t i = 0; i < w.size(); ++i) res.w_sn[i] = w[i] / sigma;
  return res;
}

ad::Tensor effective_weight(const Layer& layer) {
  if (!layer.spec.spectral) return layer.w;
  ad::Tensor w = layer.w;
  for (double& v : w.values()) v /= layer.sigma;
  return w;
}

ad::Var apply_head(ad::Tape& t, ad::Var pre, Head head) {
  switch (head) {
    case Head::None: return pre;
    case Head::Sigmoid: return ad::sigmoid(t, pre);
    case Head::Square: return ad::square(t, pre);
  }
  return pre;
}

namespace {

template <class WeightFn>
ad::Var run_layers(ad::Tape& t, const ModelSpec& spec, ad::Var x, std::size_t n_layers, WeightFn&& weights) {
  const ad::Tensor& xv = t.value(x);
  if (xv.rank() != 4 || xv.dim(1) != spec.in_channels || xv.dim(2) != spec.in_height || xv.dim(3) != spec.in_width)
    fail(ErrorKind::ShapeMismatch, "model input " + ad::shape_string(xv.shape()) + " does not match spec [N," +
                                       std::to_string(spec.in_channels) + "," + std::to_string(spec.in_height) + "," +
                                       std::to_string(spec.in_width) + "]");
  const int n = xv.dim(0);
  bool flat = false;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const LayerSpec& ls = spec.layers[i];
    switch (ls.kind) {
      case LayerKind::Conv: {
        auto [w, b] = weights(i);
        x = ad::conv2d(t, x, w, b, ls.stride, ls.pad);
        break;
      }
      case LayerKind::Dense: {
        if (!flat) {
          x = ad::reshape(t, x, {n, static_cast<int>(t.value(x).size() / n)});
          flat = true;
        }
        auto [w, b] = weights(i);
        x = ad::dense(t, x, w, b);
        break;
      }
      case LayerKind::LeakyRelu: x = ad::leaky_relu(t, x); break;
      case LayerKind::Relu: x = ad::relu(t, x); break;
      case LayerKind::MaxPool: x = ad::max_pool2(t, x); break;
    }
  }
  return apply_head(t, x, spec.head);
}

}  // namespace

ForwardResult forward(ad::Tape& t, Model& model, ad::Var x, Mode mode) {
  if (mode == Mode::Inference) return {forward(t, static_cast<const Model&>(model), x), {}};
  ForwardResult res;
  res.out = run_layers(t, model.spec, x, model.layers.size(), [&](std::size_t i) {
    Layer& l = model.layers[i];
    ad::Var w = t.variable(l.w);
    ad::Var b = t.variable(l.b);
    res.params.push_back(w);
    res.params.push_back(b);
    if (l.spec.spectral) {
      // One power-iteration step; u persists, v is recomputed from it.
      SpectralResult r = spectral_normalize(l.w, l.u, 1);
      l.u = r.u;
      l.sigma = r.sigma;
      w = ad::spectral_norm(t, w, r.u, r.v);
    }
    return std::pair{w, b};
  });
  return res;
}

ad::Var forward(ad::Tape& t, const Model& model, ad::Var x) {
  return run_layers(t, model.spec, x, model.layers.size(), [&](std::size_t i) {
    const Layer& l = model.layers[i];
    return std::pair{t.constant(effective_weight(l)), t.constant(l.b)};
  });
}

ControlPoints forward_reg(const Model& model, const ImageBuffer& img) {
  if (model.outputs() != 8) fail(ErrorKind::ShapeMismatch, "registration model must have 8 outputs");
  ad::Tape t;
  const ad::Tensor& out = t.value(forward(t, model, t.constant(to_tensor(img))));
  ControlPoints h;
  std::copy_n(out.data(), 8, h.begin());
  return h;
}

double forward_err(const Model& model, const ImageBuffer& x) {
  if (model.outputs() != 1) fail(ErrorKind::ShapeMismatch, "error model must have 1 output");
  ad::Tape t;
  return t.value(forward(t, model, t.constant(to_tensor(x)))).item();
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  using nlohmann::json;
  json header;
  header["format"] = "regopt-model";
  header["input"] = {model.spec.in_channels, model.spec.in_height, model.spec.in_width};
  header["head"] = std::string(to_string(model.spec.head));
  header["output_bias"] = model.spec.output_bias;
  json layers = json::array(), blobs = json::array();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& l = model.layers[i];
    json lj{{"kind", std::string(to_string(l.spec.kind))}};
    if (weighted(l.spec.kind)) {
      lj["out"] = l.spec.out;
      lj["spectral"] = l.spec.spectral;
      if (l.spec.spectral) lj["sigma"] = l.sigma;
      blobs.push_back({{"name", "layer" + std::to_string(i) + ".w"}, {"shape", l.w.shape()}});
      blobs.push_back({{"name", "layer" + std::to_string(i) + ".b"}, {"shape", l.b.shape()}});
    }
    if (l.spec.kind == LayerKind::Conv) {
      lj["kernel"] = l.spec.kernel;
      lj["stride"] = l.spec.stride;
      lj["pad"] = l.spec.pad;
    }
    layers.push_back(std::move(lj));
  }
  header["layers"] = std::move(layers);
  header["blobs"] = std::move(blobs);
  header["meta"] = model.meta;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  os.write("RGOP", 4);
  put_bytes(os, kCheckpointVersion, 2);
  put_bytes(os, text.size(), 4);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Layer& l : model.layers)
    if (weighted(l.spec.kind)) {
      put_f32s(os, l.w);
      put_f32s(os, l.b);
    }
  for (const Layer& l : model.layers)
    if (l.spec.spectral && weighted(l.spec.kind)) put_f32s(os, l.u);
  if (!os) fail(ErrorKind::IoError, "write failed: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  using nlohmann::json;
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::IoError, "cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "RGOP", 4) != 0)
    fail(ErrorKind::CheckpointMismatch, path.string() + " is not a model checkpoint");
  const auto version = get_bytes(is, 2);
  if (version != kCheckpointVersion)
    fail(ErrorKind::CheckpointMismatch, "unsupported checkpoint version " + std::to_string(version));
  const auto len = get_bytes(is, 4);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) fail(ErrorKind::IoError, "truncated checkpoint header");
  json header;
  try {
    header = json::parse(text);
    ModelSpec spec;
    spec.in_channels = header.at("input").at(0);
    spec.in_height = header.at("input").at(1);
    spec.in_width = header.at("input").at(2);
    spec.head = head_from_string(header.at("head").get<std::string>());
    spec.output_bias = header.value("output_bias", std::vector<double>{});
    for (const json& lj : header.at("layers")) {
      LayerSpec ls;
      ls.kind = layer_kind_from_string(lj.at("kind").get<std::string>());
      ls.out = lj.value("out", 0);
      ls.spectral = lj.value("spectral", false);
      ls.kernel = lj.value("kernel", ls.kind == LayerKind::Conv ? 3 : 0);
      ls.stride = lj.value("stride", ls.kind == LayerKind::Conv ? 1 : 0);
      ls.pad = lj.value("pad", 0);
      spec.layers.push_back(ls);
    }
    // Shapes come from the spec; the blob list must agree with them.
    ModelSpec shape_spec = spec;
    shape_spec.output_bias.clear();
    Rng dummy(0, "checkpoint.shapes");
    Model m = init_model(shape_spec, dummy);
    m.spec = spec;
    const json& blobs = header.at("blobs");
    std::size_t bi = 0;
    for (Layer& l : m.layers) {
      if (!weighted(l.spec.kind)) continue;
      for (ad::Tensor* t : {&l.w, &l.b}) {
        if (bi >= blobs.size() || blobs[bi].at("shape").get<ad::Shape>() != t->shape())
          fail(ErrorKind::CheckpointMismatch, "blob " + std::to_string(bi) + " shape disagrees with layer spec");
        get_f32s(is, *t);
        ++bi;
      }
    }
    const json& layers = header.at("layers");
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      Layer& l = m.layers[i];
      if (l.spec.spectral && weighted(l.spec.kind)) {
        get_f32s(is, l.u);
        l.sigma = layers[i].at("sigma").get<double>();
      }
    }
    m.meta = header.value("meta", json::object());
    return m;
  } catch (const json::exception& e) {
    fail(ErrorKind::CheckpointMismatch, std::string("malformed checkpoint header: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidSpec) fail(ErrorKind::CheckpointMismatch, e.what());
    throw;
  }
}

}  // namespace regopt
