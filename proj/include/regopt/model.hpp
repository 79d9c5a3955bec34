#pragma once

// Compact CNNs for the registration model f (image -> h) and the error model
// g ([image ; warped template] -> predicted error).
//
// Layers run in order on [N,C,H,W]; the first dense layer flattens. Weighted
// layers may carry spectral normalization: during training every forward pass
// runs one power-iteration step on the persistent u and divides W by
// sigma = u^T W v (sigma differentiated, u and v not). Outside training the
// last training sigma is used as a constant.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "regopt/autodiff.hpp"
#include "regopt/geometry.hpp"
#include "regopt/image.hpp"

namespace regopt {

class Rng;

enum class LayerKind { Conv, Dense, LeakyRelu, Relu, MaxPool };
enum class Head { None, Sigmoid, Square };

std::string_view to_string(LayerKind kind);
std::string_view to_string(Head head);
Head head_from_string(std::string_view s);

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  int out = 0;  // conv out-channels or dense out-features
  int kernel = 3;
  int stride = 1;
  int pad = 0;
  bool spectral = false;
};

struct ModelSpec {
  int in_channels = 3;
  int in_height = 64;
  int in_width = 64;
  std::vector<LayerSpec> layers;
  Head head = Head::None;
  /// Initial bias of the last dense layer; its weights start at zero when set.
  std::vector<double> output_bias;
};

/// conv 3x3/2 + leaky-relu per entry of `channels`, dense `hidden` +
/// leaky-relu, dense `outputs`. Spectral flag applies to every weighted layer.
ModelSpec compact_cnn(int in_channels, int size, const std::vector<int>& channels, int hidden, int outputs,
                      Head head, bool spectral);

struct Layer {
  LayerSpec spec;
  ad::Tensor w;      // conv [Co,C,k,k] or dense [O,I]
  ad::Tensor b;      // [Co] or [O]
  ad::Tensor u;      // [rows] power-iteration state, spectral layers only
  double sigma = 1;  // last training sigma
};

struct Model {
  ModelSpec spec;
  std::vector<Layer> layers;
  nlohmann::json meta = nlohmann::json::object();

  int outputs() const;
  /// Weight and bias tensors of weighted layers, in layer order (w, b, w, b...).
  std::vector<ad::Tensor*> parameters();
  std::size_t parameter_count() const;
};

/// Weights U(-s, s), s = sqrt(6 / fan_in); biases 0; u ~ normalized Gaussian.
/// Throws InvalidSpec when shapes do not chain.
Model init_model(const ModelSpec& spec, Rng& rng);

struct SpectralResult {
  ad::Tensor w_sn;
  ad::Tensor u;
  ad::Tensor v;
  double sigma = 0.0;
};

/// n_iters power-iteration steps (v = normalize(W^T u); u' = normalize(W v));
/// sigma = u'^T W v; W viewed as [rows, rest]. Throws ZeroMatrix.
SpectralResult spectral_normalize(const ad::Tensor& w, const ad::Tensor& u, int n_iters);

enum class Mode { Inference, Train };

struct ForwardResult {
  ad::Var out;
  /// Tape variables parallel to Model::parameters(); empty at inference.
  std::vector<ad::Var> params;
};

/// x [N,C,H,W] -> [N,outputs] after the head. In Train mode weights are tape
/// variables and spectral layers advance their u (hence the mutable model).
ForwardResult forward(ad::Tape& t, Model& model, ad::Var x, Mode mode);
/// Inference only; weights are constants with frozen sigma.
ad::Var forward(ad::Tape& t, const Model& model, ad::Var x);

ad::Var apply_head(ad::Tape& t, ad::Var pre, Head head);

/// Initial estimate for one image.
ControlPoints forward_reg(const Model& model, const ImageBuffer& img);
/// Predicted error for one 2C-channel input.
double forward_err(const Model& model, const ImageBuffer& x);

/// W / sigma for spectral layers, W otherwise.
ad::Tensor effective_weight(const Layer& layer);

// Checkpoint: "RGOP", u16 version 1, u32 header length, UTF-8 JSON header,
// little-endian f32 blobs in header order, then per-layer u vectors.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace regopt
