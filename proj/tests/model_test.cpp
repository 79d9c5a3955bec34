#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "regopt/errors.hpp"
#include "regopt/model.hpp"
#include "regopt/rng.hpp"
#include "regopt/warp.hpp"

using namespace regopt;

namespace {

// One-sided Jacobi SVD oracle: orthogonalize column pairs of A (m x n) by
// plane rotations; singular values are the final column norms.
double jacobi_sigma_max(const ad::Tensor& w) {
  const int m = w.dim(0);
  const int n = static_cast<int>(w.size() / m);
  std::vector<double> a(w.values().begin(), w.values().end());
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        double alpha = 0, beta = 0, gamma = 0;
        for (int i = 0; i < m; ++i) {
          alpha += a[i * n + p] * a[i * n + p];
          beta += a[i * n + q] * a[i * n + q];
          gamma += a[i * n + p] * a[i * n + q];
        }
        if (std::abs(gamma) < 1e-15 * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
        const double zeta = (beta - alpha) / (2 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1 + zeta * zeta));
        const double c = 1 / std::sqrt(1 + t * t), s = c * t;
        for (int i = 0; i < m; ++i) {
          const double x = a[i * n + p], y = a[i * n + q];
          a[i * n + p] = c * x - s * y;
          a[i * n + q] = s * x + c * y;
        }
      }
    if (off < 1e-14) break;
  }
  double best = 0.0;
  for (int j = 0; j < n; ++j) {
    double s = 0;
    for (int i = 0; i < m; ++i) s += a[i * n + j] * a[i * n + j];
    best = std::max(best, std::sqrt(s));
  }
  return best;
}

ImageBuffer random_image(int h, int w, int c, Rng& rng) {
  ImageBuffer img(h, w, c);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

ModelSpec small_err_spec(bool spectral) { return compact_cnn(6, 16, {4, 8}, 16, 1, Head::Sigmoid, spectral); }

}  // namespace

TEST(Init, DenseWeightsWithinBound) {
  ModelSpec spec;
  spec.in_channels = 100;
  spec.in_height = spec.in_width = 1;
  spec.layers = {{LayerKind::Dense, 50}};
  Rng rng(1, "init");
  Model m = init_model(spec, rng);
  const double s = std::sqrt(0.06);
  for (double v : m.layers[0].w.values()) {
    EXPECT_LE(std::abs(v), s);
  }
  for (double v : m.layers[0].b.values()) EXPECT_EQ(v, 0.0);
}

TEST(Init, SameSeedSameWeights) {
  Rng a(5, "init"), b(5, "init");
  Model ma = init_model(small_err_spec(true), a), mb = init_model(small_err_spec(true), b);
  for (std::size_t i = 0; i < ma.layers.size(); ++i) {
    EXPECT_EQ(ma.layers[i].w.storage(), mb.layers[i].w.storage());
    EXPECT_EQ(ma.layers[i].u.storage(), mb.layers[i].u.storage());
  }
}

TEST(Init, WeightMeanNearZero) {
  ModelSpec spec;
  spec.in_channels = 400;
  spec.in_height = spec.in_width = 1;
  spec.layers = {{LayerKind::Dense, 500}};
  Rng rng(2, "init");
  Model m = init_model(spec, rng);
  double sum = 0.0;
  for (double v : m.layers[0].w.values()) sum += v;
  const double n = static_cast<double>(m.layers[0].w.size());
  const double sigma = std::sqrt(6.0 / 400) / std::sqrt(3.0);
  EXPECT_LT(std::abs(sum / n), 3.0 * sigma / std::sqrt(n));
}

TEST(Init, SpectralVectorsAreUnit) {
  Rng rng(3, "init");
  Model m = init_model(small_err_spec(true), rng);
  for (const Layer& l : m.layers) {
    if (l.u.empty()) continue;
    double s = 0;
    for (double v : l.u.values()) s += v * v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Init, RejectsBrokenChains) {
  Rng rng(4, "init");
  ModelSpec spec = compact_cnn(3, 4, {8, 8, 8, 8}, 16, 8, Head::None, false);
  spec.layers.insert(spec.layers.begin(), {LayerKind::Conv, 4, 7, 1, 0});
  EXPECT_THROW(init_model(spec, rng), Error);
  ModelSpec no_dense;
  no_dense.layers = {{LayerKind::Conv, 4, 3, 1, 1}};
  EXPECT_THROW(init_model(no_dense, rng), Error);
}

TEST(ForwardReg, BiasInitReturnsReference) {
  ModelSpec spec = compact_cnn(3, 32, {4, 8}, 16, 8, Head::None, false);
  spec.output_bias.assign(kRefPoints.begin(), kRefPoints.end());
  Rng rng(6, "reg");
  Model m = init_model(spec, rng);
  const ControlPoints h = forward_reg(m, random_image(32, 32, 3, rng));
  EXPECT_EQ(h, kRefPoints);
}

TEST(ForwardReg, RejectsWrongInput) {
  ModelSpec spec = compact_cnn(3, 32, {4}, 16, 8, Head::None, false);
  Rng rng(7, "reg");
  Model m = init_model(spec, rng);
  try {
    forward_reg(m, random_image(16, 16, 3, rng));
    FAIL() << "expected ShapeMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(Heads, SigmoidAndSquare) {
  ad::Tape t;
  EXPECT_EQ(t.value(apply_head(t, t.constant(ad::Tensor::scalar(0.0)), Head::Sigmoid)).item(), 0.5);
  EXPECT_EQ(t.value(apply_head(t, t.constant(ad::Tensor::scalar(-2.0)), Head::Square)).item(), 4.0);
}

TEST(ForwardErr, SigmoidRange) {
  Rng rng(8, "err");
  Model m = init_model(small_err_spec(false), rng);
  for (int i = 0; i < 20; ++i) {
    const double e = forward_err(m, random_image(16, 16, 6, rng));
    EXPECT_GT(e, 0.0);
    EXPECT_LT(e, 1.0);
  }
}

TEST(ForwardErr, Deterministic) {
  Rng rng(9, "err");
  Model m = init_model(small_err_spec(true), rng);
  ImageBuffer x = random_image(16, 16, 6, rng);
  EXPECT_EQ(forward_err(m, x), forward_err(m, x));
}

TEST(ForwardErr, GradientToHomographyMatchesFiniteDifferences) {
  // Smooth inputs: blurred image and template, smooth activations.
  Rng rng(10, "chain");
  Model m = init_model(small_err_spec(true), rng);
  const ImageBuffer img = gaussian_blur(random_image(16, 16, 3, rng), 2.0, 4);
  const ImageBuffer tmpl = gaussian_blur(random_image(24, 36, 3, rng), 2.5, 5);
  ControlPoints h = kRefPoints;
  for (double& v : h) v += rng.uniform(-0.05, 0.05);
  const double err = ad::grad_check(
      [&](ad::Tape& t, std::span<const ad::Var> v) {
        ad::Var warped = warp_template(t, t.constant(to_tensor(tmpl, false)), v[0], 16, 16);
        ad::Var x = ad::concat_channels(t, t.constant(to_tensor(img)), warped);
        return forward(t, m, x);
      },
      {ad::Tensor({1, 8}, std::vector<double>(h.begin(), h.end()))}, 1e-6);
  EXPECT_LT(err, 1e-3);
}

TEST(Spectral, Diagonal) {
  ad::Tensor w({2, 2}, std::vector<double>{3, 0, 0, 1});
  SpectralResult r = spectral_normalize(w, ad::Tensor::vector({0.6, 0.8}), 60);
  EXPECT_NEAR(r.sigma, 3.0, 1e-12);
  EXPECT_NEAR(r.w_sn[0], 1.0, 1e-12);
  EXPECT_NEAR(r.w_sn[3], 1.0 / 3.0, 1e-12);
}

TEST(Spectral, Identity) {
  ad::Tensor w({3, 3});
  for (int i = 0; i < 3; ++i) w[i * 4] = 1.0;
  SpectralResult r = spectral_normalize(w, ad::Tensor::vector({1.0, 0.0, 0.0}), 5);
  EXPECT_NEAR(r.sigma, 1.0, 1e-15);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(r.w_sn[i], w[i], 1e-15);
}

TEST(Spectral, MatchesJacobiSvd) {
  Rng rng(11, "svd");
  ad::Tensor w({20, 30});
  for (double& v : w.values()) v = rng.uniform(-1, 1);
  std::vector<double> u(20);
  for (double& v : u) v = rng.normal();
  double n = 0;
  for (double v : u) n += v * v;
  for (double& v : u) v /= std::sqrt(n);
  SpectralResult r = spectral_normalize(w, ad::Tensor::vector(u), 50);
  EXPECT_NEAR(r.sigma, jacobi_sigma_max(w), 1e-3);
}

TEST(Spectral, ZeroMatrix) {
  try {
    spectral_normalize(ad::Tensor({2, 2}), ad::Tensor::vector({1.0, 0.0}), 1);
    FAIL() << "expected ZeroMatrix";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ZeroMatrix);
  }
}

TEST(Spectral, TrainingPassesConvergeToUnitNorm) {
  Rng rng(12, "sn");
  Model m = init_model(small_err_spec(true), rng);
  ImageBuffer x = random_image(16, 16, 6, rng);
  for (int i = 0; i < 60; ++i) {
    ad::Tape t;
    forward(t, m, t.constant(to_tensor(x)), Mode::Train);
  }
  for (const Layer& l : m.layers) {
    if (l.u.empty()) continue;
    EXPECT_NEAR(l.sigma, jacobi_sigma_max(l.w), 1e-6 * l.sigma);
    EXPECT_LE(jacobi_sigma_max(effective_weight(l)), 1.0 + 1e-2);
  }
}

TEST(Spectral, TrainAndInferenceAgreeAtFixedPoint) {
  Rng rng(13, "sn");
  Model m = init_model(small_err_spec(true), rng);
  ImageBuffer x = random_image(16, 16, 6, rng);
  for (int i = 0; i < 100; ++i) {
    ad::Tape t;
    forward(t, m, t.constant(to_tensor(x)), Mode::Train);
  }
  ad::Tape t;
  const double train = t.value(forward(t, m, t.constant(to_tensor(x)), Mode::Train).out).item();
  EXPECT_NEAR(train, forward_err(m, x), 1e-9);
}

TEST(Checkpoint, RoundTrip) {
  Rng rng(14, "ckpt");
  Model m = init_model(small_err_spec(true), rng);
  m.meta["target"] = "iou_whole";
  const auto path = std::filesystem::temp_directory_path() / "regopt_model_test.ckpt";
  save_checkpoint(path, m);
  {
    std::ifstream is(path, std::ios::binary);
    char head[6];
    is.read(head, 6);
    EXPECT_EQ(std::string(head, 4), "RGOP");
    EXPECT_EQ(head[4], 1);
    EXPECT_EQ(head[5], 0);
  }
  Model back = load_checkpoint(path);
  EXPECT_EQ(back.meta["target"], "iou_whole");
  EXPECT_EQ(back.spec.head, Head::Sigmoid);
  ASSERT_EQ(back.layers.size(), m.layers.size());
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    for (std::size_t k = 0; k < m.layers[i].w.size(); ++k)
      EXPECT_EQ(back.layers[i].w[k], static_cast<double>(static_cast<float>(m.layers[i].w[k])));
    EXPECT_EQ(back.layers[i].sigma, m.layers[i].sigma);
  }
  ImageBuffer x = random_image(16, 16, 6, rng);
  EXPECT_NEAR(forward_err(back, x), forward_err(m, x), 1e-5);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsForeignFile) {
  const auto path = std::filesystem::temp_directory_path() / "regopt_model_test.bad";
  std::ofstream(path) << "not a checkpoint";
  try {
    load_checkpoint(path);
    FAIL() << "expected CheckpointMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::CheckpointMismatch);
  }
  std::filesystem::remove(path);
}
