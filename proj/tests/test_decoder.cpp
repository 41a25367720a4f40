#include "ring/decoder.hpp"

#include <gtest/gtest.h>

#include <cstring>

#include "ring/model.hpp"
#include "ring/sh.hpp"

using namespace ring;

TEST(NormalizeFeature, ClosedFormCases) {
  std::vector<double> ones = {1.0, 1.0, 1.0, 1.0};
  for (double v : normalize_feature(ones)) EXPECT_NEAR(v, 0.0, 1e-12);

  std::vector<double> alt = {1.0, -1.0, 1.0, -1.0};
  auto n = normalize_feature(alt);
  double scale = 1.0 / std::sqrt(1.0 + kNormEps);
  for (size_t i = 0; i < alt.size(); ++i) EXPECT_NEAR(n[i], alt[i] * scale, 1e-12);
}

TEST(NormalizeFeature, MeanZeroUnitVariance) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(6);
    for (auto& x : v) x = rng.uniform(-5.0, 5.0);
    auto n = normalize_feature(v);
    double mean = 0.0, var = 0.0;
    for (double x : n) mean += x;
    mean /= n.size();
    for (double x : n) var += sqr(x - mean);
    var /= n.size();
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-4);  // off only by the eps guard
  }
}

TEST(Rff, ZeroCases) {
  DecoderParams p = init_decoder(4, 8, 3, 8, 1, FieldMode::density, 3);
  std::vector<double> zero(4, 0.0);
  for (double v : rff(p, zero)) EXPECT_DOUBLE_EQ(v, 0.0);
  std::fill(p.w_rff.begin(), p.w_rff.end(), 0.0);
  std::vector<double> any = {0.3, -0.7, 1.1, 0.2};
  for (double v : rff(p, any)) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Rff, GradientMatchesFiniteDifferences) {
  DecoderParams p = init_decoder(4, 8, 3, 8, 1, FieldMode::density, 5);
  std::vector<double> v = {0.4, -0.2, 0.9, -1.1};
  // scalar probe: sum of filter outputs; d/dW[r][f] = cos((Wv)_r) v_f
  auto probe = [&]() {
    double s = 0.0;
    for (double y : rff(p, v)) s += y;
    return s;
  };
  for (int r = 0; r < p.rff_dim; ++r) {
    double wv = 0.0;
    for (int f = 0; f < 4; ++f) wv += p.w_rff[r * 4 + f] * v[f];
    for (int f = 0; f < 4; ++f) {
      double analytic = std::cos(wv) * v[f];
      double& slot = p.w_rff[r * 4 + f];
      double saved = slot, h = 1e-6;
      slot = saved + h;
      double up = probe();
      slot = saved - h;
      double dn = probe();
      slot = saved;
      double fd = (up - dn) / (2.0 * h);
      EXPECT_NEAR(analytic, fd, 1e-6 * std::max(1.0, std::fabs(fd)));
    }
  }
}

TEST(ShEncode, BandValues) {
  auto any = sh_encode(normalized({0.3, -0.5, 0.8}), 0);
  EXPECT_NEAR(any[0], 0.2820948, 1e-7);

  auto up = sh_encode({0.0, 0.0, 1.0}, 1);
  EXPECT_NEAR(up[1], 0.0, 1e-12);
  EXPECT_NEAR(up[2], 0.4886025, 1e-7);
  EXPECT_NEAR(up[3], 0.0, 1e-12);

  // non-unit input normalized internally
  auto scaled = sh_encode({0.0, 0.0, 5.0}, 1);
  EXPECT_NEAR(scaled[2], up[2], 1e-12);

  EXPECT_THROW(sh_encode({0, 0, 1}, 5), std::invalid_argument);
}

TEST(ShEncode, MonteCarloOrthonormality) {
  const int degree = 4;
  const int n = sh_basis_size(degree);
  const size_t samples = 1000000;
  std::vector<double> gram(size_t(n) * n, 0.0);
  std::vector<double> y(n);
  Rng rng(123);
  for (size_t s = 0; s < samples; ++s) {
    Vec3 d{rng.normal(), rng.normal(), rng.normal()};
    sh_encode_into(d, degree, y);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) gram[i * n + j] += y[i] * y[j];
  }
  double area = 4.0 * M_PI;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double integral = gram[i * n + j] / double(samples) * area;
      EXPECT_NEAR(integral, i == j ? 1.0 : 0.0, 1e-2) << "pair " << i << "," << j;
    }
}

TEST(Decode, ZeroParametersClosedForm) {
  DecoderParams p = init_decoder(4, 16, 7, 16, 2, FieldMode::density, 1);
  auto zero_all = [&](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
  zero_all(p.w_rff); zero_all(p.head_w); zero_all(p.head_b);
  zero_all(p.w1); zero_all(p.b1); zero_all(p.w2); zero_all(p.b2); zero_all(p.w3); zero_all(p.b3);

  std::vector<double> feature = {0.1, 0.5, -0.2, 0.9};
  FieldSample fs = decode(p, feature, normalized({0.1, 0.2, 0.9}));
  EXPECT_NEAR(fs.geometry, std::log(2.0), 1e-12);
  EXPECT_NEAR(fs.color.x, 0.5, 1e-12);
  EXPECT_NEAR(fs.color.y, 0.5, 1e-12);
  EXPECT_NEAR(fs.color.z, 0.5, 1e-12);

  p.mode = FieldMode::sdf;
  EXPECT_NEAR(decode(p, feature, {0, 0, 1}).geometry, 0.0, 1e-15);
}

// The decoder consumes only (feature, direction): identical pairs gathered at
// different positions and LODs give byte-identical outputs.
TEST(Decode, PositionAndScaleInvariance) {
  ModelConfig mc;
  mc.num_levels = 3;
  mc.base_resolution = 8;
  mc.init_scale = 0.0;
  Model m = make_model(mc, 7);
  // constant deviation per level: every (p, L<=1) yields the same feature
  for (auto& v : m.grid.levels[0].values) v = 0.37;
  for (auto& v : m.grid.levels[1].values) v = -0.11;

  Vec3 dir = normalized({0.2, -0.4, 0.6});
  std::vector<double> sh(sh_basis_size(m.decoder.sh_degree));
  sh_encode_into(dir, m.decoder.sh_degree, sh);
  EvalScratch s1, s2;
  FieldSample a = eval_sample(m, {0.1, 0.2, 0.3}, 1.0, sh, s1);
  FieldSample b = eval_sample(m, {-0.7, 0.5, -0.2}, 1.0, sh, s2);
  EXPECT_EQ(std::memcmp(&a.geometry, &b.geometry, sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(&a.color, &b.color, sizeof(Vec3)), 0);

  // L = 1 and L = 0.999999... differ only through the level-1 weight; with a
  // constant level-1 grid the integral-L value equals blending at alpha -> 1
  FieldSample c = eval_sample(m, {2.5, -4.0, 0.8}, 1.0, sh, s2);
  EXPECT_EQ(std::memcmp(&a.color, &c.color, sizeof(Vec3)), 0);
}

TEST(Decode, DensityNonNegativeColorInUnitInterval) {
  DecoderParams p = init_decoder(4, 16, 7, 16, 2, FieldMode::density, 99);
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> feature(4);
    for (auto& f : feature) f = rng.uniform(-3.0, 3.0);
    FieldSample fs = decode(p, feature, normalized({rng.normal(), rng.normal(), rng.normal()}));
    EXPECT_GE(fs.geometry, 0.0);
    for (int ch = 0; ch < 3; ++ch) {
      EXPECT_GT(fs.color[ch], 0.0);
      EXPECT_LT(fs.color[ch], 1.0);
    }
  }
}

// Full parameter Jacobian against central differences on a random small
// config, through a scalar probe a*geometry + <b, color>.
TEST(Decode, ParameterGradientsMatchFiniteDifferences) {
  for (FieldMode mode : {FieldMode::density, FieldMode::sdf}) {
    DecoderParams p = init_decoder(4, 8, 5, 8, 1, mode, 31);
    std::vector<double> feature = {0.4, -0.9, 0.25, 1.3};
    Vec3 dir = normalized({0.5, 0.1, -0.8});
    std::vector<double> sh = sh_encode(dir, p.sh_degree);
    double a = 0.8;
    Vec3 b{0.3, -0.6, 0.9};

    auto probe = [&]() {
      DecodeTape t;
      DecodeScratch sc;
      FieldSample fs = decode_with_sh(p, feature, sh, t, sc);
      return a * fs.geometry + dot(b, fs.color);
    };

    DecoderGrads grads;
    grads.init(p);
    DecodeTape tape;
    DecodeScratch sc;
    decode_with_sh(p, feature, sh, tape, sc);
    std::vector<double> dfeature(4, 0.0);
    decode_backward(p, tape, sh, a, b, grads, dfeature, sc);

    auto check = [&](std::vector<double>& param, std::vector<double>& grad, const char* name) {
      for (size_t i = 0; i < param.size(); ++i) {
        double saved = param[i], h = 1e-5;
        param[i] = saved + h;
        double up = probe();
        param[i] = saved - h;
        double dn = probe();
        param[i] = saved;
        double fd = (up - dn) / (2.0 * h);
        double denom = std::max({std::fabs(fd), std::fabs(grad[i]), 1e-6});
        EXPECT_LE(std::fabs(fd - grad[i]) / denom, 1e-5) << name << "[" << i << "]";
      }
    };
    check(p.w_rff, grads.w_rff, "w_rff");
    check(p.head_w, grads.head_w, "head_w");
    check(p.head_b, grads.head_b, "head_b");
    check(p.w1, grads.w1, "w1");
    check(p.b1, grads.b1, "b1");
    check(p.w2, grads.w2, "w2");
    check(p.b2, grads.b2, "b2");
    check(p.w3, grads.w3, "w3");
    check(p.b3, grads.b3, "b3");

    // input-feature gradient too
    for (int i = 0; i < 4; ++i) {
      double saved = feature[i], h = 1e-5;
      feature[i] = saved + h;
      double up = probe();
      feature[i] = saved - h;
      double dn = probe();
      feature[i] = saved;
      double fd = (up - dn) / (2.0 * h);
      double denom = std::max({std::fabs(fd), std::fabs(dfeature[i]), 1e-6});
      EXPECT_LE(std::fabs(fd - dfeature[i]) / denom, 1e-5) << "feature[" << i << "]";
    }
  }
}
