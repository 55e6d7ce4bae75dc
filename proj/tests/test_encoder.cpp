// Encoder contract tests: shapes, the degenerate straight-line oracle,
// token permutation invariance, mask-bit sensitivity, and a full
// finite-difference pass through the composite.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include <doctest.h>

#include "rvt/encoder.hpp"
#include "rvt/ops.hpp"
#include "rvt/rng.hpp"

#include "test_util.hpp"

using namespace rvt;
using namespace rvt::testutil;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.input_height = 8;
  cfg.input_width = 8;
  cfg.frames = 2;
  cfg.conv_blocks = 2;
  cfg.spatial_layers = 1;
  cfg.temporal_layers = 1;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.feature_dim = 8;
  cfg.validate();
  return cfg;
}

Tensor random_clip(const EncoderConfig& cfg, Rng& rng, bool requires_grad = false) {
  Shape s{cfg.frames, 1, cfg.input_height, cfg.input_width - 1};
  std::vector<double> data(shape_numel(s));
  for (double& v : data) v = rng.uniform(0.0, 1.0);
  return Tensor::from_vector(std::move(s), std::move(data), requires_grad);
}

// Plain-loop reimplementation of the conv trunk + mean pooling + projection
// for the degenerate configuration where every attention block is the
// identity (zeroed output projections and FFN second layers) and both
// positional tables are zero.
std::vector<double> straight_line_reference(const Tensor& composed, const EncoderParams& p,
                                            const EncoderConfig& cfg) {
  const std::size_t T = cfg.frames;
  std::size_t h = cfg.input_height;
  std::size_t w = cfg.input_width;
  std::size_t cin = 1;
  std::vector<double> cur(composed.values().begin(), composed.values().end());  // (T,cin,h,w)

  for (std::size_t b = 0; b < cfg.conv_blocks; ++b) {
    const std::size_t cout = cfg.conv_channels(b);
    auto wv = p.conv_w[b].values();   // (cout, cin, 3, 3)
    auto bv = p.conv_b[b].values();   // (cout)
    std::vector<double> conv(T * cout * h * w, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t oc = 0; oc < cout; ++oc) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            double acc = bv[oc];
            for (std::size_t ic = 0; ic < cin; ++ic) {
              for (int ky = -1; ky <= 1; ++ky) {
                for (int kx = -1; kx <= 1; ++kx) {
                  const int sy = static_cast<int>(y) + ky;
                  const int sx = static_cast<int>(x) + kx;
                  if (sy < 0 || sx < 0 || sy >= static_cast<int>(h) || sx >= static_cast<int>(w)) continue;
                  const double pix = cur[((t * cin + ic) * h + static_cast<std::size_t>(sy)) * w +
                                         static_cast<std::size_t>(sx)];
                  const double wgt = wv[((oc * cin + ic) * 3 + static_cast<std::size_t>(ky + 1)) * 3 +
                                        static_cast<std::size_t>(kx + 1)];
                  acc += pix * wgt;
                }
              }
            }
            conv[((t * cout + oc) * h + y) * w + x] = std::max(0.0, acc);
          }
        }
      }
      // Layer norm over (cout, h, w) of this frame.
      const std::size_t plane = cout * h * w;
      double mean = 0.0;
      for (std::size_t i = 0; i < plane; ++i) mean += conv[t * plane + i];
      mean /= static_cast<double>(plane);
      double var = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = conv[t * plane + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(plane);
      const double inv = 1.0 / std::sqrt(var + 1e-10);
      for (std::size_t i = 0; i < plane; ++i) conv[t * plane + i] = (conv[t * plane + i] - mean) * inv;
    }
    // 2x2 average pooling.
    const std::size_t ph = h / 2, pw = w / 2;
    std::vector<double> pooled(T * cout * ph * pw);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t c = 0; c < cout; ++c) {
        for (std::size_t y = 0; y < ph; ++y) {
          for (std::size_t x = 0; x < pw; ++x) {
            const auto src = [&](std::size_t yy, std::size_t xx) {
              return conv[((t * cout + c) * h + yy) * w + xx];
            };
            pooled[((t * cout + c) * ph + y) * pw + x] =
                0.25 * (src(2 * y, 2 * x) + src(2 * y, 2 * x + 1) + src(2 * y + 1, 2 * x) +
                        src(2 * y + 1, 2 * x + 1));
          }
        }
      }
    }
    cur = std::move(pooled);
    cin = cout;
    h = ph;
    w = pw;
  }

  // Mean over the Q = h*w tokens per frame gives (T, C); project to (T, S);
  // mean over T.
  const std::size_t C = cfg.embed_dim;
  const std::size_t S = cfg.feature_dim;
  const std::size_t Q = h * w;
  auto pw_ = p.proj_w.values();  // (C, S)
  auto pb_ = p.proj_b.values();  // (S)
  std::vector<double> out(S, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> mean_c(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t q = 0; q < Q; ++q) {
        // cur layout: (T, C, h, w); token q = y*w + x.
        mean_c[c] += cur[(t * C + c) * Q + q];
      }
      mean_c[c] /= static_cast<double>(Q);
    }
    for (std::size_t s = 0; s < S; ++s) {
      double acc = pb_[s];
      for (std::size_t c = 0; c < C; ++c) acc += mean_c[c] * pw_[c * S + s];
      out[s] += acc;
    }
  }
  for (double& v : out) v /= static_cast<double>(T);
  return out;
}

void zero_tensor(Tensor& t) {
  auto v = t.mutable_values();
  for (double& x : v) x = 0.0;
}

// Makes every attention block an identity and removes the positional tables.
void degenerate(EncoderParams& p) {
  zero_tensor(p.pos_spatial);
  zero_tensor(p.pos_temporal);
  for (auto* layers : {&p.spatial, &p.temporal}) {
    for (AttentionLayerParams& l : *layers) {
      zero_tensor(l.wo);
      zero_tensor(l.bo);
      zero_tensor(l.ffn_w2);
      zero_tensor(l.ffn_b2);
    }
  }
}

}  // namespace

TEST_CASE("encoder configuration validation") {
  EncoderConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.map_height() == 2);
  CHECK(cfg.map_width() == 2);
  CHECK(cfg.tokens() == 4);
  // Channel schedule reaches embed_dim in the last block and floors at 4.
  CHECK(cfg.conv_channels(cfg.conv_blocks - 1) == cfg.embed_dim);
  CHECK(cfg.conv_channels(0) >= 4);

  SUBCASE("input not divisible by the pooling factor") {
    cfg.input_height = 10;
    CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
  }
  SUBCASE("embed dim not a multiple of heads") {
    cfg.embed_dim = 9;
    CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
  }
  SUBCASE("feature dim not a multiple of heads") {
    cfg.feature_dim = 9;
    CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
  }
}

TEST_CASE("parameter init is deterministic per seed and named uniquely") {
  const EncoderConfig cfg = tiny_config();
  EncoderParams a = EncoderParams::init(cfg, 42);
  EncoderParams b = EncoderParams::init(cfg, 42);
  EncoderParams c = EncoderParams::init(cfg, 43);
  auto named_a = a.named();
  auto named_b = b.named();
  auto named_c = c.named();
  REQUIRE(named_a.size() == named_b.size());

  bool any_differs = false;
  std::set<std::string> names;
  for (std::size_t i = 0; i < named_a.size(); ++i) {
    CHECK(names.insert(named_a[i].first).second);  // unique names
    auto va = named_a[i].second.values();
    auto vb = named_b[i].second.values();
    auto vc = named_c[i].second.values();
    for (std::size_t k = 0; k < va.size(); ++k) {
      CHECK(va[k] == vb[k]);
      if (va[k] != vc[k]) any_differs = true;
    }
  }
  CHECK(any_differs);
}

TEST_CASE("compose_input appends the mask column") {
  const EncoderConfig cfg = tiny_config();
  Rng rng(1);
  Tensor face = random_clip(cfg, rng);
  Tensor with = compose_input(face, true);
  Tensor without = compose_input(face, false);
  CHECK(with.shape() == Shape{cfg.frames, 1, cfg.input_height, cfg.input_width});
  const std::size_t W = cfg.input_width;
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    for (std::size_t y = 0; y < cfg.input_height; ++y) {
      CHECK(with.at({t, 0, y, W - 1}) == 1.0);
      CHECK(without.at({t, 0, y, W - 1}) == 0.0);
      CHECK(with.at({t, 0, y, 0}) == face.at({t, 0, y, 0}));
    }
  }
  // The composed clip carries no graph link back to the face frames; it is
  // its own leaf, which is what the saliency pass differentiates against.
  CHECK_FALSE(with.requires_grad());
  CHECK(compose_input(face, false, true).requires_grad());

  // Wrong shapes are rejected by the conv trunk.
  EncoderParams p = EncoderParams::init(cfg, 3);
  CHECK_THROWS_AS(conv_features(Tensor::full({2, 1, 8, 9 + 1}, 0.5), p, cfg), std::runtime_error);
  CHECK_THROWS_AS(compose_input(Tensor::full({8, 8}, 0.5), false), std::runtime_error);
}

TEST_CASE("encode_clip output shape and finiteness") {
  const EncoderConfig cfg = tiny_config();
  EncoderParams p = EncoderParams::init(cfg, 7);
  Rng rng(2);
  Tensor composed = compose_input(random_clip(cfg, rng), false);
  Tensor feat = encode_clip(composed, p, cfg);
  CHECK(feat.shape() == Shape{cfg.feature_dim});
  for (double v : feat.values()) CHECK(std::isfinite(v));
}

TEST_CASE("degenerate encoder equals the straight-line reference") {
  const EncoderConfig cfg = tiny_config();
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    EncoderParams p = EncoderParams::init(cfg, seed);
    degenerate(p);
    Rng rng(seed + 100);
    Tensor composed = compose_input(random_clip(cfg, rng), rng.bernoulli(0.5));
    Tensor feat = encode_clip(composed, p, cfg);
    const auto ref = straight_line_reference(composed, p, cfg);
    REQUIRE(feat.numel() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(feat.values()[i] == doctest::Approx(ref[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("token pipeline is permutation invariant without positions") {
  const EncoderConfig cfg = tiny_config();
  EncoderParams p = EncoderParams::init(cfg, 11);
  zero_tensor(p.pos_spatial);

  Rng rng(3);
  const std::size_t T = cfg.frames, Q = cfg.tokens(), C = cfg.embed_dim;
  Tensor tokens = random_tensor({T, Q, C}, rng, -1.0, 1.0, false);

  // A fixed rotation of the token axis, applied per frame.
  std::vector<std::size_t> rotated(Q);
  for (std::size_t i = 0; i < Q; ++i) rotated[i] = (i + 1) % Q;

  std::vector<double> shuffled(tokens.numel());
  auto tv = tokens.values();
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t q = 0; q < Q; ++q) {
      for (std::size_t c = 0; c < C; ++c) {
        shuffled[(t * Q + rotated[q]) * C + c] = tv[(t * Q + q) * C + c];
      }
    }
  }
  Tensor tokens_shuffled = Tensor::from_vector({T, Q, C}, std::move(shuffled));

  Tensor a = encode_tokens(tokens, p, cfg);
  Tensor b = encode_tokens(tokens_shuffled, p, cfg);
  REQUIRE(a.numel() == b.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    CHECK(std::fabs(a.values()[i] - b.values()[i]) < 1e-10);
  }

  // With the positional table restored the invariance must break.
  EncoderParams q2 = EncoderParams::init(cfg, 11);
  Tensor c1 = encode_tokens(tokens, q2, cfg);
  Tensor c2 = encode_tokens(tokens_shuffled, q2, cfg);
  double diff = 0.0;
  for (std::size_t i = 0; i < c1.numel(); ++i) {
    diff = std::max(diff, std::fabs(c1.values()[i] - c2.values()[i]));
  }
  CHECK(diff > 1e-8);
}

TEST_CASE("mask bit changes the encoding") {
  const EncoderConfig cfg = tiny_config();
  EncoderParams p = EncoderParams::init(cfg, 5);
  Rng rng(6);
  Tensor face = random_clip(cfg, rng);
  Tensor with = encode_clip(compose_input(face, true), p, cfg);
  Tensor without = encode_clip(compose_input(face, false), p, cfg);
  double diff = 0.0;
  for (std::size_t i = 0; i < with.numel(); ++i) {
    diff = std::max(diff, std::fabs(with.values()[i] - without.values()[i]));
  }
  CHECK(diff > 1e-8);
}

TEST_CASE("finite differences through the whole encoder") {
  EncoderConfig cfg = tiny_config();
  cfg.frames = 1;  // keep the FD loop cheap
  EncoderParams p = EncoderParams::init(cfg, 17);
  Rng rng(18);

  // Gradients with respect to the composed input pixels (the saliency path).
  Tensor face = random_clip(cfg, rng);
  Tensor composed = compose_input(face, true, true);
  fd_check("encoder pixels",
           [&](const std::vector<Tensor>& leaves) {
             Tensor feat = encode_clip(leaves[0], p, cfg);
             Rng fresh(19);
             return ops::sum_all(ops::mul(feat, projection_like(feat, fresh)));
           },
           {composed}, 1e-5, 2e-4);

  // And through a couple of parameters (first conv kernel, projection).
  Tensor fixed = compose_input(face, false, false);
  fd_check("encoder conv weight",
           [&](const std::vector<Tensor>&) {
             Tensor feat = encode_clip(fixed, p, cfg);
             Rng fresh(23);
             return ops::sum_all(ops::mul(feat, projection_like(feat, fresh)));
           },
           {p.conv_w[0]}, 1e-5, 2e-4);
  fd_check("encoder projection",
           [&](const std::vector<Tensor>&) {
             Tensor feat = encode_clip(fixed, p, cfg);
             Rng fresh(29);
             return ops::sum_all(ops::mul(feat, projection_like(feat, fresh)));
           },
           {p.proj_w}, 1e-5, 2e-4);
}
