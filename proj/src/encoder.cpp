#include "rvt/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "rvt/ops.hpp"
#include "rvt/rng.hpp"

namespace rvt {

void EncoderConfig::validate() const {
  auto bad = [](const std::string& msg) { throw std::runtime_error("encoder config: " + msg); };
  if (conv_blocks < 1) bad("conv_blocks must be >= 1");
  if (spatial_layers < 1) bad("spatial_layers must be >= 1");
  if (temporal_layers < 1) bad("temporal_layers must be >= 1");
  if (frames < 1) bad("frames must be >= 1");
  if (embed_dim < heads || embed_dim % heads != 0) bad("embed_dim must be a multiple of heads");
  if (feature_dim < heads || feature_dim % heads != 0) bad("feature_dim must be a multiple of heads");
  std::size_t h = input_height, w = input_width;
  for (std::size_t b = 0; b < conv_blocks; ++b) {
    if (h % 2 != 0 || w % 2 != 0) {
      bad("spatial extent " + std::to_string(h) + "x" + std::to_string(w) +
          " at conv block " + std::to_string(b) + " is not divisible by 2");
    }
    h /= 2;
    w /= 2;
  }
  if (h == 0 || w == 0) bad("conv stack collapses the image to zero size");
}

std::size_t EncoderConfig::conv_channels(std::size_t block) const {
  if (block >= conv_blocks) throw std::runtime_error("encoder config: conv block index out of range");
  // Halve the width per level going backwards from embed_dim, floor 4.
  std::size_t c = embed_dim >> (conv_blocks - 1 - block);
  return std::max<std::size_t>(c, 4);
}

std::size_t EncoderConfig::map_height() const { return input_height >> conv_blocks; }
std::size_t EncoderConfig::map_width() const { return input_width >> conv_blocks; }
std::size_t EncoderConfig::tokens() const { return map_height() * map_width(); }

namespace {

Tensor gaussian_init(Shape shape, double stddev, std::uint64_t seed, const std::string& name) {
  Rng rng(derive_seed(seed, "init/" + name));
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.normal(0.0, stddev);
  return Tensor::from_vector(std::move(shape), std::move(data), true);
}

AttentionLayerParams init_layer(std::size_t dim, std::size_t ffn, std::uint64_t seed,
                                const std::string& prefix) {
  AttentionLayerParams l;
  l.ln1_g = Tensor::full({dim}, 1.0, true);
  l.ln1_b = Tensor::zeros({dim}, true);
  l.wq = gaussian_init({dim, dim}, 0.02, seed, prefix + ".wq");
  l.bq = Tensor::zeros({dim}, true);
  l.wk = gaussian_init({dim, dim}, 0.02, seed, prefix + ".wk");
  l.bk = Tensor::zeros({dim}, true);
  l.wv = gaussian_init({dim, dim}, 0.02, seed, prefix + ".wv");
  l.bv = Tensor::zeros({dim}, true);
  l.wo = gaussian_init({dim, dim}, 0.02, seed, prefix + ".wo");
  l.bo = Tensor::zeros({dim}, true);
  l.ln2_g = Tensor::full({dim}, 1.0, true);
  l.ln2_b = Tensor::zeros({dim}, true);
  l.ffn_w1 = gaussian_init({dim, ffn}, 0.02, seed, prefix + ".ffn_w1");
  l.ffn_b1 = Tensor::zeros({ffn}, true);
  l.ffn_w2 = gaussian_init({ffn, dim}, 0.02, seed, prefix + ".ffn_w2");
  l.ffn_b2 = Tensor::zeros({dim}, true);
  return l;
}

void collect_layer(const AttentionLayerParams& l, const std::string& prefix,
                   std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".ln1_g", l.ln1_g);
  out.emplace_back(prefix + ".ln1_b", l.ln1_b);
  out.emplace_back(prefix + ".wq", l.wq);
  out.emplace_back(prefix + ".bq", l.bq);
  out.emplace_back(prefix + ".wk", l.wk);
  out.emplace_back(prefix + ".bk", l.bk);
  out.emplace_back(prefix + ".wv", l.wv);
  out.emplace_back(prefix + ".bv", l.bv);
  out.emplace_back(prefix + ".wo", l.wo);
  out.emplace_back(prefix + ".bo", l.bo);
  out.emplace_back(prefix + ".ln2_g", l.ln2_g);
  out.emplace_back(prefix + ".ln2_b", l.ln2_b);
  out.emplace_back(prefix + ".ffn_w1", l.ffn_w1);
  out.emplace_back(prefix + ".ffn_b1", l.ffn_b1);
  out.emplace_back(prefix + ".ffn_w2", l.ffn_w2);
  out.emplace_back(prefix + ".ffn_b2", l.ffn_b2);
}

// (B, n, dim) -> (B, heads, n, dim/heads)
Tensor split_heads(const Tensor& t, std::size_t heads) {
  const Shape& s = t.shape();
  const std::size_t b = s[0], n = s[1], d = s[2];
  Tensor r = ops::reshape(t, {b, n, heads, d / heads});
  return ops::permute(r, {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& t) {
  const Shape& s = t.shape();  // (B, heads, n, dh)
  Tensor r = ops::permute(t, {0, 2, 1, 3});
  return ops::reshape(r, {s[0], s[2], s[1] * s[3]});
}

// One pre-norm block over (B, n, dim) token stacks.
Tensor attention_block(const Tensor& x, const AttentionLayerParams& l, std::size_t heads) {
  Tensor u = ops::add(ops::mul(ops::layer_norm(x, 1), l.ln1_g), l.ln1_b);
  Tensor q = split_heads(ops::add(ops::matmul(u, l.wq), l.bq), heads);
  Tensor k = split_heads(ops::add(ops::matmul(u, l.wk), l.bk), heads);
  Tensor v = split_heads(ops::add(ops::matmul(u, l.wv), l.bv), heads);
  Tensor att = merge_heads(ops::attention(q, k, v));
  Tensor y = ops::add(x, ops::add(ops::matmul(att, l.wo), l.bo));
  Tensor w = ops::add(ops::mul(ops::layer_norm(y, 1), l.ln2_g), l.ln2_b);
  Tensor f = ops::add(ops::matmul(ops::relu(ops::add(ops::matmul(w, l.ffn_w1), l.ffn_b1)), l.ffn_w2),
                      l.ffn_b2);
  return ops::add(y, f);
}

}  // namespace

EncoderParams EncoderParams::init(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  EncoderParams p;
  std::size_t cin = 1;
  for (std::size_t b = 0; b < cfg.conv_blocks; ++b) {
    const std::size_t cout = cfg.conv_channels(b);
    p.conv_w.push_back(gaussian_init({cout, cin, 3, 3}, 0.02, seed, "conv" + std::to_string(b) + ".w"));
    p.conv_b.push_back(Tensor::zeros({cout}, true));
    cin = cout;
  }
  p.pos_spatial = gaussian_init({cfg.tokens(), cfg.embed_dim}, 0.02, seed, "pos_spatial");
  const std::size_t ffn_s = cfg.embed_dim * cfg.ffn_mult;
  for (std::size_t i = 0; i < cfg.spatial_layers; ++i) {
    p.spatial.push_back(init_layer(cfg.embed_dim, ffn_s, seed, "spatial" + std::to_string(i)));
  }
  p.proj_w = gaussian_init({cfg.embed_dim, cfg.feature_dim}, 0.02, seed, "proj.w");
  p.proj_b = Tensor::zeros({cfg.feature_dim}, true);
  p.pos_temporal = gaussian_init({cfg.frames, cfg.feature_dim}, 0.02, seed, "pos_temporal");
  const std::size_t ffn_t = cfg.feature_dim * cfg.ffn_mult;
  for (std::size_t i = 0; i < cfg.temporal_layers; ++i) {
    p.temporal.push_back(init_layer(cfg.feature_dim, ffn_t, seed, "temporal" + std::to_string(i)));
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> EncoderParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t b = 0; b < conv_w.size(); ++b) {
    out.emplace_back("encoder.conv" + std::to_string(b) + ".w", conv_w[b]);
    out.emplace_back("encoder.conv" + std::to_string(b) + ".b", conv_b[b]);
  }
  out.emplace_back("encoder.pos_spatial", pos_spatial);
  for (std::size_t i = 0; i < spatial.size(); ++i) {
    collect_layer(spatial[i], "encoder.spatial" + std::to_string(i), out);
  }
  out.emplace_back("encoder.proj.w", proj_w);
  out.emplace_back("encoder.proj.b", proj_b);
  out.emplace_back("encoder.pos_temporal", pos_temporal);
  for (std::size_t i = 0; i < temporal.size(); ++i) {
    collect_layer(temporal[i], "encoder.temporal" + std::to_string(i), out);
  }
  return out;
}

std::vector<Tensor> EncoderParams::parameters() const {
  std::vector<Tensor> out;
  for (auto& [n, t] : named()) out.push_back(t);
  return out;
}

void EncoderParams::set_requires_grad(bool v) {
  for (Tensor t : parameters()) t.set_requires_grad(v);
}

Tensor compose_input(const Tensor& face_frames, bool mask_bit, bool requires_grad) {
  if (!face_frames.defined() || face_frames.rank() != 4 || face_frames.shape()[1] != 1) {
    throw std::runtime_error("compose_input: face frames must be (T,1,H,W)");
  }
  const Shape& s = face_frames.shape();
  const std::size_t t = s[0], h = s[2], w = s[3];
  const double bit = mask_bit ? 1.0 : 0.0;
  std::vector<double> out;
  out.reserve(t * h * (w + 1));
  auto src = face_frames.values();
  for (std::size_t f = 0; f < t; ++f) {
    for (std::size_t y = 0; y < h; ++y) {
      const double* row = src.data() + (f * h + y) * w;
      out.insert(out.end(), row, row + w);
      out.push_back(bit);
    }
  }
  return Tensor::from_vector({t, 1, h, w + 1}, std::move(out), requires_grad);
}

Tensor conv_features(const Tensor& composed, const EncoderParams& p, const EncoderConfig& cfg) {
  if (!composed.defined() || composed.rank() != 4) {
    throw std::runtime_error("conv_features: composed clip must be (T,1,H,W)");
  }
  const Shape& s = composed.shape();
  if (s[0] != cfg.frames || s[1] != 1 || s[2] != cfg.input_height || s[3] != cfg.input_width) {
    throw std::runtime_error("conv_features: clip shape " + shape_str(s) + " does not match config (" +
                             std::to_string(cfg.frames) + ",1," + std::to_string(cfg.input_height) +
                             "," + std::to_string(cfg.input_width) + ")");
  }
  Tensor h = composed;
  for (std::size_t b = 0; b < cfg.conv_blocks; ++b) {
    h = ops::conv2d(h, p.conv_w[b], p.conv_b[b], 1);
    h = ops::relu(h);
    h = ops::layer_norm(h, 3);  // per frame over (C, H, W)
    h = ops::avg_pool2(h);
  }
  // (T, C, H', W') -> (T, Q, C)
  Tensor t = ops::permute(h, {0, 2, 3, 1});
  return ops::reshape(t, {cfg.frames, cfg.tokens(), cfg.embed_dim});
}

Tensor encode_tokens(const Tensor& tokens, const EncoderParams& p, const EncoderConfig& cfg) {
  const Shape expect{cfg.frames, cfg.tokens(), cfg.embed_dim};
  if (tokens.shape() != expect) {
    throw std::runtime_error("encode_tokens: token shape " + shape_str(tokens.shape()) +
                             ", expected " + shape_str(expect));
  }
  Tensor z = ops::add(tokens, p.pos_spatial);
  for (const auto& layer : p.spatial) z = attention_block(z, layer, cfg.heads);
  Tensor per_frame = ops::mean_axis(z, 1);                       // (T, C)
  Tensor proj = ops::add(ops::matmul(per_frame, p.proj_w), p.proj_b);  // (T, S)
  proj = ops::add(proj, p.pos_temporal);
  // Temporal attention treats the T frame vectors as one sequence.
  Tensor seq = ops::reshape(proj, {1, cfg.frames, cfg.feature_dim});
  for (const auto& layer : p.temporal) seq = attention_block(seq, layer, cfg.heads);
  Tensor pooled = ops::mean_axis(ops::reshape(seq, {cfg.frames, cfg.feature_dim}), 0);
  return pooled;  // (S)
}

Tensor encode_clip(const Tensor& composed, const EncoderParams& p, const EncoderConfig& cfg) {
  return encode_tokens(conv_features(composed, p, cfg), p, cfg);
}

}  // namespace rvt
