#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rvt/tensor.hpp"

namespace rvt {

// Clip encoder: per-frame conv blocks (conv 3x3 -> ReLU -> layer norm -> 2x
// average pool), flatten to Q spatial tokens of width embed_dim, add learned
// positional embeddings, N pre-norm self-attention + FFN layers across
// tokens, mean-pool to one vector per frame, project to feature_dim, add
// temporal positional embeddings, F attention layers across the T frames,
// mean-pool over time.
struct EncoderConfig {
  std::size_t input_height = 56;
  std::size_t input_width = 56;  // includes the mask column
  std::size_t frames = 16;       // T
  std::size_t conv_blocks = 2;   // M
  std::size_t spatial_layers = 2;  // N
  std::size_t temporal_layers = 1;  // F
  std::size_t embed_dim = 32;    // C
  std::size_t heads = 4;
  std::size_t feature_dim = 64;  // S
  std::size_t ffn_mult = 2;

  void validate() const;
  std::size_t conv_channels(std::size_t block) const;  // channel schedule, last == embed_dim
  std::size_t map_height() const;  // spatial extent after the conv stack
  std::size_t map_width() const;
  std::size_t tokens() const;  // Q = map_height * map_width
};

struct AttentionLayerParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct EncoderParams {
  std::vector<Tensor> conv_w, conv_b;  // per block
  Tensor pos_spatial;                  // (Q, C)
  std::vector<AttentionLayerParams> spatial;
  Tensor proj_w, proj_b;               // (C, S), (S)
  Tensor pos_temporal;                 // (T, S)
  std::vector<AttentionLayerParams> temporal;

  // Gaussian(0, 0.02) weights, zero biases, unit layer-norm gains; every
  // tensor draws from its own named stream of `seed`.
  static EncoderParams init(const EncoderConfig& cfg, std::uint64_t seed);

  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> parameters() const;
  void set_requires_grad(bool v);
};

// Appends the mask-bit column to the face frames: (T,1,H,W-1) plus a bit
// becomes a fresh leaf of shape (T,1,H,W). Gradients taken on the result are
// gradients with respect to the model input pixels.
Tensor compose_input(const Tensor& face_frames, bool mask_bit, bool requires_grad = false);

// Conv trunk: composed clip (T,1,H,W) -> tokens (T, Q, C).
Tensor conv_features(const Tensor& composed, const EncoderParams& p, const EncoderConfig& cfg);
// Token pipeline: (T, Q, C) -> clip feature (S).
Tensor encode_tokens(const Tensor& tokens, const EncoderParams& p, const EncoderConfig& cfg);
// Full encoder: composed clip -> clip feature X^E of shape (S).
Tensor encode_clip(const Tensor& composed, const EncoderParams& p, const EncoderConfig& cfg);

}  // namespace rvt
