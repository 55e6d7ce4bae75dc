#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rvt/data.hpp"
#include "rvt/tensor.hpp"

namespace rvt {

enum class CellKind { Rnn, Gru };
enum class LossKind { Absolute, CrossEntropy };

CellKind cell_kind_from_name(const std::string& name);
std::string cell_kind_name(CellKind cell);
LossKind loss_kind_from_name(const std::string& name);
std::string loss_kind_name(LossKind kind);

// Session head: one recurrent cell consumes clip features in order and a
// linear readout turns each state into a per-clip fatigue score in [0,1].
struct HeadConfig {
  std::size_t feature_dim = 64;
  std::size_t hidden = 32;
  ClassMode mode = ClassMode::Binary;
  CellKind cell = CellKind::Rnn;

  void validate() const;
  std::size_t outputs() const;  // readout width: 1 (binary) or class count
};

struct HeadParams {
  // Vanilla tanh cell: state = tanh(x*w_x + h*w_h + b_h).
  Tensor w_x, w_h, b_h;
  // Gated cell (only populated when cell == Gru):
  //   z = sigmoid(x*w_xz + h*w_hz + b_z), r likewise,
  //   n = tanh(x*w_xn + (r.h)*w_hn + b_n), state = (1-z).n + z.h
  Tensor w_xz, w_hz, b_z;
  Tensor w_xr, w_hr, b_r;
  Tensor w_xn, w_hn, b_n;
  // Readout: logits = state*w_o + b_o.
  Tensor w_o, b_o;
  CellKind cell = CellKind::Rnn;

  static HeadParams init(const HeadConfig& cfg, std::uint64_t seed);

  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> parameters() const;
  // The hidden-to-hidden matrices; zeroing them removes all cross-clip flow.
  std::vector<Tensor> recurrent_parameters() const;
  void set_requires_grad(bool v);
};

struct StepResult {
  Tensor state;   // (hidden)
  Tensor logits;  // (outputs)
  Tensor probs;   // class probabilities, (outputs); sigmoid value in binary mode
  Tensor gifs;    // scalar score in [0,1], shape (1)
  int decision = 0;
};

// One cell update + readout. `prev` may be undefined, meaning the zero state
// before the first clip of a session.
StepResult head_step(const Tensor& feature, const Tensor& prev, const HeadParams& p,
                     const HeadConfig& cfg);

struct SessionTrace {
  std::vector<Tensor> gifs;    // K scalars, graph-connected
  std::vector<Tensor> logits;  // K raw readouts
  std::vector<Tensor> probs;   // K probability vectors
  std::vector<Tensor> states;  // K hidden states
  std::vector<int> decisions;  // K class decisions
  std::vector<double> hidden_norms;  // L2 norm of each state
};

// Threads the state through clips j=1..K starting from zero. Nothing is
// carried past the final clip.
SessionTrace run_session(const std::vector<Tensor>& features, const HeadParams& p,
                         const HeadConfig& cfg);

// Endpoint-only loss: first and last clip scores against the binarized (or
// normalized three-class) pre/post labels; middle clips contribute nothing.
Tensor session_loss(const SessionTrace& trace, double pre, double post, const HeadConfig& cfg,
                    LossKind kind = LossKind::Absolute);

}  // namespace rvt
