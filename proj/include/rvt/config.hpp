#pragma once

#include <cstdint>
#include <string>

#include "rvt/encoder.hpp"
#include "rvt/synth.hpp"
#include "rvt/train.hpp"

namespace rvt {

struct GeeOptions {
  bool endpoint_mean = false;  // aggregate session gifs from the endpoints only
  bool standardize = false;    // z-score covariates before fitting
};

struct SaliencyRunOptions {
  std::size_t radius_px = 3;
  bool grad_times_input = false;
};

// Everything a run needs, serializable to a sectioned key=value file.
// `seed` and `mode` are stated once at the top level and mirrored into the
// sub-configs by finalize().
struct RunConfig {
  std::uint64_t seed = 1;
  ClassMode mode = ClassMode::Binary;
  std::size_t jobs = 1;
  std::string data_dir;
  std::string out_dir;
  SynthConfig synth;
  EncoderConfig encoder;
  TrainConfig train;
  GeeOptions gee;
  SaliencyRunOptions saliency;

  // Mirrors the top-level fields into the sub-configs and validates
  // everything; throws on any inconsistency.
  void finalize();
};

// Parses `key = value` lines under [section] headers; '#' starts a comment.
// Unknown sections or keys are rejected. The result is finalized.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

// Emits every setting the parser accepts, in a fixed order, such that
// parse_config_text(serialize_config(c)) reproduces c exactly.
std::string serialize_config(const RunConfig& cfg);

}  // namespace rvt
