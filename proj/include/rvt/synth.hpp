#pragma once

#include <cstdint>

#include "rvt/data.hpp"

namespace rvt {

// Schematic-face session generator. Per session it draws
//   pre  ~ Uniform[0, 4]
//   post = clamp(pre + drift, 0, 10),  drift ~ Uniform[0, 6]
// and interpolates the latent fatigue linearly across the K clips. Each frame
// shows a face oval on a dark background; the intensity of the eye-aperture
// row band decreases affinely with the latent fatigue. Noise scales with one
// knob, sigma: a per-clip band offset whose spread ramps from 0 at clip 1 to
// sigma at clip K (time-on-task variability), plus per-pixel texture noise
// with spread sigma. With sigma = 0 the band intensity is an exact affine
// function of the latent value with slope -eye_slope/10.
//
// When a clip's mask flag is drawn, the bottom third of the frame is
// overwritten with mask_value. Reaction time follows
//   rt = 0.8 + 0.05 * mean displayed fatigue - 0.03 * (session_index - 1) + N(0, 0.02)
// clamped positive, where "displayed" is the fatigue value actually rendered
// into the band (latent plus the per-clip offset mapped through the slope),
// i.e. the signal a video model can recover.
struct SynthConfig {
  int participants = 24;
  int sessions_per_participant = 5;
  int clips_per_session = 8;  // K
  int frames_per_clip = 16;   // T
  int image_height = 112;     // composed size; the rendered face crop is height x (width-1)
  int image_width = 112;
  double noise_sigma = 0.12;
  double mask_probability = 0.25;
  ClassMode mode = ClassMode::Binary;

  // face geometry, as fractions of the crop
  double eye_band_top = 0.28;
  double eye_band_bottom = 0.48;

  // rendering levels
  double background = 0.15;
  double face_value = 0.55;
  double eye_base = 0.85;
  double eye_slope = 0.5;  // band intensity = eye_base - eye_slope * latent / 10
  double mouth_value = 0.4;
  double mask_value = 0.75;

  void validate() const;
};

// Rows [first, second) of the eye band for a crop of the given height.
std::pair<std::size_t, std::size_t> eye_band_rows(const SynthConfig& cfg, std::size_t height);

// Landmark layout of the schematic face (static across sessions):
// 0 eye_left, 1 eye_right, 2 nose, 3 mouth_left, 4 mouth_center, 5 mouth_right.
std::vector<Landmark> synth_landmarks(const SynthConfig& cfg);

// Deterministic per (cfg, seed, participant, session); the stream is derived
// from the session coordinates, so sessions can be produced in any order.
Session synthesize_session(const SynthConfig& cfg, std::uint64_t seed, int participant_index,
                           int session_index);

std::string synth_participant_id(int participant_index);

Dataset generate_synthetic(const SynthConfig& cfg, std::uint64_t seed);

}  // namespace rvt
