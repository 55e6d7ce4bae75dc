#include "rvt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rvt/rng.hpp"

namespace rvt {

void SynthConfig::validate() const {
  auto bad = [](const std::string& msg) { throw std::runtime_error("synth config: " + msg); };
  if (participants < 1) bad("participants must be >= 1");
  if (sessions_per_participant < 1) bad("sessions_per_participant must be >= 1");
  if (clips_per_session < 2) bad("clips_per_session must be >= 2");
  if (frames_per_clip < 1) bad("frames_per_clip must be >= 1");
  if (image_height < 8 || image_width < 8) bad("image size must be at least 8x8");
  if (noise_sigma < 0.0) bad("noise_sigma must be >= 0");
  if (mask_probability < 0.0 || mask_probability > 1.0) bad("mask_probability must be in [0, 1]");
  if (!(eye_band_top >= 0.0 && eye_band_bottom <= 0.6 && eye_band_top < eye_band_bottom)) {
    bad("eye band must satisfy 0 <= top < bottom <= 0.6");
  }
  if (eye_slope <= 0.0) bad("eye_slope must be positive");
}

std::pair<std::size_t, std::size_t> eye_band_rows(const SynthConfig& cfg, std::size_t height) {
  auto h = static_cast<double>(height);
  auto r0 = static_cast<std::size_t>(std::lround(cfg.eye_band_top * h));
  auto r1 = static_cast<std::size_t>(std::lround(cfg.eye_band_bottom * h));
  if (r1 <= r0) r1 = r0 + 1;
  if (r1 > height) throw std::runtime_error("eye_band_rows: band exceeds image height");
  return {r0, r1};
}

std::vector<Landmark> synth_landmarks(const SynthConfig& cfg) {
  const double w = static_cast<double>(cfg.image_width - 1);  // face crop width
  const double h = static_cast<double>(cfg.image_height);
  const double eye_y = 0.5 * (cfg.eye_band_top + cfg.eye_band_bottom) * h;
  const double mouth_y = (2.0 / 3.0 + 1.0 / 6.0) * h;  // middle of the bottom third
  return {
      {0, "eye_left", 0.34 * w, eye_y},
      {1, "eye_right", 0.66 * w, eye_y},
      {2, "nose", 0.50 * w, 0.58 * h},
      {3, "mouth_left", 0.36 * w, mouth_y},
      {4, "mouth_center", 0.50 * w, mouth_y},
      {5, "mouth_right", 0.64 * w, mouth_y},
  };
}

std::string synth_participant_id(int participant_index) {
  std::string n = std::to_string(participant_index + 1);
  while (n.size() < 3) n.insert(n.begin(), '0');
  return "P" + n;
}

Session synthesize_session(const SynthConfig& cfg, std::uint64_t seed, int participant_index,
                           int session_index) {
  cfg.validate();
  if (participant_index < 0 || participant_index >= cfg.participants) {
    throw std::runtime_error("synthesize_session: participant index out of range");
  }
  if (session_index < 1 || session_index > cfg.sessions_per_participant) {
    throw std::runtime_error("synthesize_session: session index out of range");
  }
  const std::string pid = synth_participant_id(participant_index);
  Rng rng(derive_seed(seed, "synth/" + pid + "/s" + std::to_string(session_index)));

  const int k = cfg.clips_per_session;
  const int t = cfg.frames_per_clip;
  const std::size_t height = static_cast<std::size_t>(cfg.image_height);
  const std::size_t width = static_cast<std::size_t>(cfg.image_width - 1);  // face crop

  const double pre = rng.uniform(0.0, 4.0);
  const double drift = rng.uniform(0.0, 6.0);
  const double post = std::clamp(pre + drift, 0.0, 10.0);

  std::vector<bool> masks(k);
  for (int j = 0; j < k; ++j) masks[j] = rng.bernoulli(cfg.mask_probability);

  // Per-clip band offsets; spread ramps linearly over the session.
  std::vector<double> clip_offset(k);
  for (int j = 0; j < k; ++j) {
    const double ramp = static_cast<double>(j) / static_cast<double>(k - 1);
    clip_offset[j] = rng.normal(0.0, cfg.noise_sigma * ramp);
  }

  const double rt_eps = rng.normal(0.0, 0.02);

  // Static geometry.
  const auto [band_lo, band_hi] = eye_band_rows(cfg, height);
  const std::size_t mouth_lo = (2 * height) / 3;
  const double cy = 0.5 * static_cast<double>(height - 1);
  const double cx = 0.5 * static_cast<double>(width - 1);
  const double ry = 0.48 * static_cast<double>(height);
  const double rx = 0.44 * static_cast<double>(width);
  std::vector<bool> oval(height * width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double dy = (static_cast<double>(y) - cy) / ry;
      const double dx = (static_cast<double>(x) - cx) / rx;
      oval[y * width + x] = dy * dy + dx * dx <= 1.0;
    }
  }

  Session s;
  s.participant_id = pid;
  s.session_index = session_index;
  s.pre = pre;
  s.post = post;
  s.mask_flags = masks;
  s.landmarks = synth_landmarks(cfg);

  double displayed_sum = 0.0;
  for (int j = 0; j < k; ++j) {
    const double latent = pre + (post - pre) * static_cast<double>(j) / static_cast<double>(k - 1);
    const double band_level = cfg.eye_base - cfg.eye_slope * latent / 10.0 + clip_offset[j];
    displayed_sum += latent - 10.0 * clip_offset[j] / cfg.eye_slope;

    std::vector<double> frames;
    frames.reserve(static_cast<std::size_t>(t) * height * width);
    for (int f = 0; f < t; ++f) {
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const bool in_oval = oval[y * width + x];
          double v = in_oval ? cfg.face_value : cfg.background;
          if (in_oval && y >= band_lo && y < band_hi) v = band_level;
          if (in_oval && y >= mouth_lo) v = cfg.mouth_value;
          // The noise draw happens for every pixel so the stream does not
          // depend on the mask pattern; the occluder itself is a constant.
          const double noise = cfg.noise_sigma > 0.0 ? rng.normal(0.0, cfg.noise_sigma) : 0.0;
          v += noise;
          if (masks[j] && y >= mouth_lo) v = cfg.mask_value;
          frames.push_back(std::clamp(v, 0.0, 1.0));
        }
      }
    }
    Clip c;
    c.index = j + 1;
    c.frames = Tensor::from_vector({static_cast<std::size_t>(t), 1, height, width}, std::move(frames));
    c.labeled = (j == 0 || j == k - 1);
    c.label = (j == 0) ? pre : (j == k - 1 ? post : 0.0);
    s.clips.push_back(std::move(c));
  }

  const double mean_displayed = displayed_sum / static_cast<double>(k);
  const double rt = 0.8 + 0.05 * mean_displayed - 0.03 * (session_index - 1) + rt_eps;
  s.reaction_time = std::max(rt, 1e-6);

  validate_session(s);
  return s;
}

Dataset generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Dataset d;
  d.mode = cfg.mode;
  for (int p = 0; p < cfg.participants; ++p) {
    for (int si = 1; si <= cfg.sessions_per_participant; ++si) {
      d.sessions.push_back(std::make_shared<Session>(synthesize_session(cfg, seed, p, si)));
    }
  }
  return d;
}

}  // namespace rvt
