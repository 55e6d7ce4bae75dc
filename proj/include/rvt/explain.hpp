#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rvt/data.hpp"
#include "rvt/train.hpp"

namespace rvt {

enum class SaliencyTarget { Gifs, ClassLogit };

struct SaliencyOptions {
  SaliencyTarget target = SaliencyTarget::Gifs;
  int class_index = 0;            // only read for ClassLogit
  bool grad_times_input = false;  // |grad * input| instead of |grad|
  bool keep_frames = false;       // also record per-frame maps
};

// Pixel-attribution heatmap over the face crop (the mask column is not part
// of the map). Min-max normalized to [0,1]; an exactly flat gradient yields
// an all-zero map with `degenerate` set.
struct SaliencyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // height*width
  int clip_index = 0;
  std::string target;  // "gifs" or "class<k>"
  bool degenerate = false;
  std::vector<std::vector<double>> per_frame;  // filled when keep_frames

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

// One map per clip; the session is run once and each clip's score is
// backpropagated to that clip's own pixels, with the true recurrent state.
std::vector<SaliencyMap> saliency_session(const Session& session, const Model& model,
                                          const SaliencyOptions& opts = {});

// Standalone clip from the zero recurrent state.
SaliencyMap saliency_clip(const Clip& clip, bool mask_flag, const Model& model,
                          const SaliencyOptions& opts = {});

struct LandmarkAttention {
  int id = 0;
  std::string name;
  double x = 0.0;
  double y = 0.0;
  double value = 0.0;  // in [0,1] after renormalization
};

struct LandmarkReport {
  std::vector<LandmarkAttention> entries;  // sorted by id
  std::size_t clamped = 0;                 // landmarks moved back inside the image
};

// Mean map value in the L-inf disc of radius `radius_px` around each
// landmark, averaged over maps, then scaled so the largest entry is 1.
LandmarkReport aggregate_landmarks(const std::vector<SaliencyMap>& maps,
                                   const std::vector<std::vector<Landmark>>& landmarks,
                                   std::size_t radius_px = 3);

// Fraction of the top-decile pixels' mass that falls in rows
// [row_begin, row_end). `quantile` 0.9 keeps the top 10% of pixels.
double top_fraction_in_rows(const SaliencyMap& map, std::size_t row_begin, std::size_t row_end,
                            double quantile = 0.9);

void write_saliency_pgm(const std::string& path, const SaliencyMap& map);
// Heatmap in red over the clip's mean frame.
void write_saliency_overlay_ppm(const std::string& path, const SaliencyMap& map,
                                const Tensor& frames);

}  // namespace rvt
