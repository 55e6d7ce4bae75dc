#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rvt/tensor.hpp"

namespace rvt {

enum class ClassMode { Binary, Three };

std::size_t class_count(ClassMode mode);
std::string class_mode_name(ClassMode mode);
ClassMode class_mode_from_name(const std::string& name);

// Fatigue score thresholds. Scores live on the 0..10 GIFS scale; anything
// outside is rejected.
int binarize(double gifs);     // < 2 -> 0, >= 2 -> 1
int three_class(double gifs);  // < 2 -> 0, 2 <= v < 5 -> 1, >= 5 -> 2
int label_class(double gifs, ClassMode mode);

struct Landmark {
  int id = 0;
  std::string name;
  double x = 0.0;  // pixel coordinates in the face crop
  double y = 0.0;
};

struct Clip {
  int index = 0;       // 1-based position within the session
  Tensor frames;       // (T, 1, H, W) face crop, grayscale in [0, 1]
  bool labeled = false;
  double label = 0.0;  // GIFS value; only meaningful when labeled
};

struct Session {
  std::string participant_id;
  int session_index = 0;  // 1-based
  double pre = 0.0;       // GIFS before the session
  double post = 0.0;      // GIFS after the session
  std::vector<Clip> clips;
  std::vector<bool> mask_flags;  // per clip
  std::optional<double> reaction_time;
  std::vector<Landmark> landmarks;

  std::size_t clip_count() const { return clips.size(); }
};

// Throws with a descriptive message when a session breaks the contract:
// clip indices must run 1..K with K >= 2, exactly the endpoints carry labels,
// the labels must equal pre/post, mask flags must match the clip count, and
// every frame tensor must share one (T,1,H,W) shape.
void validate_session(const Session& s);

struct Dataset {
  ClassMode mode = ClassMode::Binary;
  std::vector<std::shared_ptr<const Session>> sessions;

  std::vector<std::string> participants() const;  // unique, sorted
  std::size_t labeled_clip_count() const;
  std::size_t unlabeled_clip_count() const;
};

void validate_dataset(const Dataset& d);

struct Fold {
  std::string test_participant;
  Dataset train;
  Dataset test;
};

// Participant-level leave-one-out partition, one fold per participant in
// sorted participant order. Sessions are shared, not copied.
std::vector<Fold> loocv_folds(const Dataset& d);

// Uniform temporal subsampling: one frame every period_s seconds starting at
// t = 0, grouped into clips of clip_len frames; a trailing remainder is
// dropped. Errors when the recording is shorter than one clip.
std::vector<std::vector<std::size_t>> sample_frame_indices(std::size_t n_frames, double fps,
                                                           double period_s = 5.0,
                                                           std::size_t clip_len = 16);

// Applies sample_frame_indices to a (E,1,H,W) frame stack.
std::vector<Tensor> sample_frames(const Tensor& frames, double fps, double period_s = 5.0,
                                  std::size_t clip_len = 16);

}  // namespace rvt
