#include "rvt/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace rvt {

std::size_t class_count(ClassMode mode) { return mode == ClassMode::Binary ? 2 : 3; }

std::string class_mode_name(ClassMode mode) {
  return mode == ClassMode::Binary ? "binary" : "three_class";
}

ClassMode class_mode_from_name(const std::string& name) {
  if (name == "binary") return ClassMode::Binary;
  if (name == "three_class" || name == "three") return ClassMode::Three;
  throw std::runtime_error("unknown class mode '" + name + "' (expected 'binary' or 'three_class')");
}

namespace {
void check_range(double gifs, const char* who) {
  if (!(gifs >= 0.0 && gifs <= 10.0)) {
    throw std::runtime_error(std::string(who) + ": GIFS score " + std::to_string(gifs) +
                             " outside [0, 10]");
  }
}
}  // namespace

int binarize(double gifs) {
  check_range(gifs, "binarize");
  return gifs >= 2.0 ? 1 : 0;
}

int three_class(double gifs) {
  check_range(gifs, "three_class");
  if (gifs < 2.0) return 0;
  if (gifs < 5.0) return 1;
  return 2;
}

int label_class(double gifs, ClassMode mode) {
  return mode == ClassMode::Binary ? binarize(gifs) : three_class(gifs);
}

void validate_session(const Session& s) {
  const std::string who = "session " + s.participant_id + "/" + std::to_string(s.session_index);
  if (s.clips.size() < 2) {
    throw std::runtime_error(who + ": needs at least 2 clips, has " + std::to_string(s.clips.size()));
  }
  if (s.mask_flags.size() != s.clips.size()) {
    throw std::runtime_error(who + ": " + std::to_string(s.mask_flags.size()) + " mask flags for " +
                             std::to_string(s.clips.size()) + " clips");
  }
  check_range(s.pre, who.c_str());
  check_range(s.post, who.c_str());
  const std::size_t k = s.clips.size();
  Shape frame_shape;
  for (std::size_t i = 0; i < k; ++i) {
    const Clip& c = s.clips[i];
    if (c.index != static_cast<int>(i + 1)) {
      throw std::runtime_error(who + ": clip at position " + std::to_string(i) + " has index " +
                               std::to_string(c.index) + ", expected " + std::to_string(i + 1));
    }
    const bool endpoint = (i == 0 || i + 1 == k);
    if (c.labeled != endpoint) {
      throw std::runtime_error(who + ": clip " + std::to_string(c.index) +
                               (endpoint ? " must carry a label" : " must be unlabeled"));
    }
    if (!c.frames.defined() || c.frames.rank() != 4 || c.frames.shape()[1] != 1) {
      throw std::runtime_error(who + ": clip " + std::to_string(c.index) +
                               " frames must be a (T,1,H,W) tensor");
    }
    if (frame_shape.empty()) {
      frame_shape = c.frames.shape();
    } else if (c.frames.shape() != frame_shape) {
      throw std::runtime_error(who + ": clip " + std::to_string(c.index) + " frame shape " +
                               shape_str(c.frames.shape()) + " differs from " + shape_str(frame_shape));
    }
  }
  if (s.clips.front().label != s.pre) {
    throw std::runtime_error(who + ": first clip label " + std::to_string(s.clips.front().label) +
                             " != pre score " + std::to_string(s.pre));
  }
  if (s.clips.back().label != s.post) {
    throw std::runtime_error(who + ": last clip label " + std::to_string(s.clips.back().label) +
                             " != post score " + std::to_string(s.post));
  }
  if (s.reaction_time && !(*s.reaction_time > 0.0)) {
    throw std::runtime_error(who + ": reaction time must be positive when present");
  }
}

std::vector<std::string> Dataset::participants() const {
  std::set<std::string> ids;
  for (const auto& s : sessions) ids.insert(s->participant_id);
  return {ids.begin(), ids.end()};
}

std::size_t Dataset::labeled_clip_count() const {
  std::size_t n = 0;
  for (const auto& s : sessions) {
    for (const Clip& c : s->clips) n += c.labeled ? 1 : 0;
  }
  return n;
}

std::size_t Dataset::unlabeled_clip_count() const {
  std::size_t n = 0;
  for (const auto& s : sessions) {
    for (const Clip& c : s->clips) n += c.labeled ? 0 : 1;
  }
  return n;
}

void validate_dataset(const Dataset& d) {
  if (d.sessions.empty()) throw std::runtime_error("dataset: no sessions");
  std::set<std::pair<std::string, int>> seen;
  for (const auto& s : d.sessions) {
    if (!s) throw std::runtime_error("dataset: null session entry");
    validate_session(*s);
    if (!seen.emplace(s->participant_id, s->session_index).second) {
      throw std::runtime_error("dataset: duplicate session " + s->participant_id + "/" +
                               std::to_string(s->session_index));
    }
  }
}

std::vector<Fold> loocv_folds(const Dataset& d) {
  validate_dataset(d);
  std::vector<std::string> ids = d.participants();
  if (ids.size() < 2) {
    throw std::runtime_error("loocv_folds: needs at least 2 participants, has " +
                             std::to_string(ids.size()));
  }
  std::vector<Fold> folds;
  folds.reserve(ids.size());
  for (const std::string& id : ids) {
    Fold f;
    f.test_participant = id;
    f.train.mode = d.mode;
    f.test.mode = d.mode;
    for (const auto& s : d.sessions) {
      (s->participant_id == id ? f.test : f.train).sessions.push_back(s);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

std::vector<std::vector<std::size_t>> sample_frame_indices(std::size_t n_frames, double fps,
                                                           double period_s, std::size_t clip_len) {
  if (fps <= 0.0 || period_s <= 0.0 || clip_len == 0) {
    throw std::runtime_error("sample_frame_indices: fps, period and clip length must be positive");
  }
  const double duration = static_cast<double>(n_frames) / fps;
  const double needed = period_s * static_cast<double>(clip_len);
  if (duration < needed) {
    throw std::runtime_error("sample_frame_indices: recording of " + std::to_string(duration) +
                             " s is shorter than one clip (" + std::to_string(needed) + " s)");
  }
  std::vector<std::size_t> sampled;
  for (std::size_t k = 0;; ++k) {
    const double t = static_cast<double>(k) * period_s;
    if (t >= duration) break;
    auto idx = static_cast<std::size_t>(std::llround(t * fps));
    if (idx >= n_frames) break;
    sampled.push_back(idx);
  }
  std::vector<std::vector<std::size_t>> clips;
  for (std::size_t start = 0; start + clip_len <= sampled.size(); start += clip_len) {
    clips.emplace_back(sampled.begin() + static_cast<std::ptrdiff_t>(start),
                       sampled.begin() + static_cast<std::ptrdiff_t>(start + clip_len));
  }
  return clips;
}

std::vector<Tensor> sample_frames(const Tensor& frames, double fps, double period_s,
                                  std::size_t clip_len) {
  if (!frames.defined() || frames.rank() != 4 || frames.shape()[1] != 1) {
    throw std::runtime_error("sample_frames: expected a (E,1,H,W) frame stack");
  }
  const Shape& s = frames.shape();
  const std::size_t plane = s[2] * s[3];
  auto groups = sample_frame_indices(s[0], fps, period_s, clip_len);
  auto src = frames.values();
  std::vector<Tensor> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    std::vector<double> data;
    data.reserve(g.size() * plane);
    for (std::size_t idx : g) {
      data.insert(data.end(), src.begin() + static_cast<std::ptrdiff_t>(idx * plane),
                  src.begin() + static_cast<std::ptrdiff_t>((idx + 1) * plane));
    }
    out.push_back(Tensor::from_vector({g.size(), 1, s[2], s[3]}, std::move(data)));
  }
  return out;
}

}  // namespace rvt
