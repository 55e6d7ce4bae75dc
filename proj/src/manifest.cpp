#include "rvt/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "rvt/image.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace rvt {

namespace {

std::string frame_name(const std::string& pid, int session, int clip, int frame) {
  return "frames/" + pid + "_s" + std::to_string(session) + "_c" + std::to_string(clip) + "_f" +
         std::to_string(frame) + ".pgm";
}

ordered_json session_entry(const Session& s, std::vector<std::string> frame_paths_flat,
                           std::size_t frames_per_clip) {
  ordered_json e;
  e["participant_id"] = s.participant_id;
  e["session_index"] = s.session_index;
  e["pre"] = s.pre;
  e["post"] = s.post;
  if (s.reaction_time) {
    e["reaction_time"] = *s.reaction_time;
  } else {
    e["reaction_time"] = nullptr;
  }
  e["mask_flags"] = s.mask_flags;
  ordered_json lm = ordered_json::array();
  for (const Landmark& l : s.landmarks) {
    lm.push_back({{"id", l.id}, {"name", l.name}, {"x", l.x}, {"y", l.y}});
  }
  e["landmarks"] = std::move(lm);
  ordered_json clips = ordered_json::array();
  std::size_t flat = 0;
  for (const Clip& c : s.clips) {
    ordered_json ce;
    ce["index"] = c.index;
    ce["labeled"] = c.labeled;
    if (c.labeled) ce["label"] = c.label;
    ordered_json files = ordered_json::array();
    for (std::size_t f = 0; f < frames_per_clip; ++f) files.push_back(frame_paths_flat[flat++]);
    ce["frames"] = std::move(files);
    clips.push_back(std::move(ce));
  }
  e["clips"] = std::move(clips);
  return e;
}

}  // namespace

struct DatasetWriter::Impl {
  fs::path dir;
  ClassMode mode;
  ordered_json sessions = ordered_json::array();
  ordered_json synth;
  std::size_t frame_h = 0, frame_w = 0, frames_per_clip = 0;
  bool finished = false;
};

DatasetWriter::DatasetWriter(std::string dir, ClassMode mode) : impl_(std::make_shared<Impl>()) {
  impl_->dir = dir;
  impl_->mode = mode;
  fs::create_directories(impl_->dir / "frames");
}

void DatasetWriter::set_synth_provenance(const SynthConfig& cfg, std::uint64_t seed) {
  ordered_json j;
  j["seed"] = seed;
  j["participants"] = cfg.participants;
  j["sessions_per_participant"] = cfg.sessions_per_participant;
  j["clips_per_session"] = cfg.clips_per_session;
  j["frames_per_clip"] = cfg.frames_per_clip;
  j["image_height"] = cfg.image_height;
  j["image_width"] = cfg.image_width;
  j["noise_sigma"] = cfg.noise_sigma;
  j["mask_probability"] = cfg.mask_probability;
  j["eye_band_top"] = cfg.eye_band_top;
  j["eye_band_bottom"] = cfg.eye_band_bottom;
  j["background"] = cfg.background;
  j["face_value"] = cfg.face_value;
  j["eye_base"] = cfg.eye_base;
  j["eye_slope"] = cfg.eye_slope;
  j["mouth_value"] = cfg.mouth_value;
  j["mask_value"] = cfg.mask_value;
  impl_->synth = std::move(j);
}

void DatasetWriter::add_session(const Session& s) {
  if (impl_->finished) throw std::runtime_error("DatasetWriter: add_session after finish");
  validate_session(s);
  const Shape& fshape = s.clips.front().frames.shape();
  const std::size_t t = fshape[0], h = fshape[2], w = fshape[3];
  if (impl_->frame_h == 0) {
    impl_->frame_h = h;
    impl_->frame_w = w;
    impl_->frames_per_clip = t;
  } else if (impl_->frame_h != h || impl_->frame_w != w || impl_->frames_per_clip != t) {
    throw std::runtime_error("DatasetWriter: session " + s.participant_id +
                             " frame geometry differs from earlier sessions");
  }
  std::vector<std::string> paths;
  for (const Clip& c : s.clips) {
    auto vals = c.frames.values();
    for (std::size_t f = 0; f < t; ++f) {
      std::string rel = frame_name(s.participant_id, s.session_index, c.index, static_cast<int>(f));
      Image8 img = quantize_frame(vals.data() + f * h * w, h, w);
      write_pgm((impl_->dir / rel).string(), img);
      paths.push_back(std::move(rel));
    }
  }
  impl_->sessions.push_back(session_entry(s, std::move(paths), t));
}

void DatasetWriter::finish() {
  if (impl_->finished) return;
  impl_->finished = true;
  ordered_json m;
  m["format"] = 1;
  m["class_mode"] = class_mode_name(impl_->mode);
  m["frame_height"] = impl_->frame_h;
  m["frame_width"] = impl_->frame_w;
  m["frames_per_clip"] = impl_->frames_per_clip;
  if (!impl_->synth.is_null()) m["synth"] = impl_->synth;
  m["sessions"] = std::move(impl_->sessions);
  std::ofstream os(impl_->dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("DatasetWriter: cannot write manifest in '" + impl_->dir.string() + "'");
  os << m.dump(2) << "\n";
}

void save_dataset(const Dataset& d, const std::string& dir, const SynthConfig* synth_cfg,
                  std::uint64_t synth_seed) {
  validate_dataset(d);
  DatasetWriter w(dir, d.mode);
  if (synth_cfg) w.set_synth_provenance(*synth_cfg, synth_seed);
  for (const auto& s : d.sessions) w.add_session(*s);
  w.finish();
}

namespace {

ordered_json read_manifest(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json", std::ios::binary);
  if (!is) throw std::runtime_error("dataset: cannot open '" + (dir / "manifest.json").string() + "'");
  ordered_json m;
  try {
    is >> m;
  } catch (const std::exception& e) {
    throw std::runtime_error("dataset: manifest parse error: " + std::string(e.what()));
  }
  return m;
}

Session session_from_entry(const ordered_json& e, const fs::path& dir, std::size_t h, std::size_t w,
                           std::size_t t, bool load_pixels) {
  Session s;
  s.participant_id = e.at("participant_id").get<std::string>();
  s.session_index = e.at("session_index").get<int>();
  s.pre = e.at("pre").get<double>();
  s.post = e.at("post").get<double>();
  if (!e.at("reaction_time").is_null()) s.reaction_time = e.at("reaction_time").get<double>();
  s.mask_flags = e.at("mask_flags").get<std::vector<bool>>();
  for (const auto& l : e.at("landmarks")) {
    s.landmarks.push_back({l.at("id").get<int>(), l.at("name").get<std::string>(),
                           l.at("x").get<double>(), l.at("y").get<double>()});
  }
  for (const auto& ce : e.at("clips")) {
    Clip c;
    c.index = ce.at("index").get<int>();
    c.labeled = ce.at("labeled").get<bool>();
    if (c.labeled) c.label = ce.at("label").get<double>();
    const auto& files = ce.at("frames");
    if (files.size() != t) {
      throw std::runtime_error("dataset: clip " + s.participant_id + "/s" +
                               std::to_string(s.session_index) + "/c" + std::to_string(c.index) +
                               " lists " + std::to_string(files.size()) + " frames, manifest says " +
                               std::to_string(t));
    }
    if (load_pixels) {
      std::vector<double> data;
      data.reserve(t * h * w);
      for (const auto& f : files) {
        Image8 img = read_pgm((dir / f.get<std::string>()).string());
        if (img.height != h || img.width != w) {
          throw std::runtime_error("dataset: frame '" + f.get<std::string>() + "' is " +
                                   std::to_string(img.height) + "x" + std::to_string(img.width) +
                                   ", manifest says " + std::to_string(h) + "x" + std::to_string(w));
        }
        std::vector<double> px = dequantize_frame(img);
        data.insert(data.end(), px.begin(), px.end());
      }
      c.frames = Tensor::from_vector({t, 1, h, w}, std::move(data));
    }
    s.clips.push_back(std::move(c));
  }
  return s;
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  ordered_json m = read_manifest(root);
  Dataset d;
  d.mode = class_mode_from_name(m.at("class_mode").get<std::string>());
  const auto h = m.at("frame_height").get<std::size_t>();
  const auto w = m.at("frame_width").get<std::size_t>();
  const auto t = m.at("frames_per_clip").get<std::size_t>();
  for (const auto& e : m.at("sessions")) {
    d.sessions.push_back(std::make_shared<Session>(session_from_entry(e, root, h, w, t, true)));
  }
  validate_dataset(d);
  return d;
}

Dataset load_dataset_labels(const std::string& dir) {
  const fs::path root(dir);
  ordered_json m = read_manifest(root);
  Dataset d;
  d.mode = class_mode_from_name(m.at("class_mode").get<std::string>());
  const auto h = m.at("frame_height").get<std::size_t>();
  const auto w = m.at("frame_width").get<std::size_t>();
  const auto t = m.at("frames_per_clip").get<std::size_t>();
  // One shared stand-in frame keeps the session invariants checkable without
  // touching any pixel file.
  const Tensor placeholder = Tensor::zeros({1, 1, 1, 1});
  for (const auto& e : m.at("sessions")) {
    Session s = session_from_entry(e, root, h, w, t, false);
    for (Clip& c : s.clips) c.frames = placeholder;
    d.sessions.push_back(std::make_shared<Session>(std::move(s)));
  }
  validate_dataset(d);
  return d;
}

std::vector<std::string> verify_dataset_dir(const std::string& dir) {
  std::vector<std::string> problems;
  const fs::path root(dir);
  ordered_json m;
  try {
    m = read_manifest(root);
  } catch (const std::exception& e) {
    return {e.what()};
  }
  std::size_t h = 0, w = 0, t = 0;
  try {
    h = m.at("frame_height").get<std::size_t>();
    w = m.at("frame_width").get<std::size_t>();
    t = m.at("frames_per_clip").get<std::size_t>();
    class_mode_from_name(m.at("class_mode").get<std::string>());
  } catch (const std::exception& e) {
    return {std::string("manifest header: ") + e.what()};
  }
  for (const auto& e : m.at("sessions")) {
    Session s;
    try {
      s = session_from_entry(e, root, h, w, t, false);
    } catch (const std::exception& ex) {
      problems.push_back(ex.what());
      continue;
    }
    const std::string who = s.participant_id + "/s" + std::to_string(s.session_index);
    if (s.clips.size() < 2) problems.push_back(who + ": fewer than 2 clips");
    for (std::size_t i = 0; i < s.clips.size(); ++i) {
      const bool endpoint = (i == 0 || i + 1 == s.clips.size());
      if (s.clips[i].labeled != endpoint) {
        problems.push_back(who + ": clip " + std::to_string(i + 1) + " label flag wrong");
      }
    }
    if (!s.clips.empty()) {
      if (s.clips.front().labeled && s.clips.front().label != s.pre) {
        problems.push_back(who + ": first clip label != pre");
      }
      if (s.clips.back().labeled && s.clips.back().label != s.post) {
        problems.push_back(who + ": last clip label != post");
      }
    }
    for (const auto& ce : e.at("clips")) {
      for (const auto& f : ce.at("frames")) {
        const fs::path p = root / f.get<std::string>();
        std::ifstream is(p, std::ios::binary);
        if (!is) {
          problems.push_back(who + ": missing frame file " + f.get<std::string>());
          continue;
        }
        std::string magic;
        std::size_t fw = 0, fh = 0;
        is >> magic >> fw >> fh;
        if (magic != "P5" || fw != w || fh != h) {
          problems.push_back(who + ": frame file " + f.get<std::string>() + " header mismatch");
        }
      }
    }
  }
  return problems;
}

}  // namespace rvt
