#include "rvt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace rvt {

void RunConfig::finalize() {
  if (jobs < 1) throw std::runtime_error("config: jobs must be >= 1");
  synth.mode = mode;
  train.mode = mode;
  train.seed = seed;
  synth.validate();
  encoder.validate();
  train.validate();
  if (static_cast<std::size_t>(synth.frames_per_clip) != encoder.frames) {
    throw std::runtime_error("config: synth.frames_per_clip (" +
                             std::to_string(synth.frames_per_clip) +
                             ") must match encoder.frames (" + std::to_string(encoder.frames) + ")");
  }
  if (saliency.radius_px == 0) throw std::runtime_error("config: saliency.radius_px must be >= 1");
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad number for " + key + ": '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::runtime_error("config: bad unsigned integer for " + key + ": '" + v + "'");
  }
  return x;
}

int parse_pos_int(const std::string& key, const std::string& v) {
  const std::uint64_t x = parse_u64(key, v);
  if (x == 0 || x > 1000000) {
    throw std::runtime_error("config: " + key + " out of range: '" + v + "'");
  }
  return static_cast<int>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::runtime_error("config: bad boolean for " + key + ": '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }},
      {"mode", [](RunConfig& c, const std::string&, const std::string& v) { c.mode = class_mode_from_name(v); }},
      {"jobs", [](RunConfig& c, const std::string& k, const std::string& v) { c.jobs = static_cast<std::size_t>(parse_pos_int(k, v)); }},
      {"data", [](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"out", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},

      {"synth.participants", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.participants = parse_pos_int(k, v); }},
      {"synth.sessions_per_participant", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.sessions_per_participant = parse_pos_int(k, v); }},
      {"synth.clips_per_session", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.clips_per_session = parse_pos_int(k, v); }},
      {"synth.frames_per_clip", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.frames_per_clip = parse_pos_int(k, v); }},
      {"synth.image_height", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.image_height = parse_pos_int(k, v); }},
      {"synth.image_width", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.image_width = parse_pos_int(k, v); }},
      {"synth.noise_sigma", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.noise_sigma = parse_double(k, v); }},
      {"synth.mask_probability", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.mask_probability = parse_double(k, v); }},
      {"synth.eye_band_top", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.eye_band_top = parse_double(k, v); }},
      {"synth.eye_band_bottom", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.eye_band_bottom = parse_double(k, v); }},
      {"synth.background", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.background = parse_double(k, v); }},
      {"synth.face_value", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.face_value = parse_double(k, v); }},
      {"synth.eye_base", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.eye_base = parse_double(k, v); }},
      {"synth.eye_slope", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.eye_slope = parse_double(k, v); }},
      {"synth.mouth_value", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.mouth_value = parse_double(k, v); }},
      {"synth.mask_value", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.mask_value = parse_double(k, v); }},

      {"encoder.input_height", [](RunConfig& c, const std::string& k, const std::string& v) { c.encoder.input_height = static_cast<std::size_t>(parse_pos_int(k, v)); }},
      {"encoder.input_width", [](RunConfig& c, const std::string& k, const std::string& v) { c.encoder.input_width = static_cast<std::size_t>(parse_pos_int(k, v)); }},
      {"encoder.frames", [](RunConfig& c, const std::string& k, const std::string& v) { c.encoder.frames = static_cast<std::size_t>(parse_pos_int(k, v)); }},
      {"encoder.conv_blocks", [](RunConfig& c, const std::string& k, const std::string& v) { c.encoder.conv_blocks = static_cast<std::size_t>(parse_pos_int(k, v)); }},
      {"encoder.spatial_layers", [](RunConfig& c, const std::string& k, const std::string& v) { c.encoder.spatial_layers = static_cast<std::size_t>(parse_pos_int(k, v)); }},
      {"encoder.temporal_layers", [](RunConfig& c, const std::string& k, const std::string& v) { c.encoder.temporal_layers = static_cast<std::size_t>(parse_pos_int(k, v)); }},
      {"encoder.embed_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.encoder.embed_dim = static_cast<std::size_t>(parse_pos_int(k, v)); }},
      {"encoder.heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.encoder.heads = static_cast<std::size_t>(parse_pos_int(k, v)); }},
      {"encoder.feature_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.encoder.feature_dim = static_cast<std::size_t>(parse_pos_int(k, v)); }},
      {"encoder.ffn_mult", [](RunConfig& c, const std::string& k, const std::string& v) { c.encoder.ffn_mult = static_cast<std::size_t>(parse_pos_int(k, v)); }},

      {"train.lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr = parse_double(k, v); }},
      {"train.epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs = static_cast<std::size_t>(parse_pos_int(k, v)); }},
      {"train.clip_batch", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.clip_batch = static_cast<std::size_t>(parse_pos_int(k, v)); }},
      {"train.cell", [](RunConfig& c, const std::string&, const std::string& v) { c.train.cell = cell_kind_from_name(v); }},
      {"train.loss", [](RunConfig& c, const std::string&, const std::string& v) { c.train.loss = loss_kind_from_name(v); }},
      {"train.optimizer", [](RunConfig& c, const std::string&, const std::string& v) { c.train.optimizer = optimizer_kind_from_name(v); }},
      {"train.hidden", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.hidden = static_cast<std::size_t>(parse_pos_int(k, v)); }},
      {"train.freeze_encoder", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.freeze_encoder = parse_bool(k, v); }},
      {"train.ablate_recurrence", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.ablate_recurrence = parse_bool(k, v); }},

      {"gee.endpoint_mean", [](RunConfig& c, const std::string& k, const std::string& v) { c.gee.endpoint_mean = parse_bool(k, v); }},
      {"gee.standardize", [](RunConfig& c, const std::string& k, const std::string& v) { c.gee.standardize = parse_bool(k, v); }},

      {"saliency.radius_px", [](RunConfig& c, const std::string& k, const std::string& v) { c.saliency.radius_px = static_cast<std::size_t>(parse_pos_int(k, v)); }},
      {"saliency.grad_times_input", [](RunConfig& c, const std::string& k, const std::string& v) { c.saliency.grad_times_input = parse_bool(k, v); }},
  };
  return table;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("config: cannot format double");
  return std::string(buf, p);
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw std::runtime_error("config line " + std::to_string(lineno) + ": unterminated section");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section != "synth" && section != "encoder" && section != "train" && section != "gee" &&
          section != "saliency") {
        throw std::runtime_error("config line " + std::to_string(lineno) + ": unknown section [" +
                                 section + "]");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
    }
    const std::string full = section.empty() ? key : section + "." + key;
    auto it = setters().find(full);
    if (it == setters().end()) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": unknown key '" + full + "'");
    }
    it->second(cfg, full, value);
  }
  cfg.finalize();
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "seed = " << cfg.seed << "\n";
  out << "mode = " << class_mode_name(cfg.mode) << "\n";
  out << "jobs = " << cfg.jobs << "\n";
  if (!cfg.data_dir.empty()) out << "data = " << cfg.data_dir << "\n";
  if (!cfg.out_dir.empty()) out << "out = " << cfg.out_dir << "\n";
  out << "\n[synth]\n";
  out << "participants = " << cfg.synth.participants << "\n";
  out << "sessions_per_participant = " << cfg.synth.sessions_per_participant << "\n";
  out << "clips_per_session = " << cfg.synth.clips_per_session << "\n";
  out << "frames_per_clip = " << cfg.synth.frames_per_clip << "\n";
  out << "image_height = " << cfg.synth.image_height << "\n";
  out << "image_width = " << cfg.synth.image_width << "\n";
  out << "noise_sigma = " << fmt_double(cfg.synth.noise_sigma) << "\n";
  out << "mask_probability = " << fmt_double(cfg.synth.mask_probability) << "\n";
  out << "eye_band_top = " << fmt_double(cfg.synth.eye_band_top) << "\n";
  out << "eye_band_bottom = " << fmt_double(cfg.synth.eye_band_bottom) << "\n";
  out << "background = " << fmt_double(cfg.synth.background) << "\n";
  out << "face_value = " << fmt_double(cfg.synth.face_value) << "\n";
  out << "eye_base = " << fmt_double(cfg.synth.eye_base) << "\n";
  out << "eye_slope = " << fmt_double(cfg.synth.eye_slope) << "\n";
  out << "mouth_value = " << fmt_double(cfg.synth.mouth_value) << "\n";
  out << "mask_value = " << fmt_double(cfg.synth.mask_value) << "\n";
  out << "\n[encoder]\n";
  out << "input_height = " << cfg.encoder.input_height << "\n";
  out << "input_width = " << cfg.encoder.input_width << "\n";
  out << "frames = " << cfg.encoder.frames << "\n";
  out << "conv_blocks = " << cfg.encoder.conv_blocks << "\n";
  out << "spatial_layers = " << cfg.encoder.spatial_layers << "\n";
  out << "temporal_layers = " << cfg.encoder.temporal_layers << "\n";
  out << "embed_dim = " << cfg.encoder.embed_dim << "\n";
  out << "heads = " << cfg.encoder.heads << "\n";
  out << "feature_dim = " << cfg.encoder.feature_dim << "\n";
  out << "ffn_mult = " << cfg.encoder.ffn_mult << "\n";
  out << "\n[train]\n";
  out << "lr = " << fmt_double(cfg.train.lr) << "\n";
  out << "epochs = " << cfg.train.epochs << "\n";
  out << "clip_batch = " << cfg.train.clip_batch << "\n";
  out << "cell = " << cell_kind_name(cfg.train.cell) << "\n";
  out << "loss = " << loss_kind_name(cfg.train.loss) << "\n";
  out << "optimizer = " << optimizer_kind_name(cfg.train.optimizer) << "\n";
  out << "hidden = " << cfg.train.hidden << "\n";
  out << "freeze_encoder = " << (cfg.train.freeze_encoder ? "true" : "false") << "\n";
  out << "ablate_recurrence = " << (cfg.train.ablate_recurrence ? "true" : "false") << "\n";
  out << "\n[gee]\n";
  out << "endpoint_mean = " << (cfg.gee.endpoint_mean ? "true" : "false") << "\n";
  out << "standardize = " << (cfg.gee.standardize ? "true" : "false") << "\n";
  out << "\n[saliency]\n";
  out << "radius_px = " << cfg.saliency.radius_px << "\n";
  out << "grad_times_input = " << (cfg.saliency.grad_times_input ? "true" : "false") << "\n";
  return out.str();
}

}  // namespace rvt
