#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "rvt/data.hpp"
#include "rvt/synth.hpp"

namespace rvt {

// On-disk dataset layout:
//   <dir>/manifest.json
//   <dir>/frames/<pid>_s<session>_c<clip>_f<frame>.pgm   (8-bit P5)
// The manifest records labels, mask flags, reaction times, landmarks and the
// frame file references; pixel payloads live in the PGM files.

// Streams sessions to disk one at a time so the full dataset never has to be
// resident. finish() writes the manifest.
class DatasetWriter {
 public:
  DatasetWriter(std::string dir, ClassMode mode);
  void set_synth_provenance(const SynthConfig& cfg, std::uint64_t seed);
  void add_session(const Session& s);
  void finish();

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

void save_dataset(const Dataset& d, const std::string& dir,
                  const SynthConfig* synth_cfg = nullptr, std::uint64_t synth_seed = 0);

Dataset load_dataset(const std::string& dir);

// Loads labels, flags, reaction times and landmarks only; every clip gets a
// shared 1x1 stand-in frame instead of decoded pixels. For consumers that
// never look at imagery (statistics, audits).
Dataset load_dataset_labels(const std::string& dir);

// Structural check without decoding pixels: manifest parses, session
// invariants hold, every referenced frame file exists with the advertised
// dimensions. Returns human-readable problem descriptions (empty = clean).
std::vector<std::string> verify_dataset_dir(const std::string& dir);

}  // namespace rvt
