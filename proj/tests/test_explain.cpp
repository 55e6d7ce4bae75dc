#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rvt/data.hpp"
#include "rvt/explain.hpp"
#include "rvt/image.hpp"
#include "rvt/synth.hpp"
#include "rvt/tensor.hpp"
#include "rvt/train.hpp"

using namespace rvt;
namespace fs = std::filesystem;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig ec;
  ec.input_height = 8;
  ec.input_width = 8;
  ec.frames = 2;
  ec.conv_blocks = 2;
  ec.spatial_layers = 1;
  ec.temporal_layers = 1;
  ec.embed_dim = 8;
  ec.heads = 2;
  ec.feature_dim = 8;
  return ec;
}

Model tiny_model(std::uint64_t seed, ClassMode mode = ClassMode::Binary) {
  HeadConfig hc;
  hc.feature_dim = 8;
  hc.hidden = 6;
  hc.mode = mode;
  return Model::init(tiny_encoder(), hc, seed);
}

Dataset tiny_data(std::uint64_t seed) {
  SynthConfig sc;
  sc.participants = 1;
  sc.sessions_per_participant = 1;
  sc.clips_per_session = 3;
  sc.frames_per_clip = 2;
  sc.image_height = 8;
  sc.image_width = 8;  // crop 8x7, already the encoder face size
  sc.noise_sigma = 0.05;
  sc.mask_probability = 0.0;
  return generate_synthetic(sc, seed);
}

SaliencyMap flat_map(std::size_t h, std::size_t w, double fill) {
  SaliencyMap m;
  m.height = h;
  m.width = w;
  m.values.assign(h * w, fill);
  return m;
}

bool maps_equal(const SaliencyMap& a, const SaliencyMap& b) {
  return a.height == b.height && a.width == b.width && a.values == b.values;
}

fs::path temp_file(const std::string& stem) {
  return fs::temp_directory_path() / ("rvt_explain_test_" + stem);
}

}  // namespace

TEST_CASE("session saliency maps obey the basic contract") {
  const Dataset ds = tiny_data(7);
  const Model model = tiny_model(5);
  const Session& s = *ds.sessions[0];

  const std::vector<SaliencyMap> maps = saliency_session(s, model);
  REQUIRE(maps.size() == 3);
  for (std::size_t j = 0; j < maps.size(); ++j) {
    const SaliencyMap& m = maps[j];
    CHECK(m.height == 8);
    CHECK(m.width == 7);  // the mask column is not part of the map
    CHECK(m.clip_index == static_cast<int>(j + 1));
    CHECK(m.target == "gifs");
    CHECK_FALSE(m.degenerate);
    REQUIRE(m.values.size() == 56);
    double hi = 0.0;
    for (double v : m.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      hi = std::max(hi, v);
    }
    CHECK(hi == 1.0);  // min-max normalized
    CHECK(m.per_frame.empty());
  }
  // Different clips attribute to different pixels.
  CHECK_FALSE(maps_equal(maps[0], maps[1]));

  SUBCASE("keep_frames adds one normalized map per frame") {
    SaliencyOptions opts;
    opts.keep_frames = true;
    const std::vector<SaliencyMap> framed = saliency_session(s, model, opts);
    for (const SaliencyMap& m : framed) {
      REQUIRE(m.per_frame.size() == 2);
      for (const auto& f : m.per_frame) {
        REQUIRE(f.size() == 56);
        const double hi = *std::max_element(f.begin(), f.end());
        CHECK((hi == 1.0 || hi == 0.0));
      }
    }
  }

  SUBCASE("grad_times_input changes the attribution") {
    SaliencyOptions opts;
    opts.grad_times_input = true;
    const std::vector<SaliencyMap> gi = saliency_session(s, model, opts);
    CHECK_FALSE(maps_equal(gi[0], maps[0]));
  }
}

TEST_CASE("the first clip of a session matches the standalone clip map") {
  // Clip 1 starts from the zero state in both paths, and later clips cannot
  // influence an earlier score, so the attributions agree exactly.
  const Dataset ds = tiny_data(13);
  const Model model = tiny_model(2);
  const Session& s = *ds.sessions[0];

  const std::vector<SaliencyMap> session_maps = saliency_session(s, model);
  const SaliencyMap first = saliency_clip(s.clips[0], s.mask_flags[0], model);
  CHECK(maps_equal(session_maps[0], first));

  // A later clip sees the carried state, so its standalone map differs.
  const SaliencyMap third = saliency_clip(s.clips[2], s.mask_flags[2], model);
  CHECK_FALSE(maps_equal(session_maps[2], third));
}

TEST_CASE("class-logit targets select one readout column") {
  const Dataset ds = tiny_data(19);
  const Session& s = *ds.sessions[0];

  SUBCASE("binary models expose a single logit") {
    const Model model = tiny_model(3);
    SaliencyOptions opts;
    opts.target = SaliencyTarget::ClassLogit;
    opts.class_index = 0;
    const std::vector<SaliencyMap> maps = saliency_session(s, model, opts);
    CHECK(maps[0].target == "class0");
    opts.class_index = 1;
    CHECK_THROWS_WITH(saliency_session(s, model, opts),
                      doctest::Contains("class index 1 out of range"));
  }

  SUBCASE("three-class models expose three logits") {
    const Model model = tiny_model(3, ClassMode::Three);
    SaliencyOptions opts;
    opts.target = SaliencyTarget::ClassLogit;
    opts.class_index = 2;
    const std::vector<SaliencyMap> maps = saliency_session(s, model, opts);
    CHECK(maps[0].target == "class2");
    CHECK_FALSE(maps[0].degenerate);
  }
}

TEST_CASE("a constant readout produces a degenerate all-zero map") {
  const Dataset ds = tiny_data(23);
  Model model = tiny_model(4);
  for (Tensor t : model.parameters()) {
    auto v = t.mutable_values();
    std::fill(v.begin(), v.end(), 0.0);
  }
  const std::vector<SaliencyMap> maps = saliency_session(*ds.sessions[0], model);
  for (const SaliencyMap& m : maps) {
    CHECK(m.degenerate);
    for (double v : m.values) CHECK(v == 0.0);
  }
}

TEST_CASE("top_fraction_in_rows keeps the highest pixels deterministically") {
  SaliencyMap m = flat_map(4, 4, 0.0);

  SUBCASE("a single hot pixel decides the whole fraction") {
    m.values[2 * 4 + 1] = 1.0;  // row 2
    // 16 pixels, quantile 0.9 -> keep floor(1.6) = 1 pixel.
    CHECK(top_fraction_in_rows(m, 2, 3) == 1.0);
    CHECK(top_fraction_in_rows(m, 0, 2) == 0.0);
  }

  SUBCASE("exact mass split at quantile one half") {
    // Top 8 pixels: rows 0 and 1 hold values 8..5, rows 2 and 3 hold 4..1.
    for (std::size_t i = 0; i < 16; ++i) m.values[i] = static_cast<double>(16 - i) / 16.0;
    const double frac = top_fraction_in_rows(m, 0, 1, 0.5);
    // Kept pixels are the first 8 (values 16..9 sixteenths); row 0 holds
    // 16+15+14+13 of the 16+...+9 total.
    CHECK(frac == doctest::Approx((16.0 + 15.0 + 14.0 + 13.0) / (16.0 + 15.0 + 14.0 + 13.0 + 12.0 + 11.0 + 10.0 + 9.0))
                      .epsilon(1e-12));
  }

  SUBCASE("ties break on pixel index, lowest first") {
    m = flat_map(4, 4, 0.5);
    // keep = 1 and every value ties, so pixel 0 (row 0) is kept.
    CHECK(top_fraction_in_rows(m, 0, 1) == 1.0);
    CHECK(top_fraction_in_rows(m, 1, 4) == 0.0);
  }

  SUBCASE("an all-zero map contributes nothing") {
    CHECK(top_fraction_in_rows(m, 0, 4) == 0.0);
  }

  SUBCASE("bad arguments are rejected") {
    CHECK_THROWS_WITH(top_fraction_in_rows(m, 3, 3), doctest::Contains("bad row range"));
    CHECK_THROWS_WITH(top_fraction_in_rows(m, 0, 5), doctest::Contains("bad row range"));
    CHECK_THROWS_WITH(top_fraction_in_rows(m, 0, 4, 1.0), doctest::Contains("quantile"));
  }
}

TEST_CASE("aggregate_landmarks averages discs and rescales to the peak") {
  SaliencyMap m = flat_map(8, 8, 0.0);
  m.values[2 * 8 + 2] = 0.8;
  m.values[6 * 8 + 6] = 0.2;

  std::vector<Landmark> lms;
  lms.push_back({0, "eye_left", 2.0, 2.0});
  lms.push_back({1, "mouth_center", 6.0, 6.0});

  SUBCASE("radius zero reads single pixels") {
    const LandmarkReport rep = aggregate_landmarks({m}, {lms}, 0);
    REQUIRE(rep.entries.size() == 2);
    CHECK(rep.clamped == 0);
    CHECK(rep.entries[0].id == 0);
    CHECK(rep.entries[0].name == "eye_left");
    CHECK(rep.entries[0].value == 1.0);  // the peak
    CHECK(rep.entries[1].id == 1);
    CHECK(rep.entries[1].value == doctest::Approx(0.25).epsilon(1e-12));
  }

  SUBCASE("a larger disc dilutes an isolated spike") {
    const LandmarkReport rep = aggregate_landmarks({m}, {lms}, 1);
    // Both discs are 3x3 with a single nonzero pixel, so the ratio between
    // the two landmarks is unchanged.
    CHECK(rep.entries[0].value == 1.0);
    CHECK(rep.entries[1].value == doctest::Approx(0.25).epsilon(1e-12));
  }

  SUBCASE("several maps average their disc means per landmark") {
    SaliencyMap m2 = flat_map(8, 8, 0.0);
    m2.values[2 * 8 + 2] = 0.4;
    m2.values[6 * 8 + 6] = 0.6;
    const LandmarkReport rep = aggregate_landmarks({m, m2}, {lms, lms}, 0);
    // eye mean (0.8+0.4)/2 = 0.6, mouth mean (0.2+0.6)/2 = 0.4.
    CHECK(rep.entries[0].value == 1.0);
    CHECK(rep.entries[1].value == doctest::Approx(0.4 / 0.6).epsilon(1e-12));
  }

  SUBCASE("a uniform map treats every landmark equally") {
    // 0.5 keeps the disc means exact regardless of how clipping resizes them.
    const LandmarkReport rep = aggregate_landmarks({flat_map(8, 8, 0.5)}, {lms}, 2);
    CHECK(rep.entries[0].value == 1.0);
    CHECK(rep.entries[1].value == 1.0);
  }

  SUBCASE("out-of-image landmarks are clamped and counted") {
    std::vector<Landmark> outside;
    outside.push_back({0, "eye_left", -3.0, 2.0});
    outside.push_back({1, "mouth_center", 6.0, 11.5});
    const LandmarkReport rep = aggregate_landmarks({m}, {outside}, 0);
    CHECK(rep.clamped == 2);
    REQUIRE(rep.entries.size() == 2);
    // Clamped to (0,2) and (6,7): both read zero pixels here.
    CHECK(rep.entries[0].value == 0.0);
    CHECK(rep.entries[1].value == 0.0);
  }

  SUBCASE("shape errors are loud") {
    CHECK_THROWS_WITH(aggregate_landmarks({}, {}, 1), doctest::Contains("no maps"));
    CHECK_THROWS_WITH(aggregate_landmarks({m}, {lms, lms}, 1),
                      doctest::Contains("1 maps vs 2 landmark sets"));
    SaliencyMap odd = flat_map(4, 4, 0.0);
    CHECK_THROWS_WITH(aggregate_landmarks({m, odd}, {lms, lms}, 1),
                      doctest::Contains("geometry mismatch"));
  }
}

TEST_CASE("saliency images land on disk in portable formats") {
  const Dataset ds = tiny_data(29);
  const Model model = tiny_model(6);
  const Session& s = *ds.sessions[0];
  const std::vector<SaliencyMap> maps = saliency_session(s, model);

  SUBCASE("graymap round trip") {
    const fs::path path = temp_file("map.pgm");
    write_saliency_pgm(path.string(), maps[0]);
    const Image8 img = read_pgm(path.string());
    CHECK(img.height == 8);
    CHECK(img.width == 7);
    // The normalized peak quantizes to full white.
    CHECK(*std::max_element(img.pixels.begin(), img.pixels.end()) == 255);
    fs::remove(path);
  }

  SUBCASE("overlay wants frames matching the map geometry") {
    const fs::path path = temp_file("overlay.ppm");
    write_saliency_overlay_ppm(path.string(), maps[0], s.clips[0].frames);
    std::ifstream is(path, std::ios::binary);
    std::string magic;
    is >> magic;
    CHECK(magic == "P6");
    fs::remove(path);

    Tensor wrong = Tensor::zeros({2, 1, 4, 4});
    CHECK_THROWS_WITH(write_saliency_overlay_ppm(path.string(), maps[0], wrong),
                      doctest::Contains("do not match map geometry"));
  }
}

TEST_CASE("brightening the eye band moves the score through the eye pixels") {
  // Mechanistic sanity check that gradients flow from the eye rows: nudge
  // the eye band of a clip by epsilon in the gradient direction and compare
  // against the predicted first-order change.
  const Dataset ds = tiny_data(31);
  const Model model = tiny_model(9);
  const Session& s = *ds.sessions[0];

  std::vector<Tensor> leaves;
  SessionTrace trace = forward_session(s, model, &leaves);
  Tensor target = trace.gifs[0];
  zero_graph_grads(target);
  target.backward();
  const double base = target.item();

  auto grad = leaves[0].grad();
  REQUIRE_FALSE(grad.empty());

  // First-order prediction for a small step along the gradient restricted to
  // the face columns of clip 1.
  const double eps = 1e-6;
  double predicted_delta = 0.0;
  Session bumped = s;
  bumped.clips[0].frames = Tensor::from_vector(s.clips[0].frames.shape(),
                                               std::vector<double>(s.clips[0].frames.values().begin(),
                                                                   s.clips[0].frames.values().end()));
  {
    auto v = bumped.clips[0].frames.mutable_values();
    const Shape& sh = bumped.clips[0].frames.shape();
    const std::size_t h = sh[2], w = sh[3];
    for (std::size_t f = 0; f < sh[0]; ++f) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double g = grad[(f * h + y) * (w + 1) + x];  // composed width is w+1
          v[(f * h + y) * w + x] += eps * g;
          predicted_delta += eps * g * g;
        }
      }
    }
  }
  const SessionTrace after = forward_session(bumped, model);
  const double moved = after.gifs[0].item() - base;
  CHECK(moved == doctest::Approx(predicted_delta).epsilon(1e-3));
  CHECK(predicted_delta > 0.0);
}
