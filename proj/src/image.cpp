#include "rvt/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace rvt {

void write_pgm(const std::string& path, const Image8& img) {
  if (img.pixels.size() != img.height * img.width) {
    throw std::runtime_error("write_pgm: pixel buffer does not match " + std::to_string(img.height) +
                             "x" + std::to_string(img.width));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_pgm: cannot open '" + path + "'");
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw std::runtime_error("write_pgm: write to '" + path + "' failed");
}

namespace {
// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}
}  // namespace

Image8 read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_pgm: cannot open '" + path + "'");
  if (next_token(is) != "P5") throw std::runtime_error("read_pgm: '" + path + "' is not a P5 graymap");
  Image8 img;
  try {
    img.width = std::stoul(next_token(is));
    img.height = std::stoul(next_token(is));
    const unsigned long maxval = std::stoul(next_token(is));
    if (maxval != 255) throw std::runtime_error("maxval " + std::to_string(maxval));
  } catch (const std::exception& e) {
    throw std::runtime_error("read_pgm: bad header in '" + path + "': " + e.what());
  }
  img.pixels.resize(img.height * img.width);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw std::runtime_error("read_pgm: truncated pixel data in '" + path + "'");
  }
  return img;
}

void write_ppm(const std::string& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != height * width * 3) {
    throw std::runtime_error("write_ppm: buffer does not match " + std::to_string(height) + "x" +
                             std::to_string(width) + "x3");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_ppm: cannot open '" + path + "'");
  os << "P6\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!os) throw std::runtime_error("write_ppm: write to '" + path + "' failed");
}

Image8 quantize_frame(const double* values, std::size_t height, std::size_t width) {
  Image8 img;
  img.height = height;
  img.width = width;
  img.pixels.resize(height * width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double v = std::clamp(values[i], 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

std::vector<double> dequantize_frame(const Image8& img) {
  std::vector<double> out(img.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(img.pixels[i]) / 255.0;
  return out;
}

namespace {
struct Segment {
  std::size_t lo;
  std::vector<double> weights;  // over input cells lo, lo+1, ...
};

// Overlap weights of output cell i against input cells for a 1-D box filter.
std::vector<Segment> box_segments(std::size_t in_n, std::size_t out_n) {
  std::vector<Segment> segs(out_n);
  const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
  for (std::size_t i = 0; i < out_n; ++i) {
    const double a = static_cast<double>(i) * scale;
    const double b = a + scale;
    auto lo = static_cast<std::size_t>(a);
    auto hi = static_cast<std::size_t>(std::ceil(b));
    hi = std::min(hi, in_n);
    Segment s;
    s.lo = lo;
    for (std::size_t c = lo; c < hi; ++c) {
      const double ca = static_cast<double>(c);
      const double overlap = std::min(b, ca + 1.0) - std::max(a, ca);
      if (overlap > 0.0) s.weights.push_back(overlap / scale);
    }
    segs[i] = std::move(s);
  }
  return segs;
}
}  // namespace

Tensor resize_area(const Tensor& t, std::size_t out_h, std::size_t out_w) {
  if (!t.defined() || t.rank() < 2) {
    throw std::runtime_error("resize_area: input must have rank >= 2");
  }
  if (out_h == 0 || out_w == 0) throw std::runtime_error("resize_area: zero output size");
  const Shape& s = t.shape();
  const std::size_t in_h = s[s.size() - 2], in_w = s[s.size() - 1];
  std::size_t planes = t.numel() / (in_h * in_w);
  auto rows = box_segments(in_h, out_h);
  auto cols = box_segments(in_w, out_w);
  Shape out_shape = s;
  out_shape[s.size() - 2] = out_h;
  out_shape[s.size() - 1] = out_w;
  std::vector<double> out(planes * out_h * out_w, 0.0);
  auto src = t.values();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* in = src.data() + p * in_h * in_w;
    double* dst = out.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const Segment& ry = rows[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Segment& rx = cols[ox];
        double acc = 0.0;
        for (std::size_t iy = 0; iy < ry.weights.size(); ++iy) {
          const double* row = in + (ry.lo + iy) * in_w + rx.lo;
          double rowacc = 0.0;
          for (std::size_t ix = 0; ix < rx.weights.size(); ++ix) rowacc += rx.weights[ix] * row[ix];
          acc += ry.weights[iy] * rowacc;
        }
        dst[oy * out_w + ox] = acc;
      }
    }
  }
  return Tensor::from_vector(std::move(out_shape), std::move(out));
}

}  // namespace rvt
