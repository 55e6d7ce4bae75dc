#include "rvt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace rvt {

namespace {

constexpr char kMagic[8] = {'R', 'V', 'T', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated integer field");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(os, bits);
}

double get_f64(std::istream& is) {
  std::uint64_t bits = get_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& named) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  for (const auto& [name, t] : named) {
    if (!t.defined()) throw std::runtime_error("checkpoint: undefined tensor '" + name + "'");
    put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape& s = t.shape();
    put_u64(os, s.size());
    for (std::size_t d : s) put_u64(os, d);
    for (double v : t.values()) put_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: '" + path + "' has a bad magic header");
  }
  std::vector<std::pair<std::string, Tensor>> out;
  while (true) {
    is.peek();
    if (is.eof()) break;
    std::uint64_t name_len = get_u64(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw std::runtime_error("checkpoint: truncated name record");
    std::uint64_t rank = get_u64(is);
    Shape shape(rank);
    for (std::uint64_t i = 0; i < rank; ++i) shape[i] = get_u64(is);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = get_f64(is);
    out.emplace_back(std::move(name), Tensor::from_vector(std::move(shape), std::move(data)));
  }
  return out;
}

void load_checkpoint_into(const std::string& path,
                          const std::vector<std::pair<std::string, Tensor>>& named) {
  auto loaded = load_checkpoint(path);
  std::map<std::string, Tensor> by_name;
  for (auto& [n, t] : loaded) {
    if (!by_name.emplace(n, t).second) {
      throw std::runtime_error("checkpoint: duplicate tensor '" + n + "' in '" + path + "'");
    }
  }
  for (const auto& [name, dst] : named) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    if (it->second.shape() != dst.shape()) {
      throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                               ", expected " + shape_str(dst.shape()));
    }
    Tensor d = dst;
    auto v = d.mutable_values();
    auto src = it->second.values();
    std::copy(src.begin(), src.end(), v.begin());
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw std::runtime_error("checkpoint: '" + path + "' contains unexpected tensor '" +
                             by_name.begin()->first + "'");
  }
}

}  // namespace rvt
