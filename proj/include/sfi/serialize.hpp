#pragma once

// Text formats for tensors, checkpoints, and map images.
//
// Tensor CSV: a `shape: d0,d1,...` header, then the row-major values with one
// line per slice of the last axis. Values use shortest round-trip formatting,
// so save → load is bitwise exact.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfi/tensor.hpp"

namespace sfi {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw FormatError("cannot format value");
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw FormatError("malformed number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline void write_tensor_csv(std::ostream& os, const Tensor& t) {
  os << "shape: ";
  for (std::size_t i = 0; i < t.rank(); ++i) os << (i ? "," : "") << t.dim(i);
  os << '\n';
  const std::size_t row = t.shape().back();
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    os << format_double(d[i]);
    os << ((i + 1) % row == 0 ? '\n' : ',');
  }
}

inline Tensor read_tensor_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("shape:", 0) != 0) throw FormatError("missing 'shape:' header");
  Shape shape;
  for (auto& part : split(std::string_view(line).substr(6), ',')) {
    double d = parse_double(part);
    if (d < 1 || d != static_cast<double>(static_cast<std::size_t>(d))) throw FormatError("bad extent in '" + line + "'");
    shape.push_back(static_cast<std::size_t>(d));
  }
  const std::size_t n = numel_of(shape);
  std::vector<double> values;
  values.reserve(n);
  while (values.size() < n && std::getline(is, line)) {
    if (line.empty()) continue;
    for (auto& part : split(line, ',')) values.push_back(parse_double(part));
  }
  if (values.size() != n)
    throw FormatError("expected " + std::to_string(n) + " values for shape " + shape_str(shape) + ", got " +
                      std::to_string(values.size()));
  return Tensor::from(std::move(shape), std::move(values));
}

inline void save_tensor_csv(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  write_tensor_csv(os, t);
}

inline Tensor load_tensor_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  return read_tensor_csv(is);
}

/// Named tensors, one `tensor: <name>` line followed by the tensor CSV block.

inline void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write checkpoint " + path.string());
  for (const auto& [name, t] : tensors) {
    os << "tensor: " << name << '\n';
    write_tensor_csv(os, t);
  }
}

inline std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read checkpoint " + path.string());
  std::map<std::string, Tensor> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("tensor: ", 0) != 0) throw FormatError("expected 'tensor:' line, got '" + line + "'");
    auto name = line.substr(8);
    out.emplace(name, read_tensor_csv(is));
  }
  return out;
}

/// 8-bit binary PGM of a W×H map: pixel (x, y) sits at column x, row y.
/// Values are min-max normalized to 0..255; a constant map becomes 255 if
/// positive and 0 otherwise.
inline void save_pgm(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("save_pgm: expected W×H map, got " + shape_str(map.shape()));
  const std::size_t w = map.dim(0), h = map.dim(1);
  auto d = map.data();
  const auto [lo_it, hi_it] = std::minmax_element(d.begin(), d.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<unsigned char> px(w * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double v = d[x * h + y];
      double u = hi > lo ? (v - lo) / (hi - lo) : (v > 0.0 ? 1.0 : 0.0);
      px[y * w + x] = static_cast<unsigned char>(std::lround(u * 255.0));
    }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os << "P5\n" << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

namespace detail {

inline std::string next_pnm_token(std::istream& is) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace detail

struct PnmImage {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<unsigned char> pixels;  // row-major scanlines, interleaved channels
};

inline PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read image " + path.string());
  PnmImage img;
  auto magic = detail::next_pnm_token(is);
  if (magic == "P5") img.channels = 1;
  else if (magic == "P6") img.channels = 3;
  else throw FormatError(path.string() + ": not a binary PGM/PPM image");
  try {
    img.width = std::stoul(detail::next_pnm_token(is));
    img.height = std::stoul(detail::next_pnm_token(is));
    if (std::stoul(detail::next_pnm_token(is)) != 255) throw FormatError(path.string() + ": only maxval 255 supported");
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": malformed image header");
  }
  img.pixels.resize(img.width * img.height * img.channels);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != img.pixels.size()) throw FormatError(path.string() + ": truncated pixel data");
  return img;
}

/// Binary PPM of a W×H×3 tensor with values in [0, 1].
inline void save_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("save_ppm: expected W×H×3, got " + shape_str(image.shape()));
  const std::size_t w = image.dim(0), h = image.dim(1);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os << "P6\n" << w << ' ' << h << "\n255\n";
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image.data()[(x * h + y) * 3 + c], 0.0, 1.0);
        os.put(static_cast<char>(std::lround(v * 255.0)));
      }
}

/// Reads a PPM/PGM as a W×H×C tensor scaled to [0, 1].
inline Tensor load_image(const std::filesystem::path& path) {
  auto img = read_pnm(path);
  std::vector<double> v(img.pixels.size());
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        v[(x * img.height + y) * img.channels + c] = img.pixels[(y * img.width + x) * img.channels + c] / 255.0;
  return Tensor::from({img.width, img.height, img.channels}, std::move(v));
}

}  // namespace sfi
