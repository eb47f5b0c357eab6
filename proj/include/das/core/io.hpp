#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "das/core/tensor.hpp"

namespace das::io {

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  DAS_CHECK(is.gcount() == 4, FormatError, "tensor dump truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  DAS_CHECK(os.good(), Error, "cannot open '" + p.string() + "' for writing");
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  DAS_CHECK(is.good(), ConfigError, "cannot open '" + p.string() + "'");
  return is;
}

}  // namespace detail

// Tensor dump: "DAST", u32 rank, u32 extents, f32 payload; all little-endian.
template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write("DAST", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(e));
  for (T v : t.data()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    detail::put_u32(os, bits);
  }
}

template <typename T = float>
Tensor<T> read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  DAS_CHECK(is.gcount() == 4 && std::memcmp(magic, "DAST", 4) == 0, FormatError, "bad tensor dump magic");
  const std::uint32_t rank = detail::get_u32(is);
  Shape s(rank);
  for (auto& e : s) e = detail::get_u32(is);
  Tensor<T> t(s);
  for (auto& v : t.data()) {
    const std::uint32_t bits = detail::get_u32(is);
    float f;
    std::memcpy(&f, &bits, 4);
    v = static_cast<T>(f);
  }
  return t;
}

template <typename T>
void save_tensor(const std::filesystem::path& p, const Tensor<T>& t) {
  auto os = detail::open_out(p);
  write_tensor(os, t);
}

template <typename T = float>
Tensor<T> load_tensor(const std::filesystem::path& p) {
  auto is = detail::open_in(p);
  return read_tensor<T>(is);
}

namespace detail {

inline std::string next_token(std::istream& is) {
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

inline unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

// Writes [C,H,W] with C=1 as P5 and C=3 as P6. Values in [0,1] map to 0..255.
template <typename T>
void write_pnm(const std::filesystem::path& p, const Tensor<T>& img) {
  DAS_CHECK(img.rank() == 3 && (img.dim(0) == 1 || img.dim(0) == 3), DimensionError,
            "write_pnm expects [1|3,H,W], got " + shape_str(img.shape()));
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  auto os = detail::open_out(p);
  os << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> buf(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        buf[(y * w + x) * c + ch] = detail::to_byte(static_cast<double>(img.at(ch, y, x)));
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

template <typename T = float>
Tensor<T> read_pnm(const std::filesystem::path& p) {
  auto is = detail::open_in(p);
  const std::string magic = detail::next_token(is);
  DAS_CHECK(magic == "P5" || magic == "P6", FormatError, "'" + p.string() + "' is not a binary PGM/PPM");
  const std::size_t w = std::stoul(detail::next_token(is));
  const std::size_t h = std::stoul(detail::next_token(is));
  const int maxval = std::stoi(detail::next_token(is));
  DAS_CHECK(maxval == 255, FormatError, "only 8-bit PNM images are supported");
  const std::size_t c = magic == "P5" ? 1 : 3;
  std::vector<unsigned char> buf(c * h * w);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  DAS_CHECK(static_cast<std::size_t>(is.gcount()) == buf.size(), FormatError, "PNM payload truncated");
  Tensor<T> img(Shape{c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        img.at(ch, y, x) = static_cast<T>(buf[(y * w + x) * c + ch]) / T(255);
  return img;
}

}  // namespace das::io
