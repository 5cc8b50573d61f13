#pragma once

// Binary PPM (P6) and PGM (P5) with maxval 255.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "apdr/errors.hpp"

namespace apdr {

struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 3 for PPM, 1 for PGM
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

inline void write_pnm(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw ConfigError("PNM images need 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

namespace detail {
inline std::size_t read_header_int(std::istream& in, const std::string& path) {
  in >> std::ws;
  while (in.peek() == '#') {
    std::string skip;
    std::getline(in, skip);
    in >> std::ws;
  }
  long long v = -1;
  in >> v;
  if (!in || v <= 0) throw LoadError("malformed PNM header in " + path);
  return std::size_t(v);
}
}  // namespace detail

inline Image8 read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("missing image file " + path.string());
  std::string magic;
  in >> magic;
  Image8 img;
  if (magic == "P6") {
    img.channels = 3;
  } else if (magic == "P5") {
    img.channels = 1;
  } else {
    throw LoadError("unsupported image format in " + path.string() + " (need P5/P6)");
  }
  img.width = detail::read_header_int(in, path.string());
  img.height = detail::read_header_int(in, path.string());
  if (detail::read_header_int(in, path.string()) != 255) throw LoadError("only maxval 255 supported: " + path.string());
  in.get();
  img.pixels.resize(img.width * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
  if (in.gcount() != std::streamsize(img.pixels.size())) throw LoadError("truncated image file " + path.string());
  return img;
}

}  // namespace apdr
