#include "vaedist/report_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace vaedist {

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_matrix_csv(std::ostream &out, const DistanceMatrix &m) {
  for (int u = 0; u < m.n; ++u) {
    for (int v = 0; v < m.n; ++v)
      out << (v ? "," : "") << format_number(m.at(u, v));
    out << '\n';
  }
}

GrayImage matrix_to_gray(const DistanceMatrix &m) {
  GrayImage img{m.n, m.n, std::vector<std::uint8_t>(m.values.size(), 0)};
  if (m.values.empty())
    return img;
  for (double v : m.values)
    if (!std::isfinite(v))
      throw std::invalid_argument("cannot render a non-finite matrix");
  auto [lo, hi] = std::minmax_element(m.values.begin(), m.values.end());
  double range = *hi - *lo;
  if (!(range > 0.0))
    return img;
  for (std::size_t i = 0; i < m.values.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(
        std::lround(255.0 * (m.values[i] - *lo) / range));
  return img;
}

void write_pgm(const GrayImage &img, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char *>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out)
    throw std::runtime_error("write failed for " + path.string());
}

void emit_pgm(const DistanceMatrix &m, const std::filesystem::path &path) {
  write_pgm(matrix_to_gray(m), path);
}

GrayImage read_pgm(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  GrayImage img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || img.width < 0 || img.height < 0)
    throw std::runtime_error("unsupported PGM header in " + path.string());
  in.get(); // single whitespace before raster
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  if (!in.read(reinterpret_cast<char *>(img.pixels.data()),
               static_cast<std::streamsize>(img.pixels.size())))
    throw std::runtime_error("truncated PGM raster in " + path.string());
  return img;
}

} // namespace vaedist
