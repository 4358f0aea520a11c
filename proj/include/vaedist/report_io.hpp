#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "vaedist/distances.hpp"

namespace vaedist {

/// Shortest round-trippable-enough decimal form used in every CSV.
std::string format_number(double v);

void write_matrix_csv(std::ostream &out, const DistanceMatrix &m);

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels; // row-major
};

/// Min-max normalises to 0..255 (rounded); a constant matrix maps to zeros.
GrayImage matrix_to_gray(const DistanceMatrix &m);

/// Binary PGM (P5, maxval 255).
void emit_pgm(const DistanceMatrix &m, const std::filesystem::path &path);
void write_pgm(const GrayImage &img, const std::filesystem::path &path);
GrayImage read_pgm(const std::filesystem::path &path);

} // namespace vaedist
