#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vaedist {

class InvalidPosition : public std::out_of_range {
public:
  using std::out_of_range::out_of_range;
};

/// Coordinates into a factor grid. 0-indexed; coords[i] lies in [0, sizes[i]).
struct FactorPos {
  std::vector<int> coords;

  std::size_t size() const { return coords.size(); }
  int operator[](std::size_t i) const { return coords[i]; }
  int &operator[](std::size_t i) { return coords[i]; }

  friend bool operator==(const FactorPos &, const FactorPos &) = default;
};

/// The complete Cartesian grid of ground-truth factors. Positions ravel in
/// row-major order (last factor varies fastest), which is how dSprites-style
/// arrays are stored on disk.
class FactorSpace {
public:
  explicit FactorSpace(std::vector<int> sizes,
                       std::vector<std::string> names = {});

  std::size_t num_factors() const { return sizes_.size(); }
  const std::vector<int> &sizes() const { return sizes_; }
  int size(std::size_t factor) const { return sizes_.at(factor); }
  std::int64_t total() const { return total_; }
  const std::vector<std::string> &names() const { return names_; }
  const std::string &name(std::size_t factor) const { return names_.at(factor); }

  bool valid(const FactorPos &pos) const;

  std::int64_t pos_to_index(const FactorPos &pos) const;
  FactorPos index_to_pos(std::int64_t index) const;

  /// All positions that agree with `anchor` everywhere except `factor`, which
  /// runs 0..size(factor)-1. Every member of the result generates the same list.
  std::vector<FactorPos> traversal(const FactorPos &anchor,
                                   std::size_t factor) const;

  FactorPos sample_pos(std::mt19937_64 &rng) const;

private:
  void check(const FactorPos &pos) const;

  std::vector<int> sizes_;
  std::vector<std::string> names_;
  std::vector<std::int64_t> strides_;
  std::int64_t total_ = 1;
};

/// Number of coordinates on which two positions differ.
int hamming(const FactorPos &a, const FactorPos &b);

} // namespace vaedist
