#include "vaedist/factor_space.hpp"

#include <limits>

namespace vaedist {

FactorSpace::FactorSpace(std::vector<int> sizes, std::vector<std::string> names)
    : sizes_(std::move(sizes)), names_(std::move(names)) {
  if (sizes_.empty())
    throw std::invalid_argument("factor space needs at least one factor");
  if (!names_.empty() && names_.size() != sizes_.size())
    throw std::invalid_argument("factor name count does not match factor count");
  if (names_.empty())
    for (std::size_t i = 0; i < sizes_.size(); ++i)
      names_.push_back("f" + std::to_string(i));

  strides_.assign(sizes_.size(), 1);
  for (std::size_t i = sizes_.size(); i-- > 0;) {
    if (sizes_[i] < 1)
      throw std::invalid_argument("factor sizes must be positive");
    strides_[i] = total_;
    if (total_ > std::numeric_limits<std::int64_t>::max() / sizes_[i])
      throw std::overflow_error("factor space too large");
    total_ *= sizes_[i];
  }
}

bool FactorSpace::valid(const FactorPos &pos) const {
  if (pos.size() != sizes_.size())
    return false;
  for (std::size_t i = 0; i < sizes_.size(); ++i)
    if (pos[i] < 0 || pos[i] >= sizes_[i])
      return false;
  return true;
}

void FactorSpace::check(const FactorPos &pos) const {
  if (pos.size() != sizes_.size())
    throw InvalidPosition("position has " + std::to_string(pos.size()) +
                          " coordinates, space has " +
                          std::to_string(sizes_.size()));
  for (std::size_t i = 0; i < sizes_.size(); ++i)
    if (pos[i] < 0 || pos[i] >= sizes_[i])
      throw InvalidPosition("coordinate " + std::to_string(i) + " = " +
                            std::to_string(pos[i]) + " outside [0, " +
                            std::to_string(sizes_[i]) + ")");
}

std::int64_t FactorSpace::pos_to_index(const FactorPos &pos) const {
  check(pos);
  std::int64_t idx = 0;
  for (std::size_t i = 0; i < sizes_.size(); ++i)
    idx += strides_[i] * pos[i];
  return idx;
}

FactorPos FactorSpace::index_to_pos(std::int64_t index) const {
  if (index < 0 || index >= total_)
    throw InvalidPosition("index " + std::to_string(index) + " outside [0, " +
                          std::to_string(total_) + ")");
  FactorPos pos{std::vector<int>(sizes_.size())};
  for (std::size_t i = 0; i < sizes_.size(); ++i) {
    pos[i] = static_cast<int>(index / strides_[i]);
    index %= strides_[i];
  }
  return pos;
}

std::vector<FactorPos> FactorSpace::traversal(const FactorPos &anchor,
                                              std::size_t factor) const {
  if (factor >= sizes_.size())
    throw std::out_of_range("factor index " + std::to_string(factor) +
                            " out of range");
  check(anchor);
  std::vector<FactorPos> out(sizes_[factor], anchor);
  for (int v = 0; v < sizes_[factor]; ++v)
    out[v][factor] = v;
  return out;
}

FactorPos FactorSpace::sample_pos(std::mt19937_64 &rng) const {
  FactorPos pos{std::vector<int>(sizes_.size())};
  for (std::size_t i = 0; i < sizes_.size(); ++i)
    pos[i] = std::uniform_int_distribution<int>(0, sizes_[i] - 1)(rng);
  return pos;
}

int hamming(const FactorPos &a, const FactorPos &b) {
  if (a.size() != b.size())
    throw std::invalid_argument("positions have different dimensionality");
  int n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    n += a[i] != b[i];
  return n;
}

} // namespace vaedist
