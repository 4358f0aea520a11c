#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace vaedist {

/// A C x H x W image, channel-major. Raw observations hold values in [0, 1].
struct Observation {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Observation() = default;
  Observation(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

  double &at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  std::span<double> channel(int c) {
    return std::span<double>(data).subspan(c * plane(), plane());
  }
  std::span<const double> channel(int c) const {
    return std::span<const double>(data).subspan(c * plane(), plane());
  }

  bool same_shape(const Observation &o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

inline void require_same_shape(const Observation &a, const Observation &b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("observation shapes differ");
}

} // namespace vaedist
