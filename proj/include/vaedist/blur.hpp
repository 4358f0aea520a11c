#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

#include "vaedist/observation.hpp"

namespace vaedist {

/// Non-redundant half of a real 2D DFT: height x (width / 2 + 1) bins,
/// row-major, unnormalised forward transform.
struct Spectrum {
  int height = 0;
  int width = 0;
  std::vector<std::complex<double>> bins;

  int cols() const { return width / 2 + 1; }
  std::complex<double> at(int u, int v) const { return bins[u * cols() + v]; }
};

Spectrum fft2_real(std::span<const double> image, int height, int width);
/// Inverse of fft2_real, including the 1 / (H * W) normalisation.
std::vector<double> ifft2_real(const Spectrum &spectrum);

/// Square box kernel of side 2r + 1 with every weight 1 / side^2.
struct BoxKernel {
  int radius = 1;

  explicit BoxKernel(int r);
  int side() const { return 2 * radius + 1; }
  double weight() const { return 1.0 / (static_cast<double>(side()) * side()); }
};

/// Zero: pixels outside the image are 0 (linear convolution, cropped).
/// Circular: the image wraps around.
enum class BlurPadding { Zero, Circular };

std::string to_string(BlurPadding p);
BlurPadding parse_padding(const std::string &s);

/// Channel-wise convolution with a normalised box kernel, via FFT. Both
/// padding modes give a symmetric (self-adjoint) operator.
Observation box_blur(const Observation &obs, int radius,
                     BlurPadding padding = BlurPadding::Zero);
void box_blur_plane(std::span<const double> in, std::span<double> out,
                    int height, int width, int radius,
                    BlurPadding padding = BlurPadding::Zero);

struct OverlapLossParams {
  double alpha = 63.0 * 63.0;
  int radius = 31;
  BlurPadding padding = BlurPadding::Zero;

  void validate() const;
};

struct LossWithGrad {
  double value = 0.0;
  std::vector<double> grad; // d value / d reconstruction
};

/// MSE(x, r) + alpha * MSE(blur(x), blur(r)), both as means over elements.
LossWithGrad overlap_loss(const Observation &x, const Observation &r,
                          const OverlapLossParams &params);

/// Same loss on flat C*H*W buffers; `grad` may be empty to skip the gradient.
double overlap_loss(std::span<const double> x, std::span<const double> r,
                    int channels, int height, int width,
                    const OverlapLossParams &params, std::span<double> grad);

} // namespace vaedist
