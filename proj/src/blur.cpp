#include "vaedist/blur.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

namespace vaedist {

namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
std::mutex &planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
};

const PlanPair &plans_for(int h, int w) {
  static std::map<std::pair<int, int>, PlanPair> cache;
  std::lock_guard lock(planner_mutex());
  auto it = cache.find({h, w});
  if (it != cache.end())
    return it->second;

  std::size_t n_real = static_cast<std::size_t>(h) * w;
  std::size_t n_cplx = static_cast<std::size_t>(h) * (w / 2 + 1);
  double *re = fftw_alloc_real(n_real);
  fftw_complex *cx = fftw_alloc_complex(n_cplx);
  PlanPair p;
  unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  p.forward = fftw_plan_dft_r2c_2d(h, w, re, cx, flags);
  p.backward = fftw_plan_dft_c2r_2d(h, w, cx, re, flags | FFTW_DESTROY_INPUT);
  fftw_free(re);
  fftw_free(cx);
  if (!p.forward || !p.backward)
    throw std::runtime_error("FFTW failed to create a plan");
  return cache.emplace(std::make_pair(h, w), p).first->second;
}

void check_dims(int h, int w) {
  if (h < 1 || w < 1)
    throw std::invalid_argument("FFT dimensions must be positive");
}

/// Spectrum of the wrapped box kernel for an h x w periodic image. The kernel
/// is even, so the spectrum is real.
const std::vector<double> &box_spectrum(int h, int w, int radius) {
  static std::map<std::tuple<int, int, int>, std::vector<double>> cache;
  static std::mutex m;
  {
    std::lock_guard lock(m);
    auto it = cache.find({h, w, radius});
    if (it != cache.end())
      return it->second;
  }
  BoxKernel k(radius);
  std::vector<double> taps(static_cast<std::size_t>(h) * w, 0.0);
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      int y = ((dy % h) + h) % h;
      int x = ((dx % w) + w) % w;
      taps[static_cast<std::size_t>(y) * w + x] += k.weight();
    }
  Spectrum s = fft2_real(taps, h, w);
  std::vector<double> real(s.bins.size());
  for (std::size_t i = 0; i < real.size(); ++i)
    real[i] = s.bins[i].real();

  std::lock_guard lock(m);
  return cache.emplace(std::make_tuple(h, w, radius), std::move(real))
      .first->second;
}

} // namespace

Spectrum fft2_real(std::span<const double> image, int height, int width) {
  check_dims(height, width);
  if (image.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("image size does not match dimensions");
  const auto &p = plans_for(height, width);
  Spectrum s{height, width, {}};
  s.bins.resize(static_cast<std::size_t>(height) * s.cols());
  std::vector<double> in(image.begin(), image.end());
  fftw_execute_dft_r2c(p.forward, in.data(),
                       reinterpret_cast<fftw_complex *>(s.bins.data()));
  return s;
}

std::vector<double> ifft2_real(const Spectrum &spectrum) {
  check_dims(spectrum.height, spectrum.width);
  const auto &p = plans_for(spectrum.height, spectrum.width);
  std::vector<std::complex<double>> bins = spectrum.bins; // c2r clobbers input
  std::vector<double> out(static_cast<std::size_t>(spectrum.height) * spectrum.width);
  fftw_execute_dft_c2r(p.backward, reinterpret_cast<fftw_complex *>(bins.data()),
                       out.data());
  double norm = 1.0 / static_cast<double>(out.size());
  for (double &v : out)
    v *= norm;
  return out;
}

BoxKernel::BoxKernel(int r) : radius(r) {
  if (r < 1)
    throw std::invalid_argument("box blur radius must be >= 1");
}

std::string to_string(BlurPadding p) {
  return p == BlurPadding::Zero ? "zero" : "circular";
}

BlurPadding parse_padding(const std::string &s) {
  if (s == "zero")
    return BlurPadding::Zero;
  if (s == "circular")
    return BlurPadding::Circular;
  throw std::invalid_argument("unknown blur padding '" + s +
                              "' (expected zero or circular)");
}

static void circular_blur(std::span<const double> in, std::span<double> out,
                          int height, int width, int radius) {
  const auto &kernel = box_spectrum(height, width, radius);
  Spectrum s = fft2_real(in, height, width);
  for (std::size_t i = 0; i < s.bins.size(); ++i)
    s.bins[i] *= kernel[i];
  auto res = ifft2_real(s);
  std::copy(res.begin(), res.end(), out.begin());
}

void box_blur_plane(std::span<const double> in, std::span<double> out,
                    int height, int width, int radius, BlurPadding padding) {
  (void)BoxKernel(radius);
  check_dims(height, width);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  if (in.size() != plane || out.size() != plane)
    throw std::invalid_argument("blur buffers do not match dimensions");
  if (padding == BlurPadding::Circular) {
    circular_blur(in, out, height, width, radius);
    return;
  }
  // A period of H + r (W + r) keeps every wrapped tap outside the image.
  const int ph = height + radius, pw = width + radius;
  std::vector<double> padded(static_cast<std::size_t>(ph) * pw, 0.0), res(padded.size());
  for (int y = 0; y < height; ++y)
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(y) * width, width,
                padded.begin() + static_cast<std::ptrdiff_t>(y) * pw);
  circular_blur(padded, res, ph, pw, radius);
  for (int y = 0; y < height; ++y)
    std::copy_n(res.begin() + static_cast<std::ptrdiff_t>(y) * pw, width,
                out.begin() + static_cast<std::ptrdiff_t>(y) * width);
}

Observation box_blur(const Observation &obs, int radius, BlurPadding padding) {
  Observation out(obs.channels, obs.height, obs.width);
  for (int c = 0; c < obs.channels; ++c)
    box_blur_plane(obs.channel(c), out.channel(c), obs.height, obs.width, radius,
                   padding);
  return out;
}

void OverlapLossParams::validate() const {
  if (!(alpha > 0.0))
    throw std::invalid_argument("overlap loss alpha must be positive");
  (void)BoxKernel(radius);
}

double overlap_loss(std::span<const double> x, std::span<const double> r,
                    int channels, int height, int width,
                    const OverlapLossParams &params, std::span<double> grad) {
  params.validate();
  std::size_t plane = static_cast<std::size_t>(height) * width;
  std::size_t n = plane * channels;
  if (x.size() != n || r.size() != n)
    throw std::invalid_argument("overlap loss inputs have mismatched shapes");
  if (!grad.empty() && grad.size() != n)
    throw std::invalid_argument("gradient buffer has the wrong size");

  // blur is linear, so blur(r) - blur(x) = blur(r - x).
  std::vector<double> diff(n), blurred(n);
  double plain = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = r[i] - x[i];
    plain += diff[i] * diff[i];
  }
  for (int c = 0; c < channels; ++c)
    box_blur_plane(std::span<const double>(diff).subspan(c * plane, plane),
                   std::span<double>(blurred).subspan(c * plane, plane), height,
                   width, params.radius, params.padding);
  double smooth = 0.0;
  for (double v : blurred)
    smooth += v * v;
  double inv_n = 1.0 / static_cast<double>(n);

  if (!grad.empty()) {
    // blur is self-adjoint: d/dr |blur(r - x)|^2 = 2 blur(blur(r - x)).
    std::vector<double> back(n);
    for (int c = 0; c < channels; ++c)
      box_blur_plane(std::span<const double>(blurred).subspan(c * plane, plane),
                     std::span<double>(back).subspan(c * plane, plane), height,
                     width, params.radius, params.padding);
    for (std::size_t i = 0; i < n; ++i)
      grad[i] = 2.0 * inv_n * (diff[i] + params.alpha * back[i]);
  }
  return (plain + params.alpha * smooth) * inv_n;
}

LossWithGrad overlap_loss(const Observation &x, const Observation &r,
                          const OverlapLossParams &params) {
  require_same_shape(x, r);
  LossWithGrad out;
  out.grad.resize(x.size());
  out.value = overlap_loss(x.data, r.data, x.channels, x.height, x.width,
                           params, out.grad);
  return out;
}

} // namespace vaedist
