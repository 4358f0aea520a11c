#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vaedist/factor_space.hpp"
#include "vaedist/npy.hpp"
#include "vaedist/observation.hpp"

namespace vaedist {

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t channels() const { return mean.size(); }
};

/// A dataset whose observations are a deterministic function of a position in
/// a complete factor grid.
class GroundTruthDataset {
public:
  virtual ~GroundTruthDataset() = default;

  virtual const FactorSpace &space() const = 0;
  virtual int channels() const = 0;
  virtual int height() const = 0;
  virtual int width() const = 0;
  virtual Observation observation(const FactorPos &pos) const = 0;
  virtual std::string name() const = 0;

  /// Writes the observation at `pos` into `out`, reusing its storage when the
  /// dataset supports it. Hot loops use this to avoid per-pair allocations.
  virtual void observe_into(const FactorPos &pos, Observation &out) const {
    out = observation(pos);
  }

  std::size_t observation_size() const {
    return static_cast<std::size_t>(channels()) * height() * width();
  }
  Observation observation(std::int64_t index) const {
    return observation(space().index_to_pos(index));
  }

  /// Dataset-provided normalisation constants, if known.
  virtual std::optional<ChannelStats> known_stats() const { return std::nullopt; }
};

/// Parameters of the adversarial squares dataset. Square k is drawn in channel
/// k only, so three squares render as pure R, G and B.
struct XYSquaresParams {
  int image_size = 64;
  int square_size = 8;
  int grid_points = 8;
  int spacing = 8;
  int num_squares = 3;

  void validate() const;
};

class XYSquares final : public GroundTruthDataset {
public:
  explicit XYSquares(XYSquaresParams params = {});

  const FactorSpace &space() const override { return space_; }
  int channels() const override { return params_.num_squares; }
  int height() const override { return params_.image_size; }
  int width() const override { return params_.image_size; }
  Observation observation(const FactorPos &pos) const override;
  using GroundTruthDataset::observation;
  void observe_into(const FactorPos &pos, Observation &out) const override;
  std::string name() const override;
  std::optional<ChannelStats> known_stats() const override;

  const XYSquaresParams &params() const { return params_; }

private:
  XYSquaresParams params_;
  FactorSpace space_;
};

/// Renders a single XYSquares observation. Factor order is
/// (x_0, y_0, x_1, y_1, ...), one (x, y) pair per square.
Observation xysquares_generate(const XYSquaresParams &params,
                               const FactorPos &pos);

/// Procedural dataset backed by an arbitrary generator function.
class FunctionDataset final : public GroundTruthDataset {
public:
  using Generator = std::function<Observation(const FactorPos &)>;

  FunctionDataset(std::string name, FactorSpace space, int channels, int height,
                  int width, Generator gen);

  const FactorSpace &space() const override { return space_; }
  int channels() const override { return channels_; }
  int height() const override { return height_; }
  int width() const override { return width_; }
  Observation observation(const FactorPos &pos) const override;
  using GroundTruthDataset::observation;
  std::string name() const override { return name_; }

private:
  std::string name_;
  FactorSpace space_;
  int channels_, height_, width_;
  Generator gen_;
};

enum class ArrayLayout { NHW, NHWC, NCHW };

ArrayLayout parse_layout(const std::string &tag);

/// Observations stored in an NPY array, indexed by ravelled factor position.
/// uint8 data is scaled by 1/255 unless every value is 0 or 1.
class NpyDataset final : public GroundTruthDataset {
public:
  NpyDataset(std::string name, NpyArray array, ArrayLayout layout,
             FactorSpace space);

  const FactorSpace &space() const override { return space_; }
  int channels() const override { return channels_; }
  int height() const override { return height_; }
  int width() const override { return width_; }
  Observation observation(const FactorPos &pos) const override;
  using GroundTruthDataset::observation;
  void observe_into(const FactorPos &pos, Observation &out) const override;
  std::string name() const override { return name_; }

  double scale() const { return scale_; }

private:
  std::string name_;
  NpyArray array_;
  ArrayLayout layout_;
  FactorSpace space_;
  int channels_ = 1, height_ = 0, width_ = 0;
  double scale_ = 1.0;
};

/// View over another dataset that optionally resizes and standardises every
/// observation on retrieval. Factor structure is unchanged.
class PreprocessedDataset final : public GroundTruthDataset {
public:
  PreprocessedDataset(const GroundTruthDataset &base, int height, int width,
                      std::optional<ChannelStats> stats);

  const FactorSpace &space() const override { return base_.space(); }
  int channels() const override { return base_.channels(); }
  int height() const override { return height_; }
  int width() const override { return width_; }
  Observation observation(const FactorPos &pos) const override;
  using GroundTruthDataset::observation;
  std::string name() const override { return base_.name(); }

  const std::optional<ChannelStats> &stats() const { return stats_; }

private:
  const GroundTruthDataset &base_;
  int height_, width_;
  std::optional<ChannelStats> stats_;
};

/// key=value description of a file-backed dataset:
///   name=dsprites
///   npy=imgs.npy            (relative paths resolve against the manifest)
///   layout=NHW              (NHW | NHWC | NCHW)
///   factors=3,6,40,32,32
///   factor_names=shape,scale,orientation,x,y   (optional)
struct DatasetManifest {
  std::string name;
  std::filesystem::path npy;
  ArrayLayout layout = ArrayLayout::NHW;
  std::vector<int> factors;
  std::vector<std::string> factor_names;

  static DatasetManifest load(const std::filesystem::path &path);
};

std::unique_ptr<NpyDataset> open_manifest(const DatasetManifest &manifest,
                                          bool memory_map = true);

/// Per-channel mean and std of raw pixel values: each observation's channel
/// mean and sample std (n - 1 denominator), averaged over observations.
/// `sample_count` of 0 means an exhaustive pass over every observation.
ChannelStats channel_stats(const GroundTruthDataset &ds,
                           std::int64_t sample_count, std::mt19937_64 &rng);

Observation standardise(const Observation &obs, const ChannelStats &stats);
Observation destandardise(const Observation &obs, const ChannelStats &stats);

/// Bilinear resampling with the half-pixel (align_corners = false) convention.
Observation resize_bilinear(const Observation &obs, int out_h, int out_w);

} // namespace vaedist
