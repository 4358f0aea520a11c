#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vaedist/blur.hpp"
#include "vaedist/datasets.hpp"

namespace vaedist {

struct DistanceKind {
  enum Type { GtL1, VisualMSE, VisualBCE, VisualBlurMSE };

  Type type = VisualMSE;
  OverlapLossParams blur{}; // only used by VisualBlurMSE

  static DistanceKind gt_l1() { return {GtL1, {}}; }
  static DistanceKind mse() { return {VisualMSE, {}}; }
  static DistanceKind bce() { return {VisualBCE, {}}; }
  static DistanceKind blur_mse(int radius, double alpha,
                               BlurPadding padding = BlurPadding::Zero) {
    return {VisualBlurMSE, {alpha, radius, padding}};
  }

  /// Parses "gt-l1", "mse", "bce" or "blur-mse" (blur parameters passed apart).
  static DistanceKind parse(const std::string &name, int radius = 31,
                            double alpha = 63.0 * 63.0,
                            BlurPadding padding = BlurPadding::Zero);
  std::string to_string() const;
  bool symmetric() const { return type != VisualBCE; }
};

constexpr double kBceEpsilon = 1e-7;

/// L1 distance between ground-truth coordinates.
double gt_distance(const FactorPos &a, const FactorPos &b);

/// Reconstruction loss between two observations, read as a distance. For BCE
/// the first argument is the target and the second the (clamped) prediction.
double visual_distance(const Observation &a, const Observation &b,
                       const DistanceKind &kind);

/// Distance between the observations at two positions, or their gt-L1
/// distance when kind is GtL1.
double pair_distance(const GroundTruthDataset &ds, const FactorPos &a,
                     const FactorPos &b, const DistanceKind &kind);

struct DistanceMatrix {
  int factor = 0;
  int n = 0;
  std::vector<double> values; // n x n, row-major

  double at(int u, int v) const { return values[static_cast<std::size_t>(u) * n + v]; }
  double &at(int u, int v) { return values[static_cast<std::size_t>(u) * n + v]; }
};

DistanceMatrix traversal_distance_matrix(const GroundTruthDataset &ds,
                                         const FactorPos &anchor, int factor,
                                         const DistanceKind &kind);

enum class Exhaustive { Auto, Always, Never };

/// Pair budgets at or below this are enumerated instead of sampled.
constexpr std::int64_t kExhaustivePairLimit = 1'000'000;

struct MeanDistanceMatrix {
  DistanceMatrix mean;
  DistanceMatrix std;    // population std over anchors, per entry
  std::int64_t anchors = 0;
  bool exhaustive = false;
};

/// Average of traversal matrices over anchors drawn uniformly from the space.
MeanDistanceMatrix mean_factor_distance_matrix(
    const GroundTruthDataset &ds, int factor, const DistanceKind &kind,
    std::int64_t anchor_samples, std::uint64_t seed,
    Exhaustive mode = Exhaustive::Auto, unsigned threads = 0);

struct ImportanceEntry {
  int factor = -1; // -1 marks the random-pair baseline
  std::string name;
  double mean = 0.0;
  double std = 0.0;
  double std_error = 0.0;
  std::int64_t samples = 0;
  bool exhaustive = false;
};

struct FactorImportanceReport {
  std::string dataset;
  DistanceKind kind;
  std::vector<ImportanceEntry> factors; // sorted by descending mean
  ImportanceEntry random;
  std::vector<std::string> warnings;
};

/// Expected distance between distinct members of random factor traversals,
/// per factor, plus the expected distance between distinct random pairs.
FactorImportanceReport factor_importance(const GroundTruthDataset &ds,
                                         const DistanceKind &kind,
                                         std::int64_t pairs_per_factor,
                                         std::uint64_t seed,
                                         Exhaustive mode = Exhaustive::Auto,
                                         unsigned threads = 0);

/// Sorted distance samples along traversals of `factor`, or between random
/// distinct pairs when factor is nullopt.
std::vector<double> distance_cdf(const GroundTruthDataset &ds,
                                 const DistanceKind &kind,
                                 std::optional<int> factor,
                                 std::int64_t samples, std::uint64_t seed,
                                 Exhaustive mode = Exhaustive::Auto,
                                 unsigned threads = 0);

/// Fraction of `sorted` values <= x.
double empirical_cdf(const std::vector<double> &sorted, double x);

struct OverlapCheck {
  bool constant = true;
  double max_deviation = 0.0;
  std::vector<double> per_factor_constant; // midrange of observed distances
};

/// Whether every within-traversal distinct-pair distance equals a per-factor
/// constant to within `tolerance`.
OverlapCheck constant_overlap_check(const GroundTruthDataset &ds,
                                    const DistanceKind &kind, double tolerance,
                                    std::int64_t samples, std::uint64_t seed,
                                    Exhaustive mode = Exhaustive::Auto,
                                    unsigned threads = 0);

/// CSV with columns dataset,factor,kind,mean,std,samples.
void write_importance_csv(std::ostream &out, const FactorImportanceReport &r,
                          bool header = true);

} // namespace vaedist
