#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace vaedist {

/// Latent codes and their ground-truth coordinates, one row per sample.
struct RepresentationTable {
  Eigen::MatrixXd codes;   // N x Z
  Eigen::MatrixXi factors; // N x K

  Eigen::Index samples() const { return codes.rows(); }
  void validate() const;
};

/// Equal-width histogram bins over [min, max]; constant input maps to bin 0.
std::vector<int> discretize(const std::vector<double> &values, int bins);

/// Plug-in entropy of a label sequence, in nats.
double entropy(const std::vector<int> &labels);

/// Plug-in mutual information of two aligned label sequences, in nats.
double mutual_information(const std::vector<int> &a, const std::vector<int> &b);

struct MigResult {
  double score = 0.0;
  std::vector<double> gaps;       // per factor; NaN when H(y) = 0
  Eigen::MatrixXd mutual_info;    // Z x K, nats
  int bins = 0;
};

/// Mean over factors of (I_top1 - I_top2) / H(factor), using discretised codes.
MigResult mig_score(const RepresentationTable &table, int bins = 20);

struct DciParams {
  int trees = 10;
  int max_depth = 8;
  int min_leaf = 5;
  double test_fraction = 0.2;
  double low_r2 = 0.1; // below this a factor counts as not captured
  std::uint64_t seed = 0;
};

struct DciImportance {
  Eigen::MatrixXd importance;     // Z x K, columns sum to 1 (or are zero)
  std::vector<double> r2;         // held-out R^2 per factor
  std::vector<bool> flagged;      // constant factor or R^2 below low_r2
  bool low_informativeness = false; // mean R^2 below low_r2
};

/// Per-factor random-forest regression of the coordinate on all latents;
/// importances are the split impurity reductions attributed to each latent.
DciImportance dci_importance(const RepresentationTable &table,
                             const DciParams &params = {});

/// Importance-weighted mean over latents of 1 - H_K(row distribution).
double dci_disentanglement(const Eigen::MatrixXd &importance);

/// Small CART regressor, exposed for testing.
class RegressionTree {
public:
  struct Node {
    int feature = -1; // -1 for leaves
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };

  /// Fits on rows `rows` of x, considering `mtry` random features per split.
  /// Adds each split's squared-error reduction to importance[feature].
  void fit(const Eigen::MatrixXd &x, const std::vector<double> &y,
           std::vector<int> rows, int max_depth, int min_leaf, int mtry,
           std::uint64_t seed, std::vector<double> &importance);
  double predict(const Eigen::MatrixXd &x, Eigen::Index row) const;
  const std::vector<Node> &nodes() const { return nodes_; }

private:
  std::vector<Node> nodes_;
};

} // namespace vaedist
