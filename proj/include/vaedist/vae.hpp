#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vaedist/blur.hpp"
#include "vaedist/datasets.hpp"

namespace vaedist {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
/// Flat parameter storage, aligned for Eigen.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

class TrainingDivergence : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

constexpr double kLogvarMin = -10.0;
constexpr double kLogvarMax = 10.0;

/// Diagonal Gaussian posteriors, one column per observation.
struct LatentDistribution {
  Matrix mu;     // Z x B
  Matrix logvar; // Z x B, clamped to [kLogvarMin, kLogvarMax]

  int latents() const { return static_cast<int>(mu.rows()); }
  int batch() const { return static_cast<int>(mu.cols()); }
};

/// z = mu + exp(logvar / 2) * eps, elementwise.
Matrix reparameterize(const LatentDistribution &dist, const Matrix &eps);

/// Mean squared error per column, averaged over columns.
double recon_loss(const Matrix &x, const Matrix &r);

/// rows x cols matrix of independent N(0, 1) draws, filled column by column.
Matrix standard_normal(int rows, int cols, std::mt19937_64 &rng);

/// KL(q || N(0, I)) / Z per column, averaged over columns.
double kl_loss(const LatentDistribution &dist);

struct LayerShape {
  int in = 0;
  int out = 0;
  std::size_t offset = 0; // weights (out x in, column-major) then bias (out)

  std::size_t count() const {
    return static_cast<std::size_t>(in) * out + out;
  }

  friend bool operator==(const LayerShape &, const LayerShape &) = default;
};

/// Fully-connected VAE: input -> H -> H -> 2Z encoder and Z -> H -> H -> input
/// decoder with ReLU hidden units and linear outputs. All parameters live in
/// one flat buffer; layer views are Eigen maps into it.
class MlpVae {
public:
  static constexpr int kEncoderLayers = 3;

  MlpVae() = default;
  MlpVae(int input_dim, int latents, int hidden = 256);

  /// Glorot-uniform weights, zero biases.
  void init(std::mt19937_64 &rng);

  int input_dim() const { return input_dim_; }
  int latents() const { return latents_; }
  int hidden() const { return hidden_; }
  const std::vector<LayerShape> &layers() const { return layers_; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  Eigen::Map<const Matrix> weight(std::size_t layer) const;
  Eigen::Map<const Vector> bias(std::size_t layer) const;
  Eigen::Map<Matrix> weight(std::size_t layer);
  Eigen::Map<Vector> bias(std::size_t layer);

  LatentDistribution encode(const Matrix &x) const;
  Matrix decode(const Matrix &z) const;

  friend bool operator==(const MlpVae &, const MlpVae &) = default;

private:
  int input_dim_ = 0;
  int latents_ = 0;
  int hidden_ = 0;
  std::vector<LayerShape> layers_;
  ParamVector params_;
};

/// Reconstruction term: plain MSE, or MSE plus the alpha-weighted MSE between
/// box-blurred input and reconstruction.
struct ReconLoss {
  bool blur = false;
  OverlapLossParams overlap{};
  int channels = 1;
  int height = 1;
  int width = 1;

  static ReconLoss mse() { return {}; }
  static ReconLoss blur_mse(OverlapLossParams p, int c, int h, int w) {
    return {true, p, c, h, w};
  }
};

struct BatchLoss {
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double mean_shared = 0.0; // Ada-GVAE only: mean shared units per pair
  ParamVector grad; // same layout as MlpVae::params()
};

/// Beta-VAE objective averaged over the batch columns of `x`, with gradients
/// for every parameter. `eps` supplies the reparameterisation noise (Z x B).
BatchLoss beta_vae_loss(const MlpVae &model, const Matrix &x, const Matrix &eps,
                        double beta, const ReconLoss &loss = ReconLoss::mse());

/// Gradient-carrying pieces shared with the Ada-GVAE objective.
namespace detail {

struct ForwardCache {
  std::vector<Matrix> inputs; // input to each layer
  Matrix output;              // linear output of the last layer
};

ForwardCache forward(const MlpVae &model, const Matrix &x, std::size_t first,
                     std::size_t last);
/// Backpropagates d(output) through layers [first, last), accumulating into
/// grad, and returns d(input).
Matrix backward(const MlpVae &model, const ForwardCache &cache, Matrix dout,
                std::size_t first, std::size_t last, std::span<double> grad);

/// Per-column reconstruction loss; fills dr with d(mean over columns)/dr.
double recon_with_grad(const Matrix &x, const Matrix &r, const ReconLoss &loss,
                       Matrix &dr);

LatentDistribution split_latents(const Matrix &encoder_out, Matrix *clamp_mask);

} // namespace detail

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  void update(std::span<double> params, std::span<const double> grads, double lr);
};

enum class Framework { BetaVae, AdaGVae };

std::string to_string(Framework f);
Framework parse_framework(const std::string &s);

struct TrainConfig {
  Framework framework = Framework::BetaVae;
  double beta = 0.001;
  int latents = 9;
  int hidden = 256;
  double lr = 1e-3;
  int batch = 64;
  int steps = 5000;
  std::uint64_t seed = 0;
  bool blur_loss = false;
  OverlapLossParams overlap{};
  int log_every = 100;

  void validate() const;
};

struct TraceRecord {
  int step = 0;
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double mean_shared = 0.0;
};

struct TrainResult {
  MlpVae model;
  std::vector<TraceRecord> trace;
};

/// Source of model-ready observations: flattened columns, already resized and
/// standardised. Small datasets are cached in full.
class TrainingData {
public:
  explicit TrainingData(const GroundTruthDataset &ds,
                        std::size_t cache_limit = std::size_t{1} << 24);

  const GroundTruthDataset &dataset() const { return ds_; }
  int dim() const { return static_cast<int>(ds_.observation_size()); }
  void fill(Matrix &x, int column, const FactorPos &pos) const;
  Matrix batch(const std::vector<FactorPos> &positions) const;

private:
  const GroundTruthDataset &ds_;
  Matrix cache_;
  bool cached_ = false;
};

ReconLoss make_recon_loss(const TrainConfig &cfg, const GroundTruthDataset &ds);

TrainResult train_beta_vae(const TrainingData &data, const TrainConfig &cfg);

/// Loss trace CSV: step,recon,kl,total[,mean_shared].
void write_trace_csv(std::ostream &out, const std::vector<TraceRecord> &trace,
                     bool with_shared);

void save_checkpoint(const MlpVae &model, const std::filesystem::path &path);
MlpVae load_checkpoint(const std::filesystem::path &path);

} // namespace vaedist
