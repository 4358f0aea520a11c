#pragma once

#include <random>
#include <vector>

#include "vaedist/factor_space.hpp"
#include "vaedist/vae.hpp"

namespace vaedist {

struct ObservationPair {
  FactorPos a;
  FactorPos b;
  int k = 0; // number of differing factors
};

/// Draws a uniformly, k uniformly from [1, number of factors with size >= 2],
/// then resamples k distinct such factors of b to values different from a.
ObservationPair sample_pair(const FactorSpace &space, std::mt19937_64 &rng);

/// 0.5 KL(p || q) + 0.5 KL(q || p) between univariate Gaussians.
double symmetric_kl(double mu_p, double logvar_p, double mu_q, double logvar_q);

struct SharedMask {
  std::vector<bool> shared;
  double threshold = 0.0;

  int count() const;
};

/// Units whose divergence falls strictly below the midpoint of the smallest
/// and largest divergence are shared. All-equal divergences share every unit.
SharedMask estimate_shared_mask(const std::vector<double> &divergences);

struct GaussianUnits {
  std::vector<double> mu;
  std::vector<double> var;
};

struct AveragedPosteriors {
  GaussianUnits p;
  GaussianUnits q;
  std::vector<bool> shared;
};

/// Replaces both posteriors by the mean of (mu, variance) on shared units.
AveragedPosteriors average_posteriors(const GaussianUnits &p,
                                      const GaussianUnits &q,
                                      const std::vector<bool> &shared);

/// Ada-GVAE objective over a batch of pairs (columns of xa, xb): encode both,
/// average latents judged unchanged, decode both and average the two sides'
/// beta-VAE losses. The mask is treated as a constant for differentiation.
BatchLoss adagvae_loss(const MlpVae &model, const Matrix &xa, const Matrix &xb,
                       const Matrix &eps_a, const Matrix &eps_b, double beta,
                       const ReconLoss &loss = ReconLoss::mse());

TrainResult train_adagvae(const TrainingData &data, const TrainConfig &cfg);

/// Dispatches on cfg.framework.
TrainResult train(const TrainingData &data, const TrainConfig &cfg);

} // namespace vaedist
