#include "vaedist/adagvae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vaedist/random.hpp"

namespace vaedist {

ObservationPair sample_pair(const FactorSpace &space, std::mt19937_64 &rng) {
  std::vector<int> eligible;
  for (std::size_t i = 0; i < space.num_factors(); ++i)
    if (space.size(i) >= 2)
      eligible.push_back(static_cast<int>(i));
  if (eligible.empty())
    throw std::invalid_argument("no factor has more than one value; pairs cannot differ");

  ObservationPair pair;
  pair.a = space.sample_pos(rng);
  pair.b = pair.a;
  pair.k = std::uniform_int_distribution<int>(1, static_cast<int>(eligible.size()))(rng);
  // Partial Fisher-Yates: the first k entries become a uniform k-subset.
  for (int i = 0; i < pair.k; ++i) {
    int j = std::uniform_int_distribution<int>(i, static_cast<int>(eligible.size()) - 1)(rng);
    std::swap(eligible[i], eligible[j]);
    int f = eligible[i];
    int v = std::uniform_int_distribution<int>(0, space.size(f) - 2)(rng);
    pair.b[f] = v >= pair.a[f] ? v + 1 : v;
  }
  return pair;
}

double symmetric_kl(double mu_p, double logvar_p, double mu_q, double logvar_q) {
  double vp = std::exp(logvar_p), vq = std::exp(logvar_q);
  double d2 = (mu_p - mu_q) * (mu_p - mu_q);
  // The log-variance terms of the two directions cancel.
  return 0.25 * ((vp + d2) / vq + (vq + d2) / vp - 2.0);
}

int SharedMask::count() const {
  return static_cast<int>(std::count(shared.begin(), shared.end(), true));
}

SharedMask estimate_shared_mask(const std::vector<double> &d) {
  if (d.empty())
    throw std::invalid_argument("need at least one latent unit");
  for (double v : d)
    if (!std::isfinite(v))
      throw std::domain_error("non-finite latent divergence");
  auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  SharedMask m;
  m.threshold = 0.5 * (*lo + *hi);
  m.shared.resize(d.size());
  bool all_equal = *lo == *hi;
  for (std::size_t i = 0; i < d.size(); ++i)
    m.shared[i] = all_equal || d[i] < m.threshold;
  return m;
}

AveragedPosteriors average_posteriors(const GaussianUnits &p,
                                      const GaussianUnits &q,
                                      const std::vector<bool> &shared) {
  if (p.mu.size() != q.mu.size() || p.var.size() != p.mu.size() ||
      q.var.size() != q.mu.size() || shared.size() != p.mu.size())
    throw std::invalid_argument("posterior sizes differ");
  AveragedPosteriors out{p, q, shared};
  for (std::size_t i = 0; i < shared.size(); ++i) {
    if (!shared[i])
      continue;
    double mu = 0.5 * (p.mu[i] + q.mu[i]);
    double var = 0.5 * (p.var[i] + q.var[i]);
    out.p.mu[i] = out.q.mu[i] = mu;
    out.p.var[i] = out.q.var[i] = var;
  }
  return out;
}

BatchLoss adagvae_loss(const MlpVae &model, const Matrix &xa, const Matrix &xb,
                       const Matrix &eps_a, const Matrix &eps_b, double beta,
                       const ReconLoss &loss) {
  if (xa.rows() != xb.rows() || xa.cols() != xb.cols())
    throw std::invalid_argument("pair batches differ in shape");
  const Eigen::Index B = xa.cols();
  const int Z = model.latents();
  const std::size_t n_layers = model.layers().size();
  BatchLoss out;
  out.grad.assign(model.params().size(), 0.0);

  // Both sides go through the networks as one 2B-column batch: [a | b].
  Matrix x(xa.rows(), 2 * B);
  x << xa, xb;
  Matrix eps(Z, 2 * B);
  eps << eps_a, eps_b;

  auto enc = detail::forward(model, x, 0, MlpVae::kEncoderLayers);
  Matrix clamp;
  auto dist = detail::split_latents(enc.output, &clamp);

  LatentDistribution avg = dist;
  Matrix shared = Matrix::Zero(Z, B);
  std::vector<double> div(Z);
  for (Eigen::Index j = 0; j < B; ++j) {
    for (int i = 0; i < Z; ++i)
      div[i] = symmetric_kl(dist.mu(i, j), dist.logvar(i, j), dist.mu(i, B + j),
                            dist.logvar(i, B + j));
    auto mask = estimate_shared_mask(div);
    out.mean_shared += mask.count();
    for (int i = 0; i < Z; ++i) {
      if (!mask.shared[i])
        continue;
      shared(i, j) = 1.0;
      double mu = 0.5 * (dist.mu(i, j) + dist.mu(i, B + j));
      double lv = std::log(0.5 * (std::exp(dist.logvar(i, j)) +
                                  std::exp(dist.logvar(i, B + j))));
      avg.mu(i, j) = avg.mu(i, B + j) = mu;
      avg.logvar(i, j) = avg.logvar(i, B + j) = lv;
    }
  }
  out.mean_shared /= static_cast<double>(B);

  Matrix sigma = (0.5 * avg.logvar.array()).exp();
  Matrix z = reparameterize(avg, eps);
  auto dec = detail::forward(model, z, MlpVae::kEncoderLayers, n_layers);

  // Averaging over all 2B columns is the mean of the two sides' losses.
  Matrix dr;
  out.recon = detail::recon_with_grad(x, dec.output, loss, dr);
  out.kl = kl_loss(avg);
  out.total = out.recon + beta * out.kl;
  if (!std::isfinite(out.total))
    throw TrainingDivergence("non-finite loss");

  const double zb = static_cast<double>(Z) * 2.0 * static_cast<double>(B);
  Matrix dz = detail::backward(model, dec, std::move(dr), MlpVae::kEncoderLayers,
                               n_layers, out.grad);
  Matrix dmu = dz + (beta / zb) * avg.mu;
  Matrix dlv = 0.5 * dz.array() * sigma.array() * eps.array() +
               (beta / zb) * 0.5 * (avg.logvar.array().exp() - 1.0);

  // Through the averaging: mu' = (mu_a + mu_b) / 2 and
  // logvar' = log((exp(lv_a) + exp(lv_b)) / 2) on shared units.
  for (Eigen::Index j = 0; j < B; ++j)
    for (int i = 0; i < Z; ++i) {
      if (shared(i, j) == 0.0)
        continue;
      double gm = 0.5 * (dmu(i, j) + dmu(i, B + j));
      dmu(i, j) = dmu(i, B + j) = gm;
      double gl = dlv(i, j) + dlv(i, B + j);
      double va = std::exp(dist.logvar(i, j)), vb = std::exp(dist.logvar(i, B + j));
      dlv(i, j) = gl * va / (va + vb);
      dlv(i, B + j) = gl * vb / (va + vb);
    }

  Matrix denc(2 * Z, 2 * B);
  denc.topRows(Z) = dmu;
  denc.bottomRows(Z) = dlv.cwiseProduct(clamp);
  detail::backward(model, enc, std::move(denc), 0, MlpVae::kEncoderLayers, out.grad);
  return out;
}

TrainResult train_adagvae(const TrainingData &data, const TrainConfig &cfg) {
  cfg.validate();
  const auto &space = data.dataset().space();
  auto rng = make_rng(cfg.seed, 0);
  TrainResult res{MlpVae(data.dim(), cfg.latents, cfg.hidden), {}};
  res.model.init(rng);
  const ReconLoss loss = make_recon_loss(cfg, data.dataset());
  AdamState adam;

  TraceRecord window;
  int in_window = 0;
  std::vector<FactorPos> pa(cfg.batch), pb(cfg.batch);
  for (int step = 1; step <= cfg.steps; ++step) {
    for (int j = 0; j < cfg.batch; ++j) {
      auto pair = sample_pair(space, rng);
      pa[j] = std::move(pair.a);
      pb[j] = std::move(pair.b);
    }
    Matrix xa = data.batch(pa), xb = data.batch(pb);
    Matrix ea = standard_normal(cfg.latents, cfg.batch, rng);
    Matrix eb = standard_normal(cfg.latents, cfg.batch, rng);
    BatchLoss l;
    try {
      l = adagvae_loss(res.model, xa, xb, ea, eb, cfg.beta, loss);
    } catch (const TrainingDivergence &e) {
      throw TrainingDivergence(std::string(e.what()) + " at step " +
                               std::to_string(step));
    }
    adam.update(res.model.params(), l.grad, cfg.lr);

    window.recon += l.recon;
    window.kl += l.kl;
    window.total += l.total;
    window.mean_shared += l.mean_shared;
    ++in_window;
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      res.trace.push_back({step, window.recon / in_window, window.kl / in_window,
                           window.total / in_window,
                           window.mean_shared / in_window});
      window = {};
      in_window = 0;
    }
  }
  return res;
}

TrainResult train(const TrainingData &data, const TrainConfig &cfg) {
  return cfg.framework == Framework::AdaGVae ? train_adagvae(data, cfg)
                                             : train_beta_vae(data, cfg);
}

} // namespace vaedist
