#include "vaedist/vae.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>

#include "vaedist/random.hpp"

namespace vaedist {

Matrix reparameterize(const LatentDistribution &dist, const Matrix &eps) {
  if (eps.rows() != dist.mu.rows() || eps.cols() != dist.mu.cols())
    throw std::invalid_argument("noise shape does not match latent shape");
  return dist.mu.array() + (0.5 * dist.logvar.array()).exp() * eps.array();
}

double recon_loss(const Matrix &x, const Matrix &r) {
  if (x.rows() != r.rows() || x.cols() != r.cols())
    throw std::invalid_argument("reconstruction shape mismatch");
  return (r - x).squaredNorm() / static_cast<double>(x.size());
}

double kl_loss(const LatentDistribution &d) {
  auto terms = 0.5 * (d.logvar.array().exp() + d.mu.array().square() - 1.0 -
                      d.logvar.array());
  return terms.sum() / static_cast<double>(d.mu.size());
}

// ---------------------------------------------------------------------------
// Model

MlpVae::MlpVae(int input_dim, int latents, int hidden)
    : input_dim_(input_dim), latents_(latents), hidden_(hidden) {
  if (input_dim < 1 || latents < 1 || hidden < 1)
    throw std::invalid_argument("model dimensions must be positive");
  const int dims[][2] = {{input_dim, hidden}, {hidden, hidden}, {hidden, 2 * latents},
                         {latents, hidden},   {hidden, hidden}, {hidden, input_dim}};
  std::size_t offset = 0;
  for (auto [in, out] : dims) {
    layers_.push_back({in, out, offset});
    offset += layers_.back().count();
  }
  params_.assign(offset, 0.0);
}

void MlpVae::init(std::mt19937_64 &rng) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto &s = layers_[l];
    double limit = std::sqrt(6.0 / (s.in + s.out));
    std::uniform_real_distribution<double> u(-limit, limit);
    auto w = weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        w(i, j) = u(rng);
    bias(l).setZero();
  }
}

Eigen::Map<const Matrix> MlpVae::weight(std::size_t l) const {
  const auto &s = layers_.at(l);
  return {params_.data() + s.offset, s.out, s.in};
}
Eigen::Map<const Vector> MlpVae::bias(std::size_t l) const {
  const auto &s = layers_.at(l);
  return {params_.data() + s.offset + static_cast<std::size_t>(s.in) * s.out, s.out};
}
Eigen::Map<Matrix> MlpVae::weight(std::size_t l) {
  const auto &s = layers_.at(l);
  return {params_.data() + s.offset, s.out, s.in};
}
Eigen::Map<Vector> MlpVae::bias(std::size_t l) {
  const auto &s = layers_.at(l);
  return {params_.data() + s.offset + static_cast<std::size_t>(s.in) * s.out, s.out};
}

namespace detail {

ForwardCache forward(const MlpVae &model, const Matrix &x, std::size_t first,
                     std::size_t last) {
  ForwardCache cache;
  Matrix a = x;
  for (std::size_t l = first; l < last; ++l) {
    if (a.rows() != model.layers()[l].in)
      throw std::invalid_argument("input dimension does not match layer");
    Matrix pre = model.weight(l) * a;
    pre.colwise() += model.bias(l);
    cache.inputs.push_back(std::move(a));
    if (l + 1 < last)
      a = pre.cwiseMax(0.0);
    else
      cache.output = std::move(pre);
  }
  return cache;
}

Matrix backward(const MlpVae &model, const ForwardCache &cache, Matrix dout,
                std::size_t first, std::size_t last, std::span<double> grad) {
  for (std::size_t l = last; l-- > first;) {
    const auto &s = model.layers()[l];
    const Matrix &in = cache.inputs[l - first];
    Eigen::Map<Matrix> dw(grad.data() + s.offset, s.out, s.in);
    Eigen::Map<Vector> db(grad.data() + s.offset + static_cast<std::size_t>(s.in) * s.out, s.out);
    dw.noalias() += dout * in.transpose();
    db += dout.rowwise().sum();
    Matrix din = model.weight(l).transpose() * dout;
    if (l > first)
      din = (in.array() > 0.0).select(din, 0.0);
    dout = std::move(din);
  }
  return dout;
}

double recon_with_grad(const Matrix &x, const Matrix &r, const ReconLoss &loss,
                       Matrix &dr) {
  if (x.rows() != r.rows() || x.cols() != r.cols())
    throw std::invalid_argument("reconstruction shape mismatch");
  const double batch = static_cast<double>(x.cols());
  if (!loss.blur) {
    dr = (2.0 / static_cast<double>(x.size())) * (r - x);
    return recon_loss(x, r);
  }
  dr.resize(r.rows(), r.cols());
  double total = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    std::span<const double> xc(x.col(j).data(), static_cast<std::size_t>(x.rows()));
    std::span<const double> rc(r.col(j).data(), static_cast<std::size_t>(r.rows()));
    std::span<double> gc(dr.col(j).data(), static_cast<std::size_t>(r.rows()));
    total += overlap_loss(xc, rc, loss.channels, loss.height, loss.width,
                          loss.overlap, gc);
  }
  dr /= batch;
  return total / batch;
}

LatentDistribution split_latents(const Matrix &out, Matrix *clamp_mask) {
  const Eigen::Index z = out.rows() / 2;
  LatentDistribution d;
  d.mu = out.topRows(z);
  Matrix raw = out.bottomRows(z);
  d.logvar = raw.cwiseMax(kLogvarMin).cwiseMin(kLogvarMax);
  if (clamp_mask)
    *clamp_mask = ((raw.array() >= kLogvarMin) && (raw.array() <= kLogvarMax))
                      .cast<double>();
  return d;
}

} // namespace detail

LatentDistribution MlpVae::encode(const Matrix &x) const {
  auto cache = detail::forward(*this, x, 0, kEncoderLayers);
  auto d = detail::split_latents(cache.output, nullptr);
  if (!d.mu.allFinite() || !d.logvar.allFinite())
    throw TrainingDivergence("encoder produced non-finite activations");
  return d;
}

Matrix MlpVae::decode(const Matrix &z) const {
  return detail::forward(*this, z, kEncoderLayers, layers_.size()).output;
}

BatchLoss beta_vae_loss(const MlpVae &model, const Matrix &x, const Matrix &eps,
                        double beta, const ReconLoss &loss) {
  const std::size_t n_layers = model.layers().size();
  const double zb = static_cast<double>(model.latents()) * x.cols();
  BatchLoss out;
  out.grad.assign(model.params().size(), 0.0);

  auto enc = detail::forward(model, x, 0, MlpVae::kEncoderLayers);
  Matrix mask;
  auto dist = detail::split_latents(enc.output, &mask);
  Matrix sigma = (0.5 * dist.logvar.array()).exp();
  Matrix z = reparameterize(dist, eps);
  auto dec = detail::forward(model, z, MlpVae::kEncoderLayers, n_layers);

  Matrix dr;
  out.recon = detail::recon_with_grad(x, dec.output, loss, dr);
  out.kl = kl_loss(dist);
  out.total = out.recon + beta * out.kl;
  if (!std::isfinite(out.total))
    throw TrainingDivergence("non-finite loss");

  Matrix dz = detail::backward(model, dec, std::move(dr), MlpVae::kEncoderLayers,
                               n_layers, out.grad);
  Matrix denc(2 * model.latents(), x.cols());
  denc.topRows(model.latents()) = dz + (beta / zb) * dist.mu;
  denc.bottomRows(model.latents()) =
      (0.5 * dz.array() * sigma.array() * eps.array() +
       (beta / zb) * 0.5 * (dist.logvar.array().exp() - 1.0)) *
      mask.array();
  detail::backward(model, enc, std::move(denc), 0, MlpVae::kEncoderLayers, out.grad);
  return out;
}

// ---------------------------------------------------------------------------
// Optimiser

void AdamState::update(std::span<double> params, std::span<const double> grads,
                       double lr) {
  if (params.size() != grads.size())
    throw std::invalid_argument("parameter and gradient sizes differ");
  if (m.empty()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
  }
  if (m.size() != params.size())
    throw std::invalid_argument("optimiser state does not match parameters");
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
    params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

// ---------------------------------------------------------------------------
// Training

std::string to_string(Framework f) {
  return f == Framework::BetaVae ? "beta-vae" : "ada-gvae";
}

Framework parse_framework(const std::string &s) {
  if (s == "beta-vae" || s == "betavae")
    return Framework::BetaVae;
  if (s == "ada-gvae" || s == "adagvae")
    return Framework::AdaGVae;
  throw std::invalid_argument("unknown framework '" + s +
                              "' (expected beta-vae or ada-gvae)");
}

void TrainConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta))
    throw std::invalid_argument("beta must be finite and non-negative");
  if (latents < 1 || hidden < 1)
    throw std::invalid_argument("latents and hidden must be >= 1");
  if (!(lr > 0.0))
    throw std::invalid_argument("learning rate must be positive");
  if (batch < 1 || steps < 0 || log_every < 1)
    throw std::invalid_argument("batch, steps and log_every must be positive");
  if (blur_loss)
    overlap.validate();
}

TrainingData::TrainingData(const GroundTruthDataset &ds, std::size_t cache_limit)
    : ds_(ds) {
  const auto total = static_cast<std::size_t>(ds.space().total());
  if (total * ds.observation_size() <= cache_limit) {
    cache_.resize(dim(), static_cast<Eigen::Index>(total));
    for (std::size_t i = 0; i < total; ++i) {
      Observation o = ds.observation(static_cast<std::int64_t>(i));
      cache_.col(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const Vector>(o.data.data(), dim());
    }
    cached_ = true;
  }
}

void TrainingData::fill(Matrix &x, int column, const FactorPos &pos) const {
  if (cached_) {
    x.col(column) = cache_.col(static_cast<Eigen::Index>(ds_.space().pos_to_index(pos)));
    return;
  }
  Observation o = ds_.observation(pos);
  x.col(column) = Eigen::Map<const Vector>(o.data.data(), dim());
}

Matrix TrainingData::batch(const std::vector<FactorPos> &positions) const {
  Matrix x(dim(), static_cast<Eigen::Index>(positions.size()));
  for (std::size_t j = 0; j < positions.size(); ++j)
    fill(x, static_cast<int>(j), positions[j]);
  return x;
}

ReconLoss make_recon_loss(const TrainConfig &cfg, const GroundTruthDataset &ds) {
  if (!cfg.blur_loss)
    return ReconLoss::mse();
  return ReconLoss::blur_mse(cfg.overlap, ds.channels(), ds.height(), ds.width());
}

Matrix standard_normal(int rows, int cols, std::mt19937_64 &rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      m(i, j) = n(rng);
  return m;
}

TrainResult train_beta_vae(const TrainingData &data, const TrainConfig &cfg) {
  cfg.validate();
  const auto &space = data.dataset().space();
  auto rng = make_rng(cfg.seed, 0);
  TrainResult res{MlpVae(data.dim(), cfg.latents, cfg.hidden), {}};
  res.model.init(rng);
  const ReconLoss loss = make_recon_loss(cfg, data.dataset());
  AdamState adam;

  TraceRecord window;
  int in_window = 0;
  std::vector<FactorPos> positions(cfg.batch);
  for (int step = 1; step <= cfg.steps; ++step) {
    for (auto &p : positions)
      p = space.sample_pos(rng);
    Matrix x = data.batch(positions);
    Matrix eps = standard_normal(cfg.latents, cfg.batch, rng);
    BatchLoss l;
    try {
      l = beta_vae_loss(res.model, x, eps, cfg.beta, loss);
    } catch (const TrainingDivergence &e) {
      throw TrainingDivergence(std::string(e.what()) + " at step " +
                               std::to_string(step));
    }
    adam.update(res.model.params(), l.grad, cfg.lr);

    window.recon += l.recon;
    window.kl += l.kl;
    window.total += l.total;
    ++in_window;
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      res.trace.push_back({step, window.recon / in_window, window.kl / in_window,
                           window.total / in_window, 0.0});
      window = {};
      in_window = 0;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// I/O

void write_trace_csv(std::ostream &out, const std::vector<TraceRecord> &trace,
                     bool with_shared) {
  out << "step,recon,kl,total" << (with_shared ? ",mean_shared" : "") << '\n';
  char buf[160];
  for (const auto &t : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g", t.step, t.recon, t.kl,
                  t.total);
    out << buf;
    if (with_shared) {
      std::snprintf(buf, sizeof buf, ",%.10g", t.mean_shared);
      out << buf;
    }
    out << '\n';
  }
}

namespace {

constexpr char kCheckpointMagic[8] = {'V', 'A', 'E', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T> void put(std::ostream &o, T v) {
  o.write(reinterpret_cast<const char *>(&v), sizeof v);
}
template <typename T> T get(std::istream &in) {
  T v{};
  if (!in.read(reinterpret_cast<char *>(&v), sizeof v))
    throw std::runtime_error("truncated checkpoint");
  return v;
}

} // namespace

// Layout (little-endian): magic[8], u32 version, u32 input_dim, u32 latents,
// u32 hidden, u32 layer count, per layer u32 in, u32 out, u64 parameter
// count, then all parameters as f64.
void save_checkpoint(const MlpVae &model, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.input_dim()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.latents()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.hidden()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.layers().size()));
  for (const auto &l : model.layers()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.in));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.out));
  }
  auto p = model.params();
  put<std::uint64_t>(out, p.size());
  out.write(reinterpret_cast<const char *>(p.data()),
            static_cast<std::streamsize>(p.size() * sizeof(double)));
  if (!out)
    throw std::runtime_error("failed writing checkpoint " + path.string());
}

MlpVae load_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  if (get<std::uint32_t>(in) != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version");
  auto input_dim = get<std::uint32_t>(in);
  auto latents = get<std::uint32_t>(in);
  auto hidden = get<std::uint32_t>(in);
  MlpVae model(static_cast<int>(input_dim), static_cast<int>(latents),
               static_cast<int>(hidden));
  auto n_layers = get<std::uint32_t>(in);
  if (n_layers != model.layers().size())
    throw std::runtime_error("checkpoint layer count mismatch");
  for (const auto &l : model.layers()) {
    auto lin = get<std::uint32_t>(in);
    auto lout = get<std::uint32_t>(in);
    if (static_cast<int>(lin) != l.in || static_cast<int>(lout) != l.out)
      throw std::runtime_error("checkpoint layer shape mismatch");
  }
  auto count = get<std::uint64_t>(in);
  auto p = model.params();
  if (count != p.size())
    throw std::runtime_error("checkpoint parameter count mismatch");
  if (!in.read(reinterpret_cast<char *>(p.data()),
               static_cast<std::streamsize>(p.size() * sizeof(double))))
    throw std::runtime_error("truncated checkpoint");
  return model;
}

} // namespace vaedist
