#include <doctest.h>

#include <cmath>
#include <limits>

#include "vaedist/adagvae.hpp"
#include "vaedist/random.hpp"

using namespace vaedist;

namespace {

double kl_gauss(double mp, double vp, double mq, double vq) {
  return 0.5 * (std::log(vq / vp) + (vp + (mp - mq) * (mp - mq)) / vq - 1.0);
}

MlpVae fixture(std::uint64_t seed) {
  MlpVae m(16, 4, 6);
  auto rng = make_rng(seed, 0);
  m.init(rng);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (std::size_t l = 0; l < m.layers().size(); ++l)
    for (Eigen::Index i = 0; i < m.bias(l).size(); ++i)
      m.bias(l)(i) = u(rng);
  return m;
}

Matrix random_matrix(int r, int c, std::uint64_t seed) {
  auto rng = make_rng(seed, 1);
  return standard_normal(r, c, rng);
}

FunctionDataset two_dots() {
  return FunctionDataset("two-dots", FactorSpace({8, 8}), 1, 8, 8, [](const FactorPos &p) {
    Observation o(1, 8, 8);
    o.at(0, 2, p[0]) = 1.0;
    o.at(0, 5, p[1]) = 1.0;
    return o;
  });
}

} // namespace

TEST_CASE("sample_pair draws k uniformly and changes exactly k factors") {
  FactorSpace s(std::vector<int>(6, 8));
  auto rng = make_rng(1, 0);
  const int n = 60000;
  std::vector<int> k_count(7, 0), f_count(6, 0);
  for (int i = 0; i < n; ++i) {
    auto p = sample_pair(s, rng);
    REQUIRE(p.k >= 1);
    REQUIRE(p.k <= 6);
    REQUIRE(s.valid(p.a));
    REQUIRE(s.valid(p.b));
    REQUIRE(hamming(p.a, p.b) == p.k);
    ++k_count[p.k];
    for (int f = 0; f < 6; ++f)
      f_count[f] += p.a[f] != p.b[f];
  }
  const double pk = 1.0 / 6, sk = std::sqrt(n * pk * (1 - pk));
  for (int k = 1; k <= 6; ++k)
    CHECK(std::abs(k_count[k] - n * pk) <= 3 * sk);
  // each factor changes with probability E[k] / 6
  const double pf = 3.5 / 6, sf = std::sqrt(n * pf * (1 - pf));
  for (int f = 0; f < 6; ++f)
    CHECK(std::abs(f_count[f] - n * pf) <= 3 * sf);
}

TEST_CASE("sample_pair skips single-valued factors") {
  FactorSpace s({1, 4, 3});
  auto rng = make_rng(2, 0);
  for (int i = 0; i < 2000; ++i) {
    auto p = sample_pair(s, rng);
    REQUIRE(p.k <= 2);
    CHECK(p.a[0] == p.b[0]);
    CHECK(hamming(p.a, p.b) == p.k);
  }
  CHECK_THROWS(sample_pair(FactorSpace({1, 1}), rng));
}

TEST_CASE("symmetric kl") {
  CHECK(symmetric_kl(0.3, -0.2, 0.3, -0.2) == 0.0);
  // unit variances: half the squared mean gap
  CHECK(symmetric_kl(0.0, 0.0, 2.0, 0.0) == doctest::Approx(2.0));
  auto rng = make_rng(3, 0);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int i = 0; i < 100; ++i) {
    double mp = u(rng), lp = u(rng), mq = u(rng), lq = u(rng);
    double vp = std::exp(lp), vq = std::exp(lq);
    double expect = 0.5 * kl_gauss(mp, vp, mq, vq) + 0.5 * kl_gauss(mq, vq, mp, vp);
    CHECK(symmetric_kl(mp, lp, mq, lq) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(symmetric_kl(mp, lp, mq, lq) == symmetric_kl(mq, lq, mp, lp));
    CHECK(symmetric_kl(mp, lp, mq, lq) >= 0.0);
  }
}

TEST_CASE("symmetric kl against monte carlo") {
  const double mp = 0.4, lp = -0.5, mq = -0.3, lq = 0.2;
  const double vp = std::exp(lp), vq = std::exp(lq);
  auto log_n = [](double z, double m, double v) {
    return -0.5 * std::log(2 * 3.141592653589793 * v) - (z - m) * (z - m) / (2 * v);
  };
  auto rng = make_rng(4, 0);
  std::normal_distribution<double> nd;
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    double zp = mp + std::sqrt(vp) * nd(rng), zq = mq + std::sqrt(vq) * nd(rng);
    double t = 0.5 * (log_n(zp, mp, vp) - log_n(zp, mq, vq)) +
               0.5 * (log_n(zq, mq, vq) - log_n(zq, mp, vp));
    s += t;
    s2 += t * t;
  }
  double m = s / n, se = std::sqrt((s2 / n - m * m) / n);
  CHECK(std::abs(symmetric_kl(mp, lp, mq, lq) - m) < 3 * se);
}

TEST_CASE("shared mask uses the midpoint threshold") {
  auto m = estimate_shared_mask({0.1, 0.2, 5.0, 4.0});
  CHECK(m.threshold == doctest::Approx(2.55));
  CHECK(m.shared == std::vector<bool>{true, true, false, false});
  CHECK(m.count() == 2);

  // strictly below the threshold
  auto t = estimate_shared_mask({0.0, 1.0, 2.0});
  CHECK(t.shared == std::vector<bool>{true, false, false});

  auto flat = estimate_shared_mask({0.7, 0.7, 0.7});
  CHECK(flat.count() == 3);
  CHECK(estimate_shared_mask({3.0}).count() == 1);

  CHECK_THROWS(estimate_shared_mask({}));
  CHECK_THROWS(estimate_shared_mask({0.1, std::numeric_limits<double>::quiet_NaN()}));
  CHECK_THROWS(estimate_shared_mask({0.1, std::numeric_limits<double>::infinity()}));
}

TEST_CASE("posterior averaging") {
  GaussianUnits p{{0.0, 2.0}, {1.0, 3.0}}, q{{2.0, 4.0}, {3.0, 5.0}};
  auto a = average_posteriors(p, q, {true, false});
  CHECK(a.p.mu == std::vector<double>{1.0, 2.0});
  CHECK(a.p.var == std::vector<double>{2.0, 3.0});
  CHECK(a.q.mu == std::vector<double>{1.0, 4.0});
  CHECK(a.q.var == std::vector<double>{2.0, 5.0});

  auto again = average_posteriors(a.p, a.q, a.shared);
  CHECK(again.p.mu == a.p.mu);
  CHECK(again.q.var == a.q.var);

  auto none = average_posteriors(p, q, {false, false});
  CHECK(none.p.mu == p.mu);
  CHECK(none.q.var == q.var);

  CHECK_THROWS(average_posteriors(p, q, {true}));
  CHECK_THROWS(average_posteriors(p, GaussianUnits{{1.0}, {1.0}}, {true, true}));
}

TEST_CASE("identical pairs reduce to the beta-vae loss") {
  auto m = fixture(5);
  Matrix x = random_matrix(16, 3, 6), eps = random_matrix(4, 3, 7);
  auto pair = adagvae_loss(m, x, x, eps, eps, 0.3);
  auto single = beta_vae_loss(m, x, eps, 0.3);
  CHECK(pair.mean_shared == 4.0);
  CHECK(pair.recon == doctest::Approx(single.recon).epsilon(1e-12));
  CHECK(pair.kl == doctest::Approx(single.kl).epsilon(1e-12));
  CHECK(pair.total == doctest::Approx(single.total).epsilon(1e-12));
  for (std::size_t i = 0; i < single.grad.size(); ++i)
    REQUIRE(pair.grad[i] == doctest::Approx(single.grad[i]).epsilon(1e-9).scale(1e-12));
}

TEST_CASE("ada-gvae loss matches a step-by-step computation") {
  auto m = fixture(8);
  const int B = 3, Z = 4;
  Matrix xa = random_matrix(16, B, 9), xb = random_matrix(16, B, 10);
  Matrix ea = random_matrix(Z, B, 11), eb = random_matrix(Z, B, 12);
  auto l = adagvae_loss(m, xa, xb, ea, eb, 0.5);

  auto da = m.encode(xa), db = m.encode(xb);
  LatentDistribution pa = da, pb = db;
  double shared_total = 0;
  for (int j = 0; j < B; ++j) {
    GaussianUnits ga, gb;
    std::vector<double> div;
    for (int i = 0; i < Z; ++i) {
      ga.mu.push_back(da.mu(i, j));
      ga.var.push_back(std::exp(da.logvar(i, j)));
      gb.mu.push_back(db.mu(i, j));
      gb.var.push_back(std::exp(db.logvar(i, j)));
      div.push_back(symmetric_kl(da.mu(i, j), da.logvar(i, j), db.mu(i, j), db.logvar(i, j)));
    }
    auto mask = estimate_shared_mask(div);
    shared_total += mask.count();
    auto avg = average_posteriors(ga, gb, mask.shared);
    for (int i = 0; i < Z; ++i) {
      pa.mu(i, j) = avg.p.mu[i];
      pa.logvar(i, j) = std::log(avg.p.var[i]);
      pb.mu(i, j) = avg.q.mu[i];
      pb.logvar(i, j) = std::log(avg.q.var[i]);
    }
  }
  double recon = 0.5 * (recon_loss(xa, m.decode(reparameterize(pa, ea))) +
                        recon_loss(xb, m.decode(reparameterize(pb, eb))));
  double kl = 0.5 * (kl_loss(pa) + kl_loss(pb));
  CHECK(l.mean_shared == doctest::Approx(shared_total / B));
  CHECK(l.recon == doctest::Approx(recon).epsilon(1e-12));
  CHECK(l.kl == doctest::Approx(kl).epsilon(1e-12));
  CHECK(l.total == doctest::Approx(recon + 0.5 * kl).epsilon(1e-12));
}

TEST_CASE("ada-gvae gradients match finite differences") {
  auto m = fixture(13);
  Matrix xa = random_matrix(16, 3, 14), xb = random_matrix(16, 3, 15);
  Matrix ea = random_matrix(4, 3, 16), eb = random_matrix(4, 3, 17);
  for (auto loss : {ReconLoss::mse(), ReconLoss::blur_mse(OverlapLossParams{9.0, 1}, 1, 4, 4)}) {
    auto l = adagvae_loss(m, xa, xb, ea, eb, 0.5, loss);
    CHECK(l.mean_shared > 0.0);
    CHECK(l.mean_shared < 4.0);
    auto p = m.params();
    const double h = 1e-5;
    double worst = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double keep = p[i];
      p[i] = keep + h;
      double up = adagvae_loss(m, xa, xb, ea, eb, 0.5, loss).total;
      p[i] = keep - h;
      double down = adagvae_loss(m, xa, xb, ea, eb, 0.5, loss).total;
      p[i] = keep;
      double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - l.grad[i]) /
                                  std::max({std::abs(fd), std::abs(l.grad[i]), 1e-6}));
    }
    CHECK(worst < 1e-4);
  }
  CHECK_THROWS(adagvae_loss(m, xa, random_matrix(16, 2, 1), ea, eb, 0.5));
}

TEST_CASE("ada-gvae training") {
  auto ds = two_dots();
  TrainingData data(ds);
  TrainConfig c;
  c.framework = Framework::AdaGVae;
  c.latents = 4;
  c.hidden = 32;
  c.batch = 32;
  c.steps = 1000;
  c.beta = 0.001;
  c.log_every = 100;
  c.seed = 5;
  auto res = train(data, c);
  REQUIRE(res.trace.size() == 10);
  CHECK(res.trace.back().total < res.trace.front().total);
  for (const auto &t : res.trace) {
    CHECK(t.mean_shared >= 1.0);
    CHECK(t.mean_shared <= 4.0);
  }
  const double baseline = 16 * (1.0 / 8) * (7.0 / 8) / 64;
  CHECK(res.trace.back().recon < baseline);

  c.steps = 20;
  c.log_every = 10;
  auto a = train(data, c), b = train(data, c);
  CHECK(a.model == b.model);
  CHECK(a.trace.back().mean_shared == b.trace.back().mean_shared);
  c.framework = Framework::BetaVae;
  auto plain = train(data, c);
  CHECK_FALSE(plain.model == a.model);
  CHECK(plain.trace.back().mean_shared == 0.0);
}
