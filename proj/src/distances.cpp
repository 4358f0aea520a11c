#include "vaedist/distances.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "vaedist/parallel.hpp"
#include "vaedist/random.hpp"
#include "vaedist/report_io.hpp"

namespace vaedist {

DistanceKind DistanceKind::parse(const std::string &name, int radius,
                                 double alpha, BlurPadding padding) {
  if (name == "gt-l1" || name == "gt")
    return gt_l1();
  if (name == "mse")
    return mse();
  if (name == "bce")
    return bce();
  if (name == "blur-mse") {
    auto k = blur_mse(radius, alpha, padding);
    k.blur.validate();
    return k;
  }
  throw std::invalid_argument("unknown distance kind '" + name +
                              "' (expected gt-l1, mse, bce or blur-mse)");
}

std::string DistanceKind::to_string() const {
  switch (type) {
  case GtL1:
    return "gt-l1";
  case VisualMSE:
    return "mse";
  case VisualBCE:
    return "bce";
  case VisualBlurMSE: {
    char buf[64];
    std::snprintf(buf, sizeof buf, "blur-mse(r=%d;a=%g%s)", blur.radius, blur.alpha,
                  blur.padding == BlurPadding::Circular ? ";circular" : "");
    return buf;
  }
  }
  return "?";
}

double gt_distance(const FactorPos &a, const FactorPos &b) {
  if (a.size() != b.size())
    throw std::invalid_argument("positions have different dimensionality");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    d += std::abs(a[i] - b[i]);
  return d;
}

double visual_distance(const Observation &a, const Observation &b,
                       const DistanceKind &kind) {
  require_same_shape(a, b);
  const std::size_t n = a.size();
  switch (kind.type) {
  case DistanceKind::VisualMSE: {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = a.data[i] - b.data[i];
      s += d * d;
    }
    return s / static_cast<double>(n);
  }
  case DistanceKind::VisualBCE: {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double p = std::clamp(b.data[i], kBceEpsilon, 1.0 - kBceEpsilon);
      s -= a.data[i] * std::log(p) + (1.0 - a.data[i]) * std::log(1.0 - p);
    }
    return s / static_cast<double>(n);
  }
  case DistanceKind::VisualBlurMSE:
    return overlap_loss(a.data, b.data, a.channels, a.height, a.width, kind.blur,
                        {});
  case DistanceKind::GtL1:
    break;
  }
  throw std::invalid_argument("gt-l1 distance needs factor positions, not images");
}

double pair_distance(const GroundTruthDataset &ds, const FactorPos &a,
                     const FactorPos &b, const DistanceKind &kind) {
  if (kind.type == DistanceKind::GtL1)
    return gt_distance(a, b);
  thread_local Observation oa, ob;
  ds.observe_into(a, oa);
  ds.observe_into(b, ob);
  return visual_distance(oa, ob, kind);
}

DistanceMatrix traversal_distance_matrix(const GroundTruthDataset &ds,
                                         const FactorPos &anchor, int factor,
                                         const DistanceKind &kind) {
  auto members = ds.space().traversal(anchor, static_cast<std::size_t>(factor));
  const int n = static_cast<int>(members.size());
  DistanceMatrix m{factor, n, std::vector<double>(static_cast<std::size_t>(n) * n, 0.0)};
  if (kind.type == DistanceKind::GtL1) {
    for (int u = 0; u < n; ++u)
      for (int v = 0; v < n; ++v)
        m.at(u, v) = gt_distance(members[u], members[v]);
    return m;
  }
  std::vector<Observation> obs;
  obs.reserve(n);
  for (const auto &p : members)
    obs.push_back(ds.observation(p));
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v) {
      if (u == v && kind.symmetric())
        continue;
      if (v < u && kind.symmetric())
        m.at(u, v) = m.at(v, u);
      else
        m.at(u, v) = visual_distance(obs[u], obs[v], kind);
    }
  return m;
}

namespace {

constexpr std::int64_t kChunk = 2048;
constexpr std::uint64_t kRandomStream = 0xffffu;

struct ChunkResult {
  RunningStats stats;
  double lo = INFINITY;
  double hi = -INFINITY;
  std::vector<double> values;

  void add(double d, bool keep) {
    stats.add(d);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
    if (keep)
      values.push_back(d);
  }
};

struct Sampled {
  RunningStats stats;
  double lo = INFINITY;
  double hi = -INFINITY;
  std::vector<double> values;
  bool exhaustive = false;
};

Sampled reduce(std::vector<ChunkResult> &chunks, bool exhaustive) {
  Sampled s;
  s.exhaustive = exhaustive;
  for (auto &c : chunks) {
    s.stats.merge(c.stats);
    s.lo = std::min(s.lo, c.lo);
    s.hi = std::max(s.hi, c.hi);
    s.values.insert(s.values.end(), c.values.begin(), c.values.end());
  }
  return s;
}

FactorPos other_value(const FactorPos &a, int factor, int size,
                      std::mt19937_64 &rng) {
  FactorPos b = a;
  int v = std::uniform_int_distribution<int>(0, size - 2)(rng);
  b[factor] = v >= a[factor] ? v + 1 : v;
  return b;
}

/// Distances between distinct members of traversals along `factor`.
Sampled traversal_pairs(const GroundTruthDataset &ds, const DistanceKind &kind,
                        int factor, std::int64_t samples, std::uint64_t seed,
                        Exhaustive mode, unsigned threads, bool keep) {
  const auto &space = ds.space();
  const int f = space.size(factor);
  if (f < 2)
    return {};
  const std::int64_t traversals = space.total() / f;
  const std::int64_t ordered = traversals * f * (f - 1);
  bool exhaustive = mode == Exhaustive::Always ||
                    (mode == Exhaustive::Auto && ordered <= kExhaustivePairLimit);

  if (exhaustive) {
    // Enumerate every traversal once via the anchors with coordinate 0.
    FactorSpace reduced = [&] {
      std::vector<int> sizes = space.sizes();
      sizes[factor] = 1;
      return FactorSpace(sizes);
    }();
    const std::int64_t per_chunk = std::max<std::int64_t>(1, kChunk / (f * (f - 1)));
    const std::size_t nchunks = static_cast<std::size_t>((traversals + per_chunk - 1) / per_chunk);
    std::vector<ChunkResult> chunks(nchunks);
    parallel_for(nchunks, threads, [&](std::size_t c) {
      std::int64_t end = std::min<std::int64_t>(traversals, (c + 1) * per_chunk);
      for (std::int64_t t = c * per_chunk; t < end; ++t) {
        auto m = traversal_distance_matrix(ds, reduced.index_to_pos(t), factor, kind);
        for (int u = 0; u < f; ++u)
          for (int v = 0; v < f; ++v)
            if (u != v)
              chunks[c].add(m.at(u, v), keep);
      }
    });
    return reduce(chunks, true);
  }

  if (samples < 1)
    throw std::invalid_argument("sample count must be positive");
  const std::size_t nchunks = static_cast<std::size_t>((samples + kChunk - 1) / kChunk);
  const std::uint64_t stream = derive_seed(seed, static_cast<std::uint64_t>(factor));
  std::vector<ChunkResult> chunks(nchunks);
  parallel_for(nchunks, threads, [&](std::size_t c) {
    auto rng = make_rng(stream, c);
    std::int64_t n = std::min<std::int64_t>(kChunk, samples - static_cast<std::int64_t>(c) * kChunk);
    for (std::int64_t i = 0; i < n; ++i) {
      FactorPos a = space.sample_pos(rng);
      FactorPos b = other_value(a, factor, f, rng);
      chunks[c].add(pair_distance(ds, a, b, kind), keep);
    }
  });
  return reduce(chunks, false);
}

/// Distances between independent uniform pairs with a != b.
Sampled random_pairs(const GroundTruthDataset &ds, const DistanceKind &kind,
                     std::int64_t samples, std::uint64_t seed, Exhaustive mode,
                     unsigned threads, bool keep) {
  const auto &space = ds.space();
  const std::int64_t total = space.total();
  if (total < 2)
    return {};
  bool exhaustive = mode == Exhaustive::Always ||
                    (mode == Exhaustive::Auto &&
                     total * (total - 1) <= kExhaustivePairLimit);

  if (exhaustive) {
    std::vector<ChunkResult> chunks(static_cast<std::size_t>(total));
    parallel_for(chunks.size(), threads, [&](std::size_t i) {
      FactorPos a = space.index_to_pos(static_cast<std::int64_t>(i));
      Observation oa, ob;
      if (kind.type != DistanceKind::GtL1)
        oa = ds.observation(a);
      for (std::int64_t j = 0; j < total; ++j) {
        if (j == static_cast<std::int64_t>(i))
          continue;
        FactorPos b = space.index_to_pos(j);
        double d = 0.0;
        if (kind.type == DistanceKind::GtL1) {
          d = gt_distance(a, b);
        } else {
          ds.observe_into(b, ob);
          d = visual_distance(oa, ob, kind);
        }
        chunks[i].add(d, keep);
      }
    });
    return reduce(chunks, true);
  }

  if (samples < 1)
    throw std::invalid_argument("sample count must be positive");
  const std::size_t nchunks = static_cast<std::size_t>((samples + kChunk - 1) / kChunk);
  const std::uint64_t stream = derive_seed(seed, kRandomStream);
  std::vector<ChunkResult> chunks(nchunks);
  parallel_for(nchunks, threads, [&](std::size_t c) {
    auto rng = make_rng(stream, c);
    std::int64_t n = std::min<std::int64_t>(kChunk, samples - static_cast<std::int64_t>(c) * kChunk);
    for (std::int64_t i = 0; i < n; ++i) {
      FactorPos a = space.sample_pos(rng), b = space.sample_pos(rng);
      while (a == b)
        b = space.sample_pos(rng);
      chunks[c].add(pair_distance(ds, a, b, kind), keep);
    }
  });
  return reduce(chunks, false);
}

ImportanceEntry to_entry(const Sampled &s, int factor, std::string name) {
  ImportanceEntry e;
  e.factor = factor;
  e.name = std::move(name);
  e.mean = s.stats.mean;
  e.std = s.stats.stddev();
  e.std_error = s.stats.std_error();
  e.samples = static_cast<std::int64_t>(s.stats.count);
  e.exhaustive = s.exhaustive;
  return e;
}

void check_factor(const GroundTruthDataset &ds, int factor) {
  if (factor < 0 || static_cast<std::size_t>(factor) >= ds.space().num_factors())
    throw std::out_of_range("factor index " + std::to_string(factor) +
                            " out of range");
}

} // namespace

MeanDistanceMatrix mean_factor_distance_matrix(const GroundTruthDataset &ds,
                                               int factor,
                                               const DistanceKind &kind,
                                               std::int64_t anchor_samples,
                                               std::uint64_t seed,
                                               Exhaustive mode,
                                               unsigned threads) {
  check_factor(ds, factor);
  if (anchor_samples < 1 && mode != Exhaustive::Always)
    throw std::invalid_argument("anchor_samples must be >= 1");
  const auto &space = ds.space();
  const int f = space.size(factor);
  const std::int64_t traversals = space.total() / f;
  bool exhaustive = mode == Exhaustive::Always ||
                    (mode == Exhaustive::Auto &&
                     traversals * f * f <= kExhaustivePairLimit);

  std::vector<int> reduced_sizes = space.sizes();
  reduced_sizes[factor] = 1;
  FactorSpace reduced(reduced_sizes);
  const std::int64_t anchors = exhaustive ? traversals : anchor_samples;
  const std::int64_t per_chunk = std::max<std::int64_t>(1, kChunk / (f * f));
  const std::size_t nchunks = static_cast<std::size_t>((anchors + per_chunk - 1) / per_chunk);
  const std::uint64_t stream = derive_seed(seed, 0x10000u + factor);

  std::vector<std::vector<RunningStats>> chunks(
      nchunks, std::vector<RunningStats>(static_cast<std::size_t>(f) * f));
  parallel_for(nchunks, threads, [&](std::size_t c) {
    auto rng = make_rng(stream, c);
    std::int64_t end = std::min<std::int64_t>(anchors, (c + 1) * per_chunk);
    for (std::int64_t t = c * per_chunk; t < end; ++t) {
      FactorPos anchor = exhaustive ? reduced.index_to_pos(t) : space.sample_pos(rng);
      auto m = traversal_distance_matrix(ds, anchor, factor, kind);
      for (std::size_t i = 0; i < m.values.size(); ++i)
        chunks[c][i].add(m.values[i]);
    }
  });

  std::vector<RunningStats> total(static_cast<std::size_t>(f) * f);
  for (const auto &c : chunks)
    for (std::size_t i = 0; i < total.size(); ++i)
      total[i].merge(c[i]);

  MeanDistanceMatrix out;
  out.mean = {factor, f, std::vector<double>(total.size())};
  out.std = {factor, f, std::vector<double>(total.size())};
  for (std::size_t i = 0; i < total.size(); ++i) {
    out.mean.values[i] = total[i].mean;
    out.std.values[i] = total[i].stddev();
  }
  out.anchors = anchors;
  out.exhaustive = exhaustive;
  return out;
}

FactorImportanceReport factor_importance(const GroundTruthDataset &ds,
                                         const DistanceKind &kind,
                                         std::int64_t pairs_per_factor,
                                         std::uint64_t seed, Exhaustive mode,
                                         unsigned threads) {
  if (pairs_per_factor < 1)
    throw std::invalid_argument("pairs_per_factor must be >= 1");
  const auto &space = ds.space();
  FactorImportanceReport r;
  r.dataset = ds.name();
  r.kind = kind;
  for (std::size_t i = 0; i < space.num_factors(); ++i) {
    int factor = static_cast<int>(i);
    if (space.size(i) < 2) {
      r.warnings.push_back("factor '" + space.name(i) +
                           "' has a single value; skipped");
      continue;
    }
    auto s = traversal_pairs(ds, kind, factor, pairs_per_factor, seed, mode,
                             threads, false);
    r.factors.push_back(to_entry(s, factor, space.name(i)));
  }
  std::stable_sort(r.factors.begin(), r.factors.end(),
                   [](const auto &a, const auto &b) { return a.mean > b.mean; });
  if (space.total() >= 2)
    r.random = to_entry(random_pairs(ds, kind, pairs_per_factor, seed, mode,
                                     threads, false),
                        -1, "random");
  else
    r.warnings.push_back("dataset has a single observation; no random pairs");
  r.random.name = "random";
  return r;
}

std::vector<double> distance_cdf(const GroundTruthDataset &ds,
                                 const DistanceKind &kind,
                                 std::optional<int> factor,
                                 std::int64_t samples, std::uint64_t seed,
                                 Exhaustive mode, unsigned threads) {
  if (samples < 1)
    throw std::invalid_argument("sample count must be >= 1");
  Sampled s;
  if (factor) {
    check_factor(ds, *factor);
    s = traversal_pairs(ds, kind, *factor, samples, seed, mode, threads, true);
  } else {
    s = random_pairs(ds, kind, samples, seed, mode, threads, true);
  }
  std::sort(s.values.begin(), s.values.end());
  return std::move(s.values);
}

double empirical_cdf(const std::vector<double> &sorted, double x) {
  if (sorted.empty())
    return 0.0;
  auto it = std::upper_bound(sorted.begin(), sorted.end(), x);
  return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

OverlapCheck constant_overlap_check(const GroundTruthDataset &ds,
                                    const DistanceKind &kind, double tolerance,
                                    std::int64_t samples, std::uint64_t seed,
                                    Exhaustive mode, unsigned threads) {
  if (tolerance < 0.0)
    throw std::invalid_argument("tolerance must be non-negative");
  OverlapCheck out;
  const auto &space = ds.space();
  for (std::size_t i = 0; i < space.num_factors(); ++i) {
    if (space.size(i) < 2) {
      out.per_factor_constant.push_back(0.0);
      continue;
    }
    auto s = traversal_pairs(ds, kind, static_cast<int>(i), samples, seed, mode,
                             threads, false);
    double mid = 0.5 * (s.lo + s.hi);
    double dev = 0.5 * (s.hi - s.lo);
    out.per_factor_constant.push_back(mid);
    out.max_deviation = std::max(out.max_deviation, dev);
  }
  out.constant = out.max_deviation <= tolerance;
  return out;
}

void write_importance_csv(std::ostream &out, const FactorImportanceReport &r,
                          bool header) {
  if (header)
    out << "dataset,factor,kind,mean,std,samples\n";
  auto row = [&](const ImportanceEntry &e) {
    out << r.dataset << ',' << e.name << ',' << r.kind.to_string() << ','
        << format_number(e.mean) << ',' << format_number(e.std) << ',' << e.samples
        << '\n';
  };
  for (const auto &e : r.factors)
    row(e);
  if (r.random.samples > 0)
    row(r.random);
}

} // namespace vaedist
