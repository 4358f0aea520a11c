#include "vaedist/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "vaedist/random.hpp"

namespace vaedist {

void RepresentationTable::validate() const {
  if (codes.rows() != factors.rows())
    throw std::invalid_argument("codes and factors are not row-aligned");
  if (codes.rows() < 2)
    throw std::invalid_argument("representation table needs at least 2 rows");
}

std::vector<int> discretize(const std::vector<double> &values, int bins) {
  if (bins < 2)
    throw std::invalid_argument("need at least 2 bins");
  std::vector<int> out(values.size(), 0);
  if (values.empty())
    return out;
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  double min = *lo, width = *hi - *lo;
  if (!(width > 0.0))
    return out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    int b = static_cast<int>((values[i] - min) / width * bins);
    out[i] = std::clamp(b, 0, bins - 1);
  }
  return out;
}

namespace {

int label_count(const std::vector<int> &labels) {
  int n = 0;
  for (int l : labels) {
    if (l < 0)
      throw std::invalid_argument("labels must be non-negative");
    n = std::max(n, l + 1);
  }
  return n;
}

double plogp_sum(const std::vector<std::int64_t> &counts, double total) {
  double h = 0.0;
  for (auto c : counts)
    if (c > 0) {
      double p = static_cast<double>(c) / total;
      h -= p * std::log(p);
    }
  return h;
}

} // namespace

double entropy(const std::vector<int> &labels) {
  if (labels.empty())
    return 0.0;
  std::vector<std::int64_t> counts(label_count(labels), 0);
  for (int l : labels)
    ++counts[l];
  return plogp_sum(counts, static_cast<double>(labels.size()));
}

double mutual_information(const std::vector<int> &a, const std::vector<int> &b) {
  if (a.size() != b.size())
    throw std::invalid_argument("label sequences differ in length");
  if (a.empty())
    return 0.0;
  const int na = label_count(a), nb = label_count(b);
  std::vector<std::int64_t> joint(static_cast<std::size_t>(na) * nb, 0), ca(na, 0), cb(nb, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++joint[static_cast<std::size_t>(a[i]) * nb + b[i]];
    ++ca[a[i]];
    ++cb[b[i]];
  }
  const double n = static_cast<double>(a.size());
  double mi = 0.0;
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) {
      auto c = joint[static_cast<std::size_t>(i) * nb + j];
      if (c == 0)
        continue;
      double pij = static_cast<double>(c) / n;
      mi += pij * std::log(static_cast<double>(c) * n /
                           (static_cast<double>(ca[i]) * static_cast<double>(cb[j])));
    }
  return std::max(0.0, mi);
}

MigResult mig_score(const RepresentationTable &table, int bins) {
  table.validate();
  const auto Z = table.codes.cols();
  const auto K = table.factors.cols();
  if (Z < 2)
    throw std::invalid_argument("MIG needs at least 2 latent units");

  std::vector<std::vector<int>> codes(Z);
  for (Eigen::Index i = 0; i < Z; ++i) {
    std::vector<double> col(table.codes.col(i).data(),
                            table.codes.col(i).data() + table.samples());
    codes[i] = discretize(col, bins);
  }

  MigResult r;
  r.bins = bins;
  r.mutual_info.resize(Z, K);
  double sum = 0.0;
  int counted = 0;
  for (Eigen::Index k = 0; k < K; ++k) {
    std::vector<int> y(table.factors.col(k).data(),
                       table.factors.col(k).data() + table.samples());
    double h = entropy(y);
    std::vector<double> mi(Z);
    for (Eigen::Index i = 0; i < Z; ++i)
      r.mutual_info(i, k) = mi[i] = mutual_information(codes[i], y);
    if (!(h > 0.0)) {
      r.gaps.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    std::partial_sort(mi.begin(), mi.begin() + 2, mi.end(), std::greater<>());
    double gap = (mi[0] - mi[1]) / h;
    r.gaps.push_back(gap);
    sum += gap;
    ++counted;
  }
  r.score = counted ? sum / counted : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Regression trees

void RegressionTree::fit(const Eigen::MatrixXd &x, const std::vector<double> &y,
                         std::vector<int> rows, int max_depth, int min_leaf,
                         int mtry, std::uint64_t seed,
                         std::vector<double> &importance) {
  nodes_.clear();
  const int Z = static_cast<int>(x.cols());
  mtry = std::clamp(mtry, 1, Z);
  std::mt19937_64 rng(seed);
  std::vector<int> features(Z);
  std::iota(features.begin(), features.end(), 0);

  struct Task {
    int node;
    std::vector<int> rows;
    int depth;
  };
  auto mean_of = [&](const std::vector<int> &r) {
    double s = 0.0;
    for (int i : r)
      s += y[i];
    return r.empty() ? 0.0 : s / static_cast<double>(r.size());
  };

  nodes_.push_back({});
  std::vector<Task> stack;
  stack.push_back({0, std::move(rows), 0});
  std::vector<int> order;
  while (!stack.empty()) {
    Task t = std::move(stack.back());
    stack.pop_back();
    const std::size_t n = t.rows.size();
    nodes_[t.node].value = mean_of(t.rows);
    if (t.depth >= max_depth || n < static_cast<std::size_t>(2 * min_leaf))
      continue;

    double total = 0.0, total_sq = 0.0;
    for (int i : t.rows) {
      total += y[i];
      total_sq += y[i] * y[i];
    }
    const double parent_sse = total_sq - total * total / static_cast<double>(n);
    if (!(parent_sse > 1e-12))
      continue;

    // Random feature subset for this split.
    for (int i = 0; i < mtry; ++i)
      std::swap(features[i], features[std::uniform_int_distribution<int>(i, Z - 1)(rng)]);

    double best_gain = 0.0, best_threshold = 0.0;
    int best_feature = -1;
    for (int fi = 0; fi < mtry; ++fi) {
      const int f = features[fi];
      order = t.rows;
      std::sort(order.begin(), order.end(),
                [&](int a, int b) { return x(a, f) < x(b, f); });
      double left = 0.0, left_sq = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left += y[order[i]];
        left_sq += y[order[i]] * y[order[i]];
        std::size_t nl = i + 1, nr = n - nl;
        if (nl < static_cast<std::size_t>(min_leaf) || nr < static_cast<std::size_t>(min_leaf))
          continue;
        double a = x(order[i], f), b = x(order[i + 1], f);
        if (!(a < b))
          continue;
        double right = total - left, right_sq = total_sq - left_sq;
        double sse = (left_sq - left * left / static_cast<double>(nl)) +
                     (right_sq - right * right / static_cast<double>(nr));
        double gain = parent_sse - sse;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = 0.5 * (a + b);
        }
      }
    }
    if (best_feature < 0)
      continue;

    importance[best_feature] += best_gain;
    std::vector<int> lrows, rrows;
    for (int i : t.rows)
      (x(i, best_feature) <= best_threshold ? lrows : rrows).push_back(i);
    int l = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    nodes_.push_back({});
    nodes_[t.node].feature = best_feature;
    nodes_[t.node].threshold = best_threshold;
    nodes_[t.node].left = l;
    nodes_[t.node].right = l + 1;
    stack.push_back({l + 1, std::move(rrows), t.depth + 1});
    stack.push_back({l, std::move(lrows), t.depth + 1});
  }
}

double RegressionTree::predict(const Eigen::MatrixXd &x, Eigen::Index row) const {
  int n = 0;
  while (nodes_[n].feature >= 0)
    n = x(row, nodes_[n].feature) <= nodes_[n].threshold ? nodes_[n].left
                                                          : nodes_[n].right;
  return nodes_[n].value;
}

DciImportance dci_importance(const RepresentationTable &table,
                             const DciParams &params) {
  table.validate();
  const auto N = table.samples();
  const auto Z = table.codes.cols();
  const auto K = table.factors.cols();
  if (N < 50)
    throw std::invalid_argument("DCI needs at least 50 samples");

  std::vector<int> perm(static_cast<std::size_t>(N));
  std::iota(perm.begin(), perm.end(), 0);
  auto split_rng = make_rng(params.seed, 0x5eed);
  std::shuffle(perm.begin(), perm.end(), split_rng);
  auto n_test = static_cast<std::size_t>(std::llround(params.test_fraction * N));
  n_test = std::clamp<std::size_t>(n_test, 1, static_cast<std::size_t>(N) - 1);
  std::vector<int> test(perm.begin(), perm.begin() + n_test);
  std::vector<int> train(perm.begin() + n_test, perm.end());
  const int mtry = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(Z)))));

  DciImportance out;
  out.importance = Eigen::MatrixXd::Zero(Z, K);
  double r2_sum = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    std::vector<double> y(static_cast<std::size_t>(N));
    for (Eigen::Index i = 0; i < N; ++i)
      y[i] = table.factors(i, k);

    std::vector<double> imp(Z, 0.0);
    std::vector<RegressionTree> forest(params.trees);
    for (int t = 0; t < params.trees; ++t) {
      auto rng = make_rng(derive_seed(params.seed, static_cast<std::uint64_t>(k)), t);
      std::vector<int> boot(train.size());
      std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
      for (auto &b : boot)
        b = train[pick(rng)];
      forest[t].fit(table.codes, y, std::move(boot), params.max_depth,
                    params.min_leaf, mtry, rng(), imp);
    }

    double mass = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (mass > 0.0)
      for (Eigen::Index i = 0; i < Z; ++i)
        out.importance(i, k) = imp[i] / mass;

    double mean_y = 0.0;
    for (int i : test)
      mean_y += y[i];
    mean_y /= static_cast<double>(test.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (int i : test) {
      double pred = 0.0;
      for (const auto &tree : forest)
        pred += tree.predict(table.codes, i);
      pred /= params.trees;
      ss_res += (y[i] - pred) * (y[i] - pred);
      ss_tot += (y[i] - mean_y) * (y[i] - mean_y);
    }
    double r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
    out.r2.push_back(r2);
    out.flagged.push_back(mass == 0.0 || r2 < params.low_r2);
    r2_sum += r2;
  }
  out.low_informativeness = K == 0 || r2_sum / static_cast<double>(K) < params.low_r2;
  return out;
}

double dci_disentanglement(const Eigen::MatrixXd &imp) {
  if ((imp.array() < 0.0).any())
    throw std::invalid_argument("importances must be non-negative");
  const double total = imp.sum();
  if (!(total > 0.0))
    throw std::invalid_argument("importance matrix is all zero");
  const auto K = imp.cols();
  double score = 0.0;
  for (Eigen::Index i = 0; i < imp.rows(); ++i) {
    double row = imp.row(i).sum();
    if (!(row > 0.0))
      continue;
    double d = 1.0;
    if (K > 1) {
      double h = 0.0;
      for (Eigen::Index k = 0; k < K; ++k) {
        double p = imp(i, k) / row;
        if (p > 0.0)
          h -= p * std::log(p);
      }
      d = 1.0 - h / std::log(static_cast<double>(K));
    }
    score += (row / total) * d;
  }
  return score;
}

} // namespace vaedist
