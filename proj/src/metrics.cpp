#include "protovae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "protovae/keyvalue.hpp"

namespace protovae {
namespace {

constexpr std::uint64_t kFactorVaeStream = 101;
constexpr std::uint64_t kMigStream = 102;
constexpr std::uint64_t kDciStream = 103;

std::vector<int> scored_factors(const GroundTruthDataset& ds) {
  std::vector<int> out;
  for (int f = 0; f < ds.num_factors(); ++f)
    if (ds.factors()[f].cardinality >= 2) out.push_back(f);
  return out;
}

std::vector<double> column_std(const Tensor<double>& x) {
  const int n = x.dim(0);
  const int d = x.dim(1);
  std::vector<double> mean(d, 0.0);
  std::vector<double> var(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mean[j] += x.at(i, j);
  for (auto& m : mean) m /= n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) var[j] += (x.at(i, j) - mean[j]) * (x.at(i, j) - mean[j]);
  for (auto& v : var) v = std::sqrt(v / n);
  return var;
}

// log base `side`; a side of 1 carries no uncertainty.
double normalized_entropy(std::span<const double> p, int side) {
  if (side <= 1) return 0.0;
  double h = 0.0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h / std::log(static_cast<double>(side));
}

std::vector<int> factor_column(const GroundTruthDataset& ds, std::span<const std::int64_t> idx, int f) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = index_to_factors(idx[i], ds.factors())[f];
  return out;
}

double accuracy(std::span<const int> pred, std::span<const int> truth) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace

RepresentationFn image_representation(const GroundTruthDataset& ds,
                                      std::function<Tensor<double>(const ImageBatch&)> encode, int chunk) {
  return [&ds, encode = std::move(encode), chunk](std::span<const std::int64_t> idx) {
    std::vector<double> all;
    int d = 0;
    for (std::size_t s = 0; s < idx.size(); s += chunk) {
      const auto part = idx.subspan(s, std::min<std::size_t>(chunk, idx.size() - s));
      Tensor<double> codes = encode(ds.images(part));
      d = codes.dim(1);
      all.insert(all.end(), codes.data().begin(), codes.data().end());
    }
    return Tensor<double>({static_cast<int>(idx.size()), d}, std::move(all));
  };
}

RepresentationFn factor_representation(const GroundTruthDataset& ds) {
  return [&ds](std::span<const std::int64_t> idx) {
    const int nf = ds.num_factors();
    Tensor<double> out({static_cast<int>(idx.size()), nf});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto f = index_to_factors(idx[i], ds.factors());
      for (int j = 0; j < nf; ++j) out.at(static_cast<int>(i), j) = ds.factors()[j].values[f[j]];
    }
    return out;
  };
}

FactorVaeResult factorvae_metric(const GroundTruthDataset& ds, const RepresentationFn& rep, const EvalConfig& cfg,
                                 Rng& rng) {
  const auto factors = scored_factors(ds);
  if (factors.size() < 2) throw std::invalid_argument("FactorVAE metric needs at least 2 non-constant factors");
  if (cfg.batch_per_vote < 2 || cfg.train_votes < 1 || cfg.eval_votes < 1) {
    throw std::invalid_argument("FactorVAE metric: vote counts must be positive and batches hold >= 2 images");
  }
  FactorVaeResult res;
  const Tensor<double> global = rep(sample_indices(ds, cfg.global_samples, rng));
  const std::vector<double> sd = column_std(global);
  const double max_sd = *std::max_element(sd.begin(), sd.end());
  for (int j = 0; j < static_cast<int>(sd.size()); ++j)
    if (max_sd > 0 && sd[j] >= cfg.prune_threshold * max_sd) res.active_dims.push_back(j);
  if (res.active_dims.empty()) {
    res.warning = "all latent dimensions collapsed; FactorVAE score set to 0";
    return res;
  }

  const int d = static_cast<int>(sd.size());
  auto vote = [&](int& factor) {
    factor = factors[uniform_index(rng, static_cast<int>(factors.size()))];
    const int value = uniform_index(rng, ds.factors()[factor].cardinality);
    const Tensor<double> z = rep(sample_fixed_factor_indices(ds, factor, value, cfg.batch_per_vote, rng));
    const std::vector<double> s = column_std(z);
    int best = res.active_dims[0];
    double best_var = 1e300;
    for (int j : res.active_dims) {
      const double v = (s[j] / sd[j]) * (s[j] / sd[j]);
      if (v < best_var) {
        best_var = v;
        best = j;
      }
    }
    return best;
  };

  const int nf = ds.num_factors();
  std::vector<std::vector<int>> train_counts(d, std::vector<int>(nf, 0));
  for (int v = 0; v < cfg.train_votes; ++v) {
    int f = 0;
    const int j = vote(f);
    ++train_counts[j][f];
  }
  std::vector<int> predicted(d);
  for (int j = 0; j < d; ++j) {
    predicted[j] = static_cast<int>(std::max_element(train_counts[j].begin(), train_counts[j].end()) -
                                    train_counts[j].begin());
  }
  int correct = 0;
  std::vector<int> eval_counts(nf, 0);
  for (int v = 0; v < cfg.eval_votes; ++v) {
    int f = 0;
    const int j = vote(f);
    correct += predicted[j] == f;
    ++eval_counts[f];
  }
  res.score = static_cast<double>(correct) / cfg.eval_votes;
  res.chance = static_cast<double>(*std::max_element(eval_counts.begin(), eval_counts.end())) / cfg.eval_votes;
  return res;
}

std::vector<int> equal_occupancy_bins(std::span<const double> values, int bins) {
  const std::size_t n = values.size();
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto below = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), values[i]) -
                                                sorted.begin());
    out[i] = std::min<int>(bins - 1, static_cast<int>(static_cast<double>(bins) * below / static_cast<double>(n)));
  }
  return out;
}

double discrete_entropy(std::span<const int> a) {
  std::map<int, double> counts;
  for (int v : a) counts[v] += 1;
  double h = 0;
  for (const auto& [_, c] : counts) {
    const double p = c / static_cast<double>(a.size());
    h -= p * std::log(p);
  }
  return h;
}

double discrete_mutual_info(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("mutual information: label vectors differ in length");
  const double n = static_cast<double>(a.size());
  std::map<int, double> ca;
  std::map<int, double> cb;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1;
    cb[b[i]] += 1;
    joint[{a[i], b[i]}] += 1;
  }
  double mi = 0;
  for (const auto& [key, c] : joint) mi += (c / n) * std::log(c * n / (ca[key.first] * cb[key.second]));
  return std::max(0.0, mi);
}

double mig(const GroundTruthDataset& ds, const RepresentationFn& rep, int n_samples, int n_bins, Rng& rng) {
  if (n_bins < 2) throw std::invalid_argument("MIG needs at least 2 bins");
  if (n_samples < 10 * n_bins) {
    throw std::invalid_argument("MIG needs at least " + std::to_string(10 * n_bins) + " samples for " +
                                std::to_string(n_bins) + " bins, got " + std::to_string(n_samples));
  }
  const auto factors = scored_factors(ds);
  if (factors.empty()) throw std::invalid_argument("MIG needs at least one non-constant factor");
  const auto idx = sample_indices(ds, n_samples, rng);
  const Tensor<double> z = rep(idx);
  const int d = z.dim(1);
  std::vector<std::vector<int>> binned(d);
  std::vector<double> col(n_samples);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < n_samples; ++i) col[i] = z.at(i, j);
    binned[j] = equal_occupancy_bins(col, n_bins);
  }
  double total = 0;
  for (int f : factors) {
    const auto v = factor_column(ds, idx, f);
    const double h = discrete_entropy(v);
    std::vector<double> mi(d);
    for (int j = 0; j < d; ++j) mi[j] = discrete_mutual_info(binned[j], v);
    std::sort(mi.begin(), mi.end(), std::greater<>());
    const double second = d > 1 ? mi[1] : 0.0;
    total += h > 0 ? (mi[0] - second) / h : 0.0;
  }
  return total / static_cast<double>(factors.size());
}

void dci_scores(const Tensor<double>& r, double& disentanglement, double& completeness) {
  const int d = r.dim(0);
  const int nf = r.dim(1);
  double grand = 0;
  for (double v : r.data()) grand += v;
  disentanglement = 0;
  completeness = 0;
  if (grand <= 0) return;
  std::vector<double> p;
  for (int j = 0; j < d; ++j) {
    double row = 0;
    for (int f = 0; f < nf; ++f) row += r.at(j, f);
    if (row <= 0) continue;
    p.assign(nf, 0);
    for (int f = 0; f < nf; ++f) p[f] = r.at(j, f) / row;
    disentanglement += (row / grand) * (1.0 - normalized_entropy(p, nf));
  }
  for (int f = 0; f < nf; ++f) {
    double col = 0;
    for (int j = 0; j < d; ++j) col += r.at(j, f);
    if (col <= 0) continue;
    p.assign(d, 0);
    for (int j = 0; j < d; ++j) p[j] = r.at(j, f) / col;
    completeness += (col / grand) * (1.0 - normalized_entropy(p, d));
  }
}

DciResult dci(const GroundTruthDataset& ds, const RepresentationFn& rep, const EvalConfig& cfg, Rng& rng) {
  if (cfg.dci_train < 2 || cfg.dci_test < 1) throw std::invalid_argument("DCI needs training and test samples");
  DciResult res;
  res.factors = scored_factors(ds);
  if (res.factors.empty()) throw std::invalid_argument("DCI needs at least one non-constant factor");
  const auto train_idx = sample_indices(ds, cfg.dci_train, rng);
  const auto test_idx = sample_indices(ds, cfg.dci_test, rng);
  const Tensor<double> x_train = rep(train_idx);
  const Tensor<double> x_test = rep(test_idx);
  const int d = x_train.dim(1);
  const int nf = static_cast<int>(res.factors.size());
  res.importance = Tensor<double>({d, nf});
  double acc = 0;
  for (int c = 0; c < nf; ++c) {
    const int f = res.factors[c];
    const int classes = ds.factors()[f].cardinality;
    const auto y_train = factor_column(ds, train_idx, f);
    const auto y_test = factor_column(ds, test_idx, f);
    std::vector<double> imp;
    std::vector<int> pred;
    if (cfg.dci_predictor == DciPredictor::kBoostedTrees) {
      const auto model = BoostedTrees::fit(x_train, y_train, classes, cfg.gbdt_rounds, cfg.gbdt_depth, cfg.gbdt_lr,
                                           cfg.gbdt_bins);
      imp = model.importance;
      pred = model.predict(x_test);
    } else {
      const auto model = LogisticModel::fit(x_train, y_train, classes);
      imp = model.importance();
      pred = model.predict(x_test);
    }
    const double sum = std::accumulate(imp.begin(), imp.end(), 0.0);
    for (int j = 0; j < d; ++j) res.importance.at(j, c) = sum > 0 ? imp[j] / sum : 0.0;
    acc += accuracy(pred, y_test);
  }
  res.informativeness = acc / nf;
  dci_scores(res.importance, res.disentanglement, res.completeness);
  return res;
}

BoostedTrees BoostedTrees::fit(const Tensor<double>& x, std::span<const int> y, int classes, int rounds, int depth,
                               double learning_rate, int bins) {
  constexpr double kLambda = 1.0;  // L2 penalty on leaf values
  constexpr double kMinHessian = 1e-6;
  const int n = x.dim(0);
  const int nfeat = x.dim(1);
  if (static_cast<int>(y.size()) != n) throw std::invalid_argument("boosted trees: label count mismatch");

  // Candidate thresholds: midpoints between distinct values, thinned to quantiles.
  std::vector<std::vector<double>> cuts(nfeat);
  std::vector<std::vector<std::uint16_t>> bin_of(nfeat, std::vector<std::uint16_t>(n));
  for (int j = 0; j < nfeat; ++j) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = x.at(i, j);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    std::vector<double> mids;
    for (std::size_t k = 0; k + 1 < v.size(); ++k) mids.push_back(0.5 * (v[k] + v[k + 1]));
    if (static_cast<int>(mids.size()) > bins - 1) {
      std::vector<double> sorted(n);
      for (int i = 0; i < n; ++i) sorted[i] = x.at(i, j);
      std::sort(sorted.begin(), sorted.end());
      std::vector<double> q;
      for (int b = 1; b < bins; ++b) {
        const std::size_t pos = static_cast<std::size_t>(static_cast<double>(b) * n / bins);
        const double lo = sorted[std::min<std::size_t>(pos, n - 1) - (pos > 0 ? 1 : 0)];
        const double hi = sorted[std::min<std::size_t>(pos, n - 1)];
        if (lo < hi) q.push_back(0.5 * (lo + hi));
      }
      q.erase(std::unique(q.begin(), q.end()), q.end());
      mids = std::move(q);
    }
    cuts[j] = mids;
    for (int i = 0; i < n; ++i) {
      bin_of[j][i] = static_cast<std::uint16_t>(std::upper_bound(mids.begin(), mids.end(), x.at(i, j)) - mids.begin());
    }
  }

  BoostedTrees model;
  model.classes = classes;
  model.importance.assign(nfeat, 0.0);
  model.base_score.assign(classes, 0.0);
  std::vector<double> prior(classes, 1.0);  // add-one smoothing
  for (int label : y) prior.at(label) += 1.0;
  for (int k = 0; k < classes; ++k) model.base_score[k] = std::log(prior[k] / (n + classes));

  std::vector<double> score(static_cast<std::size_t>(n) * classes);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < classes; ++k) score[static_cast<std::size_t>(i) * classes + k] = model.base_score[k];
  std::vector<double> prob(score.size());
  std::vector<double> g(n);
  std::vector<double> h(n);
  std::vector<int> node_of(n);

  for (int round = 0; round < rounds; ++round) {
    for (int i = 0; i < n; ++i) {
      const double* s = score.data() + static_cast<std::size_t>(i) * classes;
      double* p = prob.data() + static_cast<std::size_t>(i) * classes;
      const double m = *std::max_element(s, s + classes);
      double z = 0;
      for (int k = 0; k < classes; ++k) z += p[k] = std::exp(s[k] - m);
      for (int k = 0; k < classes; ++k) p[k] /= z;
    }
    std::vector<Tree> trees(classes);
    for (int k = 0; k < classes; ++k) {
      for (int i = 0; i < n; ++i) {
        const double p = prob[static_cast<std::size_t>(i) * classes + k];
        g[i] = p - (y[i] == k ? 1.0 : 0.0);
        h[i] = std::max(p * (1.0 - p), kMinHessian);
      }
      Tree& tree = trees[k];
      tree.push_back(Node{});
      std::fill(node_of.begin(), node_of.end(), 0);
      std::vector<int> frontier{0};
      for (int level = 0; level <= depth; ++level) {
        const int count = static_cast<int>(tree.size());
        std::vector<double> gs(count, 0.0);
        std::vector<double> hs(count, 0.0);
        for (int i = 0; i < n; ++i) {
          gs[node_of[i]] += g[i];
          hs[node_of[i]] += h[i];
        }
        std::vector<int> next;
        for (int node : frontier) {
          const double parent = gs[node] * gs[node] / (hs[node] + kLambda);
          tree[node].value = -learning_rate * gs[node] / (hs[node] + kLambda);
          if (level == depth) continue;
          double best_gain = 1e-12;
          int best_feat = -1;
          int best_bin = -1;
          for (int j = 0; j < nfeat; ++j) {
            const int nb = static_cast<int>(cuts[j].size()) + 1;
            if (nb < 2) continue;
            std::vector<double> hg(nb, 0.0);
            std::vector<double> hh(nb, 0.0);
            for (int i = 0; i < n; ++i) {
              if (node_of[i] != node) continue;
              hg[bin_of[j][i]] += g[i];
              hh[bin_of[j][i]] += h[i];
            }
            double gl = 0;
            double hl = 0;
            for (int b = 0; b + 1 < nb; ++b) {
              gl += hg[b];
              hl += hh[b];
              const double gr = gs[node] - gl;
              const double hr = hs[node] - hl;
              if (hl < kMinHessian || hr < kMinHessian) continue;
              const double gain = gl * gl / (hl + kLambda) + gr * gr / (hr + kLambda) - parent;
              if (gain > best_gain) {
                best_gain = gain;
                best_feat = j;
                best_bin = b;
              }
            }
          }
          if (best_feat < 0) continue;
          model.importance[best_feat] += best_gain;
          const int left = static_cast<int>(tree.size());
          tree[node].feature = best_feat;
          tree[node].threshold = cuts[best_feat][best_bin];
          tree[node].left = left;
          tree[node].right = left + 1;
          tree.push_back(Node{});
          tree.push_back(Node{});
          for (int i = 0; i < n; ++i) {
            if (node_of[i] == node) node_of[i] = bin_of[best_feat][i] <= best_bin ? left : left + 1;
          }
          next.push_back(left);
          next.push_back(left + 1);
        }
        frontier = std::move(next);
        if (frontier.empty()) break;
      }
      for (int i = 0; i < n; ++i) score[static_cast<std::size_t>(i) * classes + k] += tree[node_of[i]].value;
    }
    model.rounds.push_back(std::move(trees));
  }
  return model;
}

std::vector<int> BoostedTrees::predict(const Tensor<double>& x) const {
  const int n = x.dim(0);
  std::vector<int> out(n);
  std::vector<double> s(classes);
  for (int i = 0; i < n; ++i) {
    s = base_score;
    for (const auto& trees : rounds) {
      for (int k = 0; k < classes; ++k) {
        const Tree& t = trees[k];
        int node = 0;
        while (t[node].feature >= 0) node = x.at(i, t[node].feature) <= t[node].threshold ? t[node].left : t[node].right;
        s[k] += t[node].value;
      }
    }
    out[i] = static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
  }
  return out;
}

LogisticModel LogisticModel::fit(const Tensor<double>& x, std::span<const int> y, int classes) {
  constexpr int kIterations = 500;
  constexpr double kStep = 0.5;
  constexpr double kL2 = 1e-4;
  const int n = x.dim(0);
  const int nfeat = x.dim(1);
  LogisticModel m;
  m.mean.assign(nfeat, 0.0);
  m.scale.assign(nfeat, 1.0);
  const auto sd = column_std(x);
  for (int j = 0; j < nfeat; ++j) {
    for (int i = 0; i < n; ++i) m.mean[j] += x.at(i, j) / n;
    m.scale[j] = sd[j] > 1e-12 ? sd[j] : 1.0;
  }
  Tensor<double> xs({n, nfeat});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < nfeat; ++j) xs.at(i, j) = (x.at(i, j) - m.mean[j]) / m.scale[j];
  m.weights = Tensor<double>({classes, nfeat});
  m.bias.assign(classes, 0.0);
  std::vector<double> p(classes);
  for (int it = 0; it < kIterations; ++it) {
    Tensor<double> gw({classes, nfeat});
    std::vector<double> gb(classes, 0.0);
    for (int i = 0; i < n; ++i) {
      double mx = -1e300;
      for (int k = 0; k < classes; ++k) {
        double s = m.bias[k];
        for (int j = 0; j < nfeat; ++j) s += m.weights.at(k, j) * xs.at(i, j);
        p[k] = s;
        mx = std::max(mx, s);
      }
      double z = 0;
      for (int k = 0; k < classes; ++k) z += p[k] = std::exp(p[k] - mx);
      for (int k = 0; k < classes; ++k) {
        const double err = p[k] / z - (y[i] == k ? 1.0 : 0.0);
        gb[k] += err / n;
        for (int j = 0; j < nfeat; ++j) gw.at(k, j) += err * xs.at(i, j) / n;
      }
    }
    for (int k = 0; k < classes; ++k) {
      m.bias[k] -= kStep * gb[k];
      for (int j = 0; j < nfeat; ++j) m.weights.at(k, j) -= kStep * (gw.at(k, j) + kL2 * m.weights.at(k, j));
    }
  }
  return m;
}

std::vector<int> LogisticModel::predict(const Tensor<double>& x) const {
  const int classes = weights.dim(0);
  const int nfeat = weights.dim(1);
  std::vector<int> out(x.dim(0));
  for (int i = 0; i < x.dim(0); ++i) {
    int best = 0;
    double best_s = -1e300;
    for (int k = 0; k < classes; ++k) {
      double s = bias[k];
      for (int j = 0; j < nfeat; ++j) s += weights.at(k, j) * (x.at(i, j) - mean[j]) / scale[j];
      if (s > best_s) {
        best_s = s;
        best = k;
      }
    }
    out[i] = best;
  }
  return out;
}

std::vector<double> LogisticModel::importance() const {
  std::vector<double> imp(weights.dim(1), 0.0);
  for (int k = 0; k < weights.dim(0); ++k)
    for (int j = 0; j < weights.dim(1); ++j) imp[j] += std::abs(weights.at(k, j));
  return imp;
}

std::string MetricReport::to_text() const {
  std::string s;
  auto put = [&](const std::string& k, const std::string& v) { s += k + ": " + v + "\n"; };
  put("factorvae_score", kv::format_double(factorvae));
  put("mig", kv::format_double(mig));
  put("dci_disentanglement", kv::format_double(dci_disentanglement));
  put("dci_completeness", kv::format_double(dci_completeness));
  put("dci_informativeness", kv::format_double(dci_informativeness));
  put("seed", std::to_string(config.seed));
  put("global_samples", std::to_string(config.global_samples));
  put("train_votes", std::to_string(config.train_votes));
  put("eval_votes", std::to_string(config.eval_votes));
  put("batch_per_vote", std::to_string(config.batch_per_vote));
  put("prune_threshold", kv::format_double(config.prune_threshold));
  put("mig_samples", std::to_string(config.mig_samples));
  put("mig_bins", std::to_string(config.mig_bins));
  put("dci_train", std::to_string(config.dci_train));
  put("dci_test", std::to_string(config.dci_test));
  put("dci_predictor", config.dci_predictor == DciPredictor::kBoostedTrees ? "gbdt" : "logistic");
  for (const auto& w : warnings) put("warning", w);
  return s;
}

MetricReport evaluate(const GroundTruthDataset& ds, const RepresentationFn& rep, const EvalConfig& cfg) {
  MetricReport r;
  r.config = cfg;
  Rng fv_rng = make_stream(cfg.seed, kFactorVaeStream);
  const auto fv = factorvae_metric(ds, rep, cfg, fv_rng);
  r.factorvae = fv.score;
  if (!fv.warning.empty()) r.warnings.push_back(fv.warning);
  Rng mig_rng = make_stream(cfg.seed, kMigStream);
  r.mig = mig(ds, rep, cfg.mig_samples, cfg.mig_bins, mig_rng);
  Rng dci_rng = make_stream(cfg.seed, kDciStream);
  const auto d = dci(ds, rep, cfg, dci_rng);
  r.dci_disentanglement = d.disentanglement;
  r.dci_completeness = d.completeness;
  r.dci_informativeness = d.informativeness;
  return r;
}

}  // namespace protovae
