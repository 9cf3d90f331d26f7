#include "raven/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace raven {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> column_variances(const std::vector<std::vector<double>>& codes) {
  const std::size_t n = codes.size(), D = codes[0].size();
  std::vector<double> mu(D, 0.0), var(D, 0.0);
  for (const auto& c : codes)
    for (std::size_t d = 0; d < D; ++d) mu[d] += c[d];
  for (auto& m : mu) m /= static_cast<double>(n);
  for (const auto& c : codes)
    for (std::size_t d = 0; d < D; ++d) var[d] += (c[d] - mu[d]) * (c[d] - mu[d]);
  for (auto& v : var) v /= static_cast<double>(n);
  return var;
}

void check_codes(const std::vector<std::vector<double>>& codes, std::size_t expected) {
  if (codes.size() != expected)
    throw std::runtime_error("encoder returned " + std::to_string(codes.size()) + " codes for " +
                             std::to_string(expected) + " inputs");
  for (const auto& c : codes)
    if (c.size() != codes[0].size()) throw std::runtime_error("encoder returned codes of mixed width");
}

void check_probe(const ProbeSet& probe, const FactorSpace& space) {
  if (probe.codes.empty() || probe.codes.size() != probe.factors.size())
    throw std::invalid_argument("probe set: codes and factors must be non-empty and equally long");
  for (const auto& f : probe.factors)
    if (f.size() != space.num_factors()) throw std::invalid_argument("probe set: factor width mismatch");
  for (const auto& c : probe.codes)
    if (c.size() != probe.codes[0].size()) throw std::invalid_argument("probe set: code width mismatch");
}

std::vector<double> column(const std::vector<std::vector<double>>& m, std::size_t d) {
  std::vector<double> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i][d];
  return out;
}

std::vector<int> factor_column(const ProbeSet& p, std::size_t k) {
  std::vector<int> out(p.factors.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p.factors[i][k];
  return out;
}

double gap_of(std::vector<double> scores) {
  std::sort(scores.begin(), scores.end(), std::greater<>());
  return scores.size() > 1 ? scores[0] - scores[1] : scores[0];
}

double soft_threshold(double x, double t) { return x > t ? x - t : (x < -t ? x + t : 0.0); }

// Minimizes w'Gw/2 - c'w + lambda |w|_1 by cyclic coordinate descent, warm
// started from w.
void lasso_cd(const std::vector<double>& G, const std::vector<double>& c, double lambda, std::vector<double>& w) {
  const std::size_t D = c.size();
  for (int sweep = 0; sweep < 10000; ++sweep) {
    double delta = 0;
    for (std::size_t j = 0; j < D; ++j) {
      const double gjj = G[j * D + j];
      if (gjj <= 0) {
        w[j] = 0;
        continue;
      }
      double r = c[j];
      for (std::size_t i = 0; i < D; ++i)
        if (i != j) r -= G[j * D + i] * w[i];
      const double nw = soft_threshold(r, lambda) / gjj;
      delta = std::max(delta, std::abs(nw - w[j]));
      w[j] = nw;
    }
    if (delta < 1e-13) break;
  }
}

struct Moments {
  std::vector<double> G;  // X'X / n
  std::vector<double> c;  // X'y / n
  double yy = 0;          // y'y / n
  double n = 0;
};

Moments moments(const std::vector<std::vector<double>>& X, const std::vector<double>& y, std::size_t begin,
                std::size_t end) {
  const std::size_t D = X[0].size();
  Moments m{std::vector<double>(D * D, 0.0), std::vector<double>(D, 0.0), 0.0, static_cast<double>(end - begin)};
  for (std::size_t s = begin; s < end; ++s) {
    const auto& x = X[s];
    for (std::size_t i = 0; i < D; ++i) {
      m.c[i] += x[i] * y[s];
      for (std::size_t j = 0; j < D; ++j) m.G[i * D + j] += x[i] * x[j];
    }
    m.yy += y[s] * y[s];
  }
  return m;
}

void normalize(Moments& m) {
  for (auto& v : m.G) v /= m.n;
  for (auto& v : m.c) v /= m.n;
  m.yy /= m.n;
}

// Standardized codes with columns in a canonical (lexicographic) order, so the
// result does not depend on how the code dims were permuted.
struct Standardized {
  std::vector<std::vector<double>> X;  // n x D, canonical column order
  std::vector<std::size_t> order;      // canonical position -> original dim
};

Standardized standardize(const std::vector<std::vector<double>>& codes) {
  const std::size_t n = codes.size(), D = codes[0].size();
  std::vector<std::vector<double>> cols(D);
  for (std::size_t d = 0; d < D; ++d) {
    auto col = column(codes, d);
    const double mu = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(n);
    double var = 0;
    for (const auto v : col) var += (v - mu) * (v - mu);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (auto& v : col) v = sd > 0 ? (v - mu) / sd : 0.0;
    cols[d] = std::move(col);
  }
  Standardized s;
  s.order.resize(D);
  std::iota(s.order.begin(), s.order.end(), std::size_t{0});
  std::stable_sort(s.order.begin(), s.order.end(), [&](std::size_t a, std::size_t b) { return cols[a] < cols[b]; });
  s.X.assign(n, std::vector<double>(D));
  for (std::size_t p = 0; p < D; ++p)
    for (std::size_t i = 0; i < n; ++i) s.X[i][p] = cols[s.order[p]][i];
  return s;
}

// Importances in canonical column order.
std::vector<std::vector<double>> canonical_importance(const Standardized& s, const ProbeSet& probe,
                                                      const FactorSpace& space, int folds) {
  const std::size_t n = s.X.size(), D = s.X[0].size(), K = space.num_factors();
  if (folds < 2 || n < static_cast<std::size_t>(folds)) throw std::invalid_argument("lasso: too few samples for CV");
  std::vector<std::vector<double>> R(D, std::vector<double>(K, 0.0));
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = probe.factors[i][k];
    const double mu = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double var = 0;
    for (const auto v : y) var += (v - mu) * (v - mu);
    const double sd = std::sqrt(var / static_cast<double>(n));
    if (sd == 0) continue;
    for (auto& v : y) v = (v - mu) / sd;

    Moments total = moments(s.X, y, 0, n);
    std::vector<Moments> held, train;
    for (int f = 0; f < folds; ++f) {
      const std::size_t b = n * static_cast<std::size_t>(f) / static_cast<std::size_t>(folds);
      const std::size_t e = n * static_cast<std::size_t>(f + 1) / static_cast<std::size_t>(folds);
      Moments h = moments(s.X, y, b, e);
      Moments t{total.G, total.c, total.yy - h.yy, total.n - h.n};
      for (std::size_t i = 0; i < t.G.size(); ++i) t.G[i] -= h.G[i];
      for (std::size_t i = 0; i < t.c.size(); ++i) t.c[i] -= h.c[i];
      normalize(h);
      normalize(t);
      held.push_back(std::move(h));
      train.push_back(std::move(t));
    }
    normalize(total);

    double lambda_max = 0;
    for (const auto v : total.c) lambda_max = std::max(lambda_max, std::abs(v));
    constexpr int kGrid = 20;
    std::vector<double> grid(kGrid);
    for (int g = 0; g < kGrid; ++g) grid[static_cast<std::size_t>(g)] = lambda_max * std::pow(1e-3, g / (kGrid - 1.0));

    std::vector<double> cv(kGrid, 0.0);
    for (int f = 0; f < folds; ++f) {
      std::vector<double> w(D, 0.0);
      const auto& t = train[static_cast<std::size_t>(f)];
      const auto& h = held[static_cast<std::size_t>(f)];
      for (int g = 0; g < kGrid; ++g) {
        lasso_cd(t.G, t.c, grid[static_cast<std::size_t>(g)], w);
        double mse = h.yy;
        for (std::size_t i = 0; i < D; ++i) {
          mse -= 2 * w[i] * h.c[i];
          for (std::size_t j = 0; j < D; ++j) mse += w[i] * h.G[i * D + j] * w[j];
        }
        cv[static_cast<std::size_t>(g)] += mse;
      }
    }
    const auto best = static_cast<std::size_t>(std::min_element(cv.begin(), cv.end()) - cv.begin());
    std::vector<double> w(D, 0.0);
    for (std::size_t g = 0; g <= best; ++g) lasso_cd(total.G, total.c, grid[g], w);
    for (std::size_t d = 0; d < D; ++d) R[d][k] = std::abs(w[d]);
  }
  return R;
}

}  // namespace

ProbeSet sample_probe(const FactorSpace& space, const CodeFn& encode, std::size_t n, RngStream rng) {
  ProbeSet p;
  p.factors.reserve(n);
  for (std::size_t i = 0; i < n; ++i) p.factors.push_back(sample_assignment(space, rng));
  p.codes = encode(p.factors);
  check_codes(p.codes, n);
  return p;
}

FactorVaeResult factor_vae_score(const FactorSpace& space, const CodeFn& encode, RngStream rng,
                                 const FactorVaeConfig& config) {
  const std::size_t K = space.num_factors();
  RngStream global_rng = rng.substream(1), vote_rng = rng.substream(2);
  std::vector<FactorAssignment> global;
  for (std::size_t i = 0; i < config.global_samples; ++i) global.push_back(sample_assignment(space, global_rng));
  const auto global_codes = encode(global);
  check_codes(global_codes, global.size());
  const auto global_var = column_variances(global_codes);
  const std::size_t D = global_var.size();
  std::vector<bool> kept(D);
  for (std::size_t d = 0; d < D; ++d) kept[d] = global_var[d] >= config.prune_threshold;
  // A fully collapsed code carries nothing to vote with.
  if (std::none_of(kept.begin(), kept.end(), [](bool b) { return b; }))
    return {0.0, std::vector<int>(D, -1), std::vector<double>(K, 0.0)};

  const std::size_t total_votes = config.train_votes + config.eval_votes;
  std::vector<std::pair<std::size_t, std::size_t>> votes;  // (dim, factor)
  std::vector<FactorAssignment> batch(config.batch);
  for (std::size_t v = 0; v < total_votes; ++v) {
    const auto k = static_cast<std::size_t>(vote_rng.uniform_index(K));
    const int value = static_cast<int>(vote_rng.uniform_index(static_cast<std::uint64_t>(space.factor(k).cardinality)));
    for (auto& a : batch) {
      a = sample_assignment(space, vote_rng);
      a[k] = value;
    }
    const auto codes = encode(batch);
    check_codes(codes, batch.size());
    const auto var = column_variances(codes);
    std::size_t best = D;
    double best_v = 0;
    for (std::size_t d = 0; d < D; ++d) {
      if (!kept[d]) continue;
      const double r = var[d] / global_var[d];
      if (best == D || r < best_v) {
        best = d;
        best_v = r;
      }
    }
    votes.emplace_back(best, k);
  }

  std::vector<std::vector<std::size_t>> counts(D, std::vector<std::size_t>(K, 0));
  for (std::size_t v = 0; v < config.train_votes; ++v) ++counts[votes[v].first][votes[v].second];
  FactorVaeResult out;
  out.dim_to_factor.assign(D, -1);
  for (std::size_t d = 0; d < D; ++d) {
    if (!kept[d]) continue;
    out.dim_to_factor[d] =
        static_cast<int>(std::max_element(counts[d].begin(), counts[d].end()) - counts[d].begin());
  }
  std::size_t correct = 0;
  std::vector<double> hit(K, 0.0), seen(K, 0.0);
  for (std::size_t v = config.train_votes; v < total_votes; ++v) {
    const auto [d, k] = votes[v];
    const bool ok = out.dim_to_factor[d] == static_cast<int>(k);
    correct += ok;
    hit[k] += ok;
    seen[k] += 1;
  }
  out.score = config.eval_votes ? static_cast<double>(correct) / static_cast<double>(config.eval_votes) : 0.0;
  for (std::size_t k = 0; k < K; ++k) out.per_factor_accuracy.push_back(seen[k] > 0 ? hit[k] / seen[k] : kNaN);
  return out;
}

std::vector<int> quantile_bins(std::span<const double> values, int bins) {
  if (bins < 1) throw std::invalid_argument("quantile_bins: bins must be positive");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  std::vector<double> edges;
  for (int i = 1; i < bins; ++i) edges.push_back(sorted[std::min(n - 1, n * static_cast<std::size_t>(i) / static_cast<std::size_t>(bins))]);
  std::vector<int> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), values[i]) - edges.begin());
  return out;
}

double discrete_entropy(std::span<const int> a) {
  std::map<int, double> p;
  for (const auto v : a) p[v] += 1;
  double h = 0;
  const double n = static_cast<double>(a.size());
  for (const auto& [v, c] : p) h -= c / n * std::log(c / n);
  return h;
}

double discrete_mutual_information(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("mutual information: length mismatch");
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1;
    pb[b[i]] += 1;
    pab[{a[i], b[i]}] += 1;
  }
  const double n = static_cast<double>(a.size());
  double mi = 0;
  for (const auto& [ab, c] : pab) mi += c / n * std::log(c * n / (pa[ab.first] * pb[ab.second]));
  return std::max(mi, 0.0);
}

GapResult mig(const ProbeSet& probe, const FactorSpace& space, int bins) {
  check_probe(probe, space);
  const std::size_t D = probe.codes[0].size(), K = space.num_factors();
  std::vector<std::vector<int>> binned(D);
  for (std::size_t d = 0; d < D; ++d) binned[d] = quantile_bins(column(probe.codes, d), bins);
  GapResult out;
  double sum = 0;
  std::size_t scored = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto f = factor_column(probe, k);
    const double h = discrete_entropy(f);
    if (h <= 0) {
      out.per_factor.push_back(kNaN);
      continue;
    }
    std::vector<double> mi(D);
    for (std::size_t d = 0; d < D; ++d) mi[d] = discrete_mutual_information(binned[d], f);
    const double g = std::clamp(gap_of(mi) / h, 0.0, 1.0);
    out.per_factor.push_back(g);
    sum += g;
    ++scored;
  }
  if (scored == 0) throw std::invalid_argument("mig: every factor is constant in the probe set");
  out.score = sum / static_cast<double>(scored);
  return out;
}

GapResult sap(const ProbeSet& probe, const FactorSpace& space) {
  check_probe(probe, space);
  const std::size_t n = probe.codes.size(), D = probe.codes[0].size(), K = space.num_factors();
  std::vector<std::vector<double>> centered(D);
  std::vector<double> var(D);
  for (std::size_t d = 0; d < D; ++d) {
    auto col = column(probe.codes, d);
    const double mu = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(n);
    double v = 0;
    for (auto& x : col) {
      x -= mu;
      v += x * x;
    }
    var[d] = v;
    centered[d] = std::move(col);
  }
  GapResult out;
  double sum = 0;
  std::size_t scored = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const double c = space.factor(k).cardinality - 1;
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = probe.factors[i][k] / c;
    const double mu = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double vy = 0;
    for (auto& v : y) {
      v -= mu;
      vy += v * v;
    }
    if (vy <= 0) {
      out.per_factor.push_back(kNaN);
      continue;
    }
    std::vector<double> r2(D, 0.0);
    for (std::size_t d = 0; d < D; ++d) {
      if (var[d] <= 0) continue;
      double cov = 0;
      for (std::size_t i = 0; i < n; ++i) cov += centered[d][i] * y[i];
      r2[d] = std::clamp(cov * cov / (var[d] * vy), 0.0, 1.0);
    }
    const double g = gap_of(r2);
    out.per_factor.push_back(g);
    sum += g;
    ++scored;
  }
  if (scored == 0) throw std::invalid_argument("sap: every factor is constant in the probe set");
  out.score = sum / static_cast<double>(scored);
  return out;
}

double dci_disentanglement(const std::vector<std::vector<double>>& importance) {
  if (importance.empty()) throw std::invalid_argument("dci: empty importance matrix");
  const std::size_t K = importance[0].size();
  double grand = 0;
  for (const auto& row : importance) {
    if (row.size() != K) throw std::invalid_argument("dci: ragged importance matrix");
    for (const auto v : row) {
      if (v < 0) throw std::invalid_argument("dci: negative importance");
      grand += v;
    }
  }
  if (grand <= 0) return 0.0;
  const double logK = std::log(static_cast<double>(K));
  double score = 0;
  for (const auto& row : importance) {
    const double total = std::accumulate(row.begin(), row.end(), 0.0);
    if (total <= 0) continue;
    double h = 0;
    for (const auto v : row)
      if (v > 0) h -= v / total * std::log(v / total);
    const double d = K > 1 ? std::clamp(1.0 - h / logK, 0.0, 1.0) : 1.0;
    score += total / grand * d;
  }
  return std::clamp(score, 0.0, 1.0);
}

std::vector<std::vector<double>> lasso_importance(const ProbeSet& probe, const FactorSpace& space, int folds) {
  check_probe(probe, space);
  const auto s = standardize(probe.codes);
  const auto R = canonical_importance(s, probe, space, folds);
  std::vector<std::vector<double>> out(R.size());
  for (std::size_t p = 0; p < R.size(); ++p) out[s.order[p]] = R[p];
  return out;
}

double dci_d(const ProbeSet& probe, const FactorSpace& space) {
  check_probe(probe, space);
  const auto s = standardize(probe.codes);
  return dci_disentanglement(canonical_importance(s, probe, space, 5));
}

MetricReport evaluate_metrics(const FactorSpace& space, const CodeFn& encode, RngStream rng, std::size_t probe_size,
                              const FactorVaeConfig& fvae) {
  MetricReport r;
  for (const auto& f : space.factors()) r.factor_names.push_back(f.name);
  const auto fv = factor_vae_score(space, encode, rng.substream(1), fvae);
  r.factor_vae = fv.score;
  r.factor_vae_per_factor = fv.per_factor_accuracy;
  const auto probe = sample_probe(space, encode, probe_size, rng.substream(2));
  r.probe_size = probe_size;
  const auto m = mig(probe, space);
  r.mig = m.score;
  r.mig_per_factor = m.per_factor;
  const auto s = sap(probe, space);
  r.sap = s.score;
  r.sap_per_factor = s.per_factor;
  r.dci_d = dci_d(probe, space);
  return r;
}

nlohmann::json to_json(const MetricReport& r) {
  auto per = [&](const std::vector<double>& v) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t k = 0; k < r.factor_names.size() && k < v.size(); ++k)
      j[r.factor_names[k]] = std::isnan(v[k]) ? nlohmann::json(nullptr) : nlohmann::json(v[k]);
    return j;
  };
  return {{"factor_vae", r.factor_vae},
          {"dci_d", r.dci_d},
          {"mig", r.mig},
          {"sap", r.sap},
          {"probe_size", r.probe_size},
          {"per_factor", {{"factor_vae", per(r.factor_vae_per_factor)}, {"mig", per(r.mig_per_factor)}, {"sap", per(r.sap_per_factor)}}}};
}

std::string metric_table(const MetricReport& r) {
  std::ostringstream os;
  os << fmt::format("{:>8} {:>8} {:>8} {:>8}\n", "F-VAE", "DCI-D", "MIG", "SAP");
  os << fmt::format("{:>8.4f} {:>8.4f} {:>8.4f} {:>8.4f}\n", r.factor_vae, r.dci_d, r.mig, r.sap);
  return os.str();
}

}  // namespace raven
