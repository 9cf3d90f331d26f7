#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "raven/factor_space.hpp"

namespace raven {

// Maps ground-truth assignments to representation vectors (posterior means).
using CodeFn = std::function<std::vector<std::vector<double>>(std::span<const FactorAssignment>)>;

struct ProbeSet {
  std::vector<std::vector<double>> codes;   // n x D
  std::vector<FactorAssignment> factors;    // n x K
};

// n iid uniform assignments and their codes.
ProbeSet sample_probe(const FactorSpace& space, const CodeFn& encode, std::size_t n, RngStream rng);

struct FactorVaeConfig {
  std::size_t batch = 64;
  std::size_t train_votes = 800;
  std::size_t eval_votes = 200;
  double prune_threshold = 0.05;
  std::size_t global_samples = 10000;  // population for the per-dim global variance
};

struct FactorVaeResult {
  double score = 0;
  std::vector<int> dim_to_factor;        // majority vote per dim, -1 if pruned
  std::vector<double> per_factor_accuracy;
};

FactorVaeResult factor_vae_score(const FactorSpace& space, const CodeFn& encode, RngStream rng,
                                 const FactorVaeConfig& config = {});

struct GapResult {
  double score = 0;                 // mean over scored factors
  std::vector<double> per_factor;   // NaN for excluded (constant) factors
};

// Mutual information gap, codes binned into per-dim quantile bins.
GapResult mig(const ProbeSet& probe, const FactorSpace& space, int bins = 20);
// Gap between the two largest R^2 of 1-D regressions of each factor on each dim.
GapResult sap(const ProbeSet& probe, const FactorSpace& space);

// Disentanglement from an importance matrix R[d][k] >= 0.
double dci_disentanglement(const std::vector<std::vector<double>>& importance);
// Importance = |weights| of per-factor Lasso predictors on standardized codes.
std::vector<std::vector<double>> lasso_importance(const ProbeSet& probe, const FactorSpace& space, int folds = 5);
double dci_d(const ProbeSet& probe, const FactorSpace& space);

// Per-dim quantile bin index; equal values always share a bin.
std::vector<int> quantile_bins(std::span<const double> values, int bins);
double discrete_mutual_information(std::span<const int> a, std::span<const int> b);
double discrete_entropy(std::span<const int> a);

struct MetricReport {
  double factor_vae = 0;
  double mig = 0;
  double sap = 0;
  double dci_d = 0;
  std::vector<std::string> factor_names;
  std::vector<double> factor_vae_per_factor;
  std::vector<double> mig_per_factor;
  std::vector<double> sap_per_factor;
  std::size_t probe_size = 0;
};

MetricReport evaluate_metrics(const FactorSpace& space, const CodeFn& encode, RngStream rng,
                              std::size_t probe_size = 10000, const FactorVaeConfig& fvae = {});
nlohmann::json to_json(const MetricReport& report);
// Columns F-VAE, DCI, MIG, SAP.
std::string metric_table(const MetricReport& report);

}  // namespace raven
