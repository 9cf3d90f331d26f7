#pragma once

#include <array>
#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "raven/puzzle.hpp"
#include "raven/vae.hpp"

namespace raven {

enum class LatentStage { raw, consistent };

// Posteriors for one puzzle: the 8 context panels (row-major, cell (2,2)
// missing) followed by the 6 choices.
struct LatentTensor {
  std::array<PosteriorGaussian, kContextPanels> context;
  std::array<PosteriorGaussian, kChoices> choices;
  LatentStage stage = LatentStage::raw;

  std::size_t dim() const { return context[0].dim(); }
  // Context cell (row, col); (2, 2) is not a context cell.
  const PosteriorGaussian& at(int row, int col) const;
  PosteriorGaussian& at(int row, int col);
};

inline constexpr std::size_t kPanelsPerPuzzle = kContextPanels + kChoices;

// Packs 14 per-panel posteriors (8 context then 6 choices); checks that every
// posterior shares one dimension.
LatentTensor latent_from_posteriors(std::vector<PosteriorGaussian> panels);
// Encodes the 14 panels independently.
LatentTensor infer_z_prime(const Vae& vae, std::span<const Image> panels);

struct AttributeMasks {
  std::vector<bool> o_kn;  // active (non-nuisance) dims
  std::vector<bool> o;     // rule dims
  std::size_t l = 0;

  std::size_t dim() const { return o_kn.size(); }
};
// Throws std::invalid_argument unless o is contained in o_kn and popcount(o) == l.
void check_masks(const AttributeMasks& masks);
std::size_t popcount(const std::vector<bool>& bits);

inline constexpr double kDefaultActiveThreshold = 0.05;
inline constexpr std::size_t kMinReferenceBatch = 32;

std::vector<bool> active_mask_from_variances(std::span<const double> variances, double epsilon);
// Population variance per dim of the posterior means in the reference batch.
std::vector<double> mean_variances(std::span<const std::vector<double>> means);
std::vector<bool> infer_active_mask(std::span<const std::vector<double>> means, double epsilon = kDefaultActiveThreshold);

// Most recent `capacity` panel posterior means, the population for the o_kn
// variance during training.
class ReferenceWindow {
 public:
  explicit ReferenceWindow(std::size_t capacity = 1024) : capacity_(capacity) {}
  void push(std::vector<double> mean);
  std::size_t size() const { return means_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<std::vector<double>>& means() const { return means_; }
  std::vector<double> variances() const;
  std::vector<bool> active_mask(double epsilon = kDefaultActiveThreshold) const;

 private:
  std::size_t capacity_;
  std::deque<std::vector<double>> means_;
};

struct DivergenceProfile {
  std::vector<double> delta_kl;
};

// KL(N(m1, exp(lv1)) || N(m2, exp(lv2))) for univariate Gaussians.
double gaussian_kl(double m1, double lv1, double m2, double lv2);

// delta_kl(k) = 1/M^3 * sum over rows i and column pairs (j, m) of
// KL(q(z_ij^k) || q(z_im^k)). Rows may hold fewer than M panels (the third
// context row has two); the normalization stays 1/M^3.
DivergenceProfile delta_kl(std::span<const std::vector<PosteriorGaussian>> rows);
// Context rows only: rows 1-2 in full, row 3's two known panels.
DivergenceProfile context_delta_kl(const LatentTensor& latent);

struct RuleInference {
  std::vector<bool> o;
  DivergenceProfile profile;
};
// The l active dims with the lowest delta_kl; ties go to the lower index.
RuleInference select_rule_dims(const DivergenceProfile& profile, const std::vector<bool>& o_kn, std::size_t l);
RuleInference infer_rule_mask(const LatentTensor& latent, const std::vector<bool>& o_kn, std::size_t l);

// Replaces each context row's rule-dim means by the row average (only the
// available panels in the third row). Log-variances, non-rule dims and the
// choices pass through.
LatentTensor factor_consistency(const LatentTensor& latent, const AttributeMasks& masks);

// Differentiable batch form over means[B * 14, D] (8 context panels then 6
// choices per puzzle); rule_masks holds one o per puzzle.
Var factor_consistency(Tape<float>& tape, Var means, const std::vector<std::vector<bool>>& rule_masks);

enum class DimSource { rule_average, active_passthrough, nuisance_passthrough };
// Which branch of the masked composition sources each output dim.
std::vector<DimSource> dimension_sources(const AttributeMasks& masks);

}  // namespace raven
