#include "raven/gm_inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace raven {

namespace {

std::size_t context_slot(int row, int col) {
  if (row < 0 || row >= kRows || col < 0 || col >= kRows || (row == kRows - 1 && col == kRows - 1))
    throw std::out_of_range("context cell (" + std::to_string(row) + ", " + std::to_string(col) + ")");
  return static_cast<std::size_t>(row * kRows + col);
}

}  // namespace

const PosteriorGaussian& LatentTensor::at(int row, int col) const { return context[context_slot(row, col)]; }
PosteriorGaussian& LatentTensor::at(int row, int col) { return context[context_slot(row, col)]; }

LatentTensor latent_from_posteriors(std::vector<PosteriorGaussian> panels) {
  if (panels.size() != kPanelsPerPuzzle)
    throw std::invalid_argument("expected " + std::to_string(kPanelsPerPuzzle) + " panels (8 context + 6 choices), got " +
                                std::to_string(panels.size()));
  const std::size_t D = panels[0].dim();
  for (std::size_t i = 0; i < panels.size(); ++i)
    if (panels[i].dim() != D || panels[i].log_var.size() != D)
      throw std::invalid_argument("panel " + std::to_string(i) + " posterior has mismatched dimension");
  LatentTensor out;
  for (std::size_t i = 0; i < kContextPanels; ++i) out.context[i] = std::move(panels[i]);
  for (std::size_t i = 0; i < kChoices; ++i) out.choices[i] = std::move(panels[kContextPanels + i]);
  return out;
}

LatentTensor infer_z_prime(const Vae& vae, std::span<const Image> panels) {
  if (panels.size() != kPanelsPerPuzzle)
    throw std::invalid_argument("expected " + std::to_string(kPanelsPerPuzzle) + " panels, got " +
                                std::to_string(panels.size()));
  return latent_from_posteriors(vae.encode(panels));
}

std::size_t popcount(const std::vector<bool>& bits) {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true));
}

void check_masks(const AttributeMasks& m) {
  if (m.o.size() != m.o_kn.size()) throw std::invalid_argument("o and o_kn differ in length");
  for (std::size_t k = 0; k < m.o.size(); ++k)
    if (m.o[k] && !m.o_kn[k]) throw std::invalid_argument("rule dim " + std::to_string(k) + " is not active");
  if (popcount(m.o) != m.l)
    throw std::invalid_argument("rule mask selects " + std::to_string(popcount(m.o)) + " dims, expected l = " +
                                std::to_string(m.l));
}

std::vector<bool> active_mask_from_variances(std::span<const double> variances, double epsilon) {
  if (!(epsilon > 0)) throw std::invalid_argument("active threshold must be positive");
  std::vector<bool> out(variances.size());
  for (std::size_t k = 0; k < variances.size(); ++k) out[k] = variances[k] > epsilon;
  return out;
}

std::vector<double> mean_variances(std::span<const std::vector<double>> means) {
  if (means.empty()) throw std::invalid_argument("empty reference batch");
  const std::size_t D = means[0].size();
  std::vector<double> mu(D, 0.0), var(D, 0.0);
  for (const auto& m : means) {
    if (m.size() != D) throw std::invalid_argument("reference batch has mixed dimensions");
    for (std::size_t k = 0; k < D; ++k) mu[k] += m[k];
  }
  const double n = static_cast<double>(means.size());
  for (auto& v : mu) v /= n;
  for (const auto& m : means)
    for (std::size_t k = 0; k < D; ++k) var[k] += (m[k] - mu[k]) * (m[k] - mu[k]);
  for (auto& v : var) v /= n;
  return var;
}

std::vector<bool> infer_active_mask(std::span<const std::vector<double>> means, double epsilon) {
  if (means.empty()) throw std::invalid_argument("empty reference batch");
  if (means.size() < kMinReferenceBatch)
    throw std::invalid_argument("reference batch of " + std::to_string(means.size()) + " means; need at least " +
                                std::to_string(kMinReferenceBatch));
  const auto var = mean_variances(means);
  return active_mask_from_variances(var, epsilon);
}

void ReferenceWindow::push(std::vector<double> mean) {
  if (!means_.empty() && mean.size() != means_.front().size())
    throw std::invalid_argument("reference window: dimension changed");
  means_.push_back(std::move(mean));
  while (means_.size() > capacity_) means_.pop_front();
}

std::vector<double> ReferenceWindow::variances() const {
  const std::vector<std::vector<double>> v(means_.begin(), means_.end());
  return mean_variances(v);
}

std::vector<bool> ReferenceWindow::active_mask(double epsilon) const {
  const std::vector<std::vector<double>> v(means_.begin(), means_.end());
  return infer_active_mask(v, epsilon);
}

double gaussian_kl(double m1, double lv1, double m2, double lv2) {
  const double d = m1 - m2;
  return 0.5 * (lv2 - lv1 + std::exp(lv1 - lv2) + d * d * std::exp(-lv2) - 1.0);
}

DivergenceProfile delta_kl(std::span<const std::vector<PosteriorGaussian>> rows) {
  if (rows.empty() || rows[0].empty()) throw std::invalid_argument("delta_kl: no panels");
  const std::size_t D = rows[0][0].dim();
  DivergenceProfile p{std::vector<double>(D, 0.0)};
  for (const auto& row : rows) {
    for (const auto& a : row) {
      if (a.dim() != D) throw std::invalid_argument("delta_kl: mixed dimensions");
      for (const auto& b : row)
        for (std::size_t k = 0; k < D; ++k) p.delta_kl[k] += gaussian_kl(a.mean[k], a.log_var[k], b.mean[k], b.log_var[k]);
    }
  }
  const double norm = static_cast<double>(kRows) * kRows * kRows;
  for (auto& v : p.delta_kl) v /= norm;
  return p;
}

DivergenceProfile context_delta_kl(const LatentTensor& latent) {
  std::vector<std::vector<PosteriorGaussian>> rows(kRows);
  for (int r = 0; r < kRows; ++r)
    for (int c = 0; c < kRows; ++c)
      if (r < kRows - 1 || c < kRows - 1) rows[static_cast<std::size_t>(r)].push_back(latent.at(r, c));
  return delta_kl(rows);
}

RuleInference select_rule_dims(const DivergenceProfile& profile, const std::vector<bool>& o_kn, std::size_t l) {
  const std::size_t D = profile.delta_kl.size();
  if (o_kn.size() != D) throw std::invalid_argument("active mask length differs from latent dimension");
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < D; ++k)
    if (o_kn[k]) active.push_back(k);
  if (l > active.size())
    throw std::invalid_argument("l = " + std::to_string(l) + " exceeds the " + std::to_string(active.size()) +
                                " active dims");
  std::stable_sort(active.begin(), active.end(),
                   [&](std::size_t a, std::size_t b) { return profile.delta_kl[a] < profile.delta_kl[b]; });
  RuleInference out{std::vector<bool>(D, false), profile};
  for (std::size_t i = 0; i < l; ++i) out.o[active[i]] = true;
  return out;
}

RuleInference infer_rule_mask(const LatentTensor& latent, const std::vector<bool>& o_kn, std::size_t l) {
  return select_rule_dims(context_delta_kl(latent), o_kn, l);
}

LatentTensor factor_consistency(const LatentTensor& latent, const AttributeMasks& masks) {
  if (latent.stage == LatentStage::consistent) throw std::invalid_argument("latent is already consistent");
  check_masks(masks);
  if (masks.dim() != latent.dim()) throw std::invalid_argument("mask length differs from latent dimension");
  LatentTensor out = latent;
  out.stage = LatentStage::consistent;
  for (int r = 0; r < kRows; ++r) {
    const int cols = r < kRows - 1 ? kRows : kRows - 1;
    for (std::size_t k = 0; k < masks.dim(); ++k) {
      if (!masks.o[k]) continue;
      // Offset from the first panel so that an already-constant row is reproduced exactly.
      const double base = latent.at(r, 0).mean[k];
      double s = 0;
      for (int c = 0; c < cols; ++c) s += latent.at(r, c).mean[k] - base;
      const double avg = base + s / cols;
      for (int c = 0; c < cols; ++c) out.at(r, c).mean[k] = avg;
    }
  }
  return out;
}

Var factor_consistency(Tape<float>& tape, Var means, const std::vector<std::vector<bool>>& rule_masks) {
  const std::size_t B = rule_masks.size();
  if (tape.value(means).rank() != 2 || tape.value(means).shape[0] != B * kPanelsPerPuzzle)
    throw std::invalid_argument("factor_consistency: means must be [B * 14, D]");
  std::vector<std::size_t> full, partial, choices;
  std::vector<std::vector<bool>> full_masks, partial_masks;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t p0 = b * kPanelsPerPuzzle;
    for (std::size_t i = 0; i < 6; ++i) full.push_back(p0 + i);
    partial.insert(partial.end(), {p0 + 6, p0 + 7});
    for (std::size_t a = 0; a < kChoices; ++a) choices.push_back(p0 + kContextPanels + a);
    full_masks.insert(full_masks.end(), {rule_masks[b], rule_masks[b]});
    partial_masks.push_back(rule_masks[b]);
  }
  const Var stacked = ops::concat_rows(
      tape, {ops::group_mean_select(tape, ops::gather_rows(tape, means, full), kRows, full_masks),
             ops::group_mean_select(tape, ops::gather_rows(tape, means, partial), kRows - 1, partial_masks),
             ops::gather_rows(tape, means, choices)});
  // Back to per-puzzle panel order.
  std::vector<std::size_t> order;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < 6; ++i) order.push_back(6 * b + i);
    order.insert(order.end(), {6 * B + 2 * b, 6 * B + 2 * b + 1});
    for (std::size_t a = 0; a < kChoices; ++a) order.push_back(8 * B + kChoices * b + a);
  }
  return ops::gather_rows(tape, stacked, order);
}

std::vector<DimSource> dimension_sources(const AttributeMasks& masks) {
  check_masks(masks);
  std::vector<DimSource> out(masks.dim());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = masks.o[k] ? DimSource::rule_average
                        : (masks.o_kn[k] ? DimSource::active_passthrough : DimSource::nuisance_passthrough);
  return out;
}

}  // namespace raven
