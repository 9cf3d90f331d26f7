#include "raven/reasoner.hpp"

#include <cmath>
#include <stdexcept>

namespace raven {

MetaTensor build_meta(std::span<const std::vector<double>> context_means, std::span<const std::vector<double>> choice_means) {
  if (context_means.size() != kContextPanels || choice_means.size() != kChoices)
    throw std::invalid_argument("build_meta: need 8 context and 6 choice latents, got " +
                                std::to_string(context_means.size()) + " and " + std::to_string(choice_means.size()));
  const std::size_t D = context_means[0].size();
  for (const auto& v : context_means)
    if (v.size() != D) throw std::invalid_argument("build_meta: mixed latent dimensions");
  for (const auto& v : choice_means)
    if (v.size() != D) throw std::invalid_argument("build_meta: mixed latent dimensions");
  MetaTensor m;
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < kRows; ++c) m.rows[r][c] = context_means[r * kRows + c];
  for (std::size_t a = 0; a < kChoices; ++a) {
    m.rows[2 + a][0] = context_means[6];
    m.rows[2 + a][1] = context_means[7];
    m.rows[2 + a][2] = choice_means[a];
  }
  return m;
}

MetaTensor build_meta(const LatentTensor& latent) {
  std::vector<std::vector<double>> ctx, ch;
  for (const auto& p : latent.context) ctx.push_back(p.mean);
  for (const auto& p : latent.choices) ch.push_back(p.mean);
  return build_meta(ctx, ch);
}

std::vector<double> row_std(const std::array<std::vector<double>, kRows>& row) {
  const std::size_t D = row[0].size();
  std::vector<double> out(D);
  for (std::size_t k = 0; k < D; ++k) {
    const double base = row[0][k];
    double m = 0;
    for (const auto& v : row) m += v[k] - base;
    m /= kRows;
    double var = 0;
    for (const auto& v : row) var += (v[k] - base - m) * (v[k] - base - m);
    out[k] = std::sqrt(var / kRows);
  }
  return out;
}

std::array<std::vector<double>, kMetaRows> row_std(const MetaTensor& meta) {
  std::array<std::vector<double>, kMetaRows> out;
  for (std::size_t r = 0; r < kMetaRows; ++r) out[r] = row_std(meta.rows[r]);
  return out;
}

std::array<std::vector<double>, kChoices> candidate_features(const MetaTensor& meta) {
  const auto s = row_std(meta);
  std::array<std::vector<double>, kChoices> out;
  for (std::size_t a = 0; a < kChoices; ++a) {
    auto& f = out[a];
    f.insert(f.end(), s[0].begin(), s[0].end());
    f.insert(f.end(), s[1].begin(), s[1].end());
    f.insert(f.end(), s[2 + a].begin(), s[2 + a].end());
  }
  return out;
}

Reasoner::Reasoner(const ReasonerConfig& config, RngStream init_rng) : config_(config) {
  if (config_.latent_dim == 0 || config_.hidden == 0) throw std::invalid_argument("reasoner widths must be positive");
  psi_ = Network<float>("psi", {config_.input_width()},
                        {LayerSpec::dense(config_.hidden), LayerSpec::relu(), LayerSpec::dense(config_.hidden),
                         LayerSpec::relu(), LayerSpec::drop(config_.dropout), LayerSpec::dense(1)},
                        init_rng);
}

Var Reasoner::score(Tape<float>& tape, Var features, Mode mode, RngStream* rng) const {
  return psi_.forward(tape, features, mode, rng);
}

std::array<double, kChoices> Reasoner::score(const std::array<std::vector<double>, kChoices>& features) const {
  std::array<double, kChoices> out{};
  for (std::size_t a = 0; a < kChoices; ++a) {
    if (features[a].size() != config_.input_width())
      throw std::invalid_argument("reasoner: feature width " + std::to_string(features[a].size()) + ", expected " +
                                  std::to_string(config_.input_width()));
    Tensor<float> x({1, features[a].size()});
    for (std::size_t i = 0; i < features[a].size(); ++i) x[i] = static_cast<float>(features[a][i]);
    Tape<float> tape;
    out[a] = tape.value(score(tape, tape.constant(std::move(x)), Mode::eval))[0];
  }
  return out;
}

std::array<double, kChoices> Reasoner::score(const MetaTensor& meta) const { return score(candidate_features(meta)); }

int predict(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("predict: no logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<int>(best);
}

double reasoner_loss(std::span<const double> logits, int answer_index) {
  if (answer_index < 0 || static_cast<std::size_t>(answer_index) >= logits.size())
    throw std::invalid_argument("answer index " + std::to_string(answer_index) + " out of range");
  double mx = logits[0];
  for (const auto v : logits) mx = std::max(mx, v);
  double s = 0;
  for (const auto v : logits) s += std::exp(v - mx);
  return mx + std::log(s) - logits[static_cast<std::size_t>(answer_index)];
}

Var candidate_features(Tape<float>& tape, Var means, std::size_t puzzles) {
  const auto& mv = tape.value(means);
  if (mv.rank() != 2 || mv.shape[0] != puzzles * kPanelsPerPuzzle)
    throw std::invalid_argument("candidate_features: expected [" + std::to_string(puzzles * kPanelsPerPuzzle) +
                                ", D] means, got " + shape_str(mv.shape));
  // Lay out every meta row as three consecutive panel rows.
  std::vector<std::size_t> idx;
  idx.reserve(puzzles * kMetaRows * kRows);
  for (std::size_t b = 0; b < puzzles; ++b) {
    const std::size_t p0 = b * kPanelsPerPuzzle;
    for (std::size_t i = 0; i < 6; ++i) idx.push_back(p0 + i);
    for (std::size_t a = 0; a < kChoices; ++a) {
      idx.push_back(p0 + 6);
      idx.push_back(p0 + 7);
      idx.push_back(p0 + kContextPanels + a);
    }
  }
  const Var sigma = ops::group_std(tape, ops::gather_rows(tape, means, std::move(idx)), kRows);  // [B * 8, D]
  std::vector<std::size_t> r0, r1, rc;
  for (std::size_t b = 0; b < puzzles; ++b)
    for (std::size_t a = 0; a < kChoices; ++a) {
      r0.push_back(b * kMetaRows);
      r1.push_back(b * kMetaRows + 1);
      rc.push_back(b * kMetaRows + 2 + a);
    }
  return ops::concat_cols(tape, {ops::gather_rows(tape, sigma, std::move(r0)), ops::gather_rows(tape, sigma, std::move(r1)),
                                 ops::gather_rows(tape, sigma, std::move(rc))});
}

}  // namespace raven
