#pragma once

#include <array>
#include <span>
#include <vector>

#include "raven/gm_inference.hpp"

namespace raven {

inline constexpr std::size_t kMetaRows = kRows + kChoices - 1;  // 8

// Rows 0-1: the first two context rows. Row 2 + c: the third context row
// completed with choice c. Each row holds M latent mean vectors.
struct MetaTensor {
  std::array<std::array<std::vector<double>, kRows>, kMetaRows> rows;
  std::size_t dim() const { return rows[0][0].size(); }
};

MetaTensor build_meta(std::span<const std::vector<double>> context_means, std::span<const std::vector<double>> choice_means);
// From posterior means of the latent tensor (raw or consistent).
MetaTensor build_meta(const LatentTensor& latent);

// Population standard deviation over the M vectors of one row.
std::vector<double> row_std(const std::array<std::vector<double>, kRows>& row);
std::array<std::vector<double>, kMetaRows> row_std(const MetaTensor& meta);

// Candidate c: concat(sigma(row 0), sigma(row 1), sigma(row 2 + c)).
std::array<std::vector<double>, kChoices> candidate_features(const MetaTensor& meta);

struct ReasonerConfig {
  std::size_t latent_dim = 10;
  std::size_t hidden = 512;
  double dropout = 0.5;

  std::size_t input_width() const { return kRows * latent_dim; }
};

// psi: FC hidden ReLU, FC hidden ReLU, dropout, FC 1. Shared across candidates.
class Reasoner {
 public:
  Reasoner() = default;
  Reasoner(const ReasonerConfig& config, RngStream init_rng);

  const ReasonerConfig& config() const { return config_; }
  Network<float>& network() { return psi_; }
  const Network<float>& network() const { return psi_; }

  // features: [B, 3D] -> logits [B, 1]. rng needed only in train mode.
  Var score(Tape<float>& tape, Var features, Mode mode, RngStream* rng = nullptr) const;
  // Eval-mode logits. Each candidate is scored on its own, so permuting the
  // candidates permutes the logits bit for bit.
  std::array<double, kChoices> score(const std::array<std::vector<double>, kChoices>& features) const;
  std::array<double, kChoices> score(const MetaTensor& meta) const;

 private:
  ReasonerConfig config_;
  Network<float> psi_;
};

// argmax; ties go to the lowest index.
int predict(std::span<const double> logits);
// -log softmax(logits)[answer]
double reasoner_loss(std::span<const double> logits, int answer_index);

// Differentiable features for a batch of puzzles. `means` is [B * 14, D] in
// the per-puzzle order 8 context panels then 6 choices. Returns [B * 6, 3D],
// candidates of puzzle b at rows 6b .. 6b + 5.
Var candidate_features(Tape<float>& tape, Var means, std::size_t puzzles);

}  // namespace raven
