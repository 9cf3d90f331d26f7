#include "raven/oracle.hpp"

#include <stdexcept>

namespace raven {

PosteriorGaussian oracle_encode(const FactorSpace& space, const FactorAssignment& a, std::size_t nuisance_dims) {
  space.check(a);
  const std::size_t K = space.num_factors();
  PosteriorGaussian p{std::vector<double>(K + nuisance_dims, 0.0), std::vector<double>(K + nuisance_dims, 0.0)};
  for (std::size_t k = 0; k < K; ++k) {
    const int c = space.factor(k).cardinality;
    p.mean[k] = -1.0 + 2.0 * a[k] / (c - 1);
    p.log_var[k] = kOracleFactorLogVar;
  }
  return p;
}

LatentTensor oracle_latents(const FactorSpace& space, const PublicPuzzle& puzzle, std::size_t nuisance_dims) {
  LatentTensor out;
  for (std::size_t i = 0; i < kContextPanels; ++i) out.context[i] = oracle_encode(space, puzzle.context[i], nuisance_dims);
  for (std::size_t i = 0; i < kChoices; ++i) out.choices[i] = oracle_encode(space, puzzle.choices[i], nuisance_dims);
  return out;
}

LatentTensor oracle_latents(const RpmInstance& instance, std::size_t nuisance_dims) {
  return oracle_latents(*instance.space, public_view(instance), nuisance_dims);
}

int brute_force_solve(const PublicPuzzle& puzzle) {
  const auto& ctx = puzzle.context;
  const std::size_t K = ctx[0].size();
  std::vector<std::size_t> constant;
  for (std::size_t k = 0; k < K; ++k) {
    bool ok = true;
    for (std::size_t r = 0; r < 2 && ok; ++r)
      ok = ctx[r * 3][k] == ctx[r * 3 + 1][k] && ctx[r * 3][k] == ctx[r * 3 + 2][k];
    if (ok) constant.push_back(k);
  }
  int found = -1;
  for (std::size_t a = 0; a < kChoices; ++a) {
    bool ok = true;
    for (const auto k : constant)
      ok = ok && ctx[6][k] == ctx[7][k] && ctx[6][k] == puzzle.choices[a][k];
    if (!ok) continue;
    if (found >= 0)
      throw std::runtime_error("ambiguous puzzle: choices " + std::to_string(found) + " and " + std::to_string(a) +
                               " both complete the rows");
    found = static_cast<int>(a);
  }
  if (found < 0) throw std::runtime_error("no choice completes the rows");
  return found;
}

int variance_rule_solve(const MetaTensor& meta, const std::vector<bool>& o) {
  if (o.size() != meta.dim()) throw std::invalid_argument("rule mask length differs from latent dimension");
  if (popcount(o) == 0) throw std::invalid_argument("empty rule mask");
  std::array<double, kChoices> cost{};
  for (std::size_t a = 0; a < kChoices; ++a) {
    const auto s = row_std(meta.rows[2 + a]);
    for (std::size_t k = 0; k < o.size(); ++k)
      if (o[k]) cost[a] += s[k];
  }
  std::size_t best = 0;
  for (std::size_t a = 1; a < kChoices; ++a)
    if (cost[a] < cost[best]) best = a;
  return static_cast<int>(best);
}

}  // namespace raven
