#pragma once

#include "raven/gm_inference.hpp"
#include "raven/reasoner.hpp"

namespace raven {

inline constexpr double kOracleFactorLogVar = -4.0;

// Perfectly disentangled code: factor k's index mapped linearly onto [-1, 1]
// in dim k, then `nuisance_dims` zeros. Log-variance -4 on factor dims, 0 on
// nuisance dims.
PosteriorGaussian oracle_encode(const FactorSpace& space, const FactorAssignment& a, std::size_t nuisance_dims);
LatentTensor oracle_latents(const RpmInstance& instance, std::size_t nuisance_dims);
LatentTensor oracle_latents(const FactorSpace& space, const PublicPuzzle& puzzle, std::size_t nuisance_dims);

// Factors constant in both complete context rows; the unique choice keeping
// all of them constant in row 3. Throws std::runtime_error when zero or
// several choices qualify.
int brute_force_solve(const PublicPuzzle& puzzle);

// Candidate with the smallest summed row std over the rule dims; ties go to
// the lowest index.
int variance_rule_solve(const MetaTensor& meta, const std::vector<bool>& o);

}  // namespace raven
