#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "raven/adam.hpp"
#include "raven/checkpoint.hpp"
#include "raven/config.hpp"
#include "raven/gm_inference.hpp"
#include "raven/metrics.hpp"
#include "raven/reasoner.hpp"

namespace raven {

// Stream ids under the config seed; every random draw of a run hangs off one
// of these.
namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t warm_start = 2;
inline constexpr std::uint64_t joint = 3;
inline constexpr std::uint64_t metrics = 4;
}  // namespace streams

struct Model {
  TrainConfig config;
  SpacePtr space;
  Vae vae;
  Reasoner reasoner;
  AdamState<float> main_opt;  // encoder, decoder, psi
  AdamState<float> disc_opt;
  ReferenceWindow window;
  std::uint64_t warm_steps_done = 0;
  std::uint64_t joint_steps_done = 0;
};

// Fresh parameters drawn from the config seed.
Model make_model(const TrainConfig& config);

struct StepLog {
  std::string phase;  // "warm_start" | "joint"
  std::uint64_t step = 0;
  double recon = 0;
  double kl = 0;
  double tc = 0;
  double ce = 0;
  double acc = 0;
  double vae_total = 0;
  double total = 0;  // vae_total + reasoner_weight * ce
  double disc_loss = 0;
};
nlohmann::json to_json(const StepLog& s);
using LogSink = std::function<void(const StepLog&)>;

// Trains the VAE alone on iid single images for config.warm_start_steps.
void warm_start(Model& model, const LogSink& log = {});
// One warm-start step; returns its log entry.
StepLog warm_start_step(Model& model);

// Trains VAE and reasoner end to end on freshly generated puzzles for
// config.joint_steps.
void train_joint(Model& model, const LogSink& log = {});
StepLog joint_step(Model& model);

// The encoder's posterior means for a set of assignments (renders each one).
CodeFn model_code_fn(const Model& model);
// Posteriors for the 14 panels of a puzzle under the model's encoder source.
LatentTensor encode_puzzle(const Model& model, const RpmInstance& puzzle);
// Active mask from the model's reference window, widened to at least l dims.
std::vector<bool> model_active_mask(const Model& model, const std::vector<std::vector<double>>& fallback_means);

struct PuzzleInference {
  std::vector<double> delta_kl;
  std::vector<bool> o_kn;
  std::vector<bool> o;
  int predicted = 0;
  int answer = 0;
};
nlohmann::json to_json(const PuzzleInference& p);

struct FactorBreakdown {
  std::string factor;
  std::size_t puzzles = 0;
  std::size_t correct = 0;
  double accuracy() const { return puzzles ? static_cast<double>(correct) / static_cast<double>(puzzles) : 0.0; }
};

struct ReasoningReport {
  double accuracy = 0;
  std::size_t puzzles = 0;
  std::size_t correct = 0;
  std::vector<FactorBreakdown> per_factor;  // grouped by rule factor
};
nlohmann::json to_json(const ReasoningReport& r);

// Scores n fresh puzzles drawn from `seed` (puzzle i uses stream i).
ReasoningReport evaluate_reasoning(const Model& model, std::size_t n, std::uint64_t seed,
                                   std::vector<PuzzleInference>* dump = nullptr);

Checkpoint to_checkpoint(const Model& model);
Model from_checkpoint(const Checkpoint& checkpoint);

// If popcount(o_kn) < l, adds the highest-variance inactive dims until l are active.
std::vector<bool> widen_active_mask(std::vector<bool> o_kn, const std::vector<double>& variances, std::size_t l);

}  // namespace raven
