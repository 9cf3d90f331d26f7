#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "raven/adam.hpp"
#include "raven/factor_space.hpp"
#include "raven/vae.hpp"

namespace raven {

enum class ReconScope { all, answer };
enum class EncoderSource { vae, oracle };
// Latents behind the reasoner's meta tensor: raw Z' or the consistency-averaged estimate.
enum class MetaSource { raw, consistent };

// Field names mirror the JSON config file.
struct TrainConfig {
  nlohmann::json space = {{"preset", "toy2"}};
  std::size_t rule_count = 1;  // l
  int image_size = 16;
  std::size_t latent_dim = 10;  // K + N
  EncoderArch arch = EncoderArch::dense;
  std::size_t hidden = 256;
  std::size_t disc_width = 1000;
  int disc_layers = 6;
  TcEstimator tc_estimator = TcEstimator::discriminator;
  double lambda1 = 1.0;
  double gamma = 10.0;  // TC weight
  double epsilon = 0.05;
  std::size_t batch_size = 64;    // single images per warm-start step
  std::size_t puzzle_batch = 8;   // puzzles per joint step
  double learning_rate = 1e-4;
  double disc_learning_rate = 1e-5;
  AdamConfig adam;
  std::size_t warm_start_steps = 2000;
  std::size_t joint_steps = 20000;
  double reasoner_weight = 1.0;
  std::size_t reasoner_hidden = 512;
  double reasoner_dropout = 0.5;
  std::uint64_t seed = 1;
  ReconScope recon_scope = ReconScope::all;
  EncoderSource encoder = EncoderSource::vae;
  MetaSource meta_source = MetaSource::raw;
  std::size_t reference_window = 1024;
  std::size_t log_every = 100;

  // Throws std::invalid_argument naming the first bad field.
  void validate() const;
  FactorSpace factor_space() const { return space_from_json(space); }
  VaeConfig vae_config() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Missing fields keep their defaults; unknown fields are rejected.
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config(const std::filesystem::path& path);

}  // namespace raven
