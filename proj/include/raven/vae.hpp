#pragma once

#include <span>
#include <string>
#include <vector>

#include "raven/network.hpp"
#include "raven/renderer.hpp"

namespace raven {

struct PosteriorGaussian {
  std::vector<double> mean;
  std::vector<double> log_var;

  std::size_t dim() const { return mean.size(); }
  friend bool operator==(const PosteriorGaussian&, const PosteriorGaussian&) = default;
};

enum class EncoderArch { dense, conv };
enum class TcEstimator { discriminator, minibatch };

struct VaeConfig {
  int image_size = 64;
  int channels = 1;
  std::size_t latent_dim = 10;  // K + N
  EncoderArch arch = EncoderArch::conv;
  std::size_t hidden = 256;
  std::size_t disc_width = 1000;
  int disc_layers = 6;
  TcEstimator tc_estimator = TcEstimator::discriminator;
};

// Encoder q(z'|x), Bernoulli decoder p(x|z) and the density-ratio
// discriminator used for the total-correlation term.
//
// conv encoder:  4x4 conv 32/32/64/64 (stride 2, pad 1, ReLU), FC hidden ReLU, FC 2*latent
// conv decoder:  FC hidden ReLU, FC 64*(S/16)^2 ReLU, 4x4 upconv 64/32/32/C (stride 2, pad 1)
// dense variant: two FC hidden ReLU layers each way
// discriminator: disc_layers x (FC disc_width, leaky ReLU 0.01), FC 2
class Vae {
 public:
  Vae() = default;
  Vae(const VaeConfig& config, RngStream init_rng);

  const VaeConfig& config() const { return config_; }
  Network<float>& encoder() { return encoder_; }
  Network<float>& decoder() { return decoder_; }
  Network<float>& discriminator() { return discriminator_; }
  const Network<float>& encoder() const { return encoder_; }
  const Network<float>& decoder() const { return decoder_; }
  const Network<float>& discriminator() const { return discriminator_; }

  struct Encoded {
    Var mean;
    Var log_var;
  };
  // images: [B, C, H, W]
  Encoded encode(Tape<float>& tape, Var images) const;
  // z: [B, latent] -> Bernoulli logits [B, C, H, W]
  Var decode(Tape<float>& tape, Var z) const;
  // z: [B, latent] -> [B, 2]; column 0 = "joint", column 1 = "dimension-permuted"
  Var discriminate(Tape<float>& tape, Var z) const;

  std::vector<PosteriorGaussian> encode(std::span<const Image> images) const;
  PosteriorGaussian encode(const Image& image) const;
  Tensor<float> decode(std::span<const double> z) const;

  // Encoder, decoder and the reasoner share one optimizer; the discriminator has its own.
  std::vector<Parameter<float>*> autoencoder_parameters();
  std::vector<Parameter<float>*> discriminator_parameters();

 private:
  void check_image(const Image& image) const;

  VaeConfig config_;
  Network<float> encoder_;
  Network<float> decoder_;
  Network<float> discriminator_;
};

// Stacks interleaved HWC images into a channel-first [B, C, H, W] tensor.
Tensor<float> images_to_tensor(std::span<const Image> images);

// z = mean + exp(log_var / 2) * noise
std::vector<double> reparameterize(const PosteriorGaussian& posterior, std::span<const double> noise);
// Per-dimension KL(q || N(0, 1)) = (mean^2 + var - log var - 1) / 2
std::vector<double> kl_to_prior(const PosteriorGaussian& posterior);
// Sum over pixels of log Bernoulli(target | sigmoid(logit)).
double bernoulli_log_likelihood(std::span<const float> logits, std::span<const float> target);

// Shuffles each column of z[B, D] independently across the batch.
Tensor<float> permute_dims(const Tensor<float>& z, RngStream& rng);

// TC estimate from discriminator logits: mean(logit_joint - logit_permuted).
Var tc_from_logits(Tape<float>& tape, Var logits);
// Discriminator objective on detached samples: cross-entropy with label 0 for
// z and label 1 for permute_dims(z). Returns the scalar loss node.
Var discriminator_loss(Tape<float>& tape, const Vae& vae, const Tensor<float>& z, RngStream& rng);

struct LossWeights {
  double lambda1 = 1.0;  // KL weight
  double lambda2 = 0.0;  // TC weight (gamma)
};

struct LossTerms {
  double reconstruction = 0;           // mean per-panel log-likelihood (<= 0)
  std::vector<double> kl_per_dim;      // mean per panel
  double kl_rule = 0;                  // partition Z_o
  double kl_free = 0;                  // partition Z_o-bar (active, not rule)
  double kl_nuisance = 0;              // partition Z_n
  double tc = 0;
  double total = 0;  // -reconstruction + lambda1 * sum(kl) + lambda2 * tc
  double lambda1 = 1;
  double lambda2 = 0;

  double kl_total() const;
};

// Rule (o) and active (o_kn) dimension masks for one row of three panels.
struct RowMask {
  std::vector<bool> rule;
  std::vector<bool> active;
};

struct VaeLossInputs {
  Var mean;                     // raw Z' means [P, D]; P = 3 * rows when masks are given
  Var log_var;                  // [P, D]
  const Tensor<float>* targets = nullptr;  // [P, C, H, W]
  std::span<const RowMask> row_masks;      // empty: no factor consistency
  const Tensor<float>* noise = nullptr;    // [P, D] standard normal draws
  std::vector<std::size_t> recon_subset;   // panels whose reconstruction counts; empty = all
};

struct VaeLoss {
  LossTerms terms;
  Var total;
  Var z;            // reparameterized samples of the consistent posterior
  Var mean_hat;     // consistent means
};

VaeLoss vae_loss(Tape<float>& tape, const Vae& vae, const VaeLossInputs& in, const LossWeights& weights);

}  // namespace raven
