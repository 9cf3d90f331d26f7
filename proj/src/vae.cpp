#include "raven/vae.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace raven {

namespace {

std::vector<LayerSpec> encoder_layers(const VaeConfig& c) {
  const auto S = static_cast<std::size_t>(c.image_size);
  const auto C = static_cast<std::size_t>(c.channels);
  if (c.arch == EncoderArch::conv) {
    const std::size_t f = S / 16;
    return {LayerSpec::conv(32),         LayerSpec::relu(), LayerSpec::conv(32), LayerSpec::relu(),
            LayerSpec::conv(64),         LayerSpec::relu(), LayerSpec::conv(64), LayerSpec::relu(),
            LayerSpec::reshape({64 * f * f}), LayerSpec::dense(c.hidden), LayerSpec::relu(),
            LayerSpec::dense(2 * c.latent_dim)};
  }
  return {LayerSpec::reshape({C * S * S}), LayerSpec::dense(c.hidden), LayerSpec::relu(),
          LayerSpec::dense(c.hidden),      LayerSpec::relu(),          LayerSpec::dense(2 * c.latent_dim)};
}

std::vector<LayerSpec> decoder_layers(const VaeConfig& c) {
  const auto S = static_cast<std::size_t>(c.image_size);
  const auto C = static_cast<std::size_t>(c.channels);
  if (c.arch == EncoderArch::conv) {
    const std::size_t f = S / 16;
    return {LayerSpec::dense(c.hidden),     LayerSpec::relu(),    LayerSpec::dense(64 * f * f), LayerSpec::relu(),
            LayerSpec::reshape({64, f, f}), LayerSpec::upconv(64), LayerSpec::relu(),           LayerSpec::upconv(32),
            LayerSpec::relu(),              LayerSpec::upconv(32), LayerSpec::relu(),           LayerSpec::upconv(C)};
  }
  return {LayerSpec::dense(c.hidden), LayerSpec::relu(), LayerSpec::dense(c.hidden), LayerSpec::relu(),
          LayerSpec::dense(C * S * S), LayerSpec::reshape({C, S, S})};
}

std::vector<LayerSpec> discriminator_layers(const VaeConfig& c) {
  std::vector<LayerSpec> out;
  for (int i = 0; i < c.disc_layers; ++i) {
    out.push_back(LayerSpec::dense(c.disc_width));
    out.push_back(LayerSpec::leaky(0.01));
  }
  out.push_back(LayerSpec::dense(2));
  return out;
}

}  // namespace

double LossTerms::kl_total() const {
  double s = 0;
  for (const auto v : kl_per_dim) s += v;
  return s;
}

Vae::Vae(const VaeConfig& config, RngStream init_rng) : config_(config) {
  if (config_.image_size % 16 != 0 && config_.arch == EncoderArch::conv)
    throw std::invalid_argument("conv encoder needs an image size divisible by 16");
  if (config_.latent_dim == 0) throw std::invalid_argument("latent_dim must be positive");
  const auto S = static_cast<std::size_t>(config_.image_size);
  const auto C = static_cast<std::size_t>(config_.channels);
  encoder_ = Network<float>("encoder", {C, S, S}, encoder_layers(config_), init_rng.substream(1));
  decoder_ = Network<float>("decoder", {config_.latent_dim}, decoder_layers(config_), init_rng.substream(2));
  discriminator_ =
      Network<float>("discriminator", {config_.latent_dim}, discriminator_layers(config_), init_rng.substream(3));
}

Vae::Encoded Vae::encode(Tape<float>& tape, Var images) const {
  const Var h = encoder_.forward(tape, images, Mode::eval);
  const auto L = config_.latent_dim;
  return {ops::slice_cols(tape, h, 0, L), ops::slice_cols(tape, h, L, 2 * L)};
}

Var Vae::decode(Tape<float>& tape, Var z) const { return decoder_.forward(tape, z, Mode::eval); }

Var Vae::discriminate(Tape<float>& tape, Var z) const { return discriminator_.forward(tape, z, Mode::eval); }

void Vae::check_image(const Image& image) const {
  if (image.width != config_.image_size || image.height != config_.image_size || image.channels != config_.channels)
    throw std::invalid_argument("image " + std::to_string(image.width) + "x" + std::to_string(image.height) + "x" +
                                std::to_string(image.channels) + " does not match encoder input " +
                                std::to_string(config_.image_size) + "x" + std::to_string(config_.image_size) + "x" +
                                std::to_string(config_.channels));
}

std::vector<PosteriorGaussian> Vae::encode(std::span<const Image> images) const {
  for (const auto& img : images) check_image(img);
  if (images.empty()) return {};
  Tape<float> tape;
  const auto enc = encode(tape, tape.constant(images_to_tensor(images)));
  const auto& m = tape.value(enc.mean);
  const auto& lv = tape.value(enc.log_var);
  const auto L = config_.latent_dim;
  std::vector<PosteriorGaussian> out(images.size());
  for (std::size_t b = 0; b < images.size(); ++b) {
    out[b].mean.assign(m.ptr() + b * L, m.ptr() + (b + 1) * L);
    out[b].log_var.assign(lv.ptr() + b * L, lv.ptr() + (b + 1) * L);
  }
  return out;
}

PosteriorGaussian Vae::encode(const Image& image) const { return encode(std::span<const Image>(&image, 1)).front(); }

Tensor<float> Vae::decode(std::span<const double> z) const {
  if (z.size() != config_.latent_dim)
    throw std::invalid_argument("decode: latent has " + std::to_string(z.size()) + " dims, expected " +
                                std::to_string(config_.latent_dim));
  Tape<float> tape;
  Tensor<float> zt({1, z.size()});
  for (std::size_t i = 0; i < z.size(); ++i) zt[i] = static_cast<float>(z[i]);
  return tape.value(decode(tape, tape.constant(std::move(zt))));
}

std::vector<Parameter<float>*> Vae::autoencoder_parameters() {
  std::vector<Parameter<float>*> out;
  for (auto& p : encoder_.parameters()) out.push_back(&p);
  for (auto& p : decoder_.parameters()) out.push_back(&p);
  return out;
}

std::vector<Parameter<float>*> Vae::discriminator_parameters() {
  std::vector<Parameter<float>*> out;
  for (auto& p : discriminator_.parameters()) out.push_back(&p);
  return out;
}

Tensor<float> images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
  const auto& f = images.front();
  const std::size_t C = static_cast<std::size_t>(f.channels), H = static_cast<std::size_t>(f.height),
                    W = static_cast<std::size_t>(f.width);
  Tensor<float> out({images.size(), C, H, W});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const auto& img = images[b];
    if (img.channels != f.channels || img.width != f.width || img.height != f.height)
      throw std::invalid_argument("images_to_tensor: mixed image shapes");
    float* dst = out.ptr() + b * C * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < C; ++c) dst[(c * H + y) * W + x] = img.data[(y * W + x) * C + c];
  }
  return out;
}

std::vector<double> reparameterize(const PosteriorGaussian& posterior, std::span<const double> noise) {
  if (noise.size() != posterior.dim()) throw std::invalid_argument("reparameterize: noise length mismatch");
  std::vector<double> z(posterior.dim());
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = posterior.mean[i] + std::exp(0.5 * posterior.log_var[i]) * noise[i];
  return z;
}

std::vector<double> kl_to_prior(const PosteriorGaussian& posterior) {
  std::vector<double> kl(posterior.dim());
  for (std::size_t i = 0; i < kl.size(); ++i) {
    const double m = posterior.mean[i], lv = posterior.log_var[i];
    kl[i] = 0.5 * (m * m + std::exp(lv) - lv - 1.0);
  }
  return kl;
}

double bernoulli_log_likelihood(std::span<const float> logits, std::span<const float> target) {
  if (logits.size() != target.size()) throw std::invalid_argument("bernoulli_log_likelihood: size mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double l = logits[i];
    acc += target[i] * l - (std::max(l, 0.0) + std::log1p(std::exp(-std::abs(l))));
  }
  return acc;
}

Tensor<float> permute_dims(const Tensor<float>& z, RngStream& rng) {
  if (z.rank() != 2) throw std::invalid_argument("permute_dims: expected [B, D]");
  const std::size_t B = z.shape[0], D = z.shape[1];
  Tensor<float> out(z.shape);
  std::vector<std::size_t> perm(B);
  for (std::size_t d = 0; d < D; ++d) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t b = 0; b < B; ++b) out(b, d) = z(perm[b], d);
  }
  return out;
}

Var tc_from_logits(Tape<float>& tape, Var logits) {
  const auto& v = tape.value(logits);
  if (v.rank() != 2 || v.shape[1] != 2) throw std::invalid_argument("tc_from_logits: expected [B, 2] logits");
  if (v.shape[0] < 2) throw std::invalid_argument("TC estimate needs a batch of at least 2");
  return ops::mean(tape, ops::sub(tape, ops::slice_cols(tape, logits, 0, 1), ops::slice_cols(tape, logits, 1, 2)));
}

Var discriminator_loss(Tape<float>& tape, const Vae& vae, const Tensor<float>& z, RngStream& rng) {
  if (z.rank() != 2 || z.shape[0] < 2) throw std::invalid_argument("discriminator_loss: batch of at least 2 needed");
  const std::size_t B = z.shape[0];
  const Var joint = vae.discriminate(tape, tape.constant(z));
  const Var perm = vae.discriminate(tape, tape.constant(permute_dims(z, rng)));
  const std::vector<int> zeros(B, 0), ones(B, 1);
  const Var l0 = ops::mean(tape, ops::softmax_cross_entropy(tape, joint, std::span<const int>(zeros)));
  const Var l1 = ops::mean(tape, ops::softmax_cross_entropy(tape, perm, std::span<const int>(ones)));
  return ops::scale(tape, ops::add(tape, l0, l1), 0.5f);
}

VaeLoss vae_loss(Tape<float>& tape, const Vae& vae, const VaeLossInputs& in, const LossWeights& weights) {
  const auto& mean_v = tape.value(in.mean);
  if (mean_v.rank() != 2 || tape.value(in.log_var).shape != mean_v.shape)
    throw std::invalid_argument("vae_loss: mean/log_var must be matching [P, D]");
  const std::size_t P = mean_v.shape[0], D = mean_v.shape[1];
  if (D != vae.config().latent_dim) throw std::invalid_argument("vae_loss: latent width mismatch");
  if (!in.targets || in.targets->numel() == 0 || in.targets->shape[0] != P)
    throw std::invalid_argument("vae_loss: need one target image per panel");
  if (!in.noise || in.noise->numel() != P * D) throw std::invalid_argument("vae_loss: noise shape mismatch");

  std::vector<std::vector<bool>> group_rule;
  if (!in.row_masks.empty()) {
    if (P != 3 * in.row_masks.size())
      throw std::invalid_argument("vae_loss: " + std::to_string(in.row_masks.size()) + " row masks for " +
                                  std::to_string(P) + " panels");
    for (const auto& m : in.row_masks) {
      if (m.rule.size() != D || m.active.size() != D)
        throw std::invalid_argument("vae_loss: mask/latent dimension mismatch");
      group_rule.push_back(m.rule);
    }
  }

  VaeLoss out;
  out.mean_hat = group_rule.empty() ? in.mean : ops::group_mean_select(tape, in.mean, 3, group_rule);
  const Var kl_el = ops::gaussian_kl(tape, out.mean_hat, in.log_var);
  const Var kl = ops::scale(tape, ops::sum(tape, kl_el), 1.0f / static_cast<float>(P));
  out.z = ops::reparameterize(tape, out.mean_hat, in.log_var, *in.noise);

  Var recon_z = out.z;
  const Tensor<float>* targets = in.targets;
  Tensor<float> subset_targets;
  if (!in.recon_subset.empty()) {
    recon_z = ops::gather_rows(tape, out.z, in.recon_subset);
    const std::size_t per = in.targets->numel() / P;
    Shape s = in.targets->shape;
    s[0] = in.recon_subset.size();
    subset_targets = Tensor<float>(s);
    for (std::size_t i = 0; i < in.recon_subset.size(); ++i)
      std::copy_n(in.targets->ptr() + in.recon_subset[i] * per, per, subset_targets.ptr() + i * per);
    targets = &subset_targets;
  }
  const Var logits = vae.decode(tape, recon_z);
  const Var recon = ops::mean(tape, ops::bernoulli_log_likelihood(tape, logits, *targets));

  Var tc;
  if (vae.config().tc_estimator == TcEstimator::discriminator)
    tc = tc_from_logits(tape, vae.discriminate(tape, out.z));
  else
    tc = ops::minibatch_total_correlation(tape, out.z, out.mean_hat, in.log_var);

  const Var neg_recon = ops::scale(tape, recon, -1.0f);
  Var total = ops::add(tape, neg_recon, ops::scale(tape, kl, static_cast<float>(weights.lambda1)));
  total = ops::add(tape, total, ops::scale(tape, tc, static_cast<float>(weights.lambda2)));
  out.total = total;

  auto& t = out.terms;
  t.lambda1 = weights.lambda1;
  t.lambda2 = weights.lambda2;
  t.reconstruction = tape.value(recon)[0];
  t.tc = tape.value(tc)[0];
  t.total = tape.value(total)[0];
  const auto& klv = tape.value(kl_el);
  t.kl_per_dim.assign(D, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t d = 0; d < D; ++d) {
      const double v = klv(p, d) / static_cast<double>(P);
      t.kl_per_dim[d] += v;
      if (group_rule.empty()) {
        t.kl_free += v;
        continue;
      }
      const auto& m = in.row_masks[p / 3];
      if (!m.active[d])
        t.kl_nuisance += v;
      else if (m.rule[d])
        t.kl_rule += v;
      else
        t.kl_free += v;
    }
  }
  if (!std::isfinite(t.total))
    throw std::runtime_error("vae_loss: non-finite loss (recon=" + std::to_string(t.reconstruction) +
                             ", kl=" + std::to_string(t.kl_total()) + ", tc=" + std::to_string(t.tc) + ")");
  return out;
}

}  // namespace raven
