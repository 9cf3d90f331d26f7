#include <catch_amalgamated.hpp>

#include <cmath>

#include "raven/adam.hpp"
#include "raven/renderer.hpp"
#include "raven/vae.hpp"

using namespace raven;

namespace {

VaeConfig small_config(TcEstimator tc = TcEstimator::discriminator) {
  VaeConfig c;
  c.image_size = 16;
  c.channels = 3;
  c.latent_dim = 4;
  c.arch = EncoderArch::dense;
  c.hidden = 32;
  c.disc_width = 32;
  c.disc_layers = 2;
  c.tc_estimator = tc;
  return c;
}

std::vector<Image> toy2_images(std::size_t n, RngStream& r) {
  const auto s = build_space("toy2");
  std::vector<Image> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(render(s, sample_assignment(s, r), 16));
  return out;
}

Tensor<float> normals(Shape s, RngStream& r) {
  Tensor<float> t(std::move(s));
  for (auto& v : t.data) v = static_cast<float>(r.normal());
  return t;
}

double train_discriminator(Vae& vae, const std::function<Tensor<float>(RngStream&)>& draw, int steps, RngStream& r) {
  AdamState<float> opt;
  auto params = vae.discriminator_parameters();
  for (int i = 0; i < steps; ++i) {
    for (auto* p : params) p->zero_grad();
    Tape<float> t;
    const auto loss = discriminator_loss(t, vae, draw(r), r);
    t.backward(loss);
    adam_step<float>(params, opt, 1e-3);
  }
  Tape<float> t;
  return t.value(tc_from_logits(t, vae.discriminate(t, t.constant(draw(r)))))[0];
}

}  // namespace

TEST_CASE("both architectures map images to posteriors and back") {
  for (const auto arch : {EncoderArch::dense, EncoderArch::conv}) {
    auto c = small_config();
    c.arch = arch;
    const Vae vae(c, RngStream(1, 0));
    RngStream r(2, 0);
    const auto imgs = toy2_images(3, r);
    const auto post = vae.encode(imgs);
    REQUIRE(post.size() == 3);
    CHECK(post[0].dim() == 4);
    const auto logits = vae.decode(post[0].mean);
    CHECK(logits.shape == Shape{1, 3, 16, 16});
  }
}

TEST_CASE("encoding is a pure per-image map") {
  const Vae vae(small_config(), RngStream(1, 0));
  RngStream r(3, 0);
  const auto imgs = toy2_images(5, r);
  const auto batch = vae.encode(imgs);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const auto single = vae.encode(imgs[i]);
    for (std::size_t d = 0; d < 4; ++d) {
      CHECK(single.mean[d] == Catch::Approx(batch[i].mean[d]).margin(1e-6));
      CHECK(single.log_var[d] == Catch::Approx(batch[i].log_var[d]).margin(1e-6));
    }
  }
  CHECK_THROWS_AS(vae.encode(render(build_space("toy2"), {{0, 0}}, 32)), std::invalid_argument);
}

TEST_CASE("images are stacked channel-first") {
  Image img(2, 1, 3, 0.0f);
  img.at(1, 0, 2) = 0.75f;
  const std::vector<Image> v{img};
  const auto t = images_to_tensor(v);
  CHECK(t.shape == Shape{1, 3, 1, 2});
  CHECK(t[2 * 2 + 1] == 0.75f);
}

TEST_CASE("scalar helpers") {
  const PosteriorGaussian p{{1.0, 0.0}, {0.0, std::log(4.0)}};
  const auto kl = kl_to_prior(p);
  CHECK(kl[0] == Catch::Approx(0.5));
  CHECK(kl[1] == Catch::Approx(0.5 * (4 - std::log(4.0) - 1)));
  const std::vector<double> noise{1.0, -1.0};
  const auto z = reparameterize(p, noise);
  CHECK(z[0] == Catch::Approx(2.0));
  CHECK(z[1] == Catch::Approx(-2.0));
  const std::vector<float> logits(10, 0.0f), target(10, 1.0f);
  CHECK(bernoulli_log_likelihood(logits, target) == Catch::Approx(-10 * std::log(2.0)));
}

TEST_CASE("loss decomposes into its weighted terms") {
  for (const auto tc : {TcEstimator::discriminator, TcEstimator::minibatch}) {
    const Vae vae(small_config(tc), RngStream(1, 0));
    RngStream r(4, 0);
    const auto imgs = toy2_images(6, r);
    const auto x = images_to_tensor(imgs);
    const auto noise = normals({6, 4}, r);
    Tape<float> t;
    const auto enc = vae.encode(t, t.constant(x));
    const std::vector<RowMask> masks(2, RowMask{{true, false, false, false}, {true, true, true, false}});
    VaeLossInputs in;
    in.mean = enc.mean;
    in.log_var = enc.log_var;
    in.targets = &x;
    in.row_masks = masks;
    in.noise = &noise;
    const auto loss = vae_loss(t, vae, in, {1.5, 3.0});
    const auto& tr = loss.terms;
    CHECK(tr.total == Catch::Approx(-tr.reconstruction + 1.5 * tr.kl_total() + 3.0 * tr.tc).epsilon(1e-5));
    CHECK(tr.kl_rule + tr.kl_free + tr.kl_nuisance == Catch::Approx(tr.kl_total()).epsilon(1e-9));
    CHECK(tr.reconstruction < 0);
    // rule dim 0 is averaged within each row of three; other dims pass through
    const auto& mh = t.value(loss.mean_hat);
    const auto& m = t.value(enc.mean);
    for (std::size_t row = 0; row < 2; ++row) {
      CHECK(mh(3 * row, 0) == mh(3 * row + 1, 0));
      CHECK(mh(3 * row, 0) == mh(3 * row + 2, 0));
      CHECK(mh(3 * row, 0) == Catch::Approx((m(3 * row, 0) + m(3 * row + 1, 0) + m(3 * row + 2, 0)) / 3));
      for (std::size_t d = 1; d < 4; ++d) CHECK(mh(3 * row + 1, d) == m(3 * row + 1, d));
    }
  }
}

TEST_CASE("loss input validation") {
  const Vae vae(small_config(), RngStream(1, 0));
  RngStream r(5, 0);
  const auto x = images_to_tensor(toy2_images(4, r));
  const auto noise = normals({4, 4}, r);
  Tape<float> t;
  const auto enc = vae.encode(t, t.constant(x));
  const std::vector<RowMask> masks(1, RowMask{{true, false, false, false}, {true, true, true, true}});
  VaeLossInputs in;
  in.mean = enc.mean;
  in.log_var = enc.log_var;
  in.targets = &x;
  in.noise = &noise;
  in.row_masks = masks;
  CHECK_THROWS_AS(vae_loss(t, vae, in, {}), std::invalid_argument);  // 4 panels, 1 row mask
  const std::vector<RowMask> narrow(1, RowMask{{true}, {true}});
  in.row_masks = {};
  const auto bad_noise = normals({4, 3}, r);
  in.noise = &bad_noise;
  CHECK_THROWS_AS(vae_loss(t, vae, in, {}), std::invalid_argument);
}

TEST_CASE("reconstruction can be restricted to a subset of panels") {
  const Vae vae(small_config(), RngStream(1, 0));
  RngStream r(6, 0);
  const auto x = images_to_tensor(toy2_images(3, r));
  const auto noise = normals({3, 4}, r);
  Tape<float> t;
  const auto enc = vae.encode(t, t.constant(x));
  VaeLossInputs in;
  in.mean = enc.mean;
  in.log_var = enc.log_var;
  in.targets = &x;
  in.noise = &noise;
  const auto all = vae_loss(t, vae, in, {});
  in.recon_subset = {2};
  const auto one = vae_loss(t, vae, in, {});
  const auto& logits = t.value(vae.decode(t, ops::gather_rows(t, all.z, {2})));
  const std::size_t per = x.numel() / 3;
  const double expected = bernoulli_log_likelihood(std::span<const float>(logits.data),
                                                   std::span<const float>(x.data).subspan(2 * per, per));
  CHECK(one.terms.reconstruction == Catch::Approx(expected).epsilon(1e-5));
}

TEST_CASE("zeroed discriminator output layer estimates zero TC") {
  Vae vae(small_config(), RngStream(1, 0));
  auto params = vae.discriminator_parameters();
  for (auto* p : {params[params.size() - 2], params.back()}) std::fill(p->value.data.begin(), p->value.data.end(), 0.0f);
  RngStream r(7, 0);
  Tape<float> t;
  CHECK(t.value(tc_from_logits(t, vae.discriminate(t, t.constant(normals({16, 4}, r)))))[0] == 0.0f);
}

TEST_CASE("discriminator TC is near zero for independent dims and large for duplicated ones") {
  Vae indep(small_config(), RngStream(1, 0));
  RngStream r(8, 0);
  const double tc0 = train_discriminator(indep, [](RngStream& g) { return normals({64, 4}, g); }, 500, r);
  CHECK(std::abs(tc0) < 0.1);

  auto c = small_config();
  c.latent_dim = 2;
  Vae dup(c, RngStream(2, 0));
  const double tc1 = train_discriminator(
      dup,
      [](RngStream& g) {
        auto z = normals({64, 2}, g);
        for (std::size_t i = 0; i < 64; ++i) z(i, 1) = z(i, 0);
        return z;
      },
      2000, r);
  CHECK(tc1 > 0.5);
}

TEST_CASE("permute_dims keeps each column's multiset") {
  RngStream r(9, 0);
  const auto z = normals({20, 3}, r);
  const auto p = permute_dims(z, r);
  for (std::size_t d = 0; d < 3; ++d) {
    std::vector<float> a, b;
    for (std::size_t i = 0; i < 20; ++i) {
      a.push_back(z(i, d));
      b.push_back(p(i, d));
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
}
