#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "raven/trainer.hpp"

using namespace raven;

namespace {

TrainConfig tiny() {
  TrainConfig c;
  c.hidden = 32;
  c.disc_width = 16;
  c.disc_layers = 2;
  c.reasoner_hidden = 32;
  c.batch_size = 16;
  c.puzzle_batch = 2;
  c.warm_start_steps = 10;
  c.joint_steps = 10;
  c.learning_rate = 5e-4;
  c.disc_learning_rate = 1e-4;
  return c;
}

TrainConfig desk() {
  TrainConfig c;
  c.hidden = 128;
  c.disc_width = 64;
  c.disc_layers = 3;
  c.puzzle_batch = 4;
  c.learning_rate = 5e-4;
  c.disc_learning_rate = 1e-4;
  return c;
}

std::vector<Tensor<float>> psi_values(const Model& m) {
  std::vector<Tensor<float>> v;
  for (const auto& p : m.reasoner.network().parameters()) v.push_back(p.value);
  return v;
}

double mean_of(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
  return std::accumulate(v.begin() + static_cast<long>(lo), v.begin() + static_cast<long>(hi), 0.0) /
         static_cast<double>(hi - lo);
}

}  // namespace

TEST_CASE("same config and seed give identical checkpoints") {
  auto run = [] {
    Model m = make_model(tiny());
    warm_start(m);
    train_joint(m);
    return serialize_checkpoint(to_checkpoint(m));
  };
  const auto a = run();
  CHECK(a == run());
  auto other = tiny();
  other.seed = 2;
  Model m = make_model(other);
  warm_start(m);
  CHECK(serialize_checkpoint(to_checkpoint(m)) != a);
}

TEST_CASE("resuming from a checkpoint continues bit for bit") {
  Model straight = make_model(tiny());
  warm_start(straight);
  train_joint(straight);

  auto half = tiny();
  half.joint_steps = 4;
  Model first = make_model(half);
  warm_start(first);
  train_joint(first);
  auto ck = to_checkpoint(first);
  ck.config = to_json(tiny());
  Model resumed = from_checkpoint(parse_checkpoint(serialize_checkpoint(ck)));
  train_joint(resumed);
  CHECK(serialize_checkpoint(to_checkpoint(resumed)) == serialize_checkpoint(to_checkpoint(straight)));
  CHECK(evaluate_reasoning(resumed, 50, 9).correct == evaluate_reasoning(straight, 50, 9).correct);
}

TEST_CASE("checkpoint restore rejects mismatched tensors") {
  Model m = make_model(tiny());
  auto ck = to_checkpoint(m);
  ck.tensors[0].tensor = Tensor<float>({1});
  CHECK_THROWS_WITH(from_checkpoint(ck), Catch::Matchers::ContainsSubstring("shape"));
  ck.tensors.erase(ck.tensors.begin());
  CHECK_THROWS_WITH(from_checkpoint(ck), Catch::Matchers::ContainsSubstring("missing tensor"));
}

TEST_CASE("zero warm-start steps leave fresh parameters") {
  auto c = tiny();
  c.warm_start_steps = 0;
  Model m = make_model(c);
  warm_start(m);
  CHECK(m.warm_steps_done == 0);
  CHECK(serialize_checkpoint(to_checkpoint(m)) == serialize_checkpoint(to_checkpoint(make_model(c))));
}

TEST_CASE("reasoner weight 0 leaves psi untouched") {
  auto c = tiny();
  c.reasoner_weight = 0;
  Model m = make_model(c);
  const auto before = psi_values(m);
  warm_start(m);
  train_joint(m);
  CHECK(psi_values(m) == before);
}

TEST_CASE("joint log totals decompose") {
  Model m = make_model(tiny());
  warm_start(m);
  for (int i = 0; i < 5; ++i) {
    const auto s = joint_step(m);
    CHECK(s.total == Catch::Approx(s.vae_total + s.ce).epsilon(1e-5));
    CHECK(s.vae_total == Catch::Approx(-s.recon + s.kl + 10.0 * s.tc).epsilon(1e-4).margin(1e-3));
    CHECK(s.acc >= 0.0);
    CHECK(s.acc <= 1.0);
  }
}

TEST_CASE("untrained psi with a zero output layer is at chance") {
  Model m = make_model(tiny());
  auto& params = m.reasoner.network().parameters();
  for (auto* p : {&params[params.size() - 2], &params.back()}) std::fill(p->value.data.begin(), p->value.data.end(), 0.0f);
  const auto r = evaluate_reasoning(m, 2000, 11);
  CHECK(r.accuracy == Catch::Approx(1.0 / 6).margin(0.04));
}

TEST_CASE("oracle encoder with a trained reasoner solves toy2") {
  auto c = tiny();
  c.encoder = EncoderSource::oracle;
  c.reasoner_hidden = 64;
  c.reasoner_dropout = 0.1;
  c.puzzle_batch = 16;
  c.learning_rate = 1e-3;
  c.warm_start_steps = 0;
  c.joint_steps = 1500;
  Model m = make_model(c);
  train_joint(m);
  CHECK(evaluate_reasoning(m, 1000, 12).accuracy >= 0.95);
}

TEST_CASE("warm start trains the VAE on toy2") {
  auto c = desk();
  c.warm_start_steps = 5000;
  c.log_every = 1;
  Model m = make_model(c);
  std::vector<double> recon, total;
  warm_start(m, [&](const StepLog& s) {
    recon.push_back(-s.recon);
    total.push_back(s.total);
  });
  REQUIRE(recon.size() == 5000);
  // Reconstruction error after 2k steps vs the first 100.
  CHECK(mean_of(recon, 1900, 2000) <= 0.8 * mean_of(recon, 0, 100));
  // Total loss at the end vs the moving average around step 100.
  CHECK(mean_of(total, 4900, 5000) <= 0.8 * mean_of(total, 50, 150));
}

TEST_CASE("consistent meta source trains and evaluates reproducibly") {
  auto c = tiny();
  c.meta_source = MetaSource::consistent;
  auto run = [&] {
    Model m = make_model(c);
    warm_start(m);
    train_joint(m);
    return std::pair{serialize_checkpoint(to_checkpoint(m)), evaluate_reasoning(m, 50, 9).correct};
  };
  const auto a = run();
  CHECK(a == run());
  Model raw = make_model(tiny());
  warm_start(raw);
  train_joint(raw);
  CHECK(serialize_checkpoint(to_checkpoint(raw)) != a.first);
}
