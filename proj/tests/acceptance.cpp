// One PASS/FAIL line per acceptance criterion. `acceptance 3 5` runs a subset.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "gradcheck.hpp"
#include "raven/checkpoint.hpp"
#include "raven/oracle.hpp"
#include "raven/trainer.hpp"

using namespace raven;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------

Outcome generation_and_validity() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (const auto& name : {"dsprites-like", "mod-dsprites-like", "toy2", "toy3"}) {
    auto space = std::make_shared<const FactorSpace>(build_space(name));
    std::size_t valid = 0, solved = 0;
    for (std::uint64_t i = 0; i < 10000; ++i) {
      const auto p = generate_puzzle_at(space, 1 + i % 2, 1, i);
      valid += validate_puzzle(p).ok;
      try {
        solved += brute_force_solve(public_view(p)) == p.answer_index;
      } catch (const std::exception&) {
      }
    }
    ok = ok && valid == 10000 && solved == 10000;
    detail += fmt::format("{} {}/{} valid {}/{} solved; ", name, valid, 10000, solved, 10000);
  }
  const double t = seconds_since(t0);
  ok = ok && t < 60;
  return {ok, detail + fmt::format("{:.1f}s (<60s)", t)};
}

Outcome oracle_chain() {
  const auto t0 = Clock::now();
  auto space = std::make_shared<const FactorSpace>(build_space("dsprites-like"));
  constexpr std::size_t kNuisance = 6, kBatch = 10;
  bool ok = true;
  std::string detail;
  for (std::size_t l = 1; l <= 2; ++l) {
    std::size_t correct = 0, batches = 0, exact_popcount = 0;
    for (std::size_t b0 = 0; b0 < 1000; b0 += kBatch) {
      std::vector<RpmInstance> ps;
      std::vector<LatentTensor> lat;
      std::vector<std::vector<double>> means;
      for (std::size_t i = b0; i < b0 + kBatch; ++i) {
        ps.push_back(generate_puzzle_at(space, l, 2, i));
        lat.push_back(oracle_latents(ps.back(), kNuisance));
        for (const auto& c : lat.back().context) means.push_back(c.mean);
      }
      const auto o_kn = infer_active_mask(means);
      ++batches;
      exact_popcount += popcount(o_kn) == space->num_factors();
      for (std::size_t i = 0; i < kBatch; ++i) {
        const auto rule = infer_rule_mask(lat[i], o_kn, l);
        correct += variance_rule_solve(build_meta(lat[i]), rule.o) == ps[i].answer_index;
      }
    }
    const double acc = static_cast<double>(correct) / 1000.0;
    const double pc = static_cast<double>(exact_popcount) / static_cast<double>(batches);
    ok = ok && acc >= 0.99 && pc >= 0.99;
    detail += fmt::format("l={} acc {:.3f} (>=0.99) popcount==K {:.2f} (>=0.99); ", l, acc, pc);
  }
  const double t = seconds_since(t0);
  ok = ok && t < 30;
  return {ok, detail + fmt::format("{:.1f}s (<30s)", t)};
}

Outcome divergence_selection() {
  const auto unit = [](double m) { return PosteriorGaussian{{m}, {0.0}}; };
  const std::vector<std::vector<PosteriorGaussian>> rows(3, {unit(-1), unit(0), unit(1)});
  const double hand = delta_kl(rows).delta_kl[0];
  const double hand_err = std::abs(hand - 18.0 / 27.0);

  auto space = std::make_shared<const FactorSpace>(build_space("dsprites-like"));
  std::size_t strict = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto p = generate_puzzle_at(space, 1 + i % 2, 3, i);
    const auto prof = context_delta_kl(oracle_latents(p, 6));
    double worst_rule = -1, best_other = INFINITY;
    for (std::size_t k = 0; k < space->num_factors(); ++k) {
      if (p.structure.has_factor(k))
        worst_rule = std::max(worst_rule, prof.delta_kl[k]);
      else
        best_other = std::min(best_other, prof.delta_kl[k]);
    }
    strict += worst_rule < best_other;
  }
  return {hand_err <= 1e-10 && strict == 1000,
          fmt::format("hand case {:.12f} vs 18/27 err {:.1e} (<=1e-10); rule<non-rule in {}/1000", hand, hand_err,
                      strict)};
}

Outcome gradient_checks() {
  double worst = 0;
  std::string worst_name;
  std::size_t layers = 0;
  for (const auto& c : gradcheck::cases()) {
    ++layers;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
      RngStream r(4, 1000 * layers + trial);
      const double err = c.trial(r);
      if (!(err <= worst)) {
        worst = err;
        worst_name = c.name;
      }
    }
  }
  return {worst < 1e-4, fmt::format("{} layers x 100 shapes, max rel err {:.2e} ({}) (<1e-4)", layers, worst, worst_name)};
}

CodeFn oracle_fn(const FactorSpace& s, std::size_t nuisance) {
  return [&s, nuisance](std::span<const FactorAssignment> a) {
    std::vector<std::vector<double>> out;
    for (const auto& x : a) out.push_back(oracle_encode(s, x, nuisance).mean);
    return out;
  };
}

CodeFn noise_fn(std::size_t D, std::uint64_t seed) {
  auto rng = std::make_shared<RngStream>(seed, 5);
  return [rng, D](std::span<const FactorAssignment> a) {
    std::vector<std::vector<double>> out(a.size(), std::vector<double>(D));
    for (auto& v : out)
      for (auto& x : v) x = rng->normal();
    return out;
  };
}

CodeFn mixed_fn(const FactorSpace& s, std::vector<std::size_t> perm, std::vector<double> scale) {
  auto rng = std::make_shared<RngStream>(7, 5);
  return [&s, rng, perm, scale](std::span<const FactorAssignment> a) {
    std::vector<std::vector<double>> out;
    for (const auto& x : a) {
      auto m = oracle_encode(s, x, 2).mean;
      for (auto& v : m) v += 0.3 * rng->normal();
      std::vector<double> t(m.size());
      for (std::size_t d = 0; d < m.size(); ++d) t[d] = m[perm[d]] * scale[d];
      out.push_back(t);
    }
    return out;
  };
}

Outcome metric_calibration() {
  const auto t0 = Clock::now();
  const auto s = build_space("dsprites-like");
  const auto o = evaluate_metrics(s, oracle_fn(s, 0), RngStream(5, 1), 10000);
  const auto n = evaluate_metrics(s, noise_fn(10, 5), RngStream(5, 2), 10000);
  const double chance = 1.0 / static_cast<double>(s.num_factors());
  bool ok = o.factor_vae >= 0.99 && o.mig >= 0.95 && o.sap >= 0.95 && o.dci_d >= 0.90;
  ok = ok && std::abs(n.factor_vae - chance) <= 0.10 && n.mig <= 0.05 && n.sap <= 0.05;

  const std::vector<std::size_t> id{0, 1, 2, 3, 4, 5}, perm{3, 5, 0, 4, 1, 2};
  const std::vector<double> ones(6, 1.0), scale{0.6, 2.5, 4.0, 1.7, 0.8, 3.3};
  const auto base = evaluate_metrics(s, mixed_fn(s, id, ones), RngStream(5, 3), 10000);
  const auto p = evaluate_metrics(s, mixed_fn(s, perm, ones), RngStream(5, 3), 10000);
  const auto c = evaluate_metrics(s, mixed_fn(s, id, scale), RngStream(5, 3), 10000);
  const bool perm_ok = p.factor_vae == base.factor_vae && p.mig == base.mig && p.sap == base.sap && p.dci_d == base.dci_d;
  const bool scale_ok = c.factor_vae == base.factor_vae && c.mig == base.mig && std::abs(c.sap - base.sap) <= 1e-6 &&
                        std::abs(c.dci_d - base.dci_d) <= 1e-6;
  const double t = seconds_since(t0);
  ok = ok && perm_ok && scale_ok && t < 120;
  return {ok, fmt::format("oracle fvae {:.3f} mig {:.3f} sap {:.3f} dci {:.3f}; noise fvae {:.3f} (1/K={:.2f}) mig {:.3f} "
                          "sap {:.3f}; permutation {}; scaling {} (|dsap|={:.1e} |ddci|={:.1e}); {:.1f}s (<120s)",
                          o.factor_vae, o.mig, o.sap, o.dci_d, n.factor_vae, chance, n.mig, n.sap,
                          perm_ok ? "exact" : "CHANGED", scale_ok ? "ok" : "CHANGED", std::abs(c.sap - base.sap),
                          std::abs(c.dci_d - base.dci_d), t)};
}

Outcome desk_training() {
  const auto t0 = Clock::now();
  const auto base = load_config(RAVEN_CONFIG_DIR "/toy2_desk.json");
  double seed1_acc = 0;
  int improved = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto c = base;
    c.seed = seed;
    Model m = make_model(c);
    warm_start(m);
    const double before = factor_vae_score(*m.space, model_code_fn(m), RngStream(seed, streams::metrics)).score;
    train_joint(m);
    const double after = factor_vae_score(*m.space, model_code_fn(m), RngStream(seed, streams::metrics)).score;
    improved += after > before;
    detail += fmt::format("seed {} fvae {:.3f}->{:.3f}", seed, before, after);
    if (seed == 1) {
      seed1_acc = evaluate_reasoning(m, 1000, 1000).accuracy;
      detail += fmt::format(" acc {:.3f}", seed1_acc);
    }
    detail += "; ";
    std::fprintf(stderr, "  [criterion 6] %s (%.0fs)\n", detail.c_str(), seconds_since(t0));
  }
  const double t = seconds_since(t0);
  return {seed1_acc >= 0.60 && improved >= 4 && t < 1200,
          detail + fmt::format("seed-1 acc {:.3f} (>=0.60), fvae improved {}/5 (>=4), {:.0f}s (<1200s)", seed1_acc,
                               improved, t)};
}

Outcome determinism() {
  auto c = load_config(RAVEN_CONFIG_DIR "/toy2_desk.json");
  c.warm_start_steps = 100;
  c.joint_steps = 100;
  auto run = [&] {
    Model m = make_model(c);
    warm_start(m);
    const auto warm = serialize_checkpoint(to_checkpoint(m));
    train_joint(m);
    const auto fin = serialize_checkpoint(to_checkpoint(m));
    const auto acc = evaluate_reasoning(m, 200, 1000).accuracy;
    const auto fvae = factor_vae_score(*m.space, model_code_fn(m), RngStream(c.seed, streams::metrics)).score;
    return std::tuple{warm, fin, acc, fvae};
  };
  const auto a = run(), b = run();
  const bool same = a == b;
  const auto& bytes = std::get<1>(a);
  const bool round = serialize_checkpoint(to_checkpoint(from_checkpoint(parse_checkpoint(bytes)))) == bytes;
  return {same && round, fmt::format("checkpoints and eval numbers {}; round trip {} ({} bytes)",
                                     same ? "identical" : "DIFFER", round ? "bitwise" : "CHANGED", bytes.size())};
}

Outcome reasoner_equivariance() {
  const Reasoner psi({10, 64, 0.5}, RngStream(8, 1));
  RngStream r(8, 2);
  std::size_t exact = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::vector<double>> ctx(8, std::vector<double>(10)), ch(6, std::vector<double>(10));
    for (auto& v : ctx)
      for (auto& x : v) x = r.uniform(-2, 2);
    for (auto& v : ch)
      for (auto& x : v) x = r.uniform(-2, 2);
    const auto logits = psi.score(build_meta(ctx, ch));
    std::array<std::size_t, 6> perm{0, 1, 2, 3, 4, 5};
    shuffle(perm.begin(), perm.end(), r);
    std::vector<std::vector<double>> pch;
    for (const auto k : perm) pch.push_back(ch[k]);
    const auto permuted = psi.score(build_meta(ctx, pch));
    bool ok = true;
    for (std::size_t a = 0; a < 6; ++a) ok = ok && permuted[a] == logits[perm[a]];
    exact += ok;
  }
  const double ce = reasoner_loss(std::vector<double>(6, 0.37), 2);
  const double err = std::abs(ce - std::log(6.0));
  return {exact == 1000 && err <= 1e-10,
          fmt::format("equivariant {}/1000 exactly; uniform CE {:.12f} vs ln 6 err {:.1e} (<=1e-10)", exact, ce, err)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"puzzle generation and validity", generation_and_validity},
      {"oracle inference chain", oracle_chain},
      {"divergence rule selection", divergence_selection},
      {"gradient checks", gradient_checks},
      {"metric calibration and invariance", metric_calibration},
      {"desk-scale training", desk_training},
      {"determinism", determinism},
      {"reasoner equivariance", reasoner_equivariance},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %zu (%s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
