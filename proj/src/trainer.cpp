#include "raven/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "raven/oracle.hpp"
#include "raven/renderer.hpp"

namespace raven {

namespace {

constexpr double kDivergenceLimit = 1e6;

ReasonerConfig reasoner_config(const TrainConfig& c) {
  return {c.latent_dim, c.reasoner_hidden, c.reasoner_dropout};
}

std::vector<Parameter<float>*> main_parameters(Model& m) {
  auto p = m.vae.autoencoder_parameters();
  for (auto& q : m.reasoner.network().parameters()) p.push_back(&q);
  return p;
}

void zero(std::span<Parameter<float>* const> params) {
  for (auto* p : params) p->zero_grad();
}

Tensor<float> normal_tensor(Shape shape, RngStream& rng) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

std::vector<double> row_of(const Tensor<float>& t, std::size_t r) {
  const std::size_t D = t.shape[1];
  return std::vector<double>(t.ptr() + r * D, t.ptr() + (r + 1) * D);
}

std::size_t oracle_nuisance(const Model& m) { return m.config.latent_dim - m.space->num_factors(); }

// Panels of a puzzle in encoder order: 8 context cells then 6 choices.
std::vector<FactorAssignment> puzzle_panels(const RpmInstance& p) {
  std::vector<FactorAssignment> out;
  for (const auto& a : p.context()) out.push_back(a);
  for (const auto& a : p.choices) out.push_back(a);
  return out;
}

double discriminator_step(Model& m, const Tensor<float>& z, RngStream& rng) {
  if (m.config.tc_estimator != TcEstimator::discriminator) return 0.0;
  auto params = m.vae.discriminator_parameters();
  zero(params);
  Tape<float> tape;
  const Var loss = discriminator_loss(tape, m.vae, z, rng);
  tape.backward(loss);
  adam_step<float>(params, m.disc_opt, m.config.disc_learning_rate);
  return tape.value(loss)[0];
}

void check_divergence(const StepLog& s) {
  if (!std::isfinite(s.total) || std::abs(s.total) > kDivergenceLimit)
    throw std::runtime_error(s.phase + " diverged at step " + std::to_string(s.step) + ": total=" +
                             std::to_string(s.total) + " recon=" + std::to_string(s.recon) + " kl=" +
                             std::to_string(s.kl) + " tc=" + std::to_string(s.tc) + " ce=" + std::to_string(s.ce));
}

}  // namespace

Model make_model(const TrainConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  m.space = std::make_shared<const FactorSpace>(config.factor_space());
  const RngStream init(config.seed, streams::init);
  m.vae = Vae(config.vae_config(), init.substream(1));
  m.reasoner = Reasoner(reasoner_config(config), init.substream(2));
  m.main_opt.config = config.adam;
  m.disc_opt.config = config.adam;
  m.window = ReferenceWindow(config.reference_window);
  return m;
}

nlohmann::json to_json(const StepLog& s) {
  return {{"phase", s.phase}, {"step", s.step}, {"recon", s.recon},         {"kl", s.kl},
          {"tc", s.tc},       {"ce", s.ce},     {"acc", s.acc},             {"vae_total", s.vae_total},
          {"total", s.total}, {"disc_loss", s.disc_loss}};
}

StepLog warm_start_step(Model& m) {
  const auto& c = m.config;
  RngStream rng = RngStream(c.seed, streams::warm_start).substream(m.warm_steps_done);
  std::vector<Image> images;
  for (std::size_t i = 0; i < c.batch_size; ++i) images.push_back(render(*m.space, sample_assignment(*m.space, rng), c.image_size));
  const Tensor<float> x = images_to_tensor(images);
  const Tensor<float> noise = normal_tensor({c.batch_size, c.latent_dim}, rng);

  auto params = main_parameters(m);
  zero(params);
  Tape<float> tape;
  const auto enc = m.vae.encode(tape, tape.constant(x));
  VaeLossInputs in;
  in.mean = enc.mean;
  in.log_var = enc.log_var;
  in.targets = &x;
  in.noise = &noise;
  const auto loss = vae_loss(tape, m.vae, in, {c.lambda1, c.gamma});
  tape.backward(loss.total);
  const auto ae = m.vae.autoencoder_parameters();
  adam_step<float>(ae, m.main_opt, c.learning_rate);

  StepLog s;
  s.phase = "warm_start";
  s.step = m.warm_steps_done;
  s.recon = loss.terms.reconstruction;
  s.kl = loss.terms.kl_total();
  s.tc = loss.terms.tc;
  s.vae_total = loss.terms.total;
  s.total = loss.terms.total;
  check_divergence(s);
  s.disc_loss = discriminator_step(m, tape.value(loss.z), rng);
  ++m.warm_steps_done;
  return s;
}

void warm_start(Model& m, const LogSink& log) {
  while (m.warm_steps_done < m.config.warm_start_steps) {
    const auto s = warm_start_step(m);
    if (log && (s.step % m.config.log_every == 0 || m.warm_steps_done == m.config.warm_start_steps)) log(s);
  }
}

std::vector<bool> widen_active_mask(std::vector<bool> o_kn, const std::vector<double>& variances, std::size_t l) {
  std::vector<std::size_t> order(o_kn.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return variances[a] > variances[b]; });
  for (const auto k : order) {
    if (popcount(o_kn) >= l) break;
    o_kn[k] = true;
  }
  return o_kn;
}

std::vector<bool> model_active_mask(const Model& m, const std::vector<std::vector<double>>& fallback_means) {
  std::vector<double> var;
  if (m.window.size() >= kMinReferenceBatch || (fallback_means.empty() && m.window.size() > 0))
    var = m.window.variances();
  else if (!fallback_means.empty())
    var = mean_variances(fallback_means);
  else
    return std::vector<bool>(m.config.latent_dim, true);
  return widen_active_mask(active_mask_from_variances(var, m.config.epsilon), var, m.config.rule_count);
}

StepLog joint_step(Model& m) {
  const auto& c = m.config;
  const std::size_t B = c.puzzle_batch, D = c.latent_dim;
  RngStream rng = RngStream(c.seed, streams::joint).substream(m.joint_steps_done);
  std::vector<RpmInstance> puzzles;
  for (std::size_t b = 0; b < B; ++b) puzzles.push_back(generate_puzzle(m.space, c.rule_count, rng.substream(b)));
  RngStream draw = rng.substream(B);

  std::vector<int> answers;
  for (const auto& p : puzzles) answers.push_back(p.answer_index);

  auto params = main_parameters(m);
  zero(params);
  Tape<float> tape;
  StepLog s;
  s.phase = "joint";
  s.step = m.joint_steps_done;
  Var means;
  Var vae_total;
  Tensor<float> z_for_disc;
  Tensor<float> targets, noise;
  std::vector<std::vector<bool>> rule_masks;  // per puzzle

  if (c.encoder == EncoderSource::oracle) {
    Tensor<float> codes({B * kPanelsPerPuzzle, D});
    for (std::size_t b = 0; b < B; ++b) {
      const auto lat = oracle_latents(puzzles[b], oracle_nuisance(m));
      for (std::size_t i = 0; i < kPanelsPerPuzzle; ++i) {
        const auto& post = i < kContextPanels ? lat.context[i] : lat.choices[i - kContextPanels];
        for (std::size_t d = 0; d < D; ++d) codes((b * kPanelsPerPuzzle + i), d) = static_cast<float>(post.mean[d]);
      }
    }
    means = tape.constant(std::move(codes));
    if (c.meta_source == MetaSource::consistent) {
      std::vector<std::vector<double>> batch;
      for (std::size_t r = 0; r < B * kPanelsPerPuzzle; ++r) batch.push_back(row_of(tape.value(means), r));
      const auto var = mean_variances(batch);
      const auto o_kn = widen_active_mask(active_mask_from_variances(var, c.epsilon), var, c.rule_count);
      for (std::size_t b = 0; b < B; ++b)
        rule_masks.push_back(infer_rule_mask(oracle_latents(puzzles[b], oracle_nuisance(m)), o_kn, c.rule_count).o);
    }
  } else {
    std::vector<Image> images;
    for (const auto& p : puzzles)
      for (const auto& a : puzzle_panels(p)) images.push_back(render(*m.space, a, c.image_size));
    const Tensor<float> x = images_to_tensor(images);
    const auto enc = m.vae.encode(tape, tape.constant(x));
    means = enc.mean;
    const auto& mv = tape.value(enc.mean);
    const auto& lv = tape.value(enc.log_var);

    for (std::size_t r = 0; r < B * kPanelsPerPuzzle; ++r) m.window.push(row_of(mv, r));
    const auto o_kn = model_active_mask(m, {});

    std::vector<RowMask> masks;
    std::vector<std::size_t> rows;  // the three rows completed with the answer
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t p0 = b * kPanelsPerPuzzle;
      std::vector<PosteriorGaussian> post;
      for (std::size_t i = 0; i < kPanelsPerPuzzle; ++i) post.push_back({row_of(mv, p0 + i), row_of(lv, p0 + i)});
      const auto latent = latent_from_posteriors(std::move(post));
      const auto rule = infer_rule_mask(latent, o_kn, c.rule_count);
      for (int r = 0; r < kRows; ++r) masks.push_back({rule.o, o_kn});
      rule_masks.push_back(rule.o);
      for (std::size_t i = 0; i < kContextPanels; ++i) rows.push_back(p0 + i);
      rows.push_back(p0 + kContextPanels + static_cast<std::size_t>(answers[b]));
    }
    const std::size_t per = x.numel() / x.shape[0];
    Shape ts = x.shape;
    ts[0] = rows.size();
    targets = Tensor<float>(ts);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.ptr() + rows[i] * per, per, targets.ptr() + i * per);
    noise = normal_tensor({rows.size(), D}, draw);

    VaeLossInputs in;
    in.mean = ops::gather_rows(tape, enc.mean, rows);
    in.log_var = ops::gather_rows(tape, enc.log_var, rows);
    in.targets = &targets;
    in.row_masks = masks;
    in.noise = &noise;
    if (c.recon_scope == ReconScope::answer)
      for (std::size_t b = 0; b < B; ++b) in.recon_subset.push_back(b * kRows * kRows + kRows * kRows - 1);
    const auto loss = vae_loss(tape, m.vae, in, {c.lambda1, c.gamma});
    vae_total = loss.total;
    z_for_disc = tape.value(loss.z);
    s.recon = loss.terms.reconstruction;
    s.kl = loss.terms.kl_total();
    s.tc = loss.terms.tc;
    s.vae_total = loss.terms.total;
  }

  const Var meta_means = c.meta_source == MetaSource::consistent ? factor_consistency(tape, means, rule_masks) : means;
  const Var features = candidate_features(tape, meta_means, B);
  const Var logits = ops::reshape(tape, m.reasoner.score(tape, features, Mode::train, &draw), {B, kChoices});
  const Var ce = ops::mean(tape, ops::softmax_cross_entropy(tape, logits, std::span<const int>(answers)));
  const Var weighted = ops::scale(tape, ce, static_cast<float>(c.reasoner_weight));
  const Var total = vae_total.valid() ? ops::add(tape, vae_total, weighted) : weighted;
  s.ce = tape.value(ce)[0];
  s.total = tape.value(total)[0];
  const auto& lg = tape.value(logits);
  std::size_t hits = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const std::vector<double> row(lg.ptr() + b * kChoices, lg.ptr() + (b + 1) * kChoices);
    hits += predict(row) == answers[b];
  }
  s.acc = static_cast<double>(hits) / static_cast<double>(B);
  check_divergence(s);

  tape.backward(total);
  adam_step<float>(params, m.main_opt, c.learning_rate);
  if (c.encoder == EncoderSource::vae) s.disc_loss = discriminator_step(m, z_for_disc, draw);
  ++m.joint_steps_done;
  return s;
}

void train_joint(Model& m, const LogSink& log) {
  while (m.joint_steps_done < m.config.joint_steps) {
    const auto s = joint_step(m);
    if (log && (s.step % m.config.log_every == 0 || m.joint_steps_done == m.config.joint_steps)) log(s);
  }
}

CodeFn model_code_fn(const Model& m) {
  return [&m](std::span<const FactorAssignment> as) {
    std::vector<std::vector<double>> out;
    out.reserve(as.size());
    if (m.config.encoder == EncoderSource::oracle) {
      for (const auto& a : as) out.push_back(oracle_encode(*m.space, a, oracle_nuisance(m)).mean);
      return out;
    }
    constexpr std::size_t kChunk = 256;
    for (std::size_t i = 0; i < as.size(); i += kChunk) {
      std::vector<Image> images;
      for (std::size_t j = i; j < std::min(as.size(), i + kChunk); ++j)
        images.push_back(render(*m.space, as[j], m.config.image_size));
      for (auto& p : m.vae.encode(images)) out.push_back(std::move(p.mean));
    }
    return out;
  };
}

LatentTensor encode_puzzle(const Model& m, const RpmInstance& puzzle) {
  if (m.config.encoder == EncoderSource::oracle) return oracle_latents(puzzle, oracle_nuisance(m));
  std::vector<Image> images;
  for (const auto& a : puzzle_panels(puzzle)) images.push_back(render(*m.space, a, m.config.image_size));
  return infer_z_prime(m.vae, images);
}

nlohmann::json to_json(const PuzzleInference& p) {
  auto bits = [](const std::vector<bool>& v) {
    std::string s;
    for (const bool b : v) s += b ? '1' : '0';
    return s;
  };
  return {{"delta_kl", p.delta_kl}, {"o_kn", bits(p.o_kn)}, {"o", bits(p.o)}, {"predicted", p.predicted},
          {"answer", p.answer}};
}

nlohmann::json to_json(const ReasoningReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& f : r.per_factor)
    per[f.factor] = {{"puzzles", f.puzzles}, {"correct", f.correct}, {"accuracy", f.accuracy()}};
  return {{"accuracy", r.accuracy}, {"puzzles", r.puzzles}, {"correct", r.correct}, {"per_factor", per}};
}

ReasoningReport evaluate_reasoning(const Model& m, std::size_t n, std::uint64_t seed,
                                   std::vector<PuzzleInference>* dump) {
  ReasoningReport r;
  r.puzzles = n;
  for (const auto& f : m.space->factors()) r.per_factor.push_back({f.name, 0, 0});
  std::vector<LatentTensor> latents;
  std::vector<RpmInstance> puzzles;
  for (std::size_t i = 0; i < n; ++i) {
    puzzles.push_back(generate_puzzle_at(m.space, m.config.rule_count, seed, i));
    latents.push_back(encode_puzzle(m, puzzles.back()));
  }
  std::vector<bool> o_kn;
  if (dump || m.config.meta_source == MetaSource::consistent) {
    std::vector<std::vector<double>> means;
    for (const auto& l : latents)
      for (const auto& p : l.context) means.push_back(p.mean);
    o_kn = m.config.encoder == EncoderSource::oracle || m.window.size() < kMinReferenceBatch
               ? widen_active_mask(active_mask_from_variances(mean_variances(means), m.config.epsilon),
                                   mean_variances(means), m.config.rule_count)
               : model_active_mask(m, means);
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<RuleInference> rule;
    if (!o_kn.empty()) rule = infer_rule_mask(latents[i], o_kn, m.config.rule_count);
    const auto logits = m.reasoner.score(build_meta(
        m.config.meta_source == MetaSource::consistent
            ? factor_consistency(latents[i], {o_kn, rule->o, m.config.rule_count})
            : latents[i]));
    const int pred = predict(logits);
    const bool ok = pred == puzzles[i].answer_index;
    r.correct += ok;
    for (const auto k : puzzles[i].structure.factors()) {
      ++r.per_factor[k].puzzles;
      r.per_factor[k].correct += ok;
    }
    if (dump) dump->push_back({rule->profile.delta_kl, o_kn, rule->o, pred, puzzles[i].answer_index});
  }
  r.accuracy = n ? static_cast<double>(r.correct) / static_cast<double>(n) : 0.0;
  return r;
}

Checkpoint to_checkpoint(const Model& m) {
  Checkpoint c;
  c.config = to_json(m.config);
  c.step = m.warm_steps_done + m.joint_steps_done;
  c.meta = {{"warm_steps_done", m.warm_steps_done},
            {"joint_steps_done", m.joint_steps_done},
            {"main_opt_step", m.main_opt.step},
            {"disc_opt_step", m.disc_opt.step}};
  auto add_net = [&](const Network<float>& net) {
    for (const auto& p : net.parameters()) c.tensors.push_back({p.name, p.value});
  };
  add_net(m.vae.encoder());
  add_net(m.vae.decoder());
  add_net(m.vae.discriminator());
  add_net(m.reasoner.network());
  auto add_opt = [&](const std::string& prefix, const AdamState<float>& s) {
    for (const auto& [name, t] : s.first_moment) c.tensors.push_back({prefix + ".m." + name, t});
    for (const auto& [name, t] : s.second_moment) c.tensors.push_back({prefix + ".v." + name, t});
  };
  add_opt("adam_main", m.main_opt);
  add_opt("adam_disc", m.disc_opt);
  if (m.window.size() > 0) {
    Tensor<float> w({m.window.size(), m.config.latent_dim});
    std::size_t r = 0;
    for (const auto& mean : m.window.means()) {
      for (std::size_t d = 0; d < mean.size(); ++d) w(r, d) = static_cast<float>(mean[d]);
      ++r;
    }
    c.tensors.push_back({"reference_window", std::move(w)});
  }
  return c;
}

Model from_checkpoint(const Checkpoint& c) {
  Model m = make_model(config_from_json(c.config));
  try {
    m.warm_steps_done = c.meta.at("warm_steps_done").get<std::uint64_t>();
    m.joint_steps_done = c.meta.at("joint_steps_done").get<std::uint64_t>();
    m.main_opt.step = c.meta.at("main_opt_step").get<std::uint64_t>();
    m.disc_opt.step = c.meta.at("disc_opt_step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: missing training state: ") + e.what());
  }
  auto load_net = [&](Network<float>& net) {
    for (auto& p : net.parameters()) {
      const auto* t = c.find(p.name);
      if (!t) throw std::runtime_error("checkpoint: missing tensor '" + p.name + "'");
      if (t->tensor.shape != p.value.shape)
        throw std::runtime_error("checkpoint: tensor '" + p.name + "' has shape " + shape_str(t->tensor.shape) +
                                 ", model expects " + shape_str(p.value.shape));
      p.value = t->tensor;
    }
  };
  load_net(m.vae.encoder());
  load_net(m.vae.decoder());
  load_net(m.vae.discriminator());
  load_net(m.reasoner.network());
  auto load_opt = [&](const std::string& prefix, AdamState<float>& s) {
    for (const auto& t : c.tensors) {
      if (t.name.starts_with(prefix + ".m.")) s.first_moment[t.name.substr(prefix.size() + 3)] = t.tensor;
      if (t.name.starts_with(prefix + ".v.")) s.second_moment[t.name.substr(prefix.size() + 3)] = t.tensor;
    }
  };
  load_opt("adam_main", m.main_opt);
  load_opt("adam_disc", m.disc_opt);
  if (const auto* w = c.find("reference_window")) {
    if (w->tensor.rank() != 2 || w->tensor.shape[1] != m.config.latent_dim)
      throw std::runtime_error("checkpoint: reference_window has shape " + shape_str(w->tensor.shape));
    for (std::size_t r = 0; r < w->tensor.shape[0]; ++r) m.window.push(row_of(w->tensor, r));
  }
  return m;
}

}  // namespace raven
