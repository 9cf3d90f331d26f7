#include "raven/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "raven/renderer.hpp"

namespace raven {

namespace {

template <typename E>
E enum_from(const nlohmann::json& j, const std::string& field, std::initializer_list<std::pair<const char*, E>> table) {
  const auto s = j.get<std::string>();
  for (const auto& [name, value] : table)
    if (s == name) return value;
  throw std::invalid_argument("config field '" + field + "': unknown value '" + s + "'");
}

template <typename E>
std::string enum_name(E e, std::initializer_list<std::pair<const char*, E>> table) {
  for (const auto& [name, value] : table)
    if (e == value) return name;
  return "?";
}

const std::initializer_list<std::pair<const char*, EncoderArch>> kArch{{"dense", EncoderArch::dense},
                                                                       {"conv", EncoderArch::conv}};
const std::initializer_list<std::pair<const char*, TcEstimator>> kTc{{"discriminator", TcEstimator::discriminator},
                                                                     {"minibatch", TcEstimator::minibatch}};
const std::initializer_list<std::pair<const char*, ReconScope>> kScope{{"all", ReconScope::all},
                                                                       {"answer", ReconScope::answer}};
const std::initializer_list<std::pair<const char*, EncoderSource>> kSource{{"vae", EncoderSource::vae},
                                                                           {"oracle", EncoderSource::oracle}};
const std::initializer_list<std::pair<const char*, MetaSource>> kMeta{{"raw", MetaSource::raw},
                                                                      {"consistent", MetaSource::consistent}};

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("config field '" + field + "': " + why);
  };
  const auto fs = factor_space();
  if (rule_count == 0 || rule_count > fs.num_factors()) fail("rule_count", "must be in [1, number of factors]");
  if (image_size != 16 && image_size != 32 && image_size != 64) fail("image_size", "must be 16, 32 or 64");
  if (latent_dim == 0) fail("latent_dim", "must be positive");
  if (encoder == EncoderSource::oracle && latent_dim < fs.num_factors())
    fail("latent_dim", "oracle encoder needs at least one dim per factor");
  if (hidden == 0) fail("hidden", "must be positive");
  if (disc_width == 0 || disc_layers <= 0) fail("disc_width", "discriminator must have positive width and depth");
  if (lambda1 < 0) fail("lambda1", "must be non-negative");
  if (gamma < 0) fail("gamma", "must be non-negative");
  if (!(epsilon > 0)) fail("epsilon", "must be positive");
  if (batch_size < 2) fail("batch_size", "must be at least 2");
  if (puzzle_batch == 0) fail("puzzle_batch", "must be positive");
  if (!(learning_rate > 0)) fail("learning_rate", "must be positive");
  if (!(disc_learning_rate > 0)) fail("disc_learning_rate", "must be positive");
  if (reasoner_weight < 0) fail("reasoner_weight", "must be non-negative");
  if (reasoner_hidden == 0) fail("reasoner_hidden", "must be positive");
  if (reasoner_dropout < 0 || reasoner_dropout >= 1) fail("reasoner_dropout", "must be in [0, 1)");
  if (reference_window < 32) fail("reference_window", "must hold at least 32 means");
  if (log_every == 0) fail("log_every", "must be positive");
}

VaeConfig TrainConfig::vae_config() const {
  VaeConfig v;
  v.image_size = image_size;
  v.channels = channels_for(factor_space());
  v.latent_dim = latent_dim;
  v.arch = arch;
  v.hidden = hidden;
  v.disc_width = disc_width;
  v.disc_layers = disc_layers;
  v.tc_estimator = tc_estimator;
  return v;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"space", c.space},
          {"rule_count", c.rule_count},
          {"image_size", c.image_size},
          {"latent_dim", c.latent_dim},
          {"arch", enum_name(c.arch, kArch)},
          {"hidden", c.hidden},
          {"disc_width", c.disc_width},
          {"disc_layers", c.disc_layers},
          {"tc_estimator", enum_name(c.tc_estimator, kTc)},
          {"lambda1", c.lambda1},
          {"gamma", c.gamma},
          {"epsilon", c.epsilon},
          {"batch_size", c.batch_size},
          {"puzzle_batch", c.puzzle_batch},
          {"learning_rate", c.learning_rate},
          {"disc_learning_rate", c.disc_learning_rate},
          {"adam_beta1", c.adam.beta1},
          {"adam_beta2", c.adam.beta2},
          {"adam_epsilon", c.adam.epsilon},
          {"warm_start_steps", c.warm_start_steps},
          {"joint_steps", c.joint_steps},
          {"reasoner_weight", c.reasoner_weight},
          {"reasoner_hidden", c.reasoner_hidden},
          {"reasoner_dropout", c.reasoner_dropout},
          {"seed", c.seed},
          {"recon_scope", enum_name(c.recon_scope, kScope)},
          {"encoder", enum_name(c.encoder, kSource)},
          {"meta_source", enum_name(c.meta_source, kMeta)},
          {"reference_window", c.reference_window},
          {"log_every", c.log_every}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  TrainConfig c;
  const auto known = to_json(c);
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("config: unknown field '" + key + "'");
  try {
    if (j.contains("space")) {
      c.space = j.at("space").is_string() ? nlohmann::json{{"preset", j.at("space")}} : j.at("space");
    }
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("rule_count", c.rule_count);
    get("image_size", c.image_size);
    get("latent_dim", c.latent_dim);
    if (j.contains("arch")) c.arch = enum_from(j.at("arch"), "arch", kArch);
    get("hidden", c.hidden);
    get("disc_width", c.disc_width);
    get("disc_layers", c.disc_layers);
    if (j.contains("tc_estimator")) c.tc_estimator = enum_from(j.at("tc_estimator"), "tc_estimator", kTc);
    get("lambda1", c.lambda1);
    get("gamma", c.gamma);
    get("epsilon", c.epsilon);
    get("batch_size", c.batch_size);
    get("puzzle_batch", c.puzzle_batch);
    get("learning_rate", c.learning_rate);
    get("disc_learning_rate", c.disc_learning_rate);
    get("adam_beta1", c.adam.beta1);
    get("adam_beta2", c.adam.beta2);
    get("adam_epsilon", c.adam.epsilon);
    get("warm_start_steps", c.warm_start_steps);
    get("joint_steps", c.joint_steps);
    get("reasoner_weight", c.reasoner_weight);
    get("reasoner_hidden", c.reasoner_hidden);
    get("reasoner_dropout", c.reasoner_dropout);
    get("seed", c.seed);
    if (j.contains("recon_scope")) c.recon_scope = enum_from(j.at("recon_scope"), "recon_scope", kScope);
    if (j.contains("encoder")) c.encoder = enum_from(j.at("encoder"), "encoder", kSource);
    if (j.contains("meta_source")) c.meta_source = enum_from(j.at("meta_source"), "meta_source", kMeta);
    get("reference_window", c.reference_window);
    get("log_every", c.log_every);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace raven
