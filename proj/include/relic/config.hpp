#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "relic/common.hpp"

namespace relic {

using json = nlohmann::ordered_json;

enum class SinkVariant { kNone, kSinkK0V0, kSinkKV0, kSinkK0V, kSinkKV, kSinkToken };
enum class AttentionMask { kFull, kIntraEpisode };

inline const char* to_string(SinkVariant v) {
  switch (v) {
    case SinkVariant::kNone: return "none";
    case SinkVariant::kSinkK0V0: return "sink_k0v0";
    case SinkVariant::kSinkKV0: return "sink_kv0";
    case SinkVariant::kSinkK0V: return "sink_k0v";
    case SinkVariant::kSinkKV: return "sink_kv";
    case SinkVariant::kSinkToken: return "sink_token";
  }
  return "?";
}

inline const char* to_string(AttentionMask m) {
  return m == AttentionMask::kFull ? "full" : "intra_episode";
}

// Shapes of the observation components a token embeds. Derived from the
// environment config, never set directly.
struct ObsSpec {
  int state_dim = 2;
  int image_w = 0, image_h = 0, image_c = 0;
  int image_dim() const { return image_w * image_h * image_c; }
  bool has_state() const { return state_dim > 0; }
  bool has_image() const { return image_dim() > 0; }
};

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 8;
  int d_model = 64;
  int d_mlp = 256;
  int n_sinks = 1;
  SinkVariant sink_variant = SinkVariant::kSinkK0V0;
  double rope_base = 10000.0;
  int max_within_episode_len = 100;
  double depth_dropout = 0.1;
  AttentionMask attention_mask = AttentionMask::kFull;
  // Filled in from the environment.
  int action_count = 5;
  ObsSpec obs;

  int d_head() const { return d_model / n_heads; }
};

struct DarkroomSpec {
  int grid_size = 10;
  int horizon = 100;
  bool pixel = false;
  int image_w = 25;
  int image_h = 25;

  static constexpr int kActionCount = 5;  // up, down, left, right, stay
};

struct TrainConfig {
  int rollout_len = 512;         // T
  int updates_per_rollout = 4;   // K
  double gamma = 0.99;
  double gae_tau = 0.95;
  double clip_eps = 0.2;
  double entropy_coef = 0.1;
  double value_coef = 0.5;
  double lr_initial = 2e-7;
  double lr_peak = 2e-4;
  int64_t warmup_env_steps = 100000;
  int64_t total_env_steps = 2000000;
  int workers = 16;
  int epochs_per_update = 1;
  double max_grad_norm = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-5;
  bool normalize_advantage = true;
  int checkpoint_every_rollouts = 25;
  int eval_every_rollouts = 25;
  int eval_trials = 8;     // periodic in-training eval
  int eval_episodes = 10;
  int threads = 1;
};

struct EvalConfig {
  int trials = 200;
  int episodes = 40;
  int context_multiplier = 1;
  int demos = 4;
  int fewshot_trials = 500;
  bool argmax = false;
  int threads = 1;
};

struct ExperimentConfig {
  uint64_t seed = 1;
  std::string out_dir = "runs/default";
  ModelConfig model;
  DarkroomSpec env;
  TrainConfig train;
  EvalConfig eval;
};

// ---------------------------------------------------------------------------
// JSON <-> config. Parsing is strict: any key that does not name a field is
// an error, reported with its full dotted path.
// ---------------------------------------------------------------------------

namespace detail {

inline int get_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) fail("config/type_mismatch", path + " expects an integer");
  return v.get<int>();
}
inline int64_t get_i64(const json& v, const std::string& path) {
  if (!v.is_number_integer()) fail("config/type_mismatch", path + " expects an integer");
  return v.get<int64_t>();
}
inline uint64_t get_u64(const json& v, const std::string& path) {
  if (!v.is_number_integer() && !v.is_number_unsigned())
    fail("config/type_mismatch", path + " expects an integer");
  return v.get<uint64_t>();
}
inline double get_double(const json& v, const std::string& path) {
  if (!v.is_number()) fail("config/type_mismatch", path + " expects a number");
  return v.get<double>();
}
inline bool get_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) fail("config/type_mismatch", path + " expects a boolean");
  return v.get<bool>();
}
inline std::string get_string(const json& v, const std::string& path) {
  if (!v.is_string()) fail("config/type_mismatch", path + " expects a string");
  return v.get<std::string>();
}

inline SinkVariant parse_sink_variant(const json& v, const std::string& path) {
  const std::string s = get_string(v, path);
  for (auto var : {SinkVariant::kNone, SinkVariant::kSinkK0V0, SinkVariant::kSinkKV0,
                   SinkVariant::kSinkK0V, SinkVariant::kSinkKV, SinkVariant::kSinkToken}) {
    if (s == to_string(var)) return var;
  }
  fail("config/bad_value", path + ": unknown sink variant '" + s + "'");
}

inline AttentionMask parse_attention_mask(const json& v, const std::string& path) {
  const std::string s = get_string(v, path);
  if (s == "full") return AttentionMask::kFull;
  if (s == "intra_episode") return AttentionMask::kIntraEpisode;
  fail("config/bad_value", path + ": unknown attention mask '" + s + "'");
}

}  // namespace detail

inline void apply_json(ModelConfig& c, const json& j, const std::string& path) {
  using namespace detail;
  if (!j.is_object()) fail("config/type_mismatch", path + " expects an object");
  for (const auto& [k, v] : j.items()) {
    const std::string p = path + "." + k;
    if (k == "n_layers") c.n_layers = get_int(v, p);
    else if (k == "n_heads") c.n_heads = get_int(v, p);
    else if (k == "d_model") c.d_model = get_int(v, p);
    else if (k == "d_mlp") c.d_mlp = get_int(v, p);
    else if (k == "n_sinks") c.n_sinks = get_int(v, p);
    else if (k == "sink_variant") c.sink_variant = parse_sink_variant(v, p);
    else if (k == "rope_base") c.rope_base = get_double(v, p);
    else if (k == "max_within_episode_len") c.max_within_episode_len = get_int(v, p);
    else if (k == "depth_dropout") c.depth_dropout = get_double(v, p);
    else if (k == "attention_mask") c.attention_mask = parse_attention_mask(v, p);
    else fail("config/unknown_key", p);
  }
}

inline void apply_json(DarkroomSpec& c, const json& j, const std::string& path) {
  using namespace detail;
  if (!j.is_object()) fail("config/type_mismatch", path + " expects an object");
  for (const auto& [k, v] : j.items()) {
    const std::string p = path + "." + k;
    if (k == "grid_size") c.grid_size = get_int(v, p);
    else if (k == "horizon") c.horizon = get_int(v, p);
    else if (k == "pixel") c.pixel = get_bool(v, p);
    else if (k == "image_w") c.image_w = get_int(v, p);
    else if (k == "image_h") c.image_h = get_int(v, p);
    else fail("config/unknown_key", p);
  }
}

inline void apply_json(TrainConfig& c, const json& j, const std::string& path) {
  using namespace detail;
  if (!j.is_object()) fail("config/type_mismatch", path + " expects an object");
  for (const auto& [k, v] : j.items()) {
    const std::string p = path + "." + k;
    if (k == "rollout_len" || k == "T") c.rollout_len = get_int(v, p);
    else if (k == "updates_per_rollout" || k == "K") c.updates_per_rollout = get_int(v, p);
    else if (k == "gamma") c.gamma = get_double(v, p);
    else if (k == "gae_tau") c.gae_tau = get_double(v, p);
    else if (k == "clip_eps") c.clip_eps = get_double(v, p);
    else if (k == "entropy_coef") c.entropy_coef = get_double(v, p);
    else if (k == "value_coef") c.value_coef = get_double(v, p);
    else if (k == "lr_initial") c.lr_initial = get_double(v, p);
    else if (k == "lr_peak") c.lr_peak = get_double(v, p);
    else if (k == "warmup_env_steps") c.warmup_env_steps = get_i64(v, p);
    else if (k == "total_env_steps") c.total_env_steps = get_i64(v, p);
    else if (k == "workers") c.workers = get_int(v, p);
    else if (k == "epochs_per_update") c.epochs_per_update = get_int(v, p);
    else if (k == "max_grad_norm") c.max_grad_norm = get_double(v, p);
    else if (k == "adam_beta1") c.adam_beta1 = get_double(v, p);
    else if (k == "adam_beta2") c.adam_beta2 = get_double(v, p);
    else if (k == "adam_eps") c.adam_eps = get_double(v, p);
    else if (k == "normalize_advantage") c.normalize_advantage = get_bool(v, p);
    else if (k == "checkpoint_every_rollouts") c.checkpoint_every_rollouts = get_int(v, p);
    else if (k == "eval_every_rollouts") c.eval_every_rollouts = get_int(v, p);
    else if (k == "eval_trials") c.eval_trials = get_int(v, p);
    else if (k == "eval_episodes") c.eval_episodes = get_int(v, p);
    else if (k == "threads") c.threads = get_int(v, p);
    else fail("config/unknown_key", p);
  }
}

inline void apply_json(EvalConfig& c, const json& j, const std::string& path) {
  using namespace detail;
  if (!j.is_object()) fail("config/type_mismatch", path + " expects an object");
  for (const auto& [k, v] : j.items()) {
    const std::string p = path + "." + k;
    if (k == "trials") c.trials = get_int(v, p);
    else if (k == "episodes") c.episodes = get_int(v, p);
    else if (k == "context_multiplier") c.context_multiplier = get_int(v, p);
    else if (k == "demos") c.demos = get_int(v, p);
    else if (k == "fewshot_trials") c.fewshot_trials = get_int(v, p);
    else if (k == "argmax") c.argmax = get_bool(v, p);
    else if (k == "threads") c.threads = get_int(v, p);
    else fail("config/unknown_key", p);
  }
}

inline void apply_json(ExperimentConfig& c, const json& j, const std::string& path = "") {
  using namespace detail;
  if (!j.is_object()) fail("config/type_mismatch", "top level expects an object");
  for (const auto& [k, v] : j.items()) {
    const std::string p = path.empty() ? k : path + "." + k;
    if (k == "seed") c.seed = get_u64(v, p);
    else if (k == "out_dir") c.out_dir = get_string(v, p);
    else if (k == "model") apply_json(c.model, v, p);
    else if (k == "env") apply_json(c.env, v, p);
    else if (k == "train") apply_json(c.train, v, p);
    else if (k == "eval") apply_json(c.eval, v, p);
    else fail("config/unknown_key", p);
  }
}

inline json to_json(const ModelConfig& c) {
  return json{{"n_layers", c.n_layers},
              {"n_heads", c.n_heads},
              {"d_model", c.d_model},
              {"d_mlp", c.d_mlp},
              {"n_sinks", c.n_sinks},
              {"sink_variant", to_string(c.sink_variant)},
              {"rope_base", c.rope_base},
              {"max_within_episode_len", c.max_within_episode_len},
              {"depth_dropout", c.depth_dropout},
              {"attention_mask", to_string(c.attention_mask)}};
}

inline json to_json(const DarkroomSpec& c) {
  return json{{"grid_size", c.grid_size},
              {"horizon", c.horizon},
              {"pixel", c.pixel},
              {"image_w", c.image_w},
              {"image_h", c.image_h}};
}

inline json to_json(const TrainConfig& c) {
  return json{{"rollout_len", c.rollout_len},
              {"updates_per_rollout", c.updates_per_rollout},
              {"gamma", c.gamma},
              {"gae_tau", c.gae_tau},
              {"clip_eps", c.clip_eps},
              {"entropy_coef", c.entropy_coef},
              {"value_coef", c.value_coef},
              {"lr_initial", c.lr_initial},
              {"lr_peak", c.lr_peak},
              {"warmup_env_steps", c.warmup_env_steps},
              {"total_env_steps", c.total_env_steps},
              {"workers", c.workers},
              {"epochs_per_update", c.epochs_per_update},
              {"max_grad_norm", c.max_grad_norm},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"normalize_advantage", c.normalize_advantage},
              {"checkpoint_every_rollouts", c.checkpoint_every_rollouts},
              {"eval_every_rollouts", c.eval_every_rollouts},
              {"eval_trials", c.eval_trials},
              {"eval_episodes", c.eval_episodes},
              {"threads", c.threads}};
}

inline json to_json(const EvalConfig& c) {
  return json{{"trials", c.trials},
              {"episodes", c.episodes},
              {"context_multiplier", c.context_multiplier},
              {"demos", c.demos},
              {"fewshot_trials", c.fewshot_trials},
              {"argmax", c.argmax},
              {"threads", c.threads}};
}

inline json to_json(const ExperimentConfig& c) {
  return json{{"seed", c.seed},
              {"out_dir", c.out_dir},
              {"model", to_json(c.model)},
              {"env", to_json(c.env)},
              {"train", to_json(c.train)},
              {"eval", to_json(c.eval)}};
}

// Fills the environment-derived model fields and checks every config
// invariant. Must be called after all overrides are applied.
inline void finalize_config(ExperimentConfig& c) {
  c.model.action_count = DarkroomSpec::kActionCount;
  if (c.env.pixel) {
    c.model.obs = ObsSpec{0, c.env.image_w, c.env.image_h, 3};
  } else {
    c.model.obs = ObsSpec{2, 0, 0, 0};
  }

  check(c.env.grid_size >= 2, "config/bad_value", "env.grid_size must be >= 2");
  check(c.env.horizon >= 1, "config/bad_value", "env.horizon must be >= 1");
  check(!c.env.pixel || (c.env.image_w >= c.env.grid_size && c.env.image_h >= c.env.grid_size),
        "config/bad_value", "env.image_w/h must be >= env.grid_size");

  check(c.model.n_layers >= 1, "config/bad_value", "model.n_layers must be >= 1");
  check(c.model.n_heads >= 1, "config/bad_value", "model.n_heads must be >= 1");
  check(c.model.d_model % c.model.n_heads == 0, "config/bad_value",
        "model.d_model must be divisible by model.n_heads");
  check(c.model.d_head() % 2 == 0, "config/bad_value",
        "model.d_model / model.n_heads must be even (RoPE pairs)");
  check(c.model.n_sinks >= 0, "config/bad_value", "model.n_sinks must be >= 0");
  if (c.model.sink_variant == SinkVariant::kNone) {
    check(c.model.n_sinks == 0, "config/bad_value", "model.n_sinks must be 0 with sink_variant none");
  } else if (c.model.sink_variant != SinkVariant::kSinkK0V0) {
    check(c.model.n_sinks >= 1, "config/bad_value",
          std::string("model.n_sinks must be >= 1 with sink_variant ") + to_string(c.model.sink_variant));
  }
  check(c.model.max_within_episode_len >= c.env.horizon, "config/bad_value",
        "model.max_within_episode_len must be >= env.horizon");
  check(c.model.depth_dropout >= 0.0 && c.model.depth_dropout < 1.0, "config/bad_value",
        "model.depth_dropout must be in [0, 1)");

  check(c.train.updates_per_rollout >= 1, "config/bad_value", "train.updates_per_rollout must be >= 1");
  check(c.train.rollout_len >= 1, "config/bad_value", "train.rollout_len must be >= 1");
  check(c.train.rollout_len % c.train.updates_per_rollout == 0, "config/bad_value",
        "train.updates_per_rollout must divide train.rollout_len");
  check(c.train.gamma > 0.0 && c.train.gamma <= 1.0, "config/bad_value", "train.gamma must be in (0, 1]");
  check(c.train.gae_tau >= 0.0 && c.train.gae_tau <= 1.0, "config/bad_value",
        "train.gae_tau must be in [0, 1]");
  check(c.train.workers >= 1, "config/bad_value", "train.workers must be >= 1");
  check(c.train.epochs_per_update >= 1, "config/bad_value", "train.epochs_per_update must be >= 1");
  check(c.train.total_env_steps >= 1, "config/bad_value", "train.total_env_steps must be >= 1");
  check(c.train.warmup_env_steps >= 1, "config/bad_value", "train.warmup_env_steps must be >= 1");

  check(c.eval.trials >= 1, "config/bad_value", "eval.trials must be >= 1");
  check(c.eval.episodes >= 1, "config/bad_value", "eval.episodes must be >= 1");
  check(c.eval.context_multiplier >= 1, "config/bad_value", "eval.context_multiplier must be >= 1");
  check(c.eval.demos >= 0, "config/bad_value", "eval.demos must be >= 0");
}

// Applies one `--set key=value` override. The value is parsed as JSON when
// possible, otherwise taken as a string.
inline void apply_override(json& root, const std::string& kv) {
  const auto eq = kv.find('=');
  check(eq != std::string::npos && eq > 0, "config/bad_override",
        "override must be key=value, got '" + kv + "'");
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &root;
  size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    check(!part.empty(), "config/bad_override", "empty path segment in '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace relic
