#include "test_util.hpp"

using namespace relic;

TEST_CASE("empty json yields the stock Darkroom preset", "[config]") {
  ExperimentConfig c;
  apply_json(c, json::object());
  finalize_config(c);
  CHECK(c.model.n_layers == 2);
  CHECK(c.model.n_heads == 8);
  CHECK(c.model.d_model == 64);
  CHECK(c.model.n_sinks == 1);
  CHECK(c.model.sink_variant == SinkVariant::kSinkK0V0);
  CHECK(c.train.rollout_len == 512);
  CHECK(c.train.updates_per_rollout == 4);
  CHECK(c.env.grid_size == 10);
  CHECK(c.env.horizon == 100);
  // finalize wires the env into the model
  CHECK(c.model.action_count == 5);
  CHECK(c.model.obs.state_dim == 2);
  CHECK_FALSE(c.model.obs.has_image());
}

TEST_CASE("nested overrides apply and unknown keys are rejected", "[config]") {
  ExperimentConfig c;
  json j = {{"train", {{"updates_per_rollout", 1}, {"gamma", 0.9}}},
            {"model", {{"d_model", 32}, {"sink_variant", "sink_kv"}}}};
  apply_json(c, j);
  CHECK(c.train.updates_per_rollout == 1);
  CHECK(c.train.gamma == Catch::Approx(0.9));
  CHECK(c.model.d_model == 32);
  CHECK(c.model.sink_variant == SinkVariant::kSinkKV);

  test_util::expect_error(
      [&] {
        ExperimentConfig d;
        apply_json(d, json{{"train", {{"gamm", 0.5}}}});
      },
      "config/unknown_key");
  test_util::expect_error(
      [&] {
        ExperimentConfig d;
        apply_json(d, json{{"trian", json::object()}});
      },
      "config/unknown_key");
  test_util::expect_error(
      [&] {
        ExperimentConfig d;
        apply_json(d, json{{"train", {{"gamma", "high"}}}});
      },
      "config/type_mismatch");
}

TEST_CASE("short train aliases K and T work", "[config]") {
  ExperimentConfig c;
  apply_json(c, json{{"train", {{"K", 1}, {"T", 128}}}});
  CHECK(c.train.updates_per_rollout == 1);
  CHECK(c.train.rollout_len == 128);
  // canonical names round-trip through to_json
  const json out = to_json(c);
  CHECK(out["train"]["updates_per_rollout"] == 1);
  CHECK(out["train"]["rollout_len"] == 128);
  CHECK_FALSE(out["train"].contains("K"));
}

TEST_CASE("config json round-trips", "[config]") {
  ExperimentConfig c;
  c.seed = 77;
  c.model.sink_variant = SinkVariant::kSinkToken;
  c.model.n_sinks = 3;
  c.env.pixel = true;
  c.train.total_env_steps = 1234567;
  finalize_config(c);
  const json j = to_json(c);
  ExperimentConfig d;
  apply_json(d, j);
  finalize_config(d);
  CHECK(to_json(d) == j);
  CHECK(d.seed == 77);
  CHECK(d.model.sink_variant == SinkVariant::kSinkToken);
  CHECK(d.model.obs.has_image());
  CHECK(d.model.obs.image_dim() == 25 * 25 * 3);
}

TEST_CASE("apply_override parses dotted key=value pairs", "[config]") {
  json root = json::object();
  apply_override(root, "train.updates_per_rollout=1");
  apply_override(root, "model.depth_dropout=0.05");
  apply_override(root, "out_dir=runs/x");
  apply_override(root, "eval.argmax=true");
  CHECK(root["train"]["updates_per_rollout"] == 1);
  CHECK(root["model"]["depth_dropout"] == Catch::Approx(0.05));
  CHECK(root["out_dir"] == "runs/x");  // non-json value falls back to string
  CHECK(root["eval"]["argmax"] == true);

  test_util::expect_error([&] { apply_override(root, "no_equals_sign"); },
                          "config/bad_override");
  test_util::expect_error([&] { apply_override(root, "=5"); }, "config/bad_override");
}

TEST_CASE("finalize_config validates invariants", "[config]") {
  auto broken = [](const std::function<void(ExperimentConfig&)>& mutate, const std::string& cls) {
    ExperimentConfig c;
    mutate(c);
    test_util::expect_error([&] { finalize_config(c); }, cls);
  };
  broken([](ExperimentConfig& c) { c.train.updates_per_rollout = 3; }, "config/bad_value");
  broken([](ExperimentConfig& c) { c.model.d_model = 65; }, "config/bad_value");
  broken(
      [](ExperimentConfig& c) {
        c.model.sink_variant = SinkVariant::kSinkKV;
        c.model.n_sinks = 0;
      },
      "config/bad_value");  // parameterful variants need a slot
  broken(
      [](ExperimentConfig& c) {
        c.model.sink_variant = SinkVariant::kNone;
        c.model.n_sinks = 1;
      },
      "config/bad_value");
  broken([](ExperimentConfig& c) { c.train.gamma = 0.0; }, "config/bad_value");
  broken([](ExperimentConfig& c) { c.train.gae_tau = 1.5; }, "config/bad_value");
  broken([](ExperimentConfig& c) { c.model.max_within_episode_len = 50; }, "config/bad_value");
  broken([](ExperimentConfig& c) { c.model.depth_dropout = 1.0; }, "config/bad_value");
  broken([](ExperimentConfig& c) { c.train.workers = 0; }, "config/bad_value");
  broken([](ExperimentConfig& c) { c.env.grid_size = 1; }, "config/bad_value");

  // softmax-one slots are parameter-free, so zero of them is legal
  ExperimentConfig ok;
  ok.model.n_sinks = 0;
  CHECK_NOTHROW(finalize_config(ok));

  // d_head must stay even for the rotary pairing
  broken(
      [](ExperimentConfig& c) {
        c.model.d_model = 24;
        c.model.n_heads = 8;
      },
      "config/bad_value");
}

TEST_CASE("pixel env switches the observation spec", "[config]") {
  ExperimentConfig c;
  c.env.pixel = true;
  c.env.image_w = 25;
  c.env.image_h = 25;
  finalize_config(c);
  CHECK(c.model.obs.image_w == 25);
  CHECK(c.model.obs.image_h == 25);
  CHECK(c.model.obs.image_c == 3);
  CHECK(c.model.obs.state_dim == 0);

  // image must be able to resolve the grid
  ExperimentConfig d;
  d.env.pixel = true;
  d.env.image_w = 5;
  test_util::expect_error([&] { finalize_config(d); }, "config/bad_value");
}
