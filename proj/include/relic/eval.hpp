#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "relic/categorical.hpp"
#include "relic/common.hpp"
#include "relic/config.hpp"
#include "relic/env.hpp"
#include "relic/model.hpp"
#include "relic/rng.hpp"
#include "relic/threading.hpp"

namespace relic {

// Per-episode-index aggregates over a set of independent trials, plus the raw
// per-trial return matrix so downstream checks can recompute everything.
struct TrialMetrics {
  int trials = 0;
  int episodes = 0;
  int context_len = 0;
  std::vector<double> mean_return, stderr_return, mean_length;
  std::vector<int> count;
  Mat<double> raw;  // [trials, episodes]

  void aggregate() {
    mean_return.assign(episodes, 0.0);
    stderr_return.assign(episodes, 0.0);
    mean_length.assign(episodes, 0.0);
    count.assign(episodes, trials);
    for (int e = 0; e < episodes; ++e) {
      double m = raw.col(e).mean();
      mean_return[e] = m;
      if (trials > 1) {
        const double var = (raw.col(e).array() - m).square().sum() / (trials - 1);
        stderr_return[e] = std::sqrt(var / trials);
      }
    }
  }
};

namespace detail {

// Builds the next policy token from a step result (fields carry across
// episode boundaries within a trial; only the trial's first token is blank).
inline TokenInput next_token(const StepResult& r, const TrialEnv& env, int action) {
  TokenInput t;
  t.obs = r.obs;
  t.prev_action = action;
  t.prev_reward = r.reward;
  t.episode = env.episode();
  t.pos = env.pos();
  return t;
}

inline TokenInput first_token(const TrialEnv& env, int action_count) {
  TokenInput t;
  t.obs = env.obs();
  t.prev_action = action_count;  // "none"
  t.prev_reward = 0.0f;
  t.episode = env.episode();
  t.pos = env.pos();
  return t;
}

}  // namespace detail

// Runs `episodes` back-to-back episodes of one trial through a single cache,
// sampling actions from the actor (argmax optional). Returns per-episode sums.
template <typename S>
inline std::vector<double> run_trial(Policy<S>& policy, const DarkroomSpec& spec,
                                     uint64_t trial_seed, uint64_t policy_seed, int episodes,
                                     bool argmax, std::vector<Mat<S>>* step_masses = nullptr) {
  TrialEnv env(spec, trial_seed);
  KVCache<S> cache = policy.make_cache(episodes * spec.horizon + policy.token_sinks());
  policy.seed_cache(cache);
  Rng arng(policy_seed);
  std::vector<double> returns(episodes, 0.0);
  TokenInput pending = detail::first_token(env, policy.cfg.action_count);
  const int total = episodes * spec.horizon;
  AttnMasses<S> masses;
  for (int t = 0; t < total; ++t) {
    ForwardOptions<S> opts;
    if (step_masses) opts.probe = &masses;
    const auto out = policy.forward({pending}, cache, opts);
    if (step_masses) {
      // one row per (layer, head) triple of masses for this query step
      Mat<S> m(policy.cfg.n_layers * policy.cfg.n_heads, 3);
      for (int l = 0; l < policy.cfg.n_layers; ++l)
        for (int h = 0; h < policy.cfg.n_heads; ++h) {
          m(l * policy.cfg.n_heads + h, 0) = masses.sink[l](0, h);
          m(l * policy.cfg.n_heads + h, 1) = masses.same_episode[l](0, h);
          m(l * policy.cfg.n_heads + h, 2) = masses.earlier_episode[l](0, h);
        }
      step_masses->push_back(std::move(m));
    }
    const auto pick = argmax ? argmax_action(out.logits.row(0).data(), policy.cfg.action_count)
                             : sample_action(out.logits.row(0).data(), policy.cfg.action_count,
                                             arng);
    const StepResult r = env.step(pick.action);
    returns[r.episode] += r.reward;
    pending = detail::next_token(r, env, pick.action);
  }
  return returns;
}

// In-context-learning curve: independent seeded trials, aggregated per
// episode index.
template <typename S>
inline TrialMetrics evaluate_trials(Policy<S>& policy, const DarkroomSpec& spec, int trials,
                                    int episodes, uint64_t base_seed, bool argmax,
                                    int threads = 1) {
  check(trials >= 1 && episodes >= 1, "eval/bad_args", "need trials >= 1, episodes >= 1");
  policy.prepare_episodes(episodes + 1);
  TrialMetrics tm;
  tm.trials = trials;
  tm.episodes = episodes;
  tm.context_len = episodes * spec.horizon;
  tm.raw.resize(trials, episodes);
  parallel_for(trials, threads, [&](int t) {
    const auto ret = run_trial(policy, spec, derive_seed(base_seed, rng_domain::kEvalTrial, t),
                               derive_seed(base_seed, rng_domain::kEvalPolicy, t), episodes,
                               argmax);
    for (int e = 0; e < episodes; ++e) tm.raw(t, e) = ret[e];
  });
  tm.aggregate();
  return tm;
}

// Evaluation at a multiple of the training context; identical to
// evaluate_trials when the multiplier is 1 (same seeds, same trials).
template <typename S>
inline TrialMetrics context_generalization_eval(Policy<S>& policy, const DarkroomSpec& spec,
                                                int trials, int train_episodes, int multiplier,
                                                uint64_t base_seed, bool argmax,
                                                int threads = 1) {
  return evaluate_trials(policy, spec, trials, train_episodes * multiplier, base_seed, argmax,
                         threads);
}

// Oracle demonstrations for episodes 0..n_demos-1 of a trial, tokenized
// exactly like live experience. Returns the demo tokens and leaves `env` at
// the start of episode n_demos with `pending` being that episode's first
// policy token.
template <typename S>
inline std::vector<TokenInput> oracle_demo_tokens(const Policy<S>& policy, TrialEnv& env,
                                                  int n_demos, TokenInput& pending) {
  std::vector<TokenInput> demo;
  pending = detail::first_token(env, policy.cfg.action_count);
  for (int d = 0; d < n_demos; ++d) {
    for (int t = 0; t < env.spec().horizon; ++t) {
      const int a = env.oracle_action();
      demo.push_back(pending);
      const StepResult r = env.step(a);
      pending = detail::next_token(r, env, a);
    }
  }
  return demo;
}

// First-episode return with n_demos oracle episodes pre-loaded into the
// context; n_demos = 0 degenerates to the first episode of evaluate_trials
// (same seeds, bit-identical).
template <typename S>
inline std::vector<double> few_shot_returns(Policy<S>& policy, const DarkroomSpec& spec,
                                            int n_demos, int trials, uint64_t base_seed,
                                            bool argmax, int threads = 1) {
  check(n_demos >= 0, "eval/bad_args", "n_demos must be >= 0");
  policy.prepare_episodes(n_demos + 2);
  std::vector<double> out(trials, 0.0);
  parallel_for(trials, threads, [&](int t) {
    TrialEnv env(spec, derive_seed(base_seed, rng_domain::kEvalTrial, t));
    KVCache<S> cache = policy.make_cache((n_demos + 1) * spec.horizon + policy.token_sinks());
    policy.seed_cache(cache);
    TokenInput pending;
    const auto demo = oracle_demo_tokens(policy, env, n_demos, pending);
    if (!demo.empty()) policy.forward(demo, cache, ForwardOptions<S>{});
    Rng arng(derive_seed(base_seed, rng_domain::kEvalPolicy, t));
    double ret = 0.0;
    for (int step = 0; step < spec.horizon; ++step) {
      const auto o = policy.forward({pending}, cache, ForwardOptions<S>{});
      const auto pick = argmax
                            ? argmax_action(o.logits.row(0).data(), policy.cfg.action_count)
                            : sample_action(o.logits.row(0).data(), policy.cfg.action_count, arng);
      const StepResult r = env.step(pick.action);
      ret += r.reward;
      pending = detail::next_token(r, env, pick.action);
    }
    out[t] = ret;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Attention probing
// ---------------------------------------------------------------------------

struct HeadProfile {
  int layer = 0, head = 0;
  double sink = 0.0, same_episode = 0.0, earlier_episode = 0.0;
  std::string cls;
};

inline std::string classify_head(double sink, double same, double earlier) {
  if (sink > 0.9) return "zero";
  const double non_sink = same + earlier;
  if (non_sink > 1e-12) {
    if (same / non_sink > 0.8) return "intra";
    if (earlier / non_sink > 0.5) return "inter";
  }
  return "unclassified";
}

// Runs one probed trial and averages per-head masses over query steps
// [query_begin, query_end) of the trial's step sequence.
template <typename S>
inline std::vector<HeadProfile> attention_probe(Policy<S>& policy, const DarkroomSpec& spec,
                                                uint64_t trial_seed, uint64_t policy_seed,
                                                int episodes, int query_begin, int query_end,
                                                bool argmax) {
  const int total = episodes * spec.horizon;
  check(query_begin >= 0 && query_begin < query_end && query_end <= total, "probe/query_range",
        "query steps must lie in [0, " + std::to_string(total) + ")");
  policy.prepare_episodes(episodes + 1);
  std::vector<Mat<S>> step_masses;
  run_trial(policy, spec, trial_seed, policy_seed, episodes, argmax, &step_masses);

  const int H = policy.cfg.n_heads;
  std::vector<HeadProfile> out;
  for (int l = 0; l < policy.cfg.n_layers; ++l) {
    for (int h = 0; h < H; ++h) {
      HeadProfile p;
      p.layer = l;
      p.head = h;
      for (int q = query_begin; q < query_end; ++q) {
        p.sink += static_cast<double>(step_masses[q](l * H + h, 0));
        p.same_episode += static_cast<double>(step_masses[q](l * H + h, 1));
        p.earlier_episode += static_cast<double>(step_masses[q](l * H + h, 2));
      }
      const double n = query_end - query_begin;
      p.sink /= n;
      p.same_episode /= n;
      p.earlier_episode /= n;
      p.cls = classify_head(p.sink, p.same_episode, p.earlier_episode);
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace relic
