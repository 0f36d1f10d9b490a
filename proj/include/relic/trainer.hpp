#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "relic/categorical.hpp"
#include "relic/checkpoint.hpp"
#include "relic/common.hpp"
#include "relic/config.hpp"
#include "relic/env.hpp"
#include "relic/eval.hpp"
#include "relic/metrics.hpp"
#include "relic/model.hpp"
#include "relic/rng.hpp"
#include "relic/rollout.hpp"
#include "relic/threading.hpp"

namespace relic {

// ---------------------------------------------------------------------------
// Schedule arithmetic
// ---------------------------------------------------------------------------

struct UpdateWindow {
  int collect_end;  // context is [0, collect_end)
  int loss_start;   // loss is [loss_start, collect_end)
};

// K windows over a rollout of T steps: the first K-1 are partial updates
// (loss on the newest T/K steps only), the K-th is the full update (loss on
// everything collected).
inline std::vector<UpdateWindow> partial_update_schedule(int T, int K) {
  check(K >= 1, "schedule/bad_k", "need K >= 1");
  check(T % K == 0, "schedule/indivisible",
        "K=" + std::to_string(K) + " does not divide T=" + std::to_string(T));
  const int seg = T / K;
  std::vector<UpdateWindow> out(K);
  for (int n = 1; n <= K; ++n) {
    out[n - 1].collect_end = n * seg;
    out[n - 1].loss_start = (n == K) ? 0 : (n - 1) * seg;
  }
  return out;
}

// ---------------------------------------------------------------------------
// GAE (double precision; the buffers store float)
// ---------------------------------------------------------------------------

inline void compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                        const std::vector<uint8_t>& dones, double bootstrap, double gamma,
                        double tau, std::vector<double>& adv, std::vector<double>& ret) {
  const int n = static_cast<int>(rewards.size());
  check(static_cast<int>(values.size()) == n && static_cast<int>(dones.size()) == n,
        "gae/shape", "aligned arrays required");
  for (double r : rewards) check(std::isfinite(r), "gae/non_finite", "reward");
  for (double v : values) check(std::isfinite(v), "gae/non_finite", "value");
  check(std::isfinite(bootstrap), "gae/non_finite", "bootstrap value");
  adv.assign(n, 0.0);
  ret.assign(n, 0.0);
  double acc = 0.0;
  for (int t = n - 1; t >= 0; --t) {
    const double nonterm = dones[t] ? 0.0 : 1.0;
    const double v_next = (t == n - 1) ? bootstrap : values[t + 1];
    const double delta = rewards[t] + gamma * v_next * nonterm - values[t];
    acc = delta + gamma * tau * nonterm * acc;
    adv[t] = acc;
    ret[t] = acc + values[t];
  }
}

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup then cosine decay to zero
// ---------------------------------------------------------------------------

inline double lr_schedule(int64_t env_step, const TrainConfig& c) {
  if (env_step >= c.total_env_steps) return 0.0;
  if (env_step < c.warmup_env_steps) {
    const double f = static_cast<double>(env_step) / static_cast<double>(c.warmup_env_steps);
    return c.lr_initial + (c.lr_peak - c.lr_initial) * f;
  }
  const double span = static_cast<double>(std::max<int64_t>(1, c.total_env_steps - c.warmup_env_steps));
  const double p = static_cast<double>(env_step - c.warmup_env_steps) / span;
  return c.lr_peak * 0.5 * (1.0 + std::cos(M_PI * p));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

template <typename S>
struct Adam {
  ParamSet<S> m, v;
  int64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-5;

  void init(const ParamSet<S>& params, const TrainConfig& c) {
    m = params.zeros_like();
    v = params.zeros_like();
    t = 0;
    beta1 = c.adam_beta1;
    beta2 = c.adam_beta2;
    eps = c.adam_eps;
  }

  void step(ParamSet<S>& params, const ParamSet<S>& grads, double lr) {
    ++t;
    const S bc1 = static_cast<S>(1.0 - std::pow(beta1, static_cast<double>(t)));
    const S bc2 = static_cast<S>(1.0 - std::pow(beta2, static_cast<double>(t)));
    const S b1 = static_cast<S>(beta1), b2 = static_cast<S>(beta2);
    const S lr_s = static_cast<S>(lr), eps_s = static_cast<S>(eps);
    for (size_t i = 0; i < params.entries.size(); ++i) {
      auto& p = params.entries[i];
      if (!p.learnable) continue;
      const auto& g = grads.entries[i].value;
      auto& mi = m.entries[i].value;
      auto& vi = v.entries[i].value;
      mi = b1 * mi + (S(1) - b1) * g;
      vi.array() = b2 * vi.array() + (S(1) - b2) * g.array().square();
      p.value.array() -=
          lr_s * (mi.array() / bc1) / ((vi.array() / bc2).sqrt() + eps_s);
    }
    check_all_finite(params, "train/non_finite_params");
  }
};

// Scales learnable gradients so their global L2 norm is at most max_norm;
// returns the pre-clip norm.
template <typename S>
inline double clip_grad_norm(ParamSet<S>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& e : grads.entries)
    if (e.learnable) sq += static_cast<double>(e.value.squaredNorm());
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const S sc = static_cast<S>(max_norm / norm);
    for (auto& e : grads.entries)
      if (e.learnable) e.value *= sc;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// PPO loss over one worker's loss window. Loss math runs in double; gradients
// are written back in the working precision, already divided by the pooled
// step count so per-worker backward calls just accumulate.
// ---------------------------------------------------------------------------

struct LossStats {
  double total = 0, policy = 0, value = 0, entropy = 0, clip_frac = 0;
  int n = 0;
  void merge(const LossStats& o) {
    total += o.total;
    policy += o.policy;
    value += o.value;
    entropy += o.entropy;
    clip_frac += o.clip_frac;
    n += o.n;
  }
  void finalize() {
    if (n == 0) return;
    total /= n;
    policy /= n;
    value /= n;
    entropy /= n;
    clip_frac /= n;
  }
};

template <typename S>
inline LossStats ppo_loss_window(const Mat<S>& logits, const Vec<S>& values, int row_offset,
                                 int loss_begin, int loss_end, const std::vector<int>& actions,
                                 const std::vector<float>& old_logps,
                                 const std::vector<double>& adv, const std::vector<double>& ret,
                                 const TrainConfig& c, int pooled_n, Mat<S>& d_logits,
                                 Vec<S>& d_value) {
  LossStats st;
  const int A = static_cast<int>(logits.cols());
  const double inv_n = 1.0 / pooled_n;
  for (int i = loss_begin; i < loss_end; ++i) {
    const int row = row_offset + i;
    const auto lp = log_softmax_row(logits.row(row).data(), A);
    const int a = actions[i];
    const double logp_new = lp[a];
    const double rho = std::exp(logp_new - static_cast<double>(old_logps[i]));
    const double ad = adv[i - loss_begin];
    const double surr1 = rho * ad;
    const double rho_clip = std::clamp(rho, 1.0 - c.clip_eps, 1.0 + c.clip_eps);
    const double surr2 = rho_clip * ad;
    const double pol = -std::min(surr1, surr2);
    const double v_new = static_cast<double>(values(row));
    const double verr = v_new - ret[i - loss_begin];
    double ent = 0.0;
    for (int k = 0; k < A; ++k) ent -= std::exp(lp[k]) * lp[k];

    st.policy += pol;
    st.value += verr * verr;
    st.entropy += ent;
    st.clip_frac += (rho < 1.0 - c.clip_eps || rho > 1.0 + c.clip_eps) ? 1.0 : 0.0;
    st.n += 1;

    // d policy / d logp_a: active unless the clipped branch is selected and
    // saturated.
    const bool active = surr1 <= surr2 || (rho >= 1.0 - c.clip_eps && rho <= 1.0 + c.clip_eps);
    const double g_logp = active ? -ad * rho : 0.0;
    for (int k = 0; k < A; ++k) {
      const double p_k = std::exp(lp[k]);
      double g = g_logp * ((k == a ? 1.0 : 0.0) - p_k);          // policy term
      g += c.entropy_coef * p_k * (lp[k] + ent);                 // -coef * entropy
      d_logits(row, k) = static_cast<S>(g * inv_n);
    }
    d_value(row) = static_cast<S>(c.value_coef * 2.0 * verr * inv_n);
  }
  st.total = st.policy + c.value_coef * st.value - c.entropy_coef * st.entropy;
  return st;
}

// ---------------------------------------------------------------------------
// Trainer: owns the policy, optimizer, workers, buffers and caches, and runs
// the collect / partial-update / shuffle / rebuild loop.
// ---------------------------------------------------------------------------

template <typename S = float>
class Trainer {
 public:
  explicit Trainer(const ExperimentConfig& cfg)
      : cfg_(cfg),
        policy_(cfg.model),
        envs_(cfg.env, cfg.train.workers),
        buffers_(cfg.train.workers),
        caches_(cfg.train.workers),
        pending_(cfg.train.workers),
        policy_rng_(cfg.train.workers),
        episode_acc_(cfg.train.workers, 0.0),
        completed_(cfg.train.workers) {
    const int T = cfg_.train.rollout_len;
    for (auto& b : buffers_) b.alloc(T);
    // +1 row of headroom for the transient bootstrap peek at a window end
    for (auto& c : caches_) c = policy_.make_cache(T + policy_.token_sinks() + 1);
    grads_ = ParamSet<S>{};
  }

  void init_fresh() {
    policy_.init(cfg_.seed);
    adam_.init(policy_.params, cfg_.train);
    grads_ = policy_.params.zeros_like();
    env_steps_ = 0;
    rollout_index_ = 0;
  }

  void resume(const Checkpoint<S>& ck) {
    policy_.init(cfg_.seed);
    match_param_shapes(policy_.params, ck.params);
    policy_.params = ck.params;
    adam_.init(policy_.params, cfg_.train);
    if (ck.has_adam) {
      adam_.m = ck.adam_m;
      adam_.v = ck.adam_v;
      adam_.t = ck.adam_t;
    }
    grads_ = policy_.params.zeros_like();
    env_steps_ = ck.env_steps;
    rollout_index_ = ck.rollout_index;
  }

  Policy<S>& policy() { return policy_; }
  const Policy<S>& policy() const { return policy_; }
  Adam<S>& adam() { return adam_; }
  int64_t env_steps() const { return env_steps_; }
  int64_t rollout_index() const { return rollout_index_; }
  double mean_return_so_far() const {
    return episodes_done_ > 0 ? return_sum_ / episodes_done_ : 0.0;
  }

  // One full rollout: K windows of collect + update + shuffle + rebuild.
  void train_one_rollout(MetricsWriter* mw = nullptr) {
    const auto& tc = cfg_.train;
    const int W = tc.workers, T = tc.rollout_len, K = tc.updates_per_rollout;
    const auto schedule = partial_update_schedule(T, K);
    const int max_ep_bound = T / std::max(1, cfg_.env.horizon) + 2;
    policy_.prepare_episodes(max_ep_bound);
    begin_rollout();

    std::vector<double> rollout_returns;
    std::vector<double> bootstrap(W, 0.0);
    std::vector<std::vector<double>> adv(W), ret(W);

    for (int n = 1; n <= K; ++n) {
      const auto& win = schedule[n - 1];
      const int seg_begin = (n == 1) ? 0 : schedule[n - 2].collect_end;
      const int64_t update_counter = rollout_index_ * K + (n - 1);

      // ---- collect ----
      parallel_for(W, tc.threads, [&](int w) {
        auto& env = envs_.worker(w);
        auto& buf = buffers_[w];
        auto& cache = caches_[w];
        for (int step = seg_begin; step < win.collect_end; ++step) {
          const auto out = policy_.forward({pending_[w]}, cache, ForwardOptions<S>{});
          const auto pick =
              sample_action(out.logits.row(0).data(), cfg_.model.action_count, policy_rng_[w]);
          const StepResult r = env.step(pick.action);
          buf.append(pending_[w], pick.action, static_cast<float>(pick.logp),
                     static_cast<float>(out.value(0)), r.reward, r.done);
          episode_acc_[w] += r.reward;
          if (r.done) {
            completed_[w].push_back(episode_acc_[w]);
            episode_acc_[w] = 0.0;
          }
          pending_[w] = detail::next_token(r, env, pick.action);
        }
        // one-step peek: collection-time bootstrap value for the window end
        const auto peek = policy_.forward({pending_[w]}, cache, ForwardOptions<S>{});
        bootstrap[w] = static_cast<double>(peek.value(0));
        cache.len -= 1;
      });
      env_steps_ += static_cast<int64_t>(W) * (win.collect_end - seg_begin);
      for (int w = 0; w < W; ++w) {
        for (double r : completed_[w]) {
          rollout_returns.push_back(r);
          return_sum_ += r;
          ++episodes_done_;
        }
        completed_[w].clear();
      }

      // ---- advantages over the loss window (collection-time values) ----
      const int wlen = win.collect_end - win.loss_start;
      double adv_mean = 0.0, adv_sq = 0.0;
      for (int w = 0; w < W; ++w) {
        const auto& buf = buffers_[w];
        std::vector<double> rew(wlen), val(wlen);
        std::vector<uint8_t> don(wlen);
        for (int i = 0; i < wlen; ++i) {
          rew[i] = buf.rewards[win.loss_start + i];
          val[i] = buf.values[win.loss_start + i];
          don[i] = buf.dones[win.loss_start + i];
        }
        compute_gae(rew, val, don, bootstrap[w], tc.gamma, tc.gae_tau, adv[w], ret[w]);
        for (double a : adv[w]) {
          adv_mean += a;
          adv_sq += a * a;
        }
      }
      const int pooled_n = W * wlen;
      if (tc.normalize_advantage) {
        adv_mean /= pooled_n;
        const double var = std::max(0.0, adv_sq / pooled_n - adv_mean * adv_mean);
        const double inv_std = 1.0 / (std::sqrt(var) + 1e-8);
        for (int w = 0; w < W; ++w)
          for (double& a : adv[w]) a = (a - adv_mean) * inv_std;
      }

      // ---- epochs of re-forward + ppo update ----
      LossStats win_stats;
      double grad_norm = 0.0, lr = 0.0;
      const int tok_s = policy_.token_sinks();
      for (int epoch = 0; epoch < tc.epochs_per_update; ++epoch) {
        for (auto& e : grads_.entries) e.value.setZero();
        LossStats epoch_stats;
        for (int w = 0; w < W; ++w) {
          auto& buf = buffers_[w];
          std::vector<TokenInput> toks = policy_.sink_tokens();
          toks.insert(toks.end(), buf.tokens.begin(), buf.tokens.begin() + win.collect_end);
          KVCache<S> cache = policy_.make_cache(static_cast<int>(toks.size()));
          Trace<S> trace;
          ForwardOptions<S> opts;
          opts.train = true;
          opts.trace = &trace;
          opts.dropout_seed =
              derive_seed(cfg_.seed, rng_domain::kDropout, static_cast<uint64_t>(w),
                          static_cast<uint64_t>(update_counter * tc.epochs_per_update + epoch));
          const auto out = policy_.forward(toks, cache, opts);

          Mat<S> d_logits = Mat<S>::Zero(out.logits.rows(), out.logits.cols());
          Vec<S> d_value = Vec<S>::Zero(out.value.size());
          const auto st = ppo_loss_window(out.logits, out.value, tok_s, win.loss_start,
                                          win.collect_end, buf.actions, buf.logps, adv[w], ret[w],
                                          tc, pooled_n, d_logits, d_value);
          epoch_stats.merge(st);
          policy_.backward(cache, trace, d_logits, d_value, grads_);
        }
        epoch_stats.finalize();
        check(std::isfinite(epoch_stats.total), "train/non_finite_loss",
              "rollout " + std::to_string(rollout_index_) + " window " + std::to_string(n) +
                  " epoch " + std::to_string(epoch));
        grad_norm = clip_grad_norm(grads_, tc.max_grad_norm);
        lr = lr_schedule(env_steps_, tc);
        adam_.step(policy_.params, grads_, lr);
        win_stats.merge(epoch_stats);
      }
      win_stats.n = tc.epochs_per_update;
      win_stats.finalize();

      // ---- shuffle + rebuild with the updated parameters ----
      if (n < K) {
        parallel_for(W, tc.threads, [&](int w) {
          Rng srng(derive_seed(cfg_.seed, rng_domain::kShuffle, static_cast<uint64_t>(w),
                               static_cast<uint64_t>(update_counter)));
          shuffle_context_episodes(buffers_[w], srng);
          rebuild_kv_cache(policy_, buffers_[w], buffers_[w].cursor, caches_[w]);
        });
      }

      if (mw) {
        mw->write("train-window", env_steps_,
                  {{"rollout", rollout_index_},
                   {"window", n},
                   {"loss_total", win_stats.total},
                   {"loss_policy", win_stats.policy},
                   {"loss_value", win_stats.value},
                   {"entropy", win_stats.entropy},
                   {"clip_frac", win_stats.clip_frac},
                   {"lr", lr},
                   {"grad_norm", grad_norm},
                   {"mean_return_so_far", mean_return_so_far()},
                   {"episodes_so_far", episodes_done_}});
      }
    }

    if (mw) {
      double mr = 0.0;
      for (double r : rollout_returns) mr += r;
      if (!rollout_returns.empty()) mr /= static_cast<double>(rollout_returns.size());
      mw->write("rollout", env_steps_,
                {{"rollout", rollout_index_},
                 {"mean_return", mr},
                 {"episodes", rollout_returns.size()},
                 {"mean_return_so_far", mean_return_so_far()}});
    }

    ++rollout_index_;
    for (auto& b : buffers_) b.clear();
    for (auto& c : caches_) c.clear();
  }

  // Full training loop with checkpoint/eval cadence.
  void run(const std::string& out_dir, MetricsWriter* mw) {
    check(cfg_.train.total_env_steps > 0, "train/zero_budget", "total_env_steps must be > 0");
    while (env_steps_ < cfg_.train.total_env_steps) {
      train_one_rollout(mw);
      const bool at_ckpt = cfg_.train.checkpoint_every_rollouts > 0 &&
                           rollout_index_ % cfg_.train.checkpoint_every_rollouts == 0;
      const bool at_eval = cfg_.train.eval_every_rollouts > 0 &&
                           rollout_index_ % cfg_.train.eval_every_rollouts == 0;
      const bool done = env_steps_ >= cfg_.train.total_env_steps;
      if (at_ckpt || done) save(out_dir + "/checkpoint_last.bin");
      if (at_eval || done) {
        const uint64_t eval_base =
            derive_seed(cfg_.seed, rng_domain::kEvalTrial, static_cast<uint64_t>(rollout_index_));
        auto tm = evaluate_trials(policy_, cfg_.env, cfg_.train.eval_trials,
                                  cfg_.train.eval_episodes, eval_base, false, cfg_.train.threads);
        const double overall = tm.raw.mean();
        if (mw) {
          mw->write("eval-trial", env_steps_,
                    {{"rollout", rollout_index_},
                     {"trials", tm.trials},
                     {"episodes", tm.episodes},
                     {"context_len", tm.context_len},
                     {"mean_return", overall},
                     {"per_episode_mean", tm.mean_return},
                     {"per_episode_stderr", tm.stderr_return}});
        }
        if (overall > best_eval_return_) {
          best_eval_return_ = overall;
          save(out_dir + "/checkpoint_best.bin");
        }
      }
    }
  }

  void save(const std::string& path) const {
    Checkpoint<S> ck;
    ck.config = to_json(cfg_);
    ck.params = policy_.params;
    ck.has_adam = true;
    ck.adam_m = adam_.m;
    ck.adam_v = adam_.v;
    ck.adam_t = adam_.t;
    ck.env_steps = env_steps_;
    ck.rollout_index = rollout_index_;
    save_checkpoint(path, ck);
  }

 private:
  void begin_rollout() {
    envs_.reset_trials(cfg_.seed, rollout_index_);
    for (int w = 0; w < envs_.size(); ++w) {
      buffers_[w].clear();
      caches_[w].clear();
      policy_.seed_cache(caches_[w]);
      pending_[w] = detail::first_token(envs_.worker(w), cfg_.model.action_count);
      policy_rng_[w] = Rng(derive_seed(cfg_.seed, rng_domain::kPolicy, static_cast<uint64_t>(w),
                                       static_cast<uint64_t>(rollout_index_)));
      episode_acc_[w] = 0.0;
      completed_[w].clear();
    }
  }

  ExperimentConfig cfg_;
  Policy<S> policy_;
  Adam<S> adam_;
  ParamSet<S> grads_;
  VectorEnv envs_;
  std::vector<RolloutBuffer<S>> buffers_;
  std::vector<KVCache<S>> caches_;
  std::vector<TokenInput> pending_;
  std::vector<Rng> policy_rng_;
  std::vector<double> episode_acc_;
  std::vector<std::vector<double>> completed_;
  int64_t env_steps_ = 0;
  int64_t rollout_index_ = 0;
  int64_t episodes_done_ = 0;
  double return_sum_ = 0.0;
  double best_eval_return_ = -1e300;
};

}  // namespace relic
