#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "relic/attention.hpp"
#include "relic/common.hpp"
#include "relic/config.hpp"
#include "relic/params.hpp"
#include "relic/rng.hpp"

namespace relic {

// One per env step. The policy conditions on the current observation plus the
// previous transition (action, reward), the episode index within the trial
// (rotary encoding) and the step index within the episode (learned table).
struct TokenInput {
  std::vector<float> obs;
  int prev_action = 0;  // action_count means "none" (episode start)
  float prev_reward = 0.0f;
  int episode = 0;
  int pos = 0;
  bool is_sink = false;  // sink_token rows only
};

template <typename S>
struct PolicyOutput {
  Mat<S> logits;  // [n, action_count]
  Vec<S> value;   // [n]
};

// Per-layer key/value rows for incremental decoding. Keys are stored after
// rotation; learned sink vectors are never stored here (they are re-read from
// the parameters on every attention call), but sink_token rows are ordinary
// cache rows flagged is_sink.
template <typename S>
struct KVCache {
  int capacity = 0;
  int len = 0;
  std::vector<Mat<S>> k, v;      // per layer, [capacity, d_model]
  std::vector<int> episode, pos, ep_start;
  std::vector<uint8_t> is_sink;

  void alloc(int cap, int n_layers, int d_model) {
    capacity = cap;
    len = 0;
    k.assign(n_layers, Mat<S>(cap, d_model));
    v.assign(n_layers, Mat<S>(cap, d_model));
    episode.assign(cap, 0);
    pos.assign(cap, 0);
    ep_start.assign(cap, 0);
    is_sink.assign(cap, 0);
  }
  void clear() { len = 0; }
};

// Everything the backward pass needs, saved by a train-mode forward.
template <typename S>
struct LayerTrace {
  Mat<S> x_in;               // residual stream entering the layer
  Mat<S> ln1_out, q;         // q after rotation
  Vec<S> ln1_inv;
  Mat<S> att_out;            // concatenated head outputs, before the out proj
  std::vector<S> att_w;      // ragged attention weights, row-major per (row, head)
  std::vector<int64_t> att_off;  // per-row offset into att_w
  Mat<S> x_mid;              // after the attention residual
  Mat<S> ln2_out, h_pre, h_act;
  Vec<S> ln2_inv;
  bool keep_attn = true, keep_mlp = true;
};

template <typename S>
struct Trace {
  int n = 0;
  Mat<S> obs;  // [n, obs_dim], zero rows for sink tokens
  std::vector<int> prev_action, pos, episode;
  std::vector<float> prev_reward;
  std::vector<uint8_t> is_sink;
  std::vector<LayerTrace<S>> layers;
  Mat<S> x_final, lnf_out;
  Vec<S> lnf_inv;
};

// Attention-mass buckets per query row, layer and head; cheap probe capture
// used to classify head behaviour without retaining raw weights.
template <typename S>
struct AttnMasses {
  std::vector<Mat<S>> sink, same_episode, earlier_episode;  // per layer, [n, H]
  void alloc(int n_layers, int n, int heads) {
    sink.assign(n_layers, Mat<S>::Zero(n, heads));
    same_episode.assign(n_layers, Mat<S>::Zero(n, heads));
    earlier_episode.assign(n_layers, Mat<S>::Zero(n, heads));
  }
};

template <typename S>
struct ForwardOptions {
  bool train = false;
  uint64_t dropout_seed = 0;
  Trace<S>* trace = nullptr;
  AttnMasses<S>* probe = nullptr;
};

template <typename S>
class Policy {
 public:
  ModelConfig cfg;
  ParamSet<S> params;

  Policy() = default;
  explicit Policy(const ModelConfig& c) : cfg(c), rope_(c.rope_base, c.d_head()) {}

  // Number of learned-KV sink slots seen by every attention row.
  int kv_sinks() const {
    switch (cfg.sink_variant) {
      case SinkVariant::kNone:
      case SinkVariant::kSinkToken: return 0;
      default: return cfg.n_sinks;
    }
  }
  bool has_sink_arrays() const {
    return cfg.sink_variant == SinkVariant::kSinkKV0 || cfg.sink_variant == SinkVariant::kSinkK0V ||
           cfg.sink_variant == SinkVariant::kSinkKV;
  }
  // Rows of learned token embeddings pushed through the trunk at context start.
  int token_sinks() const { return cfg.sink_variant == SinkVariant::kSinkToken ? cfg.n_sinks : 0; }

  int obs_dim() const { return cfg.obs.has_image() ? cfg.obs.image_dim() : cfg.obs.state_dim; }

  void init(uint64_t seed) {
    params = ParamSet<S>{};
    const int d = cfg.d_model;
    params.add("embed.obs.w", d, obs_dim());
    params.add("embed.prev_action.table", cfg.action_count + 1, d);
    params.add("embed.prev_reward.w", d, 1);
    params.add("embed.pos.table", cfg.max_within_episode_len, d);
    if (token_sinks() > 0) params.add("embed.sink.table", token_sinks(), d);
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      params.add(p + "attn.norm.g", 1, d);
      params.add(p + "attn.wq", d, d);
      params.add(p + "attn.wk", d, d);
      params.add(p + "attn.wv", d, d);
      params.add(p + "attn.wo", d, d);
      if (has_sink_arrays()) {
        const bool k_learn = cfg.sink_variant != SinkVariant::kSinkK0V;
        const bool v_learn = cfg.sink_variant != SinkVariant::kSinkKV0;
        params.add(p + "attn.sink_k", cfg.n_sinks, d, k_learn);
        params.add(p + "attn.sink_v", cfg.n_sinks, d, v_learn);
      }
      params.add(p + "mlp.norm.g", 1, d);
      params.add(p + "mlp.w1", cfg.d_mlp, d);
      params.add(p + "mlp.w2", d, cfg.d_mlp);
    }
    params.add("final.norm.g", 1, d);
    params.add("actor.w", cfg.action_count, d);
    params.add("critic.w", 1, d);

    Rng r(derive_seed(seed, rng_domain::kInit));
    const double base_std = 0.02;
    const double resid_std = base_std / std::sqrt(2.0 * cfg.n_layers);
    for (auto& e : params.entries) {
      const bool is_norm = e.name.find("norm.g") != std::string::npos;
      const bool is_resid = e.name.find("attn.wo") != std::string::npos ||
                            e.name.find("mlp.w2") != std::string::npos;
      const bool is_sink = e.name.find("attn.sink") != std::string::npos;
      const bool is_actor = e.name == "actor.w";
      if (is_norm) {
        e.value.setOnes();
      } else if (is_sink && !e.learnable) {
        // variant pins this half to zero
      } else {
        double std = base_std;
        if (is_resid) std = resid_std;
        if (is_actor) std = 0.01;
        for (int i = 0; i < e.value.rows(); ++i)
          for (int j = 0; j < e.value.cols(); ++j)
            e.value(i, j) = static_cast<S>(r.normal() * std);
      }
    }
    check_all_finite(params, "model/non_finite_init");
  }

  KVCache<S> make_cache(int capacity) const {
    KVCache<S> c;
    c.alloc(capacity, cfg.n_layers, cfg.d_model);
    return c;
  }

  // Pre-size the rotary table so concurrent read-only forwards never grow it.
  void prepare_episodes(int max_episode) { rope_.ensure(max_episode); }

  std::vector<TokenInput> sink_tokens() const {
    std::vector<TokenInput> toks(token_sinks());
    for (auto& t : toks) t.is_sink = true;
    return toks;
  }

  // Prepends the learned sink tokens (sink_token variant) to an empty cache.
  void seed_cache(KVCache<S>& cache) {
    if (token_sinks() == 0) return;
    check(cache.len == 0, "cache/not_empty", "sink tokens must come first");
    forward(sink_tokens(), cache, ForwardOptions<S>{});
  }

  // Appends `tokens` to `cache` and returns one output per new row. The same
  // code path serves one-token decoding, whole-sequence training forwards and
  // cache rebuilds; results agree across chunkings up to float reassociation.
  PolicyOutput<S> forward(const std::vector<TokenInput>& tokens, KVCache<S>& cache,
                          ForwardOptions<S> opts) {
    const int n = static_cast<int>(tokens.size());
    const int d = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head();
    const int base = cache.len;
    check(n >= 1, "model/empty_chunk", "need at least one token");
    check(base + n <= cache.capacity, "cache/full",
          "capacity " + std::to_string(cache.capacity) + " cannot take " + std::to_string(n) +
              " more rows at len " + std::to_string(base));
    check(static_cast<int>(cache.k.size()) == cfg.n_layers, "cache/shape", "layer count");

    int max_ep = 0;
    for (const auto& t : tokens) {
      check(t.is_sink || (t.pos >= 0 && t.pos < cfg.max_within_episode_len), "model/pos_range",
            "within-episode position " + std::to_string(t.pos) + " exceeds table");
      check(t.prev_action >= 0 && t.prev_action <= cfg.action_count, "model/bad_action",
            "prev_action out of range");
      max_ep = std::max(max_ep, t.episode);
    }
    for (int u = 0; u < base; ++u) max_ep = std::max(max_ep, cache.episode[u]);
    rope_.ensure(max_ep);

    // metadata rows
    for (int i = 0; i < n; ++i) {
      const int g = base + i;
      const auto& t = tokens[i];
      cache.episode[g] = t.is_sink ? 0 : t.episode;
      cache.pos[g] = t.is_sink ? 0 : t.pos;
      cache.is_sink[g] = t.is_sink ? 1 : 0;
      if (t.is_sink) {
        cache.ep_start[g] = 0;
      } else if (g == 0 || cache.is_sink[g - 1] || cache.episode[g - 1] != t.episode) {
        cache.ep_start[g] = g;
      } else {
        cache.ep_start[g] = cache.ep_start[g - 1];
      }
    }

    // ---- embedding ----
    Mat<S> obs_m = Mat<S>::Zero(n, obs_dim());
    Mat<S> x(n, d);
    {
      const Mat<S>& w_obs = params.at("embed.obs.w");
      const Mat<S>& act_t = params.at("embed.prev_action.table");
      const Mat<S>& w_r = params.at("embed.prev_reward.w");
      const Mat<S>& pos_t = params.at("embed.pos.table");
      int sink_ord = 0;
      for (int i = 0; i < n; ++i) {
        const auto& t = tokens[i];
        if (t.is_sink) {
          check(sink_ord < token_sinks(), "model/sink_rows", "too many sink tokens");
          x.row(i) = params.at("embed.sink.table").row(sink_ord++);
          continue;
        }
        check(static_cast<int>(t.obs.size()) == obs_dim(), "model/obs_shape",
              "observation size mismatch");
        for (int j = 0; j < obs_dim(); ++j) obs_m(i, j) = static_cast<S>(t.obs[j]);
        x.row(i) = obs_m.row(i) * w_obs.transpose();
        x.row(i) += act_t.row(t.prev_action);
        x.row(i) += static_cast<S>(t.prev_reward) * w_r.col(0).transpose();
        x.row(i) += pos_t.row(t.pos);
      }
    }

    Trace<S>* tr = opts.trace;
    if (tr) {
      *tr = Trace<S>{};
      tr->n = n;
      tr->obs = obs_m;
      tr->layers.resize(cfg.n_layers);
      tr->prev_action.resize(n);
      tr->pos.resize(n);
      tr->episode.resize(n);
      tr->prev_reward.resize(n);
      tr->is_sink.resize(n);
      for (int i = 0; i < n; ++i) {
        tr->prev_action[i] = tokens[i].prev_action;
        tr->pos[i] = tokens[i].pos;
        tr->episode[i] = tokens[i].episode;
        tr->prev_reward[i] = tokens[i].prev_reward;
        tr->is_sink[i] = tokens[i].is_sink ? 1 : 0;
      }
    }
    if (opts.probe) opts.probe->alloc(cfg.n_layers, n, H);

    Rng drop_rng(opts.dropout_seed);
    const bool dropping = opts.train && cfg.depth_dropout > 0.0;
    const S keep_scale = static_cast<S>(1.0 / (1.0 - cfg.depth_dropout));
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    const int s_kv = kv_sinks();
    const bool k0v0 = cfg.sink_variant == SinkVariant::kSinkK0V0;

    std::vector<S> logits_buf;
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      auto& lt = tr ? tr->layers[l] : dummy_layer_;
      const bool keep_attn = !dropping || drop_rng.uniform() >= cfg.depth_dropout;
      const bool keep_mlp = !dropping || drop_rng.uniform() >= cfg.depth_dropout;

      if (tr) lt.x_in = x;
      Mat<S> ln1_out;
      Vec<S> ln1_inv;
      rmsnorm_forward(x, params.at(p + "attn.norm.g"), ln1_out, ln1_inv);
      Mat<S> q = ln1_out * params.at(p + "attn.wq").transpose();
      Mat<S> k = ln1_out * params.at(p + "attn.wk").transpose();
      cache.v[l].middleRows(base, n).noalias() = ln1_out * params.at(p + "attn.wv").transpose();
      for (int i = 0; i < n; ++i) {
        const int m = cache.episode[base + i];
        for (int h = 0; h < H; ++h) {
          rope_rotate(q.row(i).data() + h * dh, dh, rope_, m);
          rope_rotate(k.row(i).data() + h * dh, dh, rope_, m);
        }
      }
      cache.k[l].middleRows(base, n) = k;

      const Mat<S>* sink_k = has_sink_arrays() ? &params.at(p + "attn.sink_k") : nullptr;
      const Mat<S>* sink_v = has_sink_arrays() ? &params.at(p + "attn.sink_v") : nullptr;

      Mat<S> att_out(n, d);
      if (tr) {
        lt.att_w.clear();
        lt.att_off.assign(n, 0);
      }
      for (int i = 0; i < n; ++i) {
        const int g = base + i;
        // Visible context rows: full mask sees [0, g]; the intra-episode mask
        // sees this episode's rows plus any sink_token rows at the front.
        int ctx_begin = 0, sink_rows = 0;
        if (cfg.attention_mask == AttentionMask::kIntraEpisode && !cache.is_sink[g]) {
          ctx_begin = cache.ep_start[g];
          while (sink_rows < ctx_begin && cache.is_sink[sink_rows]) ++sink_rows;
        }
        const int ctx_len = g - ctx_begin + 1;
        const int total = s_kv + sink_rows + ctx_len;
        if (tr) lt.att_off[i] = static_cast<int64_t>(lt.att_w.size());
        for (int h = 0; h < H; ++h) {
          const auto q_h = q.row(i).segment(h * dh, dh);
          logits_buf.assign(total, S(0));
          for (int j = 0; j < s_kv; ++j)
            logits_buf[j] = k0v0 ? S(0) : q_h.dot(sink_k->row(j).segment(h * dh, dh)) * scale;
          for (int u = 0; u < sink_rows; ++u)
            logits_buf[s_kv + u] = q_h.dot(cache.k[l].row(u).segment(h * dh, dh)) * scale;
          for (int u = 0; u < ctx_len; ++u)
            logits_buf[s_kv + sink_rows + u] =
                q_h.dot(cache.k[l].row(ctx_begin + u).segment(h * dh, dh)) * scale;
          softmax_inplace(logits_buf.data(), total);

          auto out_h = att_out.row(i).segment(h * dh, dh);
          out_h.setZero();
          if (!k0v0)
            for (int j = 0; j < s_kv; ++j)
              out_h += logits_buf[j] * sink_v->row(j).segment(h * dh, dh);
          for (int u = 0; u < sink_rows; ++u)
            out_h += logits_buf[s_kv + u] * cache.v[l].row(u).segment(h * dh, dh);
          for (int u = 0; u < ctx_len; ++u)
            out_h += logits_buf[s_kv + sink_rows + u] *
                     cache.v[l].row(ctx_begin + u).segment(h * dh, dh);

          if (tr) lt.att_w.insert(lt.att_w.end(), logits_buf.begin(), logits_buf.end());
          if (opts.probe) {
            S m_sink = S(0), m_same = S(0), m_earlier = S(0);
            for (int j = 0; j < s_kv; ++j) m_sink += logits_buf[j];
            for (int u = 0; u < sink_rows; ++u) m_sink += logits_buf[s_kv + u];
            for (int u = 0; u < ctx_len; ++u) {
              const int row = ctx_begin + u;
              const S w = logits_buf[s_kv + sink_rows + u];
              if (cache.is_sink[row]) m_sink += w;
              else if (cache.episode[row] == cache.episode[g]) m_same += w;
              else m_earlier += w;
            }
            opts.probe->sink[l](i, h) = m_sink;
            opts.probe->same_episode[l](i, h) = m_same;
            opts.probe->earlier_episode[l](i, h) = m_earlier;
          }
        }
      }

      Mat<S> proj = att_out * params.at(p + "attn.wo").transpose();
      if (keep_attn) x += dropping ? Mat<S>(proj * keep_scale) : proj;
      if (tr) {
        lt.ln1_out = std::move(ln1_out);
        lt.ln1_inv = std::move(ln1_inv);
        lt.q = std::move(q);
        lt.att_out = std::move(att_out);
        lt.keep_attn = keep_attn;
        lt.keep_mlp = keep_mlp;
        lt.x_mid = x;
      }

      Mat<S> ln2_out;
      Vec<S> ln2_inv;
      rmsnorm_forward(x, params.at(p + "mlp.norm.g"), ln2_out, ln2_inv);
      Mat<S> h_pre = ln2_out * params.at(p + "mlp.w1").transpose();
      Mat<S> h_act;
      gelu_forward(h_pre, h_act);
      Mat<S> mlp_out = h_act * params.at(p + "mlp.w2").transpose();
      if (keep_mlp) x += dropping ? Mat<S>(mlp_out * keep_scale) : mlp_out;
      if (tr) {
        lt.ln2_out = std::move(ln2_out);
        lt.ln2_inv = std::move(ln2_inv);
        lt.h_pre = std::move(h_pre);
        lt.h_act = std::move(h_act);
      }
    }

    if (tr) tr->x_final = x;
    Mat<S> lnf_out;
    Vec<S> lnf_inv;
    rmsnorm_forward(x, params.at("final.norm.g"), lnf_out, lnf_inv);
    PolicyOutput<S> out;
    out.logits.noalias() = lnf_out * params.at("actor.w").transpose();
    out.value = (lnf_out * params.at("critic.w").transpose()).col(0);
    if (tr) {
      tr->lnf_out = std::move(lnf_out);
      tr->lnf_inv = std::move(lnf_inv);
    }
    check(out.logits.allFinite() && out.value.allFinite(), "model/non_finite", "policy outputs");
    cache.len = base + n;
    return out;
  }

  // Backward over one traced forward (the trace's rows must be cache rows
  // [0, n)). d_logits [n, A] and d_value [n] carry the loss gradient at each
  // row (zero outside the loss window). Gradients accumulate into `grads`.
  void backward(const KVCache<S>& cache, const Trace<S>& tr, const Mat<S>& d_logits,
                const Vec<S>& d_value, ParamSet<S>& grads) {
    const int n = tr.n, d = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head();
    check(cache.len == n, "model/backward_shape", "trace must cover the whole cache");
    check(d_logits.rows() == n && d_value.size() == n, "model/backward_shape", "loss gradients");
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    const S keep_scale = static_cast<S>(1.0 / (1.0 - cfg.depth_dropout));
    const bool dropping = cfg.depth_dropout > 0.0;
    const int s_kv = kv_sinks();
    const bool k0v0 = cfg.sink_variant == SinkVariant::kSinkK0V0;

    // heads
    grads.at("actor.w").noalias() += d_logits.transpose() * tr.lnf_out;
    grads.at("critic.w").noalias() += d_value.transpose() * tr.lnf_out;
    Mat<S> d_lnf = d_logits * params.at("actor.w");
    d_lnf.noalias() += d_value * params.at("critic.w");
    Mat<S> dx;
    rmsnorm_backward(tr.x_final, params.at("final.norm.g"), tr.lnf_inv, d_lnf, dx,
                     grads.at("final.norm.g"));

    std::vector<S> dw_buf;
    for (int l = cfg.n_layers - 1; l >= 0; --l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      const auto& lt = tr.layers[l];

      // ---- mlp branch ----
      if (lt.keep_mlp) {
        Mat<S> d_mlp_out = dropping ? Mat<S>(dx * keep_scale) : dx;
        grads.at(p + "mlp.w2").noalias() += d_mlp_out.transpose() * lt.h_act;
        Mat<S> d_h_act = d_mlp_out * params.at(p + "mlp.w2");
        Mat<S> d_h_pre;
        gelu_backward(lt.h_pre, d_h_act, d_h_pre);
        grads.at(p + "mlp.w1").noalias() += d_h_pre.transpose() * lt.ln2_out;
        Mat<S> d_ln2 = d_h_pre * params.at(p + "mlp.w1");
        Mat<S> d_from_mlp;
        rmsnorm_backward(lt.x_mid, params.at(p + "mlp.norm.g"), lt.ln2_inv, d_ln2, d_from_mlp,
                         grads.at(p + "mlp.norm.g"));
        dx += d_from_mlp;
      }

      // ---- attention branch ----
      if (lt.keep_attn) {
        Mat<S> d_proj = dropping ? Mat<S>(dx * keep_scale) : dx;
        grads.at(p + "attn.wo").noalias() += d_proj.transpose() * lt.att_out;
        Mat<S> d_att_out = d_proj * params.at(p + "attn.wo");

        const Mat<S>* sink_k = has_sink_arrays() ? &params.at(p + "attn.sink_k") : nullptr;
        const Mat<S>* sink_v = has_sink_arrays() ? &params.at(p + "attn.sink_v") : nullptr;
        Mat<S>* d_sink_k = has_sink_arrays() ? &grads.at(p + "attn.sink_k") : nullptr;
        Mat<S>* d_sink_v = has_sink_arrays() ? &grads.at(p + "attn.sink_v") : nullptr;

        Mat<S> dq = Mat<S>::Zero(n, d);
        Mat<S> dk = Mat<S>::Zero(n, d);
        Mat<S> dv = Mat<S>::Zero(n, d);
        for (int i = 0; i < n; ++i) {
          const int g = i;
          int ctx_begin = 0, sink_rows = 0;
          if (cfg.attention_mask == AttentionMask::kIntraEpisode && !cache.is_sink[g]) {
            ctx_begin = cache.ep_start[g];
            while (sink_rows < ctx_begin && cache.is_sink[sink_rows]) ++sink_rows;
          }
          const int ctx_len = g - ctx_begin + 1;
          const int total = s_kv + sink_rows + ctx_len;
          const S* w_row = lt.att_w.data() + lt.att_off[i];
          for (int h = 0; h < H; ++h) {
            const S* w = w_row + static_cast<int64_t>(h) * total;
            const auto d_out_h = d_att_out.row(i).segment(h * dh, dh);
            const auto q_h = lt.q.row(i).segment(h * dh, dh);
            dw_buf.assign(total, S(0));
            // d w_j = <d_out, V_j>; dV_j += w_j d_out
            if (!k0v0) {
              for (int j = 0; j < s_kv; ++j) {
                dw_buf[j] = d_out_h.dot(sink_v->row(j).segment(h * dh, dh));
                d_sink_v->row(j).segment(h * dh, dh) += w[j] * d_out_h;
              }
            }
            for (int u = 0; u < sink_rows; ++u) {
              dw_buf[s_kv + u] = d_out_h.dot(cache.v[l].row(u).segment(h * dh, dh));
              dv.row(u).segment(h * dh, dh) += w[s_kv + u] * d_out_h;
            }
            for (int u = 0; u < ctx_len; ++u) {
              const int row = ctx_begin + u;
              dw_buf[s_kv + sink_rows + u] =
                  d_out_h.dot(cache.v[l].row(row).segment(h * dh, dh));
              dv.row(row).segment(h * dh, dh) += w[s_kv + sink_rows + u] * d_out_h;
            }
            softmax_backward_inplace(w, dw_buf.data(), total);
            auto dq_h = dq.row(i).segment(h * dh, dh);
            if (!k0v0) {
              for (int j = 0; j < s_kv; ++j) {
                const S dl = dw_buf[j] * scale;
                dq_h += dl * sink_k->row(j).segment(h * dh, dh);
                d_sink_k->row(j).segment(h * dh, dh) += dl * q_h;
              }
            }
            for (int u = 0; u < sink_rows; ++u) {
              const S dl = dw_buf[s_kv + u] * scale;
              dq_h += dl * cache.k[l].row(u).segment(h * dh, dh);
              dk.row(u).segment(h * dh, dh) += dl * q_h;
            }
            for (int u = 0; u < ctx_len; ++u) {
              const int row = ctx_begin + u;
              const S dl = dw_buf[s_kv + sink_rows + u] * scale;
              dq_h += dl * cache.k[l].row(row).segment(h * dh, dh);
              dk.row(row).segment(h * dh, dh) += dl * q_h;
            }
          }
        }
        // undo the rotation (orthogonal, so the adjoint is the inverse)
        for (int i = 0; i < n; ++i) {
          const int m = cache.episode[i];
          for (int h = 0; h < H; ++h) {
            rope_rotate(dq.row(i).data() + h * dh, dh, rope_, m, -1);
            rope_rotate(dk.row(i).data() + h * dh, dh, rope_, m, -1);
          }
        }
        grads.at(p + "attn.wq").noalias() += dq.transpose() * lt.ln1_out;
        grads.at(p + "attn.wk").noalias() += dk.transpose() * lt.ln1_out;
        grads.at(p + "attn.wv").noalias() += dv.transpose() * lt.ln1_out;
        Mat<S> d_ln1 = dq * params.at(p + "attn.wq");
        d_ln1.noalias() += dk * params.at(p + "attn.wk");
        d_ln1.noalias() += dv * params.at(p + "attn.wv");
        Mat<S> d_from_attn;
        rmsnorm_backward(lt.x_in, params.at(p + "attn.norm.g"), lt.ln1_inv, d_ln1, d_from_attn,
                         grads.at(p + "attn.norm.g"));
        dx += d_from_attn;
      }
    }

    // ---- embedding backward ----
    {
      Mat<S>& d_obs_w = grads.at("embed.obs.w");
      Mat<S>& d_act = grads.at("embed.prev_action.table");
      Mat<S>& d_r = grads.at("embed.prev_reward.w");
      Mat<S>& d_pos = grads.at("embed.pos.table");
      int sink_ord = 0;
      for (int i = 0; i < n; ++i) {
        if (tr.is_sink[i]) {
          grads.at("embed.sink.table").row(sink_ord++) += dx.row(i);
          continue;
        }
        d_obs_w.noalias() += dx.row(i).transpose() * tr.obs.row(i);
        d_act.row(tr.prev_action[i]) += dx.row(i);
        d_r.col(0) += static_cast<S>(tr.prev_reward[i]) * dx.row(i).transpose();
        d_pos.row(tr.pos[i]) += dx.row(i);
      }
    }

    for (const auto& e : grads.entries)
      check(e.value.allFinite(), "model/non_finite_grad", e.name);
  }

 private:
  RopeTable rope_{10000.0, 2};
  LayerTrace<S> dummy_layer_;  // sink for untraced forwards
};

}  // namespace relic
