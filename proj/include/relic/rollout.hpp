#pragma once

#include <cstdint>
#include <vector>

#include "relic/common.hpp"
#include "relic/model.hpp"
#include "relic/rng.hpp"

namespace relic {

// Per-worker trial-long storage. Steps are appended in collection order; the
// context prefix may be reordered between updates by shuffle_context_episodes.
template <typename S>
struct RolloutBuffer {
  int capacity = 0;
  int cursor = 0;
  std::vector<TokenInput> tokens;
  std::vector<int> actions;
  std::vector<float> logps;    // behavior log-probs at collection
  std::vector<float> values;   // critic estimates at collection
  std::vector<float> rewards;
  std::vector<uint8_t> dones;
  std::vector<int> episode_ids;

  void alloc(int T) {
    capacity = T;
    cursor = 0;
    tokens.resize(T);
    actions.assign(T, 0);
    logps.assign(T, 0.f);
    values.assign(T, 0.f);
    rewards.assign(T, 0.f);
    dones.assign(T, 0);
    episode_ids.assign(T, 0);
  }
  void clear() { cursor = 0; }

  void append(const TokenInput& token, int action, float logp, float value, float reward,
              bool done) {
    check(cursor < capacity, "rollout/full", "buffer capacity " + std::to_string(capacity));
    tokens[cursor] = token;
    actions[cursor] = action;
    logps[cursor] = logp;
    values[cursor] = value;
    rewards[cursor] = reward;
    dones[cursor] = done ? 1 : 0;
    episode_ids[cursor] = token.episode;
    ++cursor;
  }
};

// Uniformly permutes the completed episodes of [0, cursor) as whole blocks;
// an in-progress final episode stays pinned at the end. Episode ids are
// relabeled to the new order (the rotary encoding sees the new indices on
// rebuild); within-episode fields are untouched.
template <typename S>
inline void shuffle_context_episodes(RolloutBuffer<S>& buf, Rng& rng) {
  const int n = buf.cursor;
  if (n == 0) return;
  struct Block {
    int begin, end;
  };
  std::vector<Block> blocks;
  int begin = 0;
  for (int i = 0; i < n; ++i) {
    if (i + 1 == n || buf.episode_ids[i + 1] != buf.episode_ids[i]) {
      blocks.push_back({begin, i + 1});
      begin = i + 1;
    }
  }
  const bool tail_running = buf.dones[n - 1] == 0;
  const int n_complete = static_cast<int>(blocks.size()) - (tail_running ? 1 : 0);
  if (n_complete <= 1 && !tail_running) return;

  std::vector<int> order(n_complete);
  for (int i = 0; i < n_complete; ++i) order[i] = i;
  rng.shuffle(order);

  RolloutBuffer<S> tmp;
  tmp.alloc(buf.capacity);
  int new_ep = 0;
  auto copy_block = [&](const Block& b, int ep) {
    for (int i = b.begin; i < b.end; ++i) {
      TokenInput t = buf.tokens[i];
      t.episode = ep;
      tmp.append(t, buf.actions[i], buf.logps[i], buf.values[i], buf.rewards[i],
                 buf.dones[i] != 0);
    }
  };
  for (int i = 0; i < n_complete; ++i) copy_block(blocks[order[i]], new_ep++);
  if (tail_running) copy_block(blocks.back(), new_ep++);
  buf = std::move(tmp);
}

// Clears the cache and replays the buffer prefix [0, b) through the current
// parameters as one batched forward (plus the sink-token seed rows, when the
// variant has them).
template <typename S>
inline void rebuild_kv_cache(Policy<S>& policy, const RolloutBuffer<S>& buf, int b,
                             KVCache<S>& cache) {
  check(b <= buf.cursor, "rollout/range", "prefix exceeds written steps");
  cache.clear();
  policy.seed_cache(cache);
  if (b == 0) return;
  std::vector<TokenInput> toks(buf.tokens.begin(), buf.tokens.begin() + b);
  policy.forward(toks, cache, ForwardOptions<S>{});
}

}  // namespace relic
