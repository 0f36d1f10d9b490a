#pragma once

#include <cmath>
#include <vector>

#include "relic/common.hpp"
#include "relic/rng.hpp"

namespace relic {

// Log-softmax in double regardless of the logits' storage type.
template <typename S>
inline std::vector<double> log_softmax_row(const S* logits, int n) {
  double mx = static_cast<double>(logits[0]);
  for (int i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
  double sum = 0.0;
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    out[i] = static_cast<double>(logits[i]) - mx;
    sum += std::exp(out[i]);
  }
  const double lse = std::log(sum);
  for (int i = 0; i < n; ++i) out[i] -= lse;
  return out;
}

struct ActionSample {
  int action = 0;
  double logp = 0.0;
};

template <typename S>
inline ActionSample sample_action(const S* logits, int n, Rng& rng) {
  const auto lp = log_softmax_row(logits, n);
  const double u = rng.uniform();
  double acc = 0.0;
  int a = n - 1;
  for (int i = 0; i < n; ++i) {
    acc += std::exp(lp[i]);
    if (u < acc) {
      a = i;
      break;
    }
  }
  return {a, lp[a]};
}

template <typename S>
inline ActionSample argmax_action(const S* logits, int n) {
  int a = 0;
  for (int i = 1; i < n; ++i)
    if (logits[i] > logits[a]) a = i;
  return {a, log_softmax_row(logits, n)[a]};
}

template <typename S>
inline double entropy_of_logits(const S* logits, int n) {
  const auto lp = log_softmax_row(logits, n);
  double h = 0.0;
  for (int i = 0; i < n; ++i) h -= std::exp(lp[i]) * lp[i];
  return h;
}

}  // namespace relic
