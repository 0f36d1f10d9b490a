#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "relic/common.hpp"

namespace relic {

// Named collection of 2D parameter arrays. Creation order is fixed by the
// model builder, so iteration order is deterministic everywhere it matters
// (optimizer, checkpoints, finite-difference probes).
template <typename S>
struct ParamSet {
  struct Entry {
    std::string name;
    Mat<S> value;
    bool learnable = true;
  };

  std::vector<Entry> entries;
  std::unordered_map<std::string, int> by_name;

  Mat<S>& add(const std::string& name, int rows, int cols, bool learnable = true) {
    check(!by_name.count(name), "params/duplicate", name);
    by_name.emplace(name, static_cast<int>(entries.size()));
    entries.push_back(Entry{name, Mat<S>::Zero(rows, cols), learnable});
    return entries.back().value;
  }

  bool has(const std::string& name) const { return by_name.count(name) != 0; }

  Mat<S>& at(const std::string& name) {
    auto it = by_name.find(name);
    check(it != by_name.end(), "params/missing", name);
    return entries[it->second].value;
  }
  const Mat<S>& at(const std::string& name) const {
    auto it = by_name.find(name);
    check(it != by_name.end(), "params/missing", name);
    return entries[it->second].value;
  }

  int64_t scalar_count(bool learnable_only = false) const {
    int64_t n = 0;
    for (const auto& e : entries)
      if (!learnable_only || e.learnable) n += e.value.size();
    return n;
  }

  // Same names/shapes/flags, all values zero. Used for gradient accumulators
  // and optimizer moments.
  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& e : entries)
      out.add(e.name, static_cast<int>(e.value.rows()), static_cast<int>(e.value.cols()), e.learnable);
    return out;
  }

  template <typename T>
  ParamSet<T> cast() const {
    ParamSet<T> out;
    for (const auto& e : entries) {
      auto& m = out.add(e.name, static_cast<int>(e.value.rows()), static_cast<int>(e.value.cols()),
                        e.learnable);
      m = e.value.template cast<T>();
    }
    return out;
  }

  // Maps a flat index over learnable scalars to a concrete coordinate.
  struct Coord {
    int entry;
    int row, col;
  };
  Coord locate_learnable(int64_t flat) const {
    for (int i = 0; i < static_cast<int>(entries.size()); ++i) {
      const auto& e = entries[i];
      if (!e.learnable) continue;
      if (flat < e.value.size()) {
        const int cols = static_cast<int>(e.value.cols());
        return Coord{i, static_cast<int>(flat / cols), static_cast<int>(flat % cols)};
      }
      flat -= e.value.size();
    }
    fail("params/bad_index", "flat index out of range");
  }
};

template <typename S>
inline void check_all_finite(const ParamSet<S>& p, const char* cls) {
  for (const auto& e : p.entries)
    check(e.value.allFinite(), cls, e.name);
}

}  // namespace relic
