#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "relic/common.hpp"
#include "relic/config.hpp"
#include "relic/params.hpp"

namespace relic {

// Binary layout (little-endian):
//   8 bytes  magic "RELICCKP"
//   u32      version (1)
//   u64,...  config JSON (length + bytes)
//   u32      array count
//   per array: u64 name length, name bytes, u32 rows, u32 cols, u8 learnable,
//              rows*cols f32 values
//   u8       has optimizer state; if set: i64 step count, then first-moment
//            and second-moment blocks (f32, same shapes/order as the arrays)
//   i64      env steps, i64 rollout index
inline constexpr char kCheckpointMagic[8] = {'R', 'E', 'L', 'I', 'C', 'C', 'K', 'P'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(static_cast<bool>(is), "checkpoint/truncated", "unexpected end of file");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const uint64_t n = read_pod<uint64_t>(is);
  check(n <= (1ull << 30), "checkpoint/corrupt", "implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  check(static_cast<bool>(is), "checkpoint/truncated", "unexpected end of file");
  return s;
}

template <typename S>
void write_values(std::ostream& os, const Mat<S>& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) write_pod<float>(os, static_cast<float>(m(r, c)));
}

template <typename S>
void read_values(std::istream& is, Mat<S>& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) m(r, c) = static_cast<S>(read_pod<float>(is));
}

}  // namespace detail

template <typename S>
struct Checkpoint {
  json config;
  ParamSet<S> params;
  bool has_adam = false;
  ParamSet<S> adam_m, adam_v;
  int64_t adam_t = 0;
  int64_t env_steps = 0;
  int64_t rollout_index = 0;
};

template <typename S>
inline void save_checkpoint(const std::string& path, const Checkpoint<S>& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.is_open(), "checkpoint/io", "cannot open " + path + " for writing");
  os.write(kCheckpointMagic, 8);
  detail::write_pod<uint32_t>(os, kCheckpointVersion);
  detail::write_string(os, ck.config.dump());
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(ck.params.entries.size()));
  for (const auto& e : ck.params.entries) {
    detail::write_string(os, e.name);
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(e.value.rows()));
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(e.value.cols()));
    detail::write_pod<uint8_t>(os, e.learnable ? 1 : 0);
    detail::write_values(os, e.value);
  }
  detail::write_pod<uint8_t>(os, ck.has_adam ? 1 : 0);
  if (ck.has_adam) {
    check(ck.adam_m.entries.size() == ck.params.entries.size() &&
              ck.adam_v.entries.size() == ck.params.entries.size(),
          "checkpoint/adam_shape", "optimizer state must mirror the parameters");
    detail::write_pod<int64_t>(os, ck.adam_t);
    for (const auto& e : ck.adam_m.entries) detail::write_values(os, e.value);
    for (const auto& e : ck.adam_v.entries) detail::write_values(os, e.value);
  }
  detail::write_pod<int64_t>(os, ck.env_steps);
  detail::write_pod<int64_t>(os, ck.rollout_index);
  check(static_cast<bool>(os), "checkpoint/io", "write failed for " + path);
}

template <typename S>
inline Checkpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.is_open(), "checkpoint/io", "cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  check(static_cast<bool>(is) && std::memcmp(magic, kCheckpointMagic, 8) == 0,
        "checkpoint/bad_magic", path + " is not a checkpoint");
  const uint32_t version = detail::read_pod<uint32_t>(is);
  check(version == kCheckpointVersion, "checkpoint/bad_version",
        "version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  Checkpoint<S> ck;
  const std::string cfg_str = detail::read_string(is);
  ck.config = json::parse(cfg_str, nullptr, false);
  check(!ck.config.is_discarded(), "checkpoint/corrupt", "embedded config does not parse");
  const uint32_t n_arrays = detail::read_pod<uint32_t>(is);
  check(n_arrays <= 1u << 20, "checkpoint/corrupt", "implausible array count");
  for (uint32_t i = 0; i < n_arrays; ++i) {
    const std::string name = detail::read_string(is);
    const uint32_t rows = detail::read_pod<uint32_t>(is);
    const uint32_t cols = detail::read_pod<uint32_t>(is);
    const uint8_t learnable = detail::read_pod<uint8_t>(is);
    check(static_cast<uint64_t>(rows) * cols <= (1ull << 28), "checkpoint/corrupt",
          "implausible array size for " + name);
    auto& m = ck.params.add(name, static_cast<int>(rows), static_cast<int>(cols), learnable != 0);
    detail::read_values(is, m);
  }
  ck.has_adam = detail::read_pod<uint8_t>(is) != 0;
  if (ck.has_adam) {
    ck.adam_t = detail::read_pod<int64_t>(is);
    ck.adam_m = ck.params.zeros_like();
    ck.adam_v = ck.params.zeros_like();
    for (auto& e : ck.adam_m.entries) detail::read_values(is, e.value);
    for (auto& e : ck.adam_v.entries) detail::read_values(is, e.value);
  }
  ck.env_steps = detail::read_pod<int64_t>(is);
  ck.rollout_index = detail::read_pod<int64_t>(is);
  return ck;
}

// Verifies that loaded parameters can drop into a freshly-built model.
template <typename S>
inline void match_param_shapes(const ParamSet<S>& expected, const ParamSet<S>& loaded) {
  check(expected.entries.size() == loaded.entries.size(), "checkpoint/shape_mismatch",
        "parameter array count differs");
  for (size_t i = 0; i < expected.entries.size(); ++i) {
    const auto& a = expected.entries[i];
    const auto& b = loaded.entries[i];
    check(a.name == b.name, "checkpoint/shape_mismatch", "array order differs at " + a.name);
    check(a.value.rows() == b.value.rows() && a.value.cols() == b.value.cols(),
          "checkpoint/shape_mismatch", "shape differs for " + a.name);
    check(a.learnable == b.learnable, "checkpoint/shape_mismatch",
          "learnable flag differs for " + a.name);
  }
}

}  // namespace relic
