#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace relic {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// All recoverable failures carry a stable machine-parsable class string
// (e.g. "config/unknown_key") plus a human detail line.
class Error : public std::runtime_error {
 public:
  Error(std::string cls, const std::string& detail)
      : std::runtime_error(cls + ": " + detail), cls_(std::move(cls)) {}
  const std::string& error_class() const { return cls_; }

 private:
  std::string cls_;
};

[[noreturn]] inline void fail(const std::string& cls, const std::string& detail) {
  throw Error(cls, detail);
}

inline void check(bool ok, const std::string& cls, const std::string& detail) {
  if (!ok) fail(cls, detail);
}

}  // namespace relic
