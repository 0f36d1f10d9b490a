#pragma once

#include <chrono>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relic/common.hpp"

namespace relic {

// Append-only line-delimited metrics. The first line of a fresh file is a
// magic header identifying format and version; every later line is one
// self-contained record.
inline nlohmann::ordered_json metrics_header() {
  return {{"format", "relic-metrics"}, {"version", 1}};
}

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) {
    bool fresh = true;
    {
      std::ifstream probe(path);
      fresh = !probe.is_open() || probe.peek() == std::ifstream::traits_type::eof();
    }
    os_.open(path, std::ios::app);
    check(os_.is_open(), "metrics/io", "cannot open " + path);
    if (fresh) os_ << metrics_header().dump() << "\n";
  }

  void write(const std::string& kind, int64_t env_step, nlohmann::ordered_json payload) {
    nlohmann::ordered_json rec{{"kind", kind},
                               {"env_step", env_step},
                               {"wall_time", now_seconds()}};
    rec.update(payload);
    os_ << rec.dump() << "\n";
    os_.flush();
  }

  static double now_seconds() {
    return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  }

 private:
  std::ofstream os_;
};

// Reads a metrics file back, validating the header; returns the records.
inline std::vector<nlohmann::ordered_json> read_metrics(const std::string& path) {
  std::ifstream is(path);
  check(is.is_open(), "metrics/io", "cannot open " + path);
  std::string line;
  check(static_cast<bool>(std::getline(is, line)), "metrics/empty", path);
  auto header = nlohmann::ordered_json::parse(line, nullptr, false);
  check(!header.is_discarded() && header.value("format", "") == "relic-metrics",
        "metrics/bad_magic", path + " is not a metrics file");
  check(header.value("version", 0) == 1, "metrics/bad_version", path);
  std::vector<nlohmann::ordered_json> out;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto j = nlohmann::ordered_json::parse(line, nullptr, false);
    check(!j.is_discarded(), "metrics/bad_line", path + ":" + std::to_string(line_no));
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace relic
