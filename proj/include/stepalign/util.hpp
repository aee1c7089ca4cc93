#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace stepalign {

// Error taxonomy. Every failure surfaced to callers is one of these, so
// tests and the CLI can discriminate without string matching.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct UsageError : Error {
  using Error::Error;
};
struct CapacityError : Error {
  using Error::Error;
};
struct LoadError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct TrainError : Error {
  using Error::Error;
};
struct PipelineError : Error {
  using Error::Error;
};
struct MetricError : Error {
  using Error::Error;
};

enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel log_level();
void set_log_level(LogLevel level);
void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work is split into
// contiguous index ranges so callers can write into per-index slots and
// keep results deterministic.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

// Write-to-temp + rename, so readers never observe a half-written file.
void atomic_write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace stepalign
