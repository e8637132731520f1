#include "util.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>

namespace mem {
namespace util {

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ContractError("percentile: empty sample");
  if (p < 0.0 || p > 100.0) throw ContractError("percentile: p out of [0,100]");
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(rank));
  const size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

std::string format_double(double v) {
  // %.17g always round-trips for IEEE doubles.
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

}  // namespace util

namespace log {

namespace {
std::atomic<Level> g_level{Level::kInfo};
}

void set_level(Level level) { g_level.store(level); }
Level level() { return g_level.load(); }

void info(const std::string& msg) {
  if (g_level.load() >= Level::kInfo) std::fprintf(stderr, "[info] %s\n", msg.c_str());
}

void warn(const std::string& msg) {
  if (g_level.load() >= Level::kWarn) std::fprintf(stderr, "[warn] %s\n", msg.c_str());
}

}  // namespace log
}  // namespace mem
