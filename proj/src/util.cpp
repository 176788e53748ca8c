#include "invdes/util.hpp"

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <cmath>
#include <limits>

#include <json.hpp>

#include "invdes/error.hpp"
#include "invdes/jsonio.hpp"

namespace invdes {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t counter_hash(uint64_t seed, uint64_t stream, uint64_t index) {
  uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ (stream + 0x9e3779b97f4a7c15ULL));
  h = splitmix64(h ^ index);
  return h;
}

double hash_to_u01(uint64_t h) {
  // Top 53 bits give a uniform double in [0, 1).
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double counter_u01(uint64_t seed, uint64_t stream, uint64_t index) {
  return hash_to_u01(counter_hash(seed, stream, index));
}

void deterministic_shuffle(std::vector<std::size_t>& items, uint64_t seed) {
  if (items.size() < 2) return;
  for (std::size_t i = items.size() - 1; i > 0; --i) {
    uint64_t h = counter_hash(seed, /*stream=*/0xf15e85ULL, i);
    // Unbiased-enough bounded draw via multiply-shift; the modulus bias of a
    // 64-bit hash against small ranges is far below anything observable here.
    auto j = static_cast<std::size_t>(
        (static_cast<unsigned __int128>(h) * static_cast<unsigned __int128>(i + 1)) >> 64);
    std::swap(items[i], items[j]);
  }
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  static std::atomic<uint64_t> counter{0};
  fs::path tmp = target;
  tmp += ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("short write: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("rename failed for " + target.string() + ": " + ec.message());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for read: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) { return nlohmann::json(v).dump(); }

nlohmann::json metric_to_json(double v) {
  if (std::isfinite(v)) return nlohmann::json(v);
  return nlohmann::json("inf");
}

double metric_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw LoadError("unrecognized metric string: " + j.dump());
  }
  return j.get<double>();
}

std::string utc_now_iso8601() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string zero_timestamp() { return "1970-01-01T00:00:00Z"; }

}  // namespace invdes
