#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace invdes {

// --- Counter-based deterministic random stream -------------------------------
//
// All sampling in the engine is keyed by (seed, stream, index) instead of a
// stateful generator, so that growing a dataset from k to k' produces the same
// pairs regardless of how the calls were batched.

uint64_t splitmix64(uint64_t x);

// Hash of (seed, stream, index) into a well-mixed 64-bit word.
uint64_t counter_hash(uint64_t seed, uint64_t stream, uint64_t index);

// Uniform double in [0, 1) from a hash word.
double hash_to_u01(uint64_t h);

// Uniform double in [0, 1) from (seed, stream, index).
double counter_u01(uint64_t seed, uint64_t stream, uint64_t index);

// In-place Fisher-Yates shuffle driven by the counter stream; portable across
// platforms, unlike std::shuffle.
void deterministic_shuffle(std::vector<std::size_t>& items, uint64_t seed);

// --- Files --------------------------------------------------------------------

// Writes content to path via a temp file in the same directory plus rename, so
// readers never observe a partial file.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// --- Formatting ---------------------------------------------------------------

// Shortest decimal representation that round-trips the double (same routine the
// JSON serializer uses), so CSV and JSON artifacts agree and re-runs are
// byte-identical.
std::string format_double(double v);

// Current UTC instant as an ISO-8601 string; zeroed form is the epoch.
std::string utc_now_iso8601();
std::string zero_timestamp();

}  // namespace invdes
