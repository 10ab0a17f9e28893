#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace selfheal::text {

/// FNV-1a 64-bit. Fixed constants so ids and embedding buckets are stable
/// across platforms and runs.
inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = kFnvOffset);

/// Lower-case 16-digit hex rendering, zero padded. Lexicographic order of the
/// rendering equals numeric order, which the tie-break rules rely on.
std::string hex64(std::uint64_t value);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

/// Canonical template normalization: lower-case, trim, collapse internal
/// whitespace runs to single spaces, and unify any `<...>` placeholder
/// variant to `<*>`. Idempotent by construction.
std::string normalize(std::string_view s);

std::vector<std::string> split_ws(std::string_view s);

/// splitmix64 step; the portable RNG used wherever seeded randomness is
/// required (noise injection, synthetic suites).
std::uint64_t splitmix64(std::uint64_t& state);

/// Uniform double in [0, 1) from the top 53 bits of a splitmix64 draw.
double next_unit(std::uint64_t& state);

}  // namespace selfheal::text
