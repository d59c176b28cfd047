#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace semfilter {

using RecordId = std::uint64_t;

/// Error categories surfaced by the library. Every thrown semfilter::Error
/// carries one so the CLI can map failures to exit codes.
enum class ErrorKind {
  kParse,
  kDuplicateId,
  kMissingColumn,
  kInvalidArgument,
  kDimensionMismatch,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kTransport,
  kUndecidable,
  kIo,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Stable 64-bit hashing. std::hash is not specified across standard
// libraries, and these values end up in cache files and seed derivations.
std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

std::string to_hex64(std::uint64_t value);

/// Git blob id (SHA-1 over "blob <len>\0" + content), hex encoded.
std::string git_blob_sha1(std::string_view content);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

/// Seeded random source with distribution code written out here rather than
/// taken from <random>, whose distributions are implementation-defined.
/// Streams are therefore identical on every platform for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform double in [0, 1).
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform_below(std::uint64_t bound);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Uniform double in [0, 1) from a single hashed key; used by stateless
/// mock oracles so results never depend on call order.
double hashed_uniform01(std::uint64_t key);

/// Simple random sample of `count` elements without replacement
/// (partial Fisher-Yates). Order of the returned ids follows the draw.
std::vector<RecordId> sample_without_replacement(std::span<const RecordId> ids,
                                                 std::size_t count, Rng& rng);

}  // namespace semfilter
