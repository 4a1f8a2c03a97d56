#pragma once

// Shared plumbing: error taxonomy, checked assertions, a portable seeded RNG,
// string/number parsing helpers, and little-endian binary file I/O.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sleepstage {

enum class ErrorKind { config, io, validation, numeric, internal };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

  static Error config(const std::string& m) { return {ErrorKind::config, m}; }
  static Error io(const std::string& m) { return {ErrorKind::io, m}; }
  static Error validation(const std::string& m) { return {ErrorKind::validation, m}; }
  static Error numeric(const std::string& m) { return {ErrorKind::numeric, m}; }
  static Error internal(const std::string& m) { return {ErrorKind::internal, m}; }

 private:
  ErrorKind kind_;
};

inline void check(bool ok, ErrorKind kind, const std::string& msg) {
  if (!ok) throw Error(kind, msg);
}

// Deterministic, portable RNG: xoshiro256++ seeded via splitmix64.
// Distribution methods are hand-rolled so that frozen values in tests do not
// depend on standard-library internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform on [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller (second draw cached).
  double normal();
  // Uniform integer on [0, n) by rejection; n must be positive.
  std::int64_t uniform_int(std::int64_t n);
  // Independent child stream; deterministic in (parent state, stream id).
  Rng derive(std::uint64_t stream_id) const;

  template <class T>
  void shuffle(std::vector<T>& xs) {
    for (std::int64_t i = static_cast<std::int64_t>(xs.size()) - 1; i > 0; --i) {
      std::int64_t j = uniform_int(i + 1);
      std::swap(xs[static_cast<std::size_t>(i)], xs[static_cast<std::size_t>(j)]);
    }
  }

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---- strings ----
std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);
std::string to_lower(std::string s);
bool starts_with(const std::string& s, const std::string& prefix);

// Strict numeric parsing (whole-token; throws Error::config on junk).
std::int64_t parse_i64(const std::string& tok, const std::string& what);
std::uint64_t parse_u64(const std::string& tok, const std::string& what);
double parse_f64(const std::string& tok, const std::string& what);

// Fixed-format float rendering used by all reports so output is bit-stable.
std::string format_f64(double x, int decimals);

// ---- binary file I/O (explicit little-endian) ----
class ByteWriter {
 public:
  void u8(std::uint8_t x);
  void u32(std::uint32_t x);
  void u64(std::uint64_t x);
  void i64(std::int64_t x);
  void f32(float x);
  void f64(double x);
  void bytes(const void* p, std::size_t n);
  void str(const std::string& s);  // u32 length + raw bytes
  const std::vector<std::uint8_t>& data() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> buf) : buf_(std::move(buf)) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  float f32();
  double f64();
  void bytes(void* p, std::size_t n);
  std::string str();
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n);
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);
// Atomic: writes to a temp file in the same directory, then renames.
void write_file_bytes(const std::filesystem::path& path,
                      const std::vector<std::uint8_t>& data);
void write_file_text(const std::filesystem::path& path, const std::string& text);

// FNV-1a over raw bytes; used to fingerprint filter banks in cache headers.
std::uint64_t fnv1a64(const void* p, std::size_t n);

}  // namespace sleepstage
