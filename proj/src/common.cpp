#include "sleepstage/common.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace sleepstage {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& w : s_) w = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  check(hi >= lo, ErrorKind::validation, "uniform: hi < lo");
  return lo + (hi - lo) * uniform();
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::int64_t Rng::uniform_int(std::int64_t n) {
  check(n > 0, ErrorKind::validation, "uniform_int: n must be positive");
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return static_cast<std::int64_t>(x % un);
}

Rng Rng::derive(std::uint64_t stream_id) const {
  std::uint64_t x = s_[0] ^ rotl(s_[1], 13) ^ rotl(s_[2], 31) ^ s_[3];
  x ^= stream_id * 0xD1342543DE82EF95ULL;
  std::uint64_t seed = splitmix64(x);
  return Rng(seed);
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

std::int64_t parse_i64(const std::string& tok, const std::string& what) {
  const std::string t = trim(tok);
  check(!t.empty(), ErrorKind::config, what + ": empty integer");
  std::size_t pos = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(t, &pos);
  } catch (const std::exception&) {
    throw Error::config(what + ": not an integer: '" + tok + "'");
  }
  check(pos == t.size(), ErrorKind::config, what + ": trailing junk in '" + tok + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& tok, const std::string& what) {
  const std::string t = trim(tok);
  check(!t.empty() && t.find_first_not_of("0123456789") == std::string::npos,
        ErrorKind::config, what + ": not an unsigned integer: '" + tok + "'");
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(t, &pos);
  } catch (const std::exception&) {
    throw Error::config(what + ": unsigned integer out of range: '" + tok + "'");
  }
  check(pos == t.size(), ErrorKind::config, what + ": trailing junk in '" + tok + "'");
  return static_cast<std::uint64_t>(v);
}

double parse_f64(const std::string& tok, const std::string& what) {
  const std::string t = trim(tok);
  check(!t.empty(), ErrorKind::config, what + ": empty number");
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(t, &pos);
  } catch (const std::exception&) {
    throw Error::config(what + ": not a number: '" + tok + "'");
  }
  check(pos == t.size(), ErrorKind::config, what + ": trailing junk in '" + tok + "'");
  return v;
}

std::string format_f64(double x, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, x);
  return buf;
}

void ByteWriter::u8(std::uint8_t x) { buf_.push_back(x); }

void ByteWriter::u32(std::uint32_t x) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t x) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

void ByteWriter::i64(std::int64_t x) { u64(static_cast<std::uint64_t>(x)); }

void ByteWriter::f32(float x) {
  std::uint32_t bits;
  std::memcpy(&bits, &x, 4);
  u32(bits);
}

void ByteWriter::f64(double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, 8);
  u64(bits);
}

void ByteWriter::bytes(const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  buf_.insert(buf_.end(), b, b + n);
}

void ByteWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void ByteReader::need(std::size_t n) {
  check(pos_ + n <= buf_.size(), ErrorKind::io, "byte stream truncated");
}

std::uint8_t ByteReader::u8() {
  need(1);
  return buf_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return x;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return x;
}

std::int64_t ByteReader::i64() { return static_cast<std::int64_t>(u64()); }

float ByteReader::f32() {
  std::uint32_t bits = u32();
  float x;
  std::memcpy(&x, &bits, 4);
  return x;
}

double ByteReader::f64() {
  std::uint64_t bits = u64();
  double x;
  std::memcpy(&x, &bits, 8);
  return x;
}

void ByteReader::bytes(void* p, std::size_t n) {
  need(n);
  std::memcpy(p, buf_.data() + pos_, n);
  pos_ += n;
}

std::string ByteReader::str() {
  std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), ErrorKind::io, "cannot open for read: " + path.string());
  f.seekg(0, std::ios::end);
  const std::streamoff n = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(n));
  if (n > 0) f.read(reinterpret_cast<char*>(buf.data()), n);
  check(f.good(), ErrorKind::io, "short read: " + path.string());
  return buf;
}

std::string read_file_text(const std::filesystem::path& path) {
  auto b = read_file_bytes(path);
  return std::string(b.begin(), b.end());
}

void write_file_bytes(const std::filesystem::path& path,
                      const std::vector<std::uint8_t>& data) {
  const auto dir = path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    check(f.good(), ErrorKind::io, "cannot open for write: " + tmp);
    if (!data.empty())
      f.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    f.flush();
    check(f.good(), ErrorKind::io, "short write: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void write_file_text(const std::filesystem::path& path, const std::string& text) {
  std::vector<std::uint8_t> b(text.begin(), text.end());
  write_file_bytes(path, b);
}

std::uint64_t fnv1a64(const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace sleepstage
