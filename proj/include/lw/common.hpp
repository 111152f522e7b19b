#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lw {

inline constexpr const char* kToolName = "linewise";
inline constexpr const char* kToolVersion = "0.1.0";

/// Raised for bad user input (arguments, malformed files, contract
/// violations).  The CLI maps it to exit code 1; anything else that
/// escapes is an internal failure and maps to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

using Rng = std::mt19937_64;

/// Uniform draw in [0, 1) built from the top 53 bits of the generator,
/// so results do not depend on the standard library's distribution
/// implementations.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on two uniform draws.
inline double normal01(Rng& rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  // log(0) guard: map u1=0 to the smallest representable positive draw.
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

/// Uniform integer in [0, n).  Modulo bias is negligible for a 64-bit
/// generator at the sizes used here.
inline std::size_t rand_below(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

/// Fisher-Yates shuffle with an explicit index formula; std::shuffle is
/// avoided because its draw sequence differs between standard libraries.
template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = rand_below(rng, i);
    std::swap(items[i - 1], items[j]);
  }
}

// --- little-endian binary buffer helpers (checkpoint format) ---

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}

template <class T>
void put_le(std::string& out, T value) {
  static_assert(std::is_arithmetic_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

/// Cursor over a byte string; every read is bounds-checked so that a
/// truncated file turns into a ValidationError instead of UB.
class ByteReader {
 public:
  ByteReader(const std::string& data, std::string what)
      : data_(data), what_(std::move(what)) {}

  template <class T>
  T get_le() {
    static_assert(std::is_arithmetic_v<T>);
    require(sizeof(T));
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
        std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_bytes(std::size_t n) {
    require(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void require(std::size_t n) const {
    if (pos_ + n > data_.size())
      throw ValidationError(what_ + ": truncated file");
  }
  const std::string& data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) throw std::runtime_error("read failed: " + path);
  return data;
}

/// Writes via a sibling temp file plus rename, so a crash mid-write
/// never leaves a half-written file at the destination.
inline void atomic_write_file(const std::string& path, const std::string& data) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

/// FNV-1a, 64-bit; used to fingerprint the tokenizer a model was
/// trained with.
inline std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace lw
