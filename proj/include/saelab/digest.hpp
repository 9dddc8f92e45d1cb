#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

namespace saelab {

// Streaming 64-bit FNV-1a. Used for content ids and weight digests, not for
// anything security-relevant.
class Digest {
 public:
  Digest& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  Digest& text(std::string_view s) {
    u64(s.size());
    return bytes(s.data(), s.size());
  }

  Digest& u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    return bytes(b, 8);
  }

  Digest& f64(double v) { return u64(std::bit_cast<std::uint64_t>(v)); }

  Digest& f64s(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
    return *this;
  }

  std::uint64_t value() const noexcept { return state_; }

  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return buf;
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string content_hash(std::string_view s) {
  return Digest{}.bytes(s.data(), s.size()).hex();
}

}  // namespace saelab
