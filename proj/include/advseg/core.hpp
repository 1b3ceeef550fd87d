#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace advseg {

/// Error with a stable machine-readable code ("io", "format", "shape",
/// "value", "config", "diverged") plus a human message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool ok, const char* code, const std::string& message) {
  if (!ok) fail(code, message);
}

/// Dense 4D tensor in (sample, channel, row, col) order, row-major.
template <typename S>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<S> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<size_t>(n_) * c_ * h_ * w_, S(0)) {}

  size_t size() const { return v.size(); }
  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  S& at(int i, int j, int y, int x) {
    return v[((static_cast<size_t>(i) * c + j) * h + y) * w + x];
  }
  const S& at(int i, int j, int y, int x) const {
    return v[((static_cast<size_t>(i) * c + j) * h + y) * w + x];
  }

  S* plane(int i, int j) {
    return v.data() + (static_cast<size_t>(i) * c + j) * h * w;
  }
  const S* plane(int i, int j) const {
    return v.data() + (static_cast<size_t>(i) * c + j) * h * w;
  }
};

template <typename S>
bool all_finite(const std::vector<S>& v) {
  for (S x : v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}

/// FNV-1a over raw bytes; used for determinism checks on parameter payloads.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace advseg
