#pragma once
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace polyrl {

struct SerializeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Canonical little-endian byte writer. All snapshot and checkpoint bytes go
// through this so equality of state implies equality of bytes.
class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(uint8_t(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(uint8_t(v >> (8 * i)));
  }
  void i64(int64_t v) { u64(uint64_t(v)); }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void bytes(const void* p, size_t len) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + len);
  }
  void str(const std::string& s) {
    u32(uint32_t(s.size()));
    bytes(s.data(), s.size());
  }
  void i64_vec(const std::vector<int64_t>& v) {
    u32(uint32_t(v.size()));
    for (int64_t x : v) i64(x);
  }
  void f64_vec(const std::vector<double>& v) {
    u32(uint32_t(v.size()));
    for (double x : v) f64(x);
  }
  const std::vector<uint8_t>& data() const { return buf_; }
  std::vector<uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<uint8_t>& b) : buf_(b) {}
  explicit ByteReader(std::vector<uint8_t>&&) = delete;  // reader borrows, never owns
  uint8_t u8() { return take(1)[0]; }
  uint32_t u32() {
    const uint8_t* p = take(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p[i]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    const uint8_t* p = take(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
    return v;
  }
  int64_t i64() { return int64_t(u64()); }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    const uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  std::vector<int64_t> i64_vec() {
    uint32_t n = u32();
    std::vector<int64_t> v(n);
    for (auto& x : v) x = i64();
    return v;
  }
  std::vector<double> f64_vec() {
    uint32_t n = u32();
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  void bytes(void* dst, size_t len) { std::memcpy(dst, take(len), len); }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const uint8_t* take(size_t n) {
    if (pos_ + n > buf_.size()) throw SerializeError("byte stream truncated");
    const uint8_t* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  const std::vector<uint8_t>& buf_;
  size_t pos_ = 0;
};

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::vector<uint8_t>& v) { return fnv1a64(v.data(), v.size()); }
inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// 17 significant digits round-trips every double; used for CSV and text reports.
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace polyrl
