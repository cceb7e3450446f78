#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dynarace/error.hpp"

namespace dynarace {

using Bytes = std::vector<std::uint8_t>;

static_assert(std::endian::native == std::endian::little,
              "wire formats are little-endian and encoded by memcpy");

// Little-endian append-only encoder.
class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}

  template <class T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void put_f32(double v) { put(static_cast<float>(v)); }
  void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void raw(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }

 private:
  Bytes& out_;
};

// Bounds-checked little-endian decoder; overruns raise `code`.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> in, ErrorCode code) : in_(in), code_(code) {}

  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T));
    T value;
    std::memcpy(&value, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

  void expect_end(const char* what) const {
    if (pos_ != in_.size()) throw Error(code_, std::string("trailing bytes in ") + what);
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw Error(code_, "truncated input");
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  ErrorCode code_;
};

}  // namespace dynarace
