#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "objnav/error.hpp"

namespace objnav {

static_assert(std::endian::native == std::endian::little, "wire formats assume a little-endian host");

class ByteWriter {
 public:
  template <class I>
  void put(I v) {
    char buf[sizeof(I)];
    std::memcpy(buf, &v, sizeof(I));
    out_.append(buf, sizeof(I));
  }
  void put_bytes(const void* p, size_t n) { out_.append(static_cast<const char*>(p), n); }
  void put_string16(std::string_view s) {
    if (s.size() > 0xFFFF) throw LengthOverflowError("string longer than 65535 bytes");
    put<uint16_t>(static_cast<uint16_t>(s.size()));
    out_.append(s);
  }
  std::string& str() { return out_; }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

/// Bounds-checked little-endian reader; underruns raise TruncatedFrameError.
class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}

  template <class I>
  I get() {
    need(sizeof(I));
    I v;
    std::memcpy(&v, in_.data() + pos_, sizeof(I));
    pos_ += sizeof(I);
    return v;
  }
  std::string_view get_bytes(size_t n) {
    need(n);
    std::string_view s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string16() { return std::string(get_bytes(get<uint16_t>())); }
  size_t remaining() const { return in_.size() - pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(size_t n) const {
    if (in_.size() - pos_ < n) {
      throw TruncatedFrameError("truncated: need " + std::to_string(n) + " bytes, have " +
                                std::to_string(in_.size() - pos_));
    }
  }
  std::string_view in_;
  size_t pos_ = 0;
};

}  // namespace objnav
