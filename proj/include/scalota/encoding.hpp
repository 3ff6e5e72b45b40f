#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "scalota/crypto.hpp"

namespace scalota {

struct EncodingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Canonical big-endian writer. Integers are 8 bytes, strings and octet strings carry a
/// 4-byte length prefix, lists an 8-byte count prefix, digests are written raw.
class Writer {
 public:
  void u8(uint8_t v) { out_.push_back(v); }

  void u64(uint64_t v) {
    for (int shift = 56; shift >= 0; shift -= 8) out_.push_back(static_cast<uint8_t>(v >> shift));
  }

  void u32(uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out_.push_back(static_cast<uint8_t>(v >> shift));
  }

  void str(std::string_view s) {
    if (s.size() > UINT32_MAX) throw EncodingError("string too long");
    u32(static_cast<uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }

  void bytes(ByteView b) {
    if (b.size() > UINT32_MAX) throw EncodingError("octet string too long");
    u32(static_cast<uint32_t>(b.size()));
    out_.insert(out_.end(), b.begin(), b.end());
  }

  void raw(ByteView b) { out_.insert(out_.end(), b.begin(), b.end()); }

  void digest(const Digest& d) { raw(d.view()); }

  void count(std::size_t n) { u64(n); }

  const Bytes& data() const& { return out_; }
  Bytes data() && { return std::move(out_); }
  std::size_t size() const { return out_.size(); }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(ByteView in) : in_(in) {}

  uint8_t u8() {
    need(1);
    return in_[pos_++];
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | in_[pos_++];
    return v;
  }

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | in_[pos_++];
    return v;
  }

  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  Bytes bytes() {
    uint32_t n = u32();
    need(n);
    Bytes b(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
            in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return b;
  }

  Digest digest() {
    need(kDigestSize);
    Digest d;
    std::copy_n(in_.begin() + static_cast<std::ptrdiff_t>(pos_), kDigestSize, d.bytes.begin());
    pos_ += kDigestSize;
    return d;
  }

  std::size_t count() {
    uint64_t n = u64();
    // each element occupies at least one byte
    if (n > remaining()) throw EncodingError("list count exceeds input");
    return static_cast<std::size_t>(n);
  }

  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t position() const { return pos_; }

  void expect_done() const {
    if (!done()) throw EncodingError("trailing bytes after message");
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw EncodingError("truncated input");
  }

  ByteView in_;
  std::size_t pos_ = 0;
};

}  // namespace scalota
