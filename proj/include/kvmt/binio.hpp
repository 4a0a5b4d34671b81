#pragma once

// Little-endian binary encoding shared by the KVDS file formats and checkpoints.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace kvmt {

/// Malformed, truncated or mismatched binary file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_bytes(const std::vector<unsigned char>& bytes, const std::filesystem::path& path);
std::vector<unsigned char> load_bytes(const std::filesystem::path& path);

class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

  template <class T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    bytes_.insert(bytes_.end(), buf, buf + sizeof(T));
  }

  template <class T>
  void put_all(std::span<const T> vs) {
    for (const T& v : vs) put(v);
  }

  void zeros(std::size_t n) { bytes_.insert(bytes_.end(), n, 0); }

  const std::vector<unsigned char>& bytes() const { return bytes_; }

  /// Writes the buffer to `path`, replacing any existing file.
  void save(const std::filesystem::path& path) const { save_bytes(bytes_, path); }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}
  static ByteReader load(const std::filesystem::path& path) { return ByteReader(load_bytes(path)); }

  void expect_magic(std::string_view m) {
    need(m.size());
    if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
      throw FormatError("bad magic: expected \"" + std::string(m) + "\"");
    pos_ += m.size();
  }

  template <class T>
  T get() {
    static_assert(std::is_arithmetic_v<T>);
    need(sizeof(T));
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }

  template <class T>
  void get_all(std::span<T> out) {
    need(out.size() * sizeof(T));
    for (T& v : out) v = get<T>();
  }

  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  void expect_end() const {
    if (remaining() != 0) throw FormatError("trailing bytes after payload");
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated file");
  }

  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace kvmt
