#pragma once

#include "retgen/core/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace retgen {

using Json = nlohmann::json;

/// Writes to `path.tmp` then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a. Used for config hashes and file fingerprints.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Little binary writer/reader pair for the checkpoint and index formats.
class BinaryWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(std::string_view s) {
    u64(s.size());
    buf_.append(s.data(), s.size());
  }
  void tensor(const Tensor& t);
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string bytes) : buf_(std::move(bytes)) {}
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  std::int64_t i64() { return pod<std::int64_t>(); }
  double f64() { return pod<double>(); }
  std::string str();
  Tensor tensor();
  void expect_magic(std::string_view magic);
  bool done() const { return pos_ == buf_.size(); }

 private:
  template <typename T>
  T pod() {
    T v;
    take(&v, sizeof v);
    return v;
  }
  void take(void* dst, std::size_t n);

  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace retgen
