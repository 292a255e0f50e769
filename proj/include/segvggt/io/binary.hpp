#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Little-endian byte encoding shared by the raster, checkpoint and prediction
// formats. Writers append to a byte buffer; readers track their offset so parse
// errors can name the file and byte position.

namespace segvggt::io {

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& file, std::size_t offset, const std::string& what);
  const std::string& file() const { return file_; }
  std::size_t offset() const { return offset_; }

 private:
  std::string file_;
  std::size_t offset_;
};

class ByteWriter {
 public:
  void magic(std::string_view tag);
  void u32(std::uint32_t v);
  void i32(std::int32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  void i32s(std::span<const std::int32_t> values);
  void bytes(std::span<const std::uint8_t> values);
  void string(std::string_view s);  // u32 length + UTF-8 bytes

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> bytes, std::string file);
  static ByteReader open(const std::filesystem::path& path);

  void expect_magic(std::string_view tag);
  std::uint32_t u32();
  std::int32_t i32();
  std::uint64_t u64();
  double f64();
  std::vector<double> f64s(std::size_t count);
  std::vector<std::int32_t> i32s(std::size_t count);
  std::vector<std::uint8_t> bytes(std::size_t count);
  std::string string();

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  /// Throws unless every byte has been consumed.
  void expect_end();
  [[noreturn]] void fail(const std::string& what) const;
  const std::string& file() const { return file_; }

 private:
  void need(std::size_t n, const char* what);

  std::vector<std::uint8_t> data_;
  std::string file_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace segvggt::io
