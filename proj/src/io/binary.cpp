#include "segvggt/io/binary.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace segvggt::io {

FormatError::FormatError(const std::string& file, std::size_t offset, const std::string& what)
    : std::runtime_error(file + " (byte " + std::to_string(offset) + "): " + what),
      file_(file),
      offset_(offset) {}

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& buf, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(p[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

}  // namespace

void ByteWriter::magic(std::string_view tag) { buf_.insert(buf_.end(), tag.begin(), tag.end()); }
void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::i32(std::int32_t v) { put_le(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void ByteWriter::f64(double v) { put_le(buf_, v); }

void ByteWriter::f64s(std::span<const double> values) {
  buf_.reserve(buf_.size() + 8 * values.size());
  for (double v : values) put_le(buf_, v);
}

void ByteWriter::i32s(std::span<const std::int32_t> values) {
  buf_.reserve(buf_.size() + 4 * values.size());
  for (auto v : values) put_le(buf_, v);
}

void ByteWriter::bytes(std::span<const std::uint8_t> values) {
  buf_.insert(buf_.end(), values.begin(), values.end());
}

void ByteWriter::string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::save(const std::filesystem::path& path) const { write_file(path, buf_); }

ByteReader::ByteReader(std::vector<std::uint8_t> bytes, std::string file)
    : data_(std::move(bytes)), file_(std::move(file)) {}

ByteReader ByteReader::open(const std::filesystem::path& path) {
  return ByteReader(read_file(path), path.string());
}

void ByteReader::fail(const std::string& what) const { throw FormatError(file_, pos_, what); }

void ByteReader::need(std::size_t n, const char* what) {
  if (remaining() < n) {
    fail(std::string("truncated while reading ") + what + " (need " + std::to_string(n) +
         " bytes, have " + std::to_string(remaining()) + ")");
  }
}

void ByteReader::expect_magic(std::string_view tag) {
  need(tag.size(), "magic");
  if (std::memcmp(data_.data() + pos_, tag.data(), tag.size()) != 0) {
    fail("bad magic, expected \"" + std::string(tag) + "\"");
  }
  pos_ += tag.size();
}

std::uint32_t ByteReader::u32() {
  need(4, "u32");
  const auto v = get_le<std::uint32_t>(data_.data() + pos_);
  pos_ += 4;
  return v;
}

std::int32_t ByteReader::i32() {
  need(4, "i32");
  const auto v = get_le<std::int32_t>(data_.data() + pos_);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8, "u64");
  const auto v = get_le<std::uint64_t>(data_.data() + pos_);
  pos_ += 8;
  return v;
}

double ByteReader::f64() {
  need(8, "f64");
  const auto v = get_le<double>(data_.data() + pos_);
  pos_ += 8;
  return v;
}

std::vector<double> ByteReader::f64s(std::size_t count) {
  if (count > remaining() / 8) need(count * 8, "f64 array");
  std::vector<double> out(count);
  for (auto& v : out) {
    v = get_le<double>(data_.data() + pos_);
    pos_ += 8;
  }
  return out;
}

std::vector<std::int32_t> ByteReader::i32s(std::size_t count) {
  if (count > remaining() / 4) need(count * 4, "i32 array");
  std::vector<std::int32_t> out(count);
  for (auto& v : out) {
    v = get_le<std::int32_t>(data_.data() + pos_);
    pos_ += 4;
  }
  return out;
}

std::vector<std::uint8_t> ByteReader::bytes(std::size_t count) {
  need(count, "byte array");
  std::vector<std::uint8_t> out(data_.begin() + pos_, data_.begin() + pos_ + count);
  pos_ += count;
  return out;
}

std::string ByteReader::string() {
  const auto n = u32();
  need(n, "string");
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

void ByteReader::expect_end() {
  if (!at_end()) fail(std::to_string(remaining()) + " trailing bytes");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string(), 0, "cannot open file");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace segvggt::io
