#include "airsum/io.hpp"

#include <bit>
#include <cstring>
#include <string>

#include "airsum/error.hpp"

namespace airsum::io {

namespace {

void put_u64_le(std::uint64_t v, unsigned char out[8]) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
}

std::uint64_t get_u64_le(const unsigned char in[8]) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  return v;
}

}  // namespace

BinaryWriter::BinaryWriter(const std::filesystem::path& path)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
  if (!out_) throw IoError("cannot open for writing: " + path.string());
}

void BinaryWriter::bytes(const void* data, std::size_t count) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(count));
  if (!out_) throw IoError("write failed: " + path_.string());
}

void BinaryWriter::magic(std::string_view tag) { bytes(tag.data(), tag.size()); }

void BinaryWriter::u8(std::uint8_t v) { bytes(&v, 1); }

void BinaryWriter::u32(std::uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  bytes(buf, 4);
}

void BinaryWriter::u64(std::uint64_t v) {
  unsigned char buf[8];
  put_u64_le(v, buf);
  bytes(buf, 8);
}

void BinaryWriter::i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }

void BinaryWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void BinaryWriter::tensor(const num::Tensor& t) {
  u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) u64(e);
  for (double v : t.data()) f64(v);
}

void BinaryWriter::finish() {
  magic(kEndTag);
  out_.flush();
  if (!out_) throw IoError("write failed: " + path_.string());
}

BinaryReader::BinaryReader(const std::filesystem::path& path)
    : in_(path, std::ios::binary), path_(path) {
  if (!in_) throw IoError("cannot open for reading: " + path.string());
}

void BinaryReader::bytes(void* data, std::size_t count) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in_.gcount()) != count) {
    throw CorruptFile("unexpected end of file: " + path_.string());
  }
}

void BinaryReader::expect_magic(std::string_view tag, std::string_view what) {
  std::string buf(tag.size(), '\0');
  bytes(buf.data(), buf.size());
  if (buf != tag) {
    throw CorruptFile("bad " + std::string(what) + " header: " + path_.string());
  }
}

std::uint8_t BinaryReader::u8() {
  std::uint8_t v = 0;
  bytes(&v, 1);
  return v;
}

std::uint32_t BinaryReader::u32() {
  unsigned char buf[4];
  bytes(buf, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

std::uint64_t BinaryReader::u64() {
  unsigned char buf[8];
  bytes(buf, 8);
  return get_u64_le(buf);
}

std::int64_t BinaryReader::i64() { return static_cast<std::int64_t>(u64()); }

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinaryReader::str() {
  std::uint32_t len = u32();
  if (len > (1u << 26)) throw CorruptFile("oversized string: " + path_.string());
  std::string s(len, '\0');
  bytes(s.data(), len);
  return s;
}

num::Tensor BinaryReader::tensor() {
  std::uint8_t rank = u8();
  if (rank > 4) throw CorruptFile("bad tensor rank: " + path_.string());
  num::Shape shape(rank);
  std::size_t size = 1;
  for (auto& e : shape) {
    e = static_cast<std::size_t>(u64());
    if (e == 0 || e > (1ull << 32)) throw CorruptFile("bad tensor extent: " + path_.string());
    size *= e;
  }
  if (size > (1ull << 28)) throw CorruptFile("oversized tensor: " + path_.string());
  std::vector<double> data(size);
  for (double& v : data) v = f64();
  return num::Tensor::from_data(std::move(shape), std::move(data));
}

void BinaryReader::expect_end(std::string_view what) {
  expect_magic(kEndTag, what);
}

}  // namespace airsum::io
