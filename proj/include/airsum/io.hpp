#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string_view>

#include "airsum/tensor.hpp"

namespace airsum::io {

// Little-endian binary stream helpers shared by the checkpoint and dataset
// containers. Doubles round-trip bit-exactly. Reads past the end of file
// raise CorruptFile.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path);

  void magic(std::string_view tag);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void str(std::string_view s);
  void tensor(const num::Tensor& t);
  void finish();

 private:
  void bytes(const void* data, std::size_t count);
  std::ofstream out_;
  std::filesystem::path path_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path);

  void expect_magic(std::string_view tag, std::string_view what);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  std::string str();
  num::Tensor tensor();
  void expect_end(std::string_view what);

 private:
  void bytes(void* data, std::size_t count);
  std::ifstream in_;
  std::filesystem::path path_;
};

inline constexpr std::string_view kEndTag = "END!";

}  // namespace airsum::io
