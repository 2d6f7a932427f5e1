#pragma once

// Little-endian checkpoint container:
//   "SYMN" | u32 version | u32 config length | config JSON bytes |
//   u32 record count | records
// and each record is
//   u32 name length | name | u8 dtype | u32 rank | u64 extents[rank] | raw values.
// Records are kept in file order, so load followed by save reproduces the
// original bytes.

#include <cstdint>
#include <string>
#include <vector>

#include "symnet/tensor.hpp"

namespace symnet {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2, kU64 = 3 };

std::size_t dtype_size(DType d);

struct Record {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::uint64_t> extents;
  std::vector<std::uint8_t> bytes;  // little-endian element payload

  std::uint64_t numel() const;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_json;
  std::vector<Record> records;

  const Record* find(const std::string& name) const;
  const Record& at(const std::string& name) const;  // NotFound when missing

  std::vector<std::uint8_t> serialize() const;
  // FormatError (with byte offset) on corrupt or truncated input;
  // VersionError on an unsupported version.
  static Checkpoint parse(const std::vector<std::uint8_t>& bytes, const std::string& source = "checkpoint");

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

template <typename T>
Record tensor_record(const std::string& name, const Tensor<T>& t);
// FormatError when the dtype does not match T.
template <typename T>
Tensor<T> record_tensor(const Record& r);

Record bytes_record(const std::string& name, const std::string& bytes);
std::string record_bytes(const Record& r);
Record u64_record(const std::string& name, std::uint64_t v);
std::uint64_t record_u64(const Record& r);

}  // namespace symnet
