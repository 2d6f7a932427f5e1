#include "symnet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <type_traits>

#include "symnet/error.hpp"

namespace symnet {

namespace {

constexpr char kMagic[4] = {'S', 'Y', 'M', 'N'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, const std::string& src) : b_(b), src_(src) {}

  template <typename U>
  U le() {
    need(sizeof(U), "integer field");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  std::vector<std::uint8_t> take(std::uint64_t n, const char* what) {
    need(n, what);
    std::vector<std::uint8_t> out(b_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(src_ + ": " + msg + " at offset " + std::to_string(pos_));
  }

 private:
  void need(std::uint64_t n, const char* what) const {
    if (n > b_.size() - pos_) fail(std::string("truncated ") + what);
  }

  const std::vector<std::uint8_t>& b_;
  std::string src_;
  std::size_t pos_ = 0;
};

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::kF32;
  else return DType::kF64;
}

}  // namespace

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
    case DType::kU64: return 8;
  }
  throw FormatError("unknown dtype tag " + std::to_string(static_cast<int>(d)));
}

std::uint64_t Record::numel() const {
  std::uint64_t n = 1;
  for (auto e : extents) n *= e;
  return n;
}

const Record* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

const Record& Checkpoint::at(const std::string& name) const {
  const Record* r = find(name);
  if (!r) throw NotFound("checkpoint has no record '" + name + "'");
  return *r;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(config_json.size()));
  out.insert(out.end(), config_json.begin(), config_json.end());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    require(r.bytes.size() == r.numel() * dtype_size(r.dtype),
            "checkpoint record " + r.name + " payload does not match its extents");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(static_cast<std::uint8_t>(r.dtype));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.extents.size()));
    for (auto e : r.extents) put_le<std::uint64_t>(out, e);
    out.insert(out.end(), r.bytes.begin(), r.bytes.end());
  }
  return out;
}

Checkpoint Checkpoint::parse(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  Reader rd(bytes, source);
  const auto magic = rd.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw FormatError(source + ": bad magic bytes at offset 0 (not a checkpoint)");
  }
  const auto version = rd.le<std::uint32_t>();
  if (version != kVersion) {
    throw VersionError(source + ": checkpoint version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kVersion) + ")");
  }
  Checkpoint ck;
  const auto cfg_len = rd.le<std::uint32_t>();
  const auto cfg = rd.take(cfg_len, "config block");
  ck.config_json.assign(cfg.begin(), cfg.end());
  const auto n = rd.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    Record r;
    const auto name_len = rd.le<std::uint32_t>();
    const auto name = rd.take(name_len, "record name");
    r.name.assign(name.begin(), name.end());
    const auto tag = rd.le<std::uint8_t>();
    if (tag > static_cast<std::uint8_t>(DType::kU64)) rd.fail("unknown dtype tag " + std::to_string(tag));
    r.dtype = static_cast<DType>(tag);
    const auto rank = rd.le<std::uint32_t>();
    if (rank > 8) rd.fail("implausible rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) r.extents.push_back(rd.le<std::uint64_t>());
    const std::uint64_t count = r.numel();
    if (count > bytes.size()) rd.fail("record " + r.name + " extents exceed the file");
    r.bytes = rd.take(count * dtype_size(r.dtype), "record payload");
    ck.records.push_back(std::move(r));
  }
  if (!rd.done()) rd.fail("trailing bytes after the last record");
  return ck;
}

void Checkpoint::save(const std::string& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(bytes, path);
}

template <typename T>
Record tensor_record(const std::string& name, const Tensor<T>& t) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  Record r{name, dtype_of<T>(), {}, {}};
  for (auto e : t.shape()) r.extents.push_back(e);
  r.bytes.reserve(t.size() * sizeof(T));
  for (T v : t.storage()) {
    U bits;
    std::memcpy(&bits, &v, sizeof(T));
    put_le<U>(r.bytes, bits);
  }
  return r;
}

template <typename T>
Tensor<T> record_tensor(const Record& r) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  if (r.dtype != dtype_of<T>())
    throw FormatError("record " + r.name + " has dtype tag " + std::to_string(static_cast<int>(r.dtype)) +
                      ", expected " + std::to_string(static_cast<int>(dtype_of<T>())));
  Shape shape;
  for (auto e : r.extents) shape.push_back(static_cast<std::size_t>(e));
  if (shape.empty() || r.bytes.size() != r.numel() * sizeof(T))
    throw FormatError("record " + r.name + " has an inconsistent payload");
  std::vector<T> values(r.numel());
  for (std::size_t i = 0; i < values.size(); ++i) {
    U bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<U>(static_cast<U>(r.bytes[i * sizeof(T) + b]) << (8 * b));
    std::memcpy(&values[i], &bits, sizeof(T));
  }
  return Tensor<T>(shape, std::move(values));
}

Record bytes_record(const std::string& name, const std::string& bytes) {
  return {name, DType::kU8, {bytes.size()}, std::vector<std::uint8_t>(bytes.begin(), bytes.end())};
}

std::string record_bytes(const Record& r) {
  if (r.dtype != DType::kU8) throw FormatError("record " + r.name + " is not a byte record");
  return {r.bytes.begin(), r.bytes.end()};
}

Record u64_record(const std::string& name, std::uint64_t v) {
  Record r{name, DType::kU64, {1}, {}};
  put_le<std::uint64_t>(r.bytes, v);
  return r;
}

std::uint64_t record_u64(const Record& r) {
  if (r.dtype != DType::kU64 || r.numel() != 1) throw FormatError("record " + r.name + " is not a u64 scalar");
  std::uint64_t v = 0;
  for (std::size_t b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(r.bytes[b]) << (8 * b);
  return v;
}

template Record tensor_record(const std::string&, const Tensor<float>&);
template Record tensor_record(const std::string&, const Tensor<double>&);
template Tensor<float> record_tensor(const Record&);
template Tensor<double> record_tensor(const Record&);

}  // namespace symnet
