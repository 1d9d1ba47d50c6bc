#include "lshift/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "lshift/text.hpp"

namespace lshift {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

using Kind = CheckpointError::Kind;

class Writer {
 public:
  template <class V>
  void put(V v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(V));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  template <class V>
  void put_array(const std::vector<V>& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    bytes.insert(bytes.end(), p, p + v.size() * sizeof(V));
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  template <class V>
  V get() {
    V v;
    std::memcpy(&v, take(sizeof(V)), sizeof(V));
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  template <class V>
  std::vector<V> get_array(std::size_t count) {
    if (count > (size_ - pos_) / sizeof(V)) fail();
    std::vector<V> v(count);
    std::memcpy(v.data(), take(count * sizeof(V)), count * sizeof(V));
    return v;
  }
  bool done() const { return pos_ == size_; }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (n > size_ - pos_) fail();
    const auto* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  [[noreturn]] static void fail() {
    throw CheckpointError(Kind::format, "checkpoint: record runs past the end of the data");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

StoredTensor StoredTensor::from(std::string name, const Tensor<float>& t) {
  StoredTensor s;
  s.name = std::move(name);
  s.dtype = DType::f32;
  s.shape = t.shape();
  s.f32 = t.to_vector();
  return s;
}

StoredTensor StoredTensor::from(std::string name, Shape shape, std::vector<double> values) {
  StoredTensor s;
  s.name = std::move(name);
  s.dtype = DType::f64;
  s.shape = std::move(shape);
  s.f64 = std::move(values);
  return s;
}

Tensor<float> StoredTensor::as_f32() const {
  if (dtype != DType::f32)
    throw CheckpointError(Kind::format, "checkpoint tensor " + name + " is not f32");
  return Tensor<float>::from(shape, f32);
}

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const StoredTensor& Checkpoint::at(const std::string& name) const {
  const StoredTensor* t = find(name);
  if (t == nullptr) throw CheckpointError(Kind::missing, "checkpoint lacks tensor " + name);
  return *t;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  w.put(kCheckpointVersion);
  w.put_string(ckpt.config_text);
  w.put(static_cast<std::uint32_t>(ckpt.vocabulary.size()));
  for (const auto& tok : ckpt.vocabulary) w.put_string(tok);
  w.put(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.shape.size() > 255) throw CheckpointError(Kind::format, "tensor rank exceeds 255: " + t.name);
    const std::size_t count = static_cast<std::size_t>(numel(t.shape));
    const std::size_t have = t.dtype == DType::f32 ? t.f32.size() : t.f64.size();
    if (have != count) throw CheckpointError(Kind::format, "tensor " + t.name + " size mismatch");
    w.put_string(t.name);
    w.put(static_cast<std::uint8_t>(t.dtype));
    w.put(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.put(static_cast<std::uint64_t>(d));
    if (t.dtype == DType::f32)
      w.put_array(t.f32);
    else
      w.put_array(t.f64);
  }
  w.put(crc_of(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw CheckpointError(Kind::magic, "not a checkpoint: bad magic");
  if (bytes.size() < sizeof kCheckpointMagic + 8)
    throw CheckpointError(Kind::crc, "checkpoint truncated: CRC mismatch");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (stored != crc_of(bytes.data(), body))
    throw CheckpointError(Kind::crc, "checkpoint corrupt: CRC mismatch");

  Reader r(bytes.data() + sizeof kCheckpointMagic, body - sizeof kCheckpointMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError(Kind::version, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_text = r.get_string();
  const auto vocab = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < vocab; ++i) ckpt.vocabulary.push_back(r.get_string());
  if (ckpt.vocabulary != vocabulary_list())
    throw CheckpointError(Kind::vocabulary, "checkpoint vocabulary differs from the built-in table");
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.get_string();
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw CheckpointError(Kind::format, "unknown dtype code in " + t.name);
    t.dtype = static_cast<DType>(dtype);
    const auto rank = r.get<std::uint8_t>();
    std::uint64_t total = 1;
    for (int d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint64_t>();
      if (dim > (1ULL << 40) || (dim != 0 && total > (1ULL << 40) / dim))
        throw CheckpointError(Kind::format, "implausible dimension in " + t.name);
      total *= dim;
      t.shape.push_back(static_cast<std::int64_t>(dim));
    }
    if (t.dtype == DType::f32)
      t.f32 = r.get_array<float>(total);
    else
      t.f64 = r.get_array<double>(total);
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError(Kind::format, "trailing bytes after the tensor table");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(Kind::io, "cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(Kind::io, "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::io, "cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace lshift
