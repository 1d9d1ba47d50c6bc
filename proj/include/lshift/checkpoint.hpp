#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lshift/tensor.hpp"

namespace lshift {

inline constexpr char kCheckpointMagic[8] = {'L', 'S', 'H', 'I', 'F', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, magic, crc, version, vocabulary, format, missing };
  CheckpointError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct StoredTensor {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<float> f32;
  std::vector<double> f64;

  static StoredTensor from(std::string name, const Tensor<float>& t);
  static StoredTensor from(std::string name, Shape shape, std::vector<double> values);
  Tensor<float> as_f32() const;
};

/// Layout, little-endian throughout:
///   magic[8] | u32 version | u32 len + config text | u32 count + (u32 len + token)*
///   | u32 tensor count | per tensor: u32 name len, name, u8 dtype, u8 rank, u64 dims, values
///   | u32 CRC-32 of every preceding byte
struct Checkpoint {
  std::string config_text;
  std::vector<std::string> vocabulary;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const;
  const StoredTensor& at(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
/// Validates magic, then CRC, then version, then the vocabulary against the
/// built-in table; each failure raises a CheckpointError of its own kind.
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lshift
