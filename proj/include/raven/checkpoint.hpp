#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "raven/tensor.hpp"

namespace raven {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// File layout: "DRNC", u32 version, u64 header length, JSON header
// {config, step, meta, tensors: [{name, shape, offset}]}, then the tensors as
// little-endian f32 in index order.
struct Checkpoint {
  nlohmann::json config;
  std::uint64_t step = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint parse_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace raven
