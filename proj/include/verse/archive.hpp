#pragma once

// Named float32 array archive with a JSON header, used for checkpoints and
// per-layer debug dumps.
//
// Layout (little-endian):
//   8 bytes   magic "VERSECKP"
//   u32       archive format version
//   u64       header length in bytes
//   header    UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "shape"}, ...]}
//   payload   each array's float32 values, row-major, in header order

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "verse/tensor.hpp"

namespace verse {

inline constexpr std::uint32_t kArchiveVersion = 1;

class Archive {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void add(const std::string& name, Tensor<float> array);
  bool contains(const std::string& name) const;
  const Tensor<float>& get(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor<float>>>& arrays() const { return arrays_; }

 private:
  std::vector<std::pair<std::string, Tensor<float>>> arrays_;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

}  // namespace verse
