#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edt/architecture/model.hpp"

namespace edt::arch {

enum class Dtype { kF32, kF64 };

std::string dtype_name(Dtype dtype);
std::size_t dtype_size(Dtype dtype);

/// One tensor as little-endian bytes.
struct StoredTensor {
  std::string name;
  Shape shape;
  Dtype dtype = Dtype::kF32;
  std::vector<std::uint8_t> bytes;
};

/// Named tensors plus free-form metadata. On disk: `manifest.json` (name ->
/// shape, dtype, byte offset, byte length; metadata) and `tensors.bin`.
class Archive {
 public:
  template <typename T>
  void put(const std::string& name, const Tensor<T>& tensor);
  /// Throws ManifestError when absent or stored at another precision.
  template <typename T>
  Tensor<T> get(const std::string& name) const;

  const StoredTensor* find(const std::string& name) const;
  const std::vector<StoredTensor>& tensors() const { return tensors_; }
  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  void save(const std::filesystem::path& dir) const;
  static Archive load(const std::filesystem::path& dir);

 private:
  std::vector<StoredTensor> tensors_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

template <typename T>
constexpr Dtype dtype_of() {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  return sizeof(T) == 4 ? Dtype::kF32 : Dtype::kF64;
}

/// Parameters under their store names, model config under metadata "model_config".
template <typename T>
void put_parameters(Archive& archive, const EdtModel<T>& model);

/// Copies stored values into the model's parameters in place. Every missing,
/// unexpected, wrongly shaped or wrongly typed tensor is listed in one
/// ManifestError.
template <typename T>
void load_parameters(EdtModel<T>& model, const Archive& archive);

template <typename T>
void save_model(const EdtModel<T>& model, const std::filesystem::path& dir);

/// Model rebuilt from the stored config, then filled from the archive.
template <typename T>
EdtModel<T> load_model(const std::filesystem::path& dir);

}  // namespace edt::arch
