#include "edt/architecture/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "edt/error.hpp"

namespace edt::arch {

using nlohmann::json;

std::string dtype_name(Dtype dtype) { return dtype == Dtype::kF32 ? "f32" : "f64"; }

std::size_t dtype_size(Dtype dtype) { return dtype == Dtype::kF32 ? 4 : 8; }

namespace {

Dtype parse_dtype(const std::string& s) {
  if (s == "f32") return Dtype::kF32;
  if (s == "f64") return Dtype::kF64;
  throw ManifestError("unknown dtype " + s);
}

template <typename T>
std::vector<std::uint8_t> encode(std::span<const T> values) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<std::uint8_t> out(values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) {
    Bits bits;
    std::memcpy(&bits, &values[i], sizeof bits);
    for (std::size_t b = 0; b < sizeof(T); ++b) {
      out[i * sizeof(T) + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
  }
  return out;
}

template <typename T>
std::vector<T> decode(const std::vector<std::uint8_t>& bytes) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<T> out(bytes.size() / sizeof(T));
  for (std::size_t i = 0; i < out.size(); ++i) {
    Bits bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) {
      bits |= static_cast<Bits>(bytes[i * sizeof(T) + b]) << (8 * b);
    }
    std::memcpy(&out[i], &bits, sizeof bits);
  }
  return out;
}

}  // namespace

template <typename T>
void Archive::put(const std::string& name, const Tensor<T>& tensor) {
  if (find(name)) throw ManifestError("duplicate tensor " + name);
  tensors_.push_back({name, tensor.shape(), dtype_of<T>(), encode<T>(tensor.data())});
}

template <typename T>
Tensor<T> Archive::get(const std::string& name) const {
  const auto* s = find(name);
  if (!s) throw ManifestError("archive has no tensor " + name);
  if (s->dtype != dtype_of<T>()) {
    throw ManifestError("tensor " + name + " stored as " + dtype_name(s->dtype) + ", requested " +
                        dtype_name(dtype_of<T>()));
  }
  return Tensor<T>::from(s->shape, decode<T>(s->bytes));
}

const StoredTensor* Archive::find(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void Archive::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json entries = json::array();
  std::size_t offset = 0;
  std::ofstream blob(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
  if (!blob) throw ManifestError("cannot write " + (dir / "tensors.bin").string());
  for (const auto& t : tensors_) {
    entries.push_back({{"name", t.name},
                       {"shape", t.shape},
                       {"dtype", dtype_name(t.dtype)},
                       {"offset", offset},
                       {"bytes", t.bytes.size()}});
    blob.write(reinterpret_cast<const char*>(t.bytes.data()),
               static_cast<std::streamsize>(t.bytes.size()));
    offset += t.bytes.size();
  }
  blob.close();
  if (!blob) throw ManifestError("failed writing " + (dir / "tensors.bin").string());
  const json manifest{{"format", "edt-tensors"},
                      {"version", 1},
                      {"byte_order", "little"},
                      {"blob", "tensors.bin"},
                      {"blob_bytes", offset},
                      {"tensors", entries},
                      {"metadata", metadata_}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw ManifestError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

Archive Archive::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ManifestError("cannot open " + (dir / "manifest.json").string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ManifestError((dir / "manifest.json").string() + ": " + e.what());
  }
  std::ifstream blob(dir / manifest.value("blob", std::string("tensors.bin")), std::ios::binary);
  if (!blob) throw ManifestError("cannot open tensor blob in " + dir.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(blob)),
                                 std::istreambuf_iterator<char>());
  Archive archive;
  try {
    for (const auto& e : manifest.at("tensors")) {
      StoredTensor t;
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<Shape>();
      t.dtype = parse_dtype(e.at("dtype").get<std::string>());
      const auto offset = e.at("offset").get<std::size_t>();
      const auto bytes = e.at("bytes").get<std::size_t>();
      if (bytes != shape_numel(t.shape) * dtype_size(t.dtype) || offset + bytes > data.size()) {
        throw ManifestError("tensor " + t.name + " has inconsistent extent in " + dir.string());
      }
      t.bytes.assign(data.begin() + static_cast<std::ptrdiff_t>(offset),
                     data.begin() + static_cast<std::ptrdiff_t>(offset + bytes));
      archive.tensors_.push_back(std::move(t));
    }
    archive.metadata_ = manifest.value("metadata", json::object());
  } catch (const json::exception& e) {
    throw ManifestError(dir.string() + ": malformed manifest: " + e.what());
  }
  return archive;
}

template <typename T>
void put_parameters(Archive& archive, const EdtModel<T>& model) {
  for (const auto& e : model.params().entries()) archive.put(e.name, e.tensor);
  archive.metadata()["model_config"] = to_json(model.config());
}

template <typename T>
void load_parameters(EdtModel<T>& model, const Archive& archive) {
  std::vector<std::string> problems;
  std::set<std::string> expected;
  for (const auto& e : model.params().entries()) {
    expected.insert(e.name);
    const auto* s = archive.find(e.name);
    if (!s) {
      problems.push_back(e.name + ": missing");
    } else if (s->shape != e.tensor.shape()) {
      problems.push_back(e.name + ": shape " + shape_str(s->shape) + " vs model " +
                         shape_str(e.tensor.shape()));
    } else if (s->dtype != dtype_of<T>()) {
      problems.push_back(e.name + ": dtype " + dtype_name(s->dtype) + " vs model " +
                         dtype_name(dtype_of<T>()));
    }
  }
  for (const auto& s : archive.tensors()) {
    // Names with a '/' belong to other state (optimizer moments and the like).
    if (s.name.find('/') == std::string::npos && !expected.count(s.name)) {
      problems.push_back(s.name + ": not a model parameter");
    }
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint incompatible with model (" + std::to_string(problems.size()) +
                      " tensors):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ManifestError(msg);
  }
  for (const auto& e : model.params().entries()) {
    const auto values = archive.get<T>(e.name);
    auto dst = e.tensor;
    std::copy(values.data().begin(), values.data().end(), dst.mutable_data().begin());
  }
}

template <typename T>
void save_model(const EdtModel<T>& model, const std::filesystem::path& dir) {
  Archive archive;
  put_parameters(archive, model);
  archive.save(dir);
}

template <typename T>
EdtModel<T> load_model(const std::filesystem::path& dir) {
  const auto archive = Archive::load(dir);
  if (!archive.metadata().contains("model_config")) {
    throw ManifestError(dir.string() + ": manifest has no model_config");
  }
  EdtModel<T> model(model_config_from_json(archive.metadata().at("model_config")), 0);
  load_parameters(model, archive);
  return model;
}

#define EDT_INSTANTIATE_CHECKPOINT(T)                                          \
  template void Archive::put(const std::string&, const Tensor<T>&);            \
  template Tensor<T> Archive::get(const std::string&) const;                   \
  template void put_parameters(Archive&, const EdtModel<T>&);                  \
  template void load_parameters(EdtModel<T>&, const Archive&);                 \
  template void save_model(const EdtModel<T>&, const std::filesystem::path&);  \
  template EdtModel<T> load_model(const std::filesystem::path&);

EDT_INSTANTIATE_CHECKPOINT(float)
EDT_INSTANTIATE_CHECKPOINT(double)

#undef EDT_INSTANTIATE_CHECKPOINT

}  // namespace edt::arch
