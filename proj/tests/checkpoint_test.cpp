#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "edt/architecture/checkpoint.hpp"
#include "edt/error.hpp"
#include "support/toy.hpp"

using namespace edt;
using namespace edt::arch;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("edt_ckpt_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

template <typename T>
void expect_same_bits(const EdtModel<T>& a, const EdtModel<T>& b) {
  const auto& ea = a.params().entries();
  const auto& eb = b.params().entries();
  ASSERT_EQ(ea.size(), eb.size());
  for (std::size_t k = 0; k < ea.size(); ++k) {
    ASSERT_EQ(ea[k].name, eb[k].name);
    ASSERT_EQ(ea[k].tensor.shape(), eb[k].tensor.shape());
    EXPECT_EQ(std::memcmp(ea[k].tensor.data().data(), eb[k].tensor.data().data(),
                          ea[k].tensor.numel() * sizeof(T)),
              0)
        << ea[k].name;
  }
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExactFloat) {
  const auto dir = scratch("f32");
  EdtModel<float> model(ModelConfig::nano(), 1);
  edt::testing::randomize_parameters(model.params(), 2, 0.3);
  save_model(model, dir);
  const auto loaded = load_model<float>(dir);
  EXPECT_EQ(loaded.config(), model.config());
  expect_same_bits(model, loaded);
  fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripIsBitExactDoubleWithAwkwardValues) {
  const auto dir = scratch("f64");
  EdtModel<double> model(edt::testing::two_block_config(), 3);
  edt::testing::randomize_parameters(model.params(), 4, 1.0);
  auto w = model.params().entries().front().tensor;
  auto v = w.mutable_data();
  v[0] = -0.0;
  v[1] = std::numeric_limits<double>::denorm_min();
  v[2] = std::nextafter(1.0, 2.0);
  v[3] = -std::numeric_limits<double>::max();
  save_model(model, dir);
  const auto loaded = load_model<double>(dir);
  expect_same_bits(model, loaded);
  EXPECT_TRUE(std::signbit(loaded.params().entries().front().tensor[0]));
  fs::remove_all(dir);
}

TEST(Checkpoint, BlobIsLittleEndianAtManifestOffsets) {
  const auto dir = scratch("layout");
  Archive a;
  a.put("a", Tensor<float>::from({2}, {1.0f, -2.0f}));
  a.put("b", Tensor<double>::from({1}, {0.5}));
  a.metadata()["note"] = "x";
  a.save(dir);

  std::ifstream blob(dir / "tensors.bin", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)), {});
  ASSERT_EQ(bytes.size(), 16u);
  const std::vector<unsigned char> one{0x00, 0x00, 0x80, 0x3f}, minus_two{0x00, 0x00, 0x00, 0xc0};
  EXPECT_EQ(std::vector<unsigned char>(bytes.begin(), bytes.begin() + 4), one);
  EXPECT_EQ(std::vector<unsigned char>(bytes.begin() + 4, bytes.begin() + 8), minus_two);
  const std::vector<unsigned char> half{0, 0, 0, 0, 0, 0, 0xe0, 0x3f};
  EXPECT_EQ(std::vector<unsigned char>(bytes.begin() + 8, bytes.end()), half);

  std::ifstream in(dir / "manifest.json");
  nlohmann::json m;
  in >> m;
  EXPECT_EQ(m["tensors"][0]["dtype"], "f32");
  EXPECT_EQ(m["tensors"][1]["offset"], 8);
  EXPECT_EQ(m["tensors"][1]["shape"], nlohmann::json::array({1}));
  EXPECT_EQ(m["metadata"]["note"], "x");

  const auto back = Archive::load(dir);
  EXPECT_EQ(back.get<double>("b")[0], 0.5);
  EXPECT_THROW(back.get<double>("a"), ManifestError);
  EXPECT_THROW(back.get<float>("missing"), ManifestError);
  fs::remove_all(dir);
}

TEST(Checkpoint, IncompatibleModelListsEveryMismatch) {
  const auto dir = scratch("mismatch");
  EdtModel<float> small(ModelConfig::nano(), 1);
  save_model(small, dir);
  auto other = ModelConfig::nano();
  other.stage_dims = {32, 40, 48, 40, 32};
  EdtModel<float> target(other, 1);
  try {
    load_parameters(target, Archive::load(dir));
    FAIL() << "expected ManifestError";
  } catch (const ManifestError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("patch_embed.weight: shape [16, 24] vs model [16, 32]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("stage2.block0.attn.qkv.weight"), std::string::npos);
    EXPECT_NE(msg.find("cond_proj.48.weight: missing"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Checkpoint, PrecisionMismatchRejected) {
  const auto dir = scratch("dtype");
  EdtModel<float> model(ModelConfig::nano(), 1);
  save_model(model, dir);
  EXPECT_THROW(load_model<double>(dir), ManifestError);
  fs::remove_all(dir);
}

TEST(Checkpoint, TruncatedBlobRejected) {
  const auto dir = scratch("trunc");
  EdtModel<float> model(ModelConfig::nano(), 1);
  save_model(model, dir);
  fs::resize_file(dir / "tensors.bin", 100);
  EXPECT_THROW(Archive::load(dir), ManifestError);
  fs::remove_all(dir);
}
