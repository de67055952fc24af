#include <gtest/gtest.h>

#include <fstream>

#include "reasonlens/archive.hpp"
#include "reasonlens/errors.hpp"
#include "test_support.hpp"

using namespace reasonlens;
using reasonlens::testing::TempDir;

TEST(Archive, RoundTrip) {
  TempDir dir;
  TensorArchive ar;
  ar.put("a", Tensor::from_rows({{1, 2, 3}, {4, 5, 6}}));
  ar.put("b", Tensor::vector({7}));
  ar.metadata()["model_id"] = "x";
  ar.write(dir / "t.safetensors");
  EXPECT_FALSE(std::filesystem::exists(dir / "t.safetensors.partial"));

  const TensorArchive back = TensorArchive::read(dir / "t.safetensors");
  EXPECT_EQ(back.get("a"), ar.get("a"));
  EXPECT_EQ(back.get("b"), ar.get("b"));
  EXPECT_EQ(back.metadata().at("model_id"), "x");
  EXPECT_EQ(back.size(), 2u);
}

TEST(Archive, ReadsExternallyWrittenFile) {
  const TensorArchive ar = TensorArchive::read(reasonlens::testing::data_path("tiny_gpt2.safetensors"));
  EXPECT_EQ(ar.get("wte").shape(), (Tensor::Shape{1000, 32}));
  EXPECT_EQ(ar.metadata().at("architecture"), "gpt2");
}

TEST(Archive, MissingTensorIsNamed) {
  TensorArchive ar;
  try {
    ar.get("h.3.attn.wq.w");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("h.3.attn.wq.w"), std::string::npos);
  }
}

TEST(Archive, TruncatedFileNamesTensor) {
  TempDir dir;
  TensorArchive ar;
  ar.put("first", Tensor({4}));
  ar.put("second", Tensor({64}));
  ar.write(dir / "t.safetensors");
  const auto size = std::filesystem::file_size(dir / "t.safetensors");
  std::filesystem::resize_file(dir / "t.safetensors", size - 16);
  try {
    TensorArchive::read(dir / "t.safetensors");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("second"), std::string::npos) << e.what();
  }
}

TEST(Archive, CorruptHeader) {
  TempDir dir;
  {
    std::ofstream out(dir / "bad.safetensors", std::ios::binary);
    const std::string bytes("\x05\0\0\0\0\0\0\0{oops", 13);
    out << bytes;
  }
  EXPECT_THROW(TensorArchive::read(dir / "bad.safetensors"), LoadError);
  EXPECT_THROW(TensorArchive::read(dir / "absent.safetensors"), LoadError);
}
