#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "reasonlens/tensor.hpp"

namespace reasonlens {

// Single-file tensor archive in the safetensors layout: an 8-byte
// little-endian header length, a JSON header mapping each tensor name to
// {dtype, shape, data_offsets}, then the raw little-endian float32 payload.
// String metadata lives under the "__metadata__" header key.
class TensorArchive {
 public:
  using Metadata = std::map<std::string, std::string>;

  static TensorArchive read(const std::filesystem::path& path);

  // Writes to "<path>.partial" and renames into place once complete.
  void write(const std::filesystem::path& path) const;

  void put(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const;
  // Throws LoadError naming the tensor when absent.
  const Tensor& get(const std::string& name) const;
  Tensor take(const std::string& name);
  std::vector<std::string> names() const;
  std::size_t size() const { return tensors_.size(); }

  Metadata& metadata() { return metadata_; }
  const Metadata& metadata() const { return metadata_; }

 private:
  std::map<std::string, Tensor> tensors_;
  Metadata metadata_;
};

}  // namespace reasonlens
