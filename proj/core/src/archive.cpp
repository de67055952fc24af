#include "reasonlens/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "reasonlens/errors.hpp"

namespace reasonlens {
namespace {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

constexpr std::uint64_t kMaxHeaderBytes = 100ull << 20;

}  // namespace

TensorArchive TensorArchive::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open archive " + path.string());
  const auto file_size = std::filesystem::file_size(path);

  std::uint64_t header_len = 0;
  if (!in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len)) ||
      header_len > kMaxHeaderBytes || 8 + header_len > file_size) {
    throw LoadError("archive header is truncated or corrupt: " + path.string());
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("archive header is not valid JSON: " + std::string(e.what()));
  }
  if (!meta.is_object()) throw LoadError("archive header must be a JSON object");

  const std::uint64_t payload_begin = 8 + header_len;
  const std::uint64_t payload_size = file_size - payload_begin;

  TensorArchive archive;
  for (auto it = meta.begin(); it != meta.end(); ++it) {
    const std::string& name = it.key();
    if (name == "__metadata__") {
      for (auto m = it->begin(); m != it->end(); ++m) {
        archive.metadata_[m.key()] =
            m->is_string() ? m->get<std::string>() : m->dump();
      }
      continue;
    }
    const auto& info = *it;
    if (!info.contains("dtype") || !info.contains("shape") ||
        !info.contains("data_offsets")) {
      throw LoadError("tensor '" + name + "' has an incomplete header entry");
    }
    if (info["dtype"] != "F32") {
      throw LoadError("tensor '" + name + "' has unsupported dtype " +
                      info["dtype"].dump());
    }
    Tensor::Shape shape = info["shape"].get<Tensor::Shape>();
    const auto begin = info["data_offsets"][0].get<std::uint64_t>();
    const auto end = info["data_offsets"][1].get<std::uint64_t>();
    std::uint64_t numel = 1;
    for (auto s : shape) numel *= s;
    if (end < begin || end - begin != numel * sizeof(float)) {
      throw LoadError("tensor '" + name + "' byte range does not match its shape");
    }
    if (end > payload_size) {
      throw LoadError("tensor '" + name + "' is truncated (archive " +
                      path.string() + ")");
    }
    if (shape.empty()) shape = {1};
    std::vector<float> data(numel);
    in.seekg(static_cast<std::streamoff>(payload_begin + begin));
    if (!in.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(numel * sizeof(float)))) {
      throw LoadError("tensor '" + name + "' could not be read");
    }
    archive.tensors_.emplace(name, Tensor(std::move(shape), std::move(data)));
  }
  return archive;
}

void TensorArchive::write(const std::filesystem::path& path) const {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors_) {
    const std::uint64_t bytes = tensor.size() * sizeof(float);
    header[name] = {{"dtype", "F32"},
                    {"shape", tensor.shape()},
                    {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!metadata_.empty()) header["__metadata__"] = metadata_;
  std::string text = header.dump();
  while (text.size() % 8 != 0) text.push_back(' ');

  auto partial = path;
  partial += ".partial";
  {
    std::ofstream out(partial, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write archive " + partial.string());
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, tensor] : tensors_) {
      out.write(reinterpret_cast<const char*>(tensor.raw()),
                static_cast<std::streamsize>(tensor.size() * sizeof(float)));
    }
    if (!out) throw LoadError("short write on " + partial.string());
  }
  std::filesystem::rename(partial, path);
}

void TensorArchive::put(const std::string& name, Tensor tensor) {
  tensors_.insert_or_assign(name, std::move(tensor));
}

bool TensorArchive::contains(const std::string& name) const {
  return tensors_.count(name) != 0;
}

const Tensor& TensorArchive::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw LoadError("missing tensor '" + name + "'");
  return it->second;
}

Tensor TensorArchive::take(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw LoadError("missing tensor '" + name + "'");
  Tensor t = std::move(it->second);
  tensors_.erase(it);
  return t;
}

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, _] : tensors_) out.push_back(name);
  return out;
}

}  // namespace reasonlens
