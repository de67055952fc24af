#include "reasonlens/io.hpp"

#include <fstream>

#include "reasonlens/errors.hpp"

namespace reasonlens {

void write_text_atomic(const std::filesystem::path& path, std::string_view content) {
  auto partial = path;
  partial += ".partial";
  {
    std::ofstream out(partial, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write " + partial.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw LoadError("short write on " + partial.string());
  }
  std::filesystem::rename(partial, path);
}

}  // namespace reasonlens
