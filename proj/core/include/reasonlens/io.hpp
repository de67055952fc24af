#pragma once

#include <filesystem>
#include <string_view>

namespace reasonlens {

// Writes `content` to "<path>.partial", then renames it over `path`.
void write_text_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace reasonlens
