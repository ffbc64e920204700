#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace luq {

// Writes to "<path>.tmp" and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

// Shortest decimal form that reads back to the same float.
std::string format_float(float v);
std::string format_double(double v);

}  // namespace luq
