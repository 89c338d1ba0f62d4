#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace citypipe {

// Reads a whole file as bytes. Throws std::runtime_error if unreadable.
std::string read_file(const std::filesystem::path& path);

// Writes bytes, creating parent directories as needed.
void write_file(const std::filesystem::path& path, std::string_view data);

std::string base64_encode(std::string_view data);

// FNV-1a, used for stage input fingerprints.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 14695981039346656037ull);

std::string to_hex(std::uint64_t value);

}  // namespace citypipe
