#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace sdclr {

/// Lower-case hex SHA-256 digests used to fingerprint artifacts and configs.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace sdclr
