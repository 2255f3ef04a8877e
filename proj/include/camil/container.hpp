#pragma once

// Binary container shared by bag files and checkpoints:
//   8-byte magic | 1 version byte | JSON header | NUL | little-endian f64 payload

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace camil::io {

inline constexpr std::uint8_t kFormatVersion = 1;

struct Container {
  nlohmann::json header;
  std::vector<double> payload;
};

void write_container(const std::filesystem::path& path, std::string_view magic,
                     const nlohmann::json& header, std::span<const double> payload);

/// Throws ParseError (with byte offset) on malformed content, VersionError on
/// a version byte other than kFormatVersion, IoError when unreadable.
/// `payload_len` is taken from the header by the caller, so the reader needs
/// a callback to know how many doubles follow.
Container read_container(const std::filesystem::path& path, std::string_view magic,
                         std::size_t (*payload_len)(const nlohmann::json&));

Container parse_container(std::span<const std::uint8_t> bytes, std::string_view magic,
                          std::size_t (*payload_len)(const nlohmann::json&));

}  // namespace camil::io
