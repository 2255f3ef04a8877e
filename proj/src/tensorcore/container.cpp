#include "camil/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "camil/errors.hpp"

namespace camil::io {

namespace {

constexpr std::size_t kMagicLen = 8;

void put_f64_le(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

double get_f64_le(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_container(const std::filesystem::path& path, std::string_view magic,
                     const nlohmann::json& header, std::span<const double> payload) {
  if (magic.size() != kMagicLen) throw ArgumentError("container magic must be 8 bytes");
  const std::string text = header.dump();
  std::vector<std::uint8_t> bytes;
  bytes.reserve(kMagicLen + 1 + text.size() + 1 + payload.size() * 8);
  bytes.insert(bytes.end(), magic.begin(), magic.end());
  bytes.push_back(kFormatVersion);
  bytes.insert(bytes.end(), text.begin(), text.end());
  bytes.push_back(0);
  for (double v : payload) put_f64_le(bytes, v);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Container parse_container(std::span<const std::uint8_t> bytes, std::string_view magic,
                          std::size_t (*payload_len)(const nlohmann::json&)) {
  if (bytes.size() < kMagicLen) throw ParseError("truncated magic", bytes.size());
  if (std::memcmp(bytes.data(), magic.data(), kMagicLen) != 0) {
    throw ParseError("bad magic, expected " + std::string(magic), 0);
  }
  if (bytes.size() < kMagicLen + 1) throw ParseError("missing version byte", bytes.size());
  if (bytes[kMagicLen] != kFormatVersion) {
    throw VersionError("unsupported format version " + std::to_string(bytes[kMagicLen]) +
                       " (expected " + std::to_string(kFormatVersion) + ")");
  }
  const std::size_t header_start = kMagicLen + 1;
  std::size_t nul = header_start;
  while (nul < bytes.size() && bytes[nul] != 0) ++nul;
  if (nul == bytes.size()) throw ParseError("unterminated JSON header", bytes.size());

  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header_start),
                                     bytes.begin() + static_cast<std::ptrdiff_t>(nul));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON header: ") + e.what(), header_start + e.byte);
  }
  std::size_t count = 0;
  try {
    count = payload_len(c.header);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("incomplete JSON header: ") + e.what(), header_start);
  }
  const std::size_t payload_start = nul + 1;
  const std::size_t available = bytes.size() - payload_start;
  if (available < count * 8) {
    throw ParseError("payload truncated: need " + std::to_string(count * 8) + " bytes, have " +
                         std::to_string(available),
                     bytes.size());
  }
  if (available > count * 8) throw ParseError("trailing bytes after payload", payload_start + count * 8);
  c.payload.resize(count);
  for (std::size_t i = 0; i < count; ++i) c.payload[i] = get_f64_le(bytes.data() + payload_start + 8 * i);
  return c;
}

Container read_container(const std::filesystem::path& path, std::string_view magic,
                         std::size_t (*payload_len)(const nlohmann::json&)) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_container(bytes, magic, payload_len);
}

}  // namespace camil::io
