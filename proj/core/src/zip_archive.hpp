#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ostk::detail {

// Read-only view over a ZIP file held in memory. Supports stored and
// deflated entries and the ZIP64 extensions PyTorch emits for large archives.
class ZipArchive {
 public:
  explicit ZipArchive(const std::filesystem::path& path);

  const std::vector<std::string>& names() const noexcept { return names_; }
  bool contains(std::string_view name) const;
  std::vector<std::uint8_t> read(std::string_view name) const;

  // Entry whose name ends with `suffix`, e.g. "/data.pkl".
  std::optional<std::string> find_suffix(std::string_view suffix) const;

 private:
  struct Entry {
    std::string name;
    std::uint16_t method = 0;
    std::uint64_t compressed_size = 0;
    std::uint64_t size = 0;
    std::uint64_t local_header_offset = 0;
  };

  const Entry& entry(std::string_view name) const;

  std::string origin_;
  std::vector<std::uint8_t> bytes_;
  std::vector<Entry> entries_;
  std::vector<std::string> names_;
};

}  // namespace ostk::detail
