#include "zip_archive.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "ostk/error.hpp"

namespace ostk::detail {
namespace {

constexpr std::uint32_t kEocdSig = 0x06054b50;
constexpr std::uint32_t kZip64LocatorSig = 0x07064b50;
constexpr std::uint32_t kZip64EocdSig = 0x06064b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kLocalSig = 0x04034b50;

class Cursor {
 public:
  Cursor(const std::vector<std::uint8_t>& bytes, std::uint64_t pos, const std::string& origin)
      : bytes_(bytes), pos_(pos), origin_(origin) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void skip(std::uint64_t n) {
    need(n);
    pos_ += n;
  }

  std::uint64_t pos() const { return pos_; }

 private:
  void need(std::uint64_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw Error(ErrorKind::LoadFailure, origin_ + ": truncated zip structure");
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::uint64_t pos_;
  const std::string& origin_;
};

std::uint32_t peek32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

}  // namespace

ZipArchive::ZipArchive(const std::filesystem::path& path) : origin_(path.string()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::WeightsNotFound, origin_);
  }
  bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());

  if (bytes_.size() < 22) {
    throw Error(ErrorKind::LoadFailure, origin_ + ": not a zip archive");
  }
  // The end-of-central-directory record sits within the last 64 KiB + 22 bytes.
  std::size_t eocd = std::string::npos;
  const std::size_t lowest = bytes_.size() > 65557 ? bytes_.size() - 65557 : 0;
  for (std::size_t at = bytes_.size() - 22 + 1; at-- > lowest;) {
    if (peek32(bytes_, at) == kEocdSig) {
      eocd = at;
      break;
    }
  }
  if (eocd == std::string::npos) {
    throw Error(ErrorKind::LoadFailure, origin_ + ": no zip end-of-central-directory record (legacy or non-zip file)");
  }

  Cursor c(bytes_, eocd + 4, origin_);
  c.skip(6);  // disk numbers, entries on this disk
  std::uint64_t count = c.get<std::uint16_t>();
  c.skip(4);  // central directory size
  std::uint64_t cd_offset = c.get<std::uint32_t>();

  if ((count == 0xFFFF || cd_offset == 0xFFFFFFFF) && eocd >= 20 && peek32(bytes_, eocd - 20) == kZip64LocatorSig) {
    Cursor loc(bytes_, eocd - 20 + 8, origin_);
    const auto z64 = loc.get<std::uint64_t>();
    Cursor z(bytes_, z64, origin_);
    if (z.get<std::uint32_t>() != kZip64EocdSig) {
      throw Error(ErrorKind::LoadFailure, origin_ + ": bad zip64 end-of-central-directory record");
    }
    z.skip(8 + 2 + 2 + 4 + 4 + 8);
    count = z.get<std::uint64_t>();
    z.skip(8);
    cd_offset = z.get<std::uint64_t>();
  }

  Cursor cd(bytes_, cd_offset, origin_);
  entries_.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (cd.get<std::uint32_t>() != kCentralSig) {
      throw Error(ErrorKind::LoadFailure, origin_ + ": corrupt zip central directory");
    }
    Entry e;
    cd.skip(2 + 2 + 2);  // versions, flags
    e.method = cd.get<std::uint16_t>();
    cd.skip(2 + 2 + 4);  // time, date, crc
    e.compressed_size = cd.get<std::uint32_t>();
    e.size = cd.get<std::uint32_t>();
    const auto name_len = cd.get<std::uint16_t>();
    const auto extra_len = cd.get<std::uint16_t>();
    const auto comment_len = cd.get<std::uint16_t>();
    cd.skip(2 + 2 + 4);  // disk, internal attrs, external attrs
    e.local_header_offset = cd.get<std::uint32_t>();
    e.name = cd.str(name_len);

    const std::uint64_t extra_end = cd.pos() + extra_len;
    while (cd.pos() + 4 <= extra_end) {
      const auto id = cd.get<std::uint16_t>();
      const auto len = cd.get<std::uint16_t>();
      const std::uint64_t field_end = cd.pos() + len;
      if (id == 0x0001) {
        if (e.size == 0xFFFFFFFF) e.size = cd.get<std::uint64_t>();
        if (e.compressed_size == 0xFFFFFFFF) e.compressed_size = cd.get<std::uint64_t>();
        if (e.local_header_offset == 0xFFFFFFFF) e.local_header_offset = cd.get<std::uint64_t>();
      }
      cd.skip(field_end - cd.pos());
    }
    cd.skip(extra_end - cd.pos());
    cd.skip(comment_len);
    names_.push_back(e.name);
    entries_.push_back(std::move(e));
  }
}

bool ZipArchive::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

std::optional<std::string> ZipArchive::find_suffix(std::string_view suffix) const {
  for (const auto& e : entries_) {
    if (e.name.size() >= suffix.size() && e.name.compare(e.name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      return e.name;
    }
  }
  return std::nullopt;
}

const ZipArchive::Entry& ZipArchive::entry(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw Error(ErrorKind::LoadFailure, origin_ + ": missing archive member " + std::string(name));
}

std::vector<std::uint8_t> ZipArchive::read(std::string_view name) const {
  const Entry& e = entry(name);
  Cursor local(bytes_, e.local_header_offset, origin_);
  if (local.get<std::uint32_t>() != kLocalSig) {
    throw Error(ErrorKind::LoadFailure, origin_ + ": bad local header for " + e.name);
  }
  local.skip(22);
  const auto name_len = local.get<std::uint16_t>();
  const auto extra_len = local.get<std::uint16_t>();
  local.skip(name_len + extra_len);
  const std::uint64_t start = local.pos();
  if (start + e.compressed_size > bytes_.size()) {
    throw Error(ErrorKind::LoadFailure, origin_ + ": truncated member " + e.name);
  }

  if (e.method == 0) {
    return {bytes_.begin() + static_cast<std::ptrdiff_t>(start),
            bytes_.begin() + static_cast<std::ptrdiff_t>(start + e.size)};
  }
  if (e.method != 8) {
    throw Error(ErrorKind::LoadFailure, origin_ + ": unsupported compression method for " + e.name);
  }

  std::vector<std::uint8_t> out(e.size);
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) {
    throw Error(ErrorKind::LoadFailure, "zlib initialisation failed");
  }
  zs.next_in = const_cast<Bytef*>(bytes_.data() + start);
  zs.avail_in = static_cast<uInt>(e.compressed_size);
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != e.size) {
    throw Error(ErrorKind::LoadFailure, origin_ + ": corrupt deflate stream in " + e.name);
  }
  return out;
}

}  // namespace ostk::detail
