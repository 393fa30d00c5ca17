#include "stsc/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <fmt/core.h>
#include <zlib.h>

namespace stsc {

namespace fs = std::filesystem;

const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::io: return "io";
    case FormatErrorKind::malformed_header: return "malformed_header";
    case FormatErrorKind::truncated: return "truncated";
    case FormatErrorKind::unsupported: return "unsupported";
    case FormatErrorKind::bad_magic: return "bad_magic";
    case FormatErrorKind::crc_mismatch: return "crc_mismatch";
    case FormatErrorKind::duplicate_name: return "duplicate_name";
  }
  return "unknown";
}

FormatError::FormatError(FormatErrorKind kind, const std::string& message, std::int64_t offset)
    : Error(offset >= 0 ? fmt::format("{} (byte offset {})", message, offset) : message),
      kind_(kind),
      offset_(offset) {}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrorKind::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatErrorKind::io, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---- PPM ----------------------------------------------------------------------

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::int64_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::int64_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (1 << 24)) {
        throw FormatError(FormatErrorKind::malformed_header, fmt::format("PPM {} too large", what),
                          static_cast<std::int64_t>(start));
      }
      ++pos_;
    }
    if (pos_ == start) {
      throw FormatError(FormatErrorKind::malformed_header, fmt::format("PPM: expected {}", what),
                        static_cast<std::int64_t>(start));
    }
    return v;
  }

  void single_whitespace() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw FormatError(FormatErrorKind::malformed_header, "PPM: expected whitespace after maxval",
                        static_cast<std::int64_t>(pos_));
    }
    ++pos_;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 2;
};

}  // namespace

Tensor decode_ppm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw FormatError(FormatErrorKind::malformed_header, "not a binary PPM (P6) file", 0);
  }
  HeaderReader r(bytes);
  const std::int64_t width = r.number("width");
  const std::int64_t height = r.number("height");
  const std::size_t maxval_at = r.pos();
  const std::int64_t maxval = r.number("maxval");
  if (maxval != 255) {
    throw FormatError(FormatErrorKind::unsupported,
                      fmt::format("PPM maxval {} unsupported (only 255)", maxval),
                      static_cast<std::int64_t>(maxval_at));
  }
  if (width < 1 || height < 1) {
    throw FormatError(FormatErrorKind::malformed_header, "PPM has zero width or height", 2);
  }
  r.single_whitespace();
  const std::size_t payload = static_cast<std::size_t>(width * height * 3);
  if (bytes.size() - r.pos() < payload) {
    throw FormatError(FormatErrorKind::truncated,
                      fmt::format("PPM payload truncated: need {} bytes, have {}", payload,
                                  bytes.size() - r.pos()),
                      static_cast<std::int64_t>(bytes.size()));
  }
  Tensor img({1, 3, height, width});
  const std::uint8_t* px = bytes.data() + r.pos();
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        img.at(0, c, y, x) = static_cast<double>(px[(y * width + x) * 3 + c]) / 255.0;
      }
    }
  }
  return img;
}

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
  const Shape& s = image.shape();
  if (s.n < 1 || s.c != 3) throw DimensionError("encode_ppm: expected [n,3,H,W], got " + s.str());
  const std::string header = fmt::format("P6\n{} {}\n255\n", s.w, s.h);
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<std::size_t>(s.h * s.w * 3));
  for (std::int64_t y = 0; y < s.h; ++y) {
    for (std::int64_t x = 0; x < s.w; ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        double v = image.at(0, c, y, x);
        v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
        out.push_back(static_cast<std::uint8_t>(std::round(v * 255.0)));
      }
    }
  }
  return out;
}

Tensor read_image(const fs::path& path) { return decode_ppm(read_file(path)); }

void write_image(const Tensor& image, const fs::path& path) {
  write_file_atomic(path, encode_ppm(image));
}

// ---- STSCW --------------------------------------------------------------------

std::uint32_t crc32(const std::uint8_t* data, std::size_t size) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

static_assert(std::endian::native == std::endian::little, "STSCW I/O assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes, std::size_t limit)
      : bytes_(bytes), limit_(limit) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void need(std::size_t n, const char* what) const {
    if (limit_ - pos_ < n) {
      throw FormatError(FormatErrorKind::truncated, fmt::format("STSCW truncated reading {}", what),
                        static_cast<std::int64_t>(pos_));
    }
  }

  const std::uint8_t* here() const { return bytes_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

int stored_rank(const Shape& s) {
  if (s.w != 1) return 4;
  if (s.h != 1) return 3;
  if (s.c != 1) return 2;
  return 1;
}

}  // namespace

std::vector<std::uint8_t> encode_weights(const ParamStore& store) {
  Writer w;
  w.bytes.insert(w.bytes.end(), kWeightsMagic, kWeightsMagic + 8);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(store.size()));
  for (const auto& e : store.entries()) {
    if (e.name.size() > 0xFFFF) throw Error("STSCW: name too long: " + e.name);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes.insert(w.bytes.end(), e.name.begin(), e.name.end());
    const bool f64 = e.value.precision() == Precision::f64;
    w.put<std::uint8_t>(f64 ? 1 : 0);
    const Shape& s = e.value.shape();
    const int rank = stored_rank(s);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(rank));
    const std::int64_t dims[4] = {s.n, s.c, s.h, s.w};
    for (int d = 0; d < rank; ++d) w.put<std::uint32_t>(static_cast<std::uint32_t>(dims[d]));
    for (double v : e.value.data()) {
      if (f64) {
        w.put<double>(v);
      } else {
        w.put<float>(static_cast<float>(v));
      }
    }
  }
  w.put<std::uint32_t>(crc32(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

ParamStore decode_weights(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kWeightsMagic, 8) != 0) {
    throw FormatError(FormatErrorKind::bad_magic, "not an STSCW file (bad magic)", 0);
  }
  if (bytes.size() < 16) throw FormatError(FormatErrorKind::truncated, "STSCW file too short", 8);
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body, 4);
  const std::uint32_t actual = crc32(bytes.data(), body);
  if (stored_crc != actual) {
    throw FormatError(FormatErrorKind::crc_mismatch,
                      fmt::format("STSCW CRC mismatch: stored {:08x}, computed {:08x}", stored_crc,
                                  actual),
                      static_cast<std::int64_t>(body));
  }
  Reader r(bytes, body);
  r.skip(8);
  const auto count = r.get<std::uint32_t>("entry count");
  ParamStore store;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_at = r.pos();
    const auto name_len = r.get<std::uint16_t>("name length");
    r.need(name_len, "name");
    std::string name(reinterpret_cast<const char*>(r.here()), name_len);
    r.skip(name_len);
    if (!seen.insert(name).second) {
      throw FormatError(FormatErrorKind::duplicate_name, "STSCW duplicate entry name " + name,
                        static_cast<std::int64_t>(entry_at));
    }
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype > 1) {
      throw FormatError(FormatErrorKind::unsupported, fmt::format("STSCW unknown dtype {}", dtype),
                        static_cast<std::int64_t>(r.pos() - 1));
    }
    const auto ndim = r.get<std::uint8_t>("ndim");
    if (ndim < 1 || ndim > 4) {
      throw FormatError(FormatErrorKind::unsupported,
                        fmt::format("STSCW entry {} has unsupported rank {}", name, ndim),
                        static_cast<std::int64_t>(r.pos() - 1));
    }
    std::int64_t dims[4] = {1, 1, 1, 1};
    for (int d = 0; d < ndim; ++d) dims[d] = r.get<std::uint32_t>("dims");
    const Shape shape{dims[0], dims[1], dims[2], dims[3]};
    const std::size_t elem = dtype == 1 ? 8 : 4;
    const auto numel = static_cast<std::size_t>(shape.numel());
    if (numel > (body - r.pos()) / elem) {
      throw FormatError(FormatErrorKind::truncated,
                        fmt::format("STSCW entry {} payload exceeds file size", name),
                        static_cast<std::int64_t>(r.pos()));
    }
    std::vector<double> values(numel);
    for (std::size_t k = 0; k < numel; ++k) {
      values[k] = dtype == 1 ? r.get<double>("values") : static_cast<double>(r.get<float>("values"));
    }
    store.add(std::move(name), Tensor(shape, std::move(values), dtype == 1 ? Precision::f64 : Precision::f32));
  }
  if (r.pos() != body) {
    throw FormatError(FormatErrorKind::malformed_header, "STSCW trailing bytes after last entry",
                      static_cast<std::int64_t>(r.pos()));
  }
  return store;
}

ParamStore read_weights(const fs::path& path) { return decode_weights(read_file(path)); }

void write_weights(const ParamStore& store, const fs::path& path) {
  write_file_atomic(path, encode_weights(store));
}

// ---- datasets -----------------------------------------------------------------

std::vector<std::string> list_files(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

DatasetLayout scan_dataset(const fs::path& root) {
  const fs::path in = root / "input";
  const fs::path gt = root / "gt";
  if (!fs::is_directory(root)) throw LayoutError("dataset root does not exist: " + root.string());
  if (!fs::is_directory(in)) throw LayoutError("dataset is missing input/: " + in.string());
  if (!fs::is_directory(gt)) throw LayoutError("dataset is missing gt/: " + gt.string());
  DatasetLayout layout;
  layout.root = root;
  const auto inputs = list_files(in);
  const auto targets = list_files(gt);
  const std::set<std::string> target_set(targets.begin(), targets.end());
  const std::set<std::string> input_set(inputs.begin(), inputs.end());
  for (const auto& name : inputs) {
    if (target_set.count(name)) {
      layout.pairs.push_back(name);
    } else {
      layout.warnings.push_back("input/" + name + " has no gt partner");
    }
  }
  for (const auto& name : targets) {
    if (!input_set.count(name)) layout.warnings.push_back("gt/" + name + " has no input partner");
  }
  return layout;
}

}  // namespace stsc
