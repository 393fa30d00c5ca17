#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stsc/nn.hpp"
#include "stsc/tensor.hpp"

namespace stsc {

enum class FormatErrorKind : std::uint8_t {
  io,
  malformed_header,
  truncated,
  unsupported,
  bad_magic,
  crc_mismatch,
  duplicate_name,
};

const char* to_string(FormatErrorKind kind);

class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& message, std::int64_t offset = -1);
  FormatErrorKind kind() const { return kind_; }
  /// Byte offset of the failure, or -1 when not applicable.
  std::int64_t offset() const { return offset_; }

 private:
  FormatErrorKind kind_;
  std::int64_t offset_;
};

// ---- images (binary PPM, P6, maxval 255) -------------------------------------

/// [1,3,H,W] tensor with values v/255.
Tensor decode_ppm(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_ppm(const Tensor& image);
Tensor read_image(const std::filesystem::path& path);
/// Rounds half away from zero to 8 bits after clamping to [0,1]. Batch item 0.
void write_image(const Tensor& image, const std::filesystem::path& path);

// ---- weights (STSCW) ----------------------------------------------------------
//
//   "STSCW001" | u32 count | entries... | u32 crc32(all preceding bytes)
//   entry: u16 name_len | name | u8 dtype (0=f32, 1=f64) | u8 ndim | u32 dims[ndim]
//          | little-endian values
//
// Rank-4 tensors are written with trailing unit dimensions stripped (minimum
// rank 1); on read, missing trailing dimensions are filled with 1.

inline constexpr char kWeightsMagic[8] = {'S', 'T', 'S', 'C', 'W', '0', '0', '1'};

std::vector<std::uint8_t> encode_weights(const ParamStore& store);
ParamStore decode_weights(const std::vector<std::uint8_t>& bytes);
ParamStore read_weights(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place.
void write_weights(const ParamStore& store, const std::filesystem::path& path);

std::uint32_t crc32(const std::uint8_t* data, std::size_t size);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// ---- datasets -----------------------------------------------------------------

class LayoutError : public Error {
 public:
  using Error::Error;
};

struct DatasetLayout {
  std::filesystem::path root;
  /// Filenames present in both input/ and gt/, sorted.
  std::vector<std::string> pairs;
  /// Diagnostics for files without a partner.
  std::vector<std::string> warnings;
  bool empty() const { return pairs.empty(); }
};

/// Pairs root/input/<name> with root/gt/<name>.
DatasetLayout scan_dataset(const std::filesystem::path& root);

/// Regular files of a directory in sorted order.
std::vector<std::string> list_files(const std::filesystem::path& dir);

}  // namespace stsc
