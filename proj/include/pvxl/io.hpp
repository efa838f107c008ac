#pragma once

// Checkpoint container, CSV emission and image files.
//
// Checkpoint layout: "PVXL", u32 format version, u64 manifest length, UTF-8
// JSON manifest, tensor payloads, u32 CRC32 of the payloads; integers and
// payloads little-endian. The manifest holds {"meta": ..., "tensors": [{name,
// dtype, shape, offset, bytes}]} with offsets relative to the payload start.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pvxl/data.hpp"
#include "pvxl/params.hpp"

namespace pvxl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  ParamSet<float> f32;
  ParamSet<double> f64;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
/// Throws IoError on bad magic, version, truncation or CRC mismatch.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
/// Writes through a temporary file and renames it into place.
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);
void write_text(const std::string& path, const std::string& text);

/// Shortest decimal that parses back to the same double ('.' separator).
std::string csv_number(double v);
/// Header row plus rows, comma separated, LF line endings.
std::string csv_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);

/// Lays images [N, H, W, C] out on a rows x cols grid with `pad` pixels of
/// background between them. Bit images are scaled to 0/255.
Tensor<std::uint8_t> image_grid(const Tensor<std::uint8_t>& images, std::size_t rows, std::size_t cols,
                                std::size_t pad = 1);
/// 8-bit grayscale (C = 1) or RGB (C = 3) image [H, W, C].
void write_png(const std::string& path, const Tensor<std::uint8_t>& image);
/// Binary PGM (C = 1) or PPM (C = 3).
void write_pnm(const std::string& path, const Tensor<std::uint8_t>& image);

}  // namespace pvxl
