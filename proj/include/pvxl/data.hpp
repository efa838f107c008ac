#pragma once

// Datasets: IDX containers, binarization and synthetic toy images.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvxl/random.hpp"
#include "pvxl/tensor.hpp"

namespace pvxl {

/// Unreadable, truncated or malformed files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unsigned-byte IDX array: big-endian dims followed by the raw bytes.
struct IdxArray {
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> bytes;
};

/// Accepts magic 0x00000801 (labels) and 0x00000803 (images); throws IoError
/// naming the offending offset otherwise.
IdxArray parse_idx(std::span<const std::uint8_t> bytes);
IdxArray load_idx(const std::string& path);

struct LabeledImages {
  /// [N, H, W, C] bytes; bits for binary sets.
  Tensor<std::uint8_t> images;
  std::vector<int> labels;

  std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
  /// Rows `index` in order.
  LabeledImages subset(std::span<const std::size_t> index) const;
};

/// Images from an IDX image file, labels from an optional label file.
LabeledImages load_idx_images(const std::string& images, const std::string& labels = "");

/// Bytes scaled to [0, 1].
Tensor<double> intensities(const Tensor<std::uint8_t>& bytes);
/// One Bernoulli(p) draw per pixel.
Tensor<std::uint8_t> binarize(const Tensor<double>& p, Rng& rng);
/// All values are 0 or 1.
bool is_binary(const Tensor<std::uint8_t>& x);

enum class ToyKind { bars, rectangles, sprites };
/// Throws std::invalid_argument for unknown names.
ToyKind parse_toy_kind(const std::string& name);

/// Binary square images with a class label.
///   bars: horizontal (0) or vertical (1) bars on every other line, each
///     present with probability 1/2 (at least one);
///   rectangles: one filled rectangle, label 1 when wider than tall;
///   sprites: one to three copies of a 3x3 glyph, label = glyph id (0..2).
/// Throws std::invalid_argument for size < 6.
LabeledImages synth_toy(std::size_t n, std::size_t size, ToyKind kind, Rng& rng);

/// Hex CRC32 of shape, pixels and labels.
std::string fingerprint(const LabeledImages& data);

}  // namespace pvxl
