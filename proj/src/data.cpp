#include "pvxl/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace pvxl {

namespace {

std::string hex32(std::uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t below(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)); }

void fill_rect(Tensor<std::uint8_t>& x, std::size_t img, std::size_t r0, std::size_t c0, std::size_t h,
               std::size_t w) {
  const std::size_t s = x.dim(1);
  for (std::size_t r = r0; r < r0 + h; ++r)
    for (std::size_t c = c0; c < c0 + w; ++c) x[(img * s + r) * s + c] = 1;
}

constexpr std::uint16_t kGlyphs[3] = {
    0b010'111'010,  // plus
    0b101'010'101,  // cross
    0b111'101'111,  // ring
};

}  // namespace

IdxArray parse_idx(std::span<const std::uint8_t> b) {
  if (b.size() < 4) throw IoError("IDX: file too short for a header (" + std::to_string(b.size()) + " bytes)");
  const std::uint32_t magic = (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (b[2] << 8) | b[3];
  if (magic != 0x801 && magic != 0x803) throw IoError("IDX: bad magic " + hex32(magic) + " at offset 0");
  IdxArray out;
  const std::size_t rank = b[3];
  std::size_t off = 4, n = 1;
  for (std::size_t d = 0; d < rank; ++d, off += 4) {
    if (off + 4 > b.size()) throw IoError("IDX: truncated dimension " + std::to_string(d) + " at offset " + std::to_string(off));
    const std::size_t v = (std::size_t{b[off]} << 24) | (std::size_t{b[off + 1]} << 16) | (b[off + 2] << 8) | b[off + 3];
    out.dims.push_back(v);
    n *= v;
  }
  if (b.size() - off < n) {
    throw IoError("IDX: truncated payload at offset " + std::to_string(b.size()) + ", expected " +
                  std::to_string(off + n) + " bytes");
  }
  if (b.size() - off > n) throw IoError("IDX: trailing bytes after offset " + std::to_string(off + n));
  out.bytes.assign(b.begin() + static_cast<std::ptrdiff_t>(off), b.end());
  return out;
}

IdxArray load_idx(const std::string& path) {
  const auto bytes = read_bytes(path);
  try {
    return parse_idx(bytes);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

LabeledImages LabeledImages::subset(std::span<const std::size_t> index) const {
  Shape s = images.shape();
  const std::size_t per = images.size() / s[0];
  s[0] = index.size();
  LabeledImages out{Tensor<std::uint8_t>(s), {}};
  for (std::size_t i = 0; i < index.size(); ++i) {
    std::copy_n(images.data() + index[i] * per, per, out.images.data() + i * per);
    if (!labels.empty()) out.labels.push_back(labels[index[i]]);
  }
  return out;
}

LabeledImages load_idx_images(const std::string& images, const std::string& labels) {
  auto img = load_idx(images);
  if (img.dims.size() != 3) throw IoError(images + ": expected a 3-dimensional image array");
  LabeledImages out;
  out.images = Tensor<std::uint8_t>(Shape{img.dims[0], img.dims[1], img.dims[2], 1}, std::move(img.bytes));
  if (!labels.empty()) {
    auto lab = load_idx(labels);
    if (lab.dims.size() != 1 || lab.dims[0] != out.size()) {
      throw IoError(labels + ": label count does not match " + images);
    }
    out.labels.assign(lab.bytes.begin(), lab.bytes.end());
  }
  return out;
}

Tensor<double> intensities(const Tensor<std::uint8_t>& bytes) {
  Tensor<double> out(bytes.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = bytes[i] / 255.0;
  return out;
}

Tensor<std::uint8_t> binarize(const Tensor<double>& p, Rng& rng) {
  Tensor<std::uint8_t> out(p.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.uniform() < p[i] ? 1 : 0;
  return out;
}

bool is_binary(const Tensor<std::uint8_t>& x) {
  return std::all_of(x.values().begin(), x.values().end(), [](std::uint8_t v) { return v <= 1; });
}

ToyKind parse_toy_kind(const std::string& name) {
  if (name == "bars") return ToyKind::bars;
  if (name == "rectangles") return ToyKind::rectangles;
  if (name == "sprites") return ToyKind::sprites;
  throw std::invalid_argument("unknown toy dataset '" + name + "' (bars, rectangles, sprites)");
}

LabeledImages synth_toy(std::size_t n, std::size_t size, ToyKind kind, Rng& rng) {
  if (size < 6) throw std::invalid_argument("toy images must be at least 6x6");
  LabeledImages out{Tensor<std::uint8_t>(Shape{n, size, size, 1}), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    switch (kind) {
      case ToyKind::bars: {
        const int vertical = static_cast<int>(rng() & 1u);
        const std::size_t offset = rng() & 1u;
        std::vector<std::size_t> lines;
        for (std::size_t p = offset; p < size; p += 2)
          if (rng() & 1u) lines.push_back(p);
        if (lines.empty()) lines.push_back(offset + 2 * below(rng, (size - offset + 1) / 2));
        for (std::size_t p : lines) {
          if (vertical) fill_rect(out.images, i, 0, p, size, 1);
          else fill_rect(out.images, i, p, 0, 1, size);
        }
        out.labels[i] = vertical;
        break;
      }
      case ToyKind::rectangles: {
        std::size_t h, w;
        do {
          h = 2 + below(rng, size - 3);
          w = 2 + below(rng, size - 3);
        } while (h == w);
        fill_rect(out.images, i, below(rng, size - h + 1), below(rng, size - w + 1), h, w);
        out.labels[i] = w > h;
        break;
      }
      case ToyKind::sprites: {
        const std::size_t g = below(rng, 3), copies = 1 + below(rng, 3);
        for (std::size_t k = 0; k < copies; ++k) {
          const std::size_t r0 = below(rng, size - 2), c0 = below(rng, size - 2);
          for (std::size_t q = 0; q < 9; ++q)
            if ((kGlyphs[g] >> (8 - q)) & 1u) fill_rect(out.images, i, r0 + q / 3, c0 + q % 3, 1, 1);
        }
        out.labels[i] = static_cast<int>(g);
        break;
      }
    }
  }
  return out;
}

std::string fingerprint(const LabeledImages& data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  for (std::size_t d : data.images.shape()) {
    const auto v = static_cast<std::uint64_t>(d);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(&v), sizeof v);
  }
  crc = crc32(crc, data.images.data(), static_cast<uInt>(data.images.size()));
  for (int l : data.labels) {
    const auto v = static_cast<std::int32_t>(l);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(&v), sizeof v);
  }
  return hex32(static_cast<std::uint32_t>(crc)).substr(2);
}

}  // namespace pvxl
