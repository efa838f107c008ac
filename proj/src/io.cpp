#include "pvxl/io.hpp"

#include <png.h>
#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>

namespace pvxl {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class U>
U get_le(std::span<const std::uint8_t> b, std::size_t off) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[off + i]) << (8 * i));
  return v;
}

template <class T>
void put_values(std::vector<std::uint8_t>& out, const Tensor<T>& t) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (T v : t.values()) put_le(out, std::bit_cast<Bits>(v));
}

template <class T>
Tensor<T> get_values(std::span<const std::uint8_t> b, std::size_t off, Shape shape) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<T>(get_le<Bits>(b, off + i * sizeof(T)));
  return t;
}

template <class T>
void describe(nlohmann::json& list, const ParamSet<T>& ps, const char* dtype, std::size_t& offset) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::size_t bytes = ps.at(i).size() * sizeof(T);
    list.push_back({{"name", ps.names()[i]}, {"dtype", dtype}, {"shape", ps.at(i).shape()}, {"offset", offset},
                    {"bytes", bytes}});
    offset += bytes;
  }
}

uint32_t crc_of(std::span<const std::uint8_t> b) {
  uLong crc = crc32(0L, Z_NULL, 0);
  for (std::size_t done = 0; done < b.size();) {
    const std::size_t n = std::min<std::size_t>(b.size() - done, 1u << 30);
    crc = crc32(crc, b.data() + done, static_cast<uInt>(n));
    done += n;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  describe(tensors, c.f32, "f32", offset);
  describe(tensors, c.f64, "f64", offset);
  const std::string manifest = nlohmann::json{{"meta", c.meta}, {"tensors", tensors}}.dump();

  std::vector<std::uint8_t> out{'P', 'V', 'X', 'L'};
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint64_t>(manifest.size()));
  out.insert(out.end(), manifest.begin(), manifest.end());
  const std::size_t start = out.size();
  out.reserve(start + offset + 4);
  for (std::size_t i = 0; i < c.f32.size(); ++i) put_values(out, c.f32.at(i));
  for (std::size_t i = 0; i < c.f64.size(); ++i) put_values(out, c.f64.at(i));
  put_le(out, crc_of(std::span(out).subspan(start)));
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> b) {
  if (b.size() < 16 || std::memcmp(b.data(), "PVXL", 4) != 0) throw IoError("checkpoint: missing PVXL magic");
  const auto version = get_le<std::uint32_t>(b, 4);
  if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  const auto len = get_le<std::uint64_t>(b, 8);
  if (len > b.size() - 16) throw IoError("checkpoint: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(b.begin() + 16, b.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  const std::size_t start = 16 + len;
  if (b.size() < start + 4) throw IoError("checkpoint: truncated payload");
  const auto payload = b.subspan(start, b.size() - start - 4);
  if (crc_of(payload) != get_le<std::uint32_t>(b, b.size() - 4)) throw IoError("checkpoint: CRC mismatch");

  Checkpoint c;
  try {
    c.meta = manifest.at("meta");
    for (const auto& t : manifest.at("tensors")) {
      const auto shape = t.at("shape").get<Shape>();
      const auto off = t.at("offset").get<std::size_t>(), bytes = t.at("bytes").get<std::size_t>();
      const std::string dtype = t.at("dtype").get<std::string>();
      const std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
      if (width == 0) throw IoError("checkpoint: unknown dtype '" + dtype + "'");
      if (bytes != shape_numel(shape) * width || off > payload.size() || bytes > payload.size() - off) {
        throw IoError("checkpoint: tensor '" + t.at("name").get<std::string>() + "' lies outside the payload");
      }
      if (width == 4) c.f32.add(t.at("name"), get_values<float>(payload, off, shape));
      else c.f64.add(t.at("name"), get_values<double>(payload, off, shape));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: bad manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) { write_file(path, encode_checkpoint(c)); }

Checkpoint load_checkpoint(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp + "': " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string csv_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string csv_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw std::invalid_argument("csv_table: row width differs from the header");
    line(r);
  }
  return out;
}

Tensor<std::uint8_t> image_grid(const Tensor<std::uint8_t>& images, std::size_t rows, std::size_t cols,
                                std::size_t pad) {
  if (images.rank() != 4) throw ShapeError("image_grid: expected [N, H, W, C]");
  const std::size_t n = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  if (rows * cols < n) throw std::invalid_argument("image_grid: grid too small");
  const std::uint8_t scale = is_binary(images) ? 255 : 1;
  const std::size_t gh = rows * h + (rows + 1) * pad, gw = cols * w + (cols + 1) * pad;
  Tensor<std::uint8_t> out(Shape{gh, gw, c}, 128);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r0 = pad + (i / cols) * (h + pad), c0 = pad + (i % cols) * (w + pad);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t q = 0; q < w * c; ++q)
        out[((r0 + r) * gw + c0) * c + q] = static_cast<std::uint8_t>(images[((i * h + r) * w) * c + q] * scale);
  }
  return out;
}

void write_png(const std::string& path, const Tensor<std::uint8_t>& image) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) throw ShapeError("write_png: expected [H, W, 1|3]");
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!f) throw IoError("cannot write '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing '" + path + "'");
  }
  const auto h = static_cast<png_uint_32>(image.dim(0)), w = static_cast<png_uint_32>(image.dim(1));
  png_init_io(png, f.get());
  png_set_IHDR(png, info, w, h, 8, image.dim(2) == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = image.dim(1) * image.dim(2);
  for (std::size_t r = 0; r < h; ++r) png_write_row(png, image.data() + r * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_pnm(const std::string& path, const Tensor<std::uint8_t>& image) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) throw ShapeError("write_pnm: expected [H, W, 1|3]");
  const std::string head = std::string(image.dim(2) == 1 ? "P5" : "P6") + "\n" + std::to_string(image.dim(1)) + " " +
                           std::to_string(image.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  bytes.insert(bytes.end(), image.values().begin(), image.values().end());
  write_file(path, bytes);
}

}  // namespace pvxl
