#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pvxl/data.hpp"

using namespace pvxl;

namespace {

std::vector<std::uint8_t> idx_fixture() {
  // Two 3x3 images, magic 0x00000803.
  std::vector<std::uint8_t> b = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 3};
  for (int i = 0; i < 18; ++i) b.push_back(static_cast<std::uint8_t>(i * 14));
  return b;
}

std::string temp_file(const std::string& name, const std::vector<std::uint8_t>& bytes) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                              static_cast<std::streamsize>(bytes.size()));
  return path.string();
}

bool throws_with(auto&& f, const std::string& fragment) {
  try {
    f();
  } catch (const IoError& e) {
    return std::string(e.what()).find(fragment) != std::string::npos;
  }
  return false;
}

}  // namespace

TEST_CASE("idx fixture parses to exact bytes") {
  const auto a = parse_idx(idx_fixture());
  CHECK(a.dims == std::vector<std::size_t>{2, 3, 3});
  REQUIRE(a.bytes.size() == 18);
  for (int i = 0; i < 18; ++i) CHECK(a.bytes[i] == i * 14);

  const auto img = temp_file("pvxl_img.idx", idx_fixture());
  const auto lab = temp_file("pvxl_lab.idx", {0, 0, 8, 1, 0, 0, 0, 2, 7, 3});
  const auto set = load_idx_images(img, lab);
  CHECK(set.images.shape() == Shape{2, 3, 3, 1});
  CHECK(set.images[9] == 9 * 14);
  CHECK(set.labels == std::vector<int>{7, 3});
}

TEST_CASE("idx rejects bad input with a diagnostic") {
  auto bytes = idx_fixture();
  bytes[2] = 9;
  CHECK(throws_with([&] { parse_idx(bytes); }, "bad magic 0x00000903 at offset 0"));
  CHECK(throws_with([] { parse_idx(std::vector<std::uint8_t>{}); }, "too short"));
  auto cut = idx_fixture();
  cut.resize(cut.size() - 1);
  CHECK(throws_with([&] { parse_idx(cut); }, "truncated payload"));
  auto head = idx_fixture();
  head.resize(10);
  CHECK(throws_with([&] { parse_idx(head); }, "truncated dimension 1"));
  auto extra = idx_fixture();
  extra.push_back(0);
  CHECK(throws_with([&] { parse_idx(extra); }, "trailing"));
  const auto empty = temp_file("pvxl_empty.idx", {});
  CHECK(throws_with([&] { load_idx(empty); }, "pvxl_empty.idx"));
  CHECK_THROWS_AS(load_idx("/nonexistent/pvxl.idx"), IoError);
  const auto lab = temp_file("pvxl_lab3.idx", {0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3});
  CHECK_THROWS_AS(load_idx_images(temp_file("pvxl_img2.idx", idx_fixture()), lab), IoError);
}

TEST_CASE("binarization") {
  Rng rng(3);
  Tensor<double> p(Shape{2, 4, 4, 1});
  for (std::size_t i = 16; i < 32; ++i) p[i] = 1.0;
  for (int rep = 0; rep < 20; ++rep) {
    const auto b = binarize(p, rng);
    for (std::size_t i = 0; i < 16; ++i) CHECK(b[i] == 0);
    for (std::size_t i = 16; i < 32; ++i) CHECK(b[i] == 1);
  }

  Tensor<double> half(Shape{1, 1, 1, 1}, 0.5);
  const int n = 10000;
  int ones = 0;
  for (int e = 0; e < n; ++e) ones += binarize(half, rng)[0];
  const double mean = ones / double(n), se = std::sqrt(0.25 / n);
  CHECK(std::abs(mean - 0.5) < 3 * se);

  Tensor<std::uint8_t> bytes(Shape{1, 1, 2, 1}, std::vector<std::uint8_t>{0, 255});
  const auto in = intensities(bytes);
  CHECK(in[0] == 0.0);
  CHECK(in[1] == 1.0);
  CHECK(is_binary(binarize(in, rng)));
  CHECK_FALSE(is_binary(bytes));
}

TEST_CASE("toy sets are deterministic, binary and balanced") {
  for (auto kind : {ToyKind::bars, ToyKind::rectangles, ToyKind::sprites}) {
    Rng a(11), b(11);
    const auto x = synth_toy(200, 10, kind, a);
    const auto y = synth_toy(200, 10, kind, b);
    CHECK(x.images == y.images);
    CHECK(x.labels == y.labels);
    CHECK(fingerprint(x) == fingerprint(y));
    CHECK(is_binary(x.images));
    CHECK(x.images.shape() == Shape{200, 10, 10, 1});
  }

  Rng rng(5);
  const std::size_t n = 2000;
  const auto bars = synth_toy(n, 14, ToyKind::bars, rng);
  double mean = 0;
  for (int l : bars.labels) mean += l;
  mean /= n;
  CHECK(std::abs(mean - 0.5) < 3 * std::sqrt(0.25 / n));

  // Orientation is visible: horizontal bars are constant along rows.
  for (std::size_t i = 0; i < 50; ++i) {
    bool rows_constant = true, cols_constant = true, any = false;
    for (std::size_t r = 0; r < 14; ++r)
      for (std::size_t c = 0; c < 14; ++c) {
        const auto v = bars.images[(i * 14 + r) * 14 + c];
        any |= v != 0;
        rows_constant &= v == bars.images[(i * 14 + r) * 14];
        cols_constant &= v == bars.images[(i * 14) * 14 + c];
      }
    CHECK(any);
    CHECK((bars.labels[i] == 0 ? rows_constant : cols_constant));
  }

  CHECK(fingerprint(bars) != fingerprint(synth_toy(n, 14, ToyKind::bars, rng)));
  CHECK_THROWS_AS(synth_toy(4, 5, ToyKind::bars, rng), std::invalid_argument);
  CHECK_THROWS_AS(parse_toy_kind("stripes"), std::invalid_argument);
  CHECK(parse_toy_kind("sprites") == ToyKind::sprites);
}

TEST_CASE("subset keeps rows and labels") {
  Rng rng(2);
  const auto d = synth_toy(6, 6, ToyKind::sprites, rng);
  const std::vector<std::size_t> idx{4, 1};
  const auto s = d.subset(idx);
  CHECK(s.size() == 2);
  CHECK(s.labels == std::vector<int>{d.labels[4], d.labels[1]});
  for (std::size_t i = 0; i < 36; ++i) CHECK(s.images[36 + i] == d.images[36 + i]);
}
