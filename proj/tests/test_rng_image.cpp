#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "adfseg/errors.hpp"
#include "adfseg/image.hpp"
#include "adfseg/rng.hpp"
#include "testutil.hpp"

using namespace adfseg;

TEST_CASE("rng streams are deterministic per seed") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 64; ++i) {
    const uint64_t va = a.next_u64();
    all_equal = all_equal && (va == b.next_u64());
    any_diff = any_diff || (va != c.next_u64());
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("uniform and below stay in range") {
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double v = rng.uniform(-2.0, 3.0);
    CHECK(v >= -2.0);
    CHECK(v < 3.0);
    const int64_t k = rng.below(17);
    CHECK(k >= 0);
    CHECK(k < 17);
  }
}

TEST_CASE("normal draws have the requested moments") {
  Rng rng(8);
  const int n = 20000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(1.5, 2.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(mean == doctest::Approx(1.5).epsilon(0.05));
  CHECK(std::sqrt(var) == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("permutation is a bijection") {
  Rng rng(9);
  auto p = rng.permutation(100);
  REQUIRE(p.size() == 100);
  std::vector<bool> seen(100, false);
  bool moved = false;
  for (size_t i = 0; i < p.size(); ++i) {
    REQUIRE(p[i] >= 0);
    REQUIRE(p[i] < 100);
    CHECK(!seen[static_cast<size_t>(p[i])]);
    seen[static_cast<size_t>(p[i])] = true;
    moved = moved || p[i] != static_cast<int64_t>(i);
  }
  CHECK(moved);
}

TEST_CASE("mix_seed separates streams by tag and index") {
  CHECK(mix_seed(5, "data") == mix_seed(5, "data"));
  CHECK(mix_seed(5, "data") != mix_seed(5, "init"));
  CHECK(mix_seed(5, "data") != mix_seed(6, "data"));
  CHECK(mix_seed(5, "data", 0) != mix_seed(5, "data", 1));
}

TEST_CASE("fnv1a64 matches the reference constants") {
  CHECK(fnv1a64("") == 14695981039346656037ULL);  // offset basis
  auto reference = [](std::string_view s) {
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    return h;
  };
  for (const char* s : {"a", "adfseg", "{\"data\":{}}", "0123456789"}) {
    CHECK(fnv1a64(s) == reference(s));
  }
}

TEST_CASE("fill helpers honor their bounds") {
  Rng rng(10);
  nn::Tensor t({50});
  rng.fill_uniform(t, 0.25, 0.75);
  for (int64_t i = 0; i < t.numel(); ++i) {
    CHECK(t[i] >= 0.25);
    CHECK(t[i] < 0.75);
  }
}

TEST_CASE("png gray roundtrip is 8-bit exact") {
  const auto dir = testutil::fresh_tmp_dir("png");
  Image img(1, 9, 13);
  for (int64_t i = 0; i < img.numel(); ++i) {
    img.pix[static_cast<size_t>(i)] = static_cast<double>(i) / static_cast<double>(img.numel() - 1);
  }
  const std::string path = dir + "/gray.png";
  write_png(path, img);
  Image back = read_png_gray(path);
  REQUIRE(back.c == 1);
  REQUIRE(back.h == 9);
  REQUIRE(back.w == 13);
  double worst = 0;
  for (int64_t i = 0; i < img.numel(); ++i) {
    worst = std::max(worst, std::abs(back.pix[static_cast<size_t>(i)] - img.pix[static_cast<size_t>(i)]));
  }
  CHECK(worst <= 0.5 / 255.0 + 1e-9);  // one quantization step
}

TEST_CASE("binary masks survive png exactly") {
  const auto dir = testutil::fresh_tmp_dir("pngmask");
  Image m(1, 6, 6);
  for (int64_t i = 0; i < m.numel(); ++i) m.pix[static_cast<size_t>(i)] = (i % 3 == 0) ? 1.0 : 0.0;
  const std::string path = dir + "/mask.png";
  write_png(path, m);
  Image back = read_png_gray(path);
  for (int64_t i = 0; i < m.numel(); ++i) {
    CHECK(back.pix[static_cast<size_t>(i)] == m.pix[static_cast<size_t>(i)]);
  }
}

TEST_CASE("rgb png reads back as gray") {
  const auto dir = testutil::fresh_tmp_dir("pngrgb");
  Image rgb(3, 4, 5);
  rgb.fill(0.5);
  const std::string path = dir + "/rgb.png";
  write_png(path, rgb);
  Image back = read_png_gray(path);
  CHECK(back.c == 1);
  CHECK(back.h == 4);
  CHECK(back.w == 5);
}

TEST_CASE("png io raises IoError on bad paths") {
  CHECK_THROWS_AS(read_png_gray("/nonexistent/nowhere.png"), IoError);
  Image img(1, 2, 2);
  CHECK_THROWS_AS(write_png("/nonexistent_dir_zzz/out.png", img), IoError);
}

TEST_CASE("resize at the same size is the identity") {
  Rng rng(11);
  Image img(1, 7, 5);
  for (auto& v : img.pix) v = rng.uniform();
  Image out = resize_bilinear(img, 7, 5);
  for (int64_t i = 0; i < img.numel(); ++i) {
    CHECK(out.pix[static_cast<size_t>(i)] ==
          doctest::Approx(img.pix[static_cast<size_t>(i)]).epsilon(1e-12));
  }
}

TEST_CASE("resize preserves constant images at any size") {
  Image img(1, 8, 8);
  img.fill(0.625);
  Image out = resize_bilinear(img, 13, 3);
  CHECK(out.h == 13);
  CHECK(out.w == 3);
  for (double v : out.pix) CHECK(v == doctest::Approx(0.625).epsilon(1e-12));
}

TEST_CASE("zero shift is the identity, integer shifts translate") {
  Rng rng(12);
  Image img(1, 6, 6);
  for (auto& v : img.pix) v = rng.uniform();

  Image same = shift_bilinear(img, 0.0, 0.0);
  for (int64_t i = 0; i < img.numel(); ++i) {
    CHECK(same.pix[static_cast<size_t>(i)] ==
          doctest::Approx(img.pix[static_cast<size_t>(i)]).epsilon(1e-12));
  }

  Image moved = shift_bilinear(img, 1.0, 0.0);  // samples src at y+1
  for (int64_t y = 0; y < 5; ++y) {
    for (int64_t x = 0; x < 6; ++x) {
      CHECK(moved.at(0, y, x) == doctest::Approx(img.at(0, y + 1, x)).epsilon(1e-12));
    }
  }
}
