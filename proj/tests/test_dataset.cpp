#include <doctest.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "gibbs_lens/dataset.hpp"
#include "oracles.hpp"

using namespace gibbs_lens;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gibbs_lens_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<double> as_doubles(const std::vector<float>& v) { return {v.begin(), v.end()}; }

DatasetSpec small_spec(std::uint64_t seed = 9) {
  DatasetSpec s;
  s.train_per_class = 3;
  s.test_per_class = 2;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("render_mask is binary, deterministic and bounded") {
  for (std::size_t d = 0; d < kGlyphCount; ++d) {
    const Mask a = render_mask(d, 1234 + d), b = render_mask(d, 1234 + d);
    CHECK(a == b);
    CHECK(std::all_of(a.begin(), a.end(), [](std::uint8_t v) { return v <= 1; }));
    CHECK(std::count(a.begin(), a.end(), 1) > 0);
  }
  CHECK_THROWS_AS(render_mask(kGlyphCount, 0), std::invalid_argument);
}

TEST_CASE("jitter is an integer translation within two pixels") {
  for (std::size_t d = 0; d < kGlyphCount; ++d) {
    const Mask base = glyph_mask(d);
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      const Mask m = render_mask(d, seed);
      bool matched = false;
      for (int dy = -2; dy <= 2 && !matched; ++dy)
        for (int dx = -2; dx <= 2 && !matched; ++dx) {
          Mask shifted{};
          for (int r = 0; r < 32; ++r)
            for (int c = 0; c < 32; ++c) {
              const int rr = r + dy, cc = c + dx;
              if (rr >= 0 && rr < 32 && cc >= 0 && cc < 32) shifted[rr * 32 + cc] = base[r * 32 + c];
            }
          matched = shifted == m;
        }
      CHECK(matched);
    }
  }
}

TEST_CASE("unjittered glyphs are pairwise at least 40 pixels apart") {
  std::size_t min_distance = kImagePixels;
  for (std::size_t a = 0; a < kGlyphCount; ++a)
    for (std::size_t b = a + 1; b < kGlyphCount; ++b) {
      const Mask ma = glyph_mask(a), mb = glyph_mask(b);
      std::size_t d = 0;
      for (std::size_t i = 0; i < kImagePixels; ++i) d += ma[i] != mb[i];
      min_distance = std::min(min_distance, d);
    }
  CHECK(min_distance >= 40);
}

TEST_CASE("generated pixels are a permutation of the retained draws") {
  for (std::uint64_t k = 0; k < 50; ++k) {
    CounterRng rng(derive_seed(77, 0, k));
    const GeneratedImage g = generate_image(k % 10, rng);
    std::vector<double> pixels(g.image.data().begin(), g.image.data().end());
    std::vector<double> draws = g.draws;
    std::sort(pixels.begin(), pixels.end());
    std::sort(draws.begin(), draws.end());
    CHECK(pixels == draws);
    // Every glyph pixel outranks every background pixel.
    double min_on = INFINITY, max_off = -INFINITY;
    for (std::size_t i = 0; i < kImagePixels; ++i) {
      if (g.mask[i]) {
        min_on = std::min(min_on, g.image[i]);
      } else {
        max_off = std::max(max_off, g.image[i]);
      }
    }
    CHECK(min_on >= max_off);
  }
}

TEST_CASE("per-image sample moments stay within three standard errors") {
  const double var_se = 1024.0 * std::sqrt(2.0 / 1023.0);
  int inside = 0;
  for (std::uint64_t k = 0; k < 1000; ++k) {
    CounterRng rng(derive_seed(5, 0, k));
    const GeneratedImage g = generate_image(k % 10, rng);
    double mean = 0.0;
    for (double v : g.draws) mean += v;
    mean /= 1024.0;
    double var = 0.0;
    for (double v : g.draws) var += (v - mean) * (v - mean);
    var /= 1023.0;
    if (std::abs(mean) <= 3.0 && std::abs(var - 1024.0) <= 3.0 * var_se) ++inside;
  }
  CHECK(inside >= 990);
}

TEST_CASE("per-image histogram KL to the reference") {
  int under = 0;
  for (std::uint64_t k = 0; k < 500; ++k) {
    CounterRng rng(derive_seed(8, 1, k));
    const GeneratedImage g = generate_image(k % 10, rng);
    if (oracle::kl_gaussian_vs_samples(g.draws, -128, 128, 64) < 0.7) ++under;
  }
  CHECK(under >= 475);
}

TEST_CASE("generate_dataset sizes, balance and determinism") {
  DatasetSpec spec = small_spec();
  const SyntheticDataset a = generate_dataset(spec), b = generate_dataset(spec);
  CHECK(a.train.size() == 30);
  CHECK(a.test.size() == 20);
  CHECK(serialize_dataset(a) == serialize_dataset(b));
  std::array<int, 10> counts{};
  for (const Sample& s : a.train) ++counts[s.label];
  for (int c : counts) CHECK(c == 3);
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].label == a.content_class(i));
  CHECK(generate_dataset(small_spec(10)).train[0] != a.train[0]);

  spec.train_per_class = 0;
  CHECK_THROWS_AS(generate_dataset(spec), std::invalid_argument);
  spec = small_spec();
  spec.pixel_variance = 0.0;
  CHECK_THROWS_AS(generate_dataset(spec), std::invalid_argument);
}

TEST_CASE("default spec has 10000 + 10000 images") {
  const DatasetSpec spec;
  CHECK(spec.train_per_class * spec.classes == 10000);
  CHECK(spec.test_per_class * spec.classes == 10000);
  CHECK(spec.pixel_variance == 1024.0);
}

TEST_CASE("random labels leave the images unchanged") {
  DatasetSpec spec = small_spec();
  spec.train_per_class = 20;
  const SyntheticDataset truth = generate_dataset(spec);
  spec.label_mode = LabelMode::kRandomLabels;
  const SyntheticDataset shuffled = generate_dataset(spec);
  std::size_t moved = 0;
  for (std::size_t i = 0; i < truth.train.size(); ++i) {
    CHECK(truth.train[i].pixels == shuffled.train[i].pixels);
    moved += truth.train[i].label != shuffled.train[i].label;
  }
  CHECK(moved > 100);
}

TEST_CASE("random labels are independent of glyph class") {
  DatasetSpec spec;
  spec.label_mode = LabelMode::kRandomLabels;
  spec.seed = 3;
  spec.test_per_class = 1;
  const SyntheticDataset ds = generate_dataset(spec);
  double table[10][10] = {};
  for (std::size_t i = 0; i < ds.train.size(); ++i) table[ds.content_class(i)][ds.train[i].label] += 1.0;
  double rows[10] = {}, cols[10] = {}, n = 0.0;
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c) {
      rows[r] += table[r][c];
      cols[c] += table[r][c];
      n += table[r][c];
    }
  double chi2 = 0.0;
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c) {
      const double e = rows[r] * cols[c] / n;
      chi2 += (table[r][c] - e) * (table[r][c] - e) / e;
    }
  // 0.999 quantile of chi-squared with 81 degrees of freedom.
  CHECK(chi2 < 126.08);
}

TEST_CASE("save and load round trip") {
  const SyntheticDataset ds = generate_dataset(small_spec());
  const fs::path path = temp_path("roundtrip.gsyn");
  save_dataset(ds, path);
  CHECK(fs::file_size(path) == 24 + 50 * (1 + 4 * 1024));
  CHECK(load_dataset(path) == ds);

  DatasetSpec rs = small_spec();
  rs.label_mode = LabelMode::kRandomLabels;
  const SyntheticDataset rds = generate_dataset(rs);
  save_dataset(rds, path);
  CHECK(load_dataset(path) == rds);
}

TEST_CASE("load rejects corrupt files with distinct diagnostics") {
  const SyntheticDataset ds = generate_dataset(small_spec());
  const std::vector<std::uint8_t> good = serialize_dataset(ds);
  auto kind_of = [](const std::vector<std::uint8_t>& bytes) {
    try {
      deserialize_dataset(bytes);
    } catch (const DatasetFormatError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  std::vector<std::uint8_t> bad = good;
  bad[0] = 'X';
  CHECK(kind_of(bad) == static_cast<int>(DatasetFormatError::Kind::kBadMagic));
  bad = good;
  bad[4] = 2;
  CHECK(kind_of(bad) == static_cast<int>(DatasetFormatError::Kind::kVersionMismatch));
  bad = good;
  bad.resize(good.size() - 1);
  CHECK(kind_of(bad) == static_cast<int>(DatasetFormatError::Kind::kTruncated));
  bad.resize(10);
  CHECK(kind_of(bad) == static_cast<int>(DatasetFormatError::Kind::kTruncated));

  CHECK_THROWS_AS(load_dataset(temp_path("does_not_exist.gsyn")), DatasetFormatError);
}

TEST_CASE("serialized pixels are little-endian float32") {
  const SyntheticDataset ds = generate_dataset(small_spec());
  const std::vector<std::uint8_t> bytes = serialize_dataset(ds);
  CHECK(bytes[24] == ds.train[0].label);
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(bytes[25 + i]) << (8 * i);
  CHECK(std::bit_cast<float>(bits) == ds.train[0].pixels[0]);
  CHECK(as_doubles(ds.train[0].pixels).size() == kImagePixels);
}
