#include "gibbs_lens/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>

namespace gibbs_lens {

namespace {

// 5x7 bitmap digits, scaled 4x onto the 32x32 frame at (row 2, col 6).
constexpr std::size_t kGlyphRows = 7;
constexpr std::size_t kGlyphCols = 5;
constexpr std::size_t kGlyphScale = 4;
constexpr std::size_t kGlyphTop = 2;
constexpr std::size_t kGlyphLeft = 6;
constexpr int kMaxJitter = 2;

constexpr std::array<std::array<const char*, kGlyphRows>, kGlyphCount> kGlyphs = {{
    {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."},
    {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."},
    {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"},
    {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."},
    {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."},
    {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."},
    {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."},
    {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."},
    {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."},
    {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."},
}};

Mask place_glyph(std::size_t digit, int dy, int dx) {
  if (digit >= kGlyphCount) {
    throw std::invalid_argument("render_mask: class " + std::to_string(digit) + " out of range [0, " +
                                std::to_string(kGlyphCount) + ")");
  }
  Mask m{};
  const auto& rows = kGlyphs[digit];
  for (std::size_t r = 0; r < kGlyphRows; ++r) {
    for (std::size_t c = 0; c < kGlyphCols; ++c) {
      if (rows[r][c] != '#') continue;
      for (std::size_t i = 0; i < kGlyphScale; ++i) {
        for (std::size_t j = 0; j < kGlyphScale; ++j) {
          const int y = static_cast<int>(kGlyphTop + r * kGlyphScale + i) + dy;
          const int x = static_cast<int>(kGlyphLeft + c * kGlyphScale + j) + dx;
          if (y < 0 || x < 0 || y >= static_cast<int>(kImageSide) || x >= static_cast<int>(kImageSide)) continue;
          m[static_cast<std::size_t>(y) * kImageSide + static_cast<std::size_t>(x)] = 1;
        }
      }
    }
  }
  return m;
}

enum Stream : std::uint64_t { kTrainImages = 0, kTestImages = 1, kTrainLabels = 2, kTestLabels = 3 };

// Little-endian byte helpers.
void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void DatasetSpec::validate() const {
  if (classes < 1 || classes > kGlyphCount) {
    throw std::invalid_argument("DatasetSpec: classes must be in [1, " + std::to_string(kGlyphCount) + "]");
  }
  if (train_per_class < 1 || test_per_class < 1) {
    throw std::invalid_argument("DatasetSpec: per-class counts must be at least 1");
  }
  if (!(pixel_variance > 0.0) || !std::isfinite(pixel_variance) || !std::isfinite(pixel_mean)) {
    throw std::invalid_argument("DatasetSpec: pixel variance must be positive and finite");
  }
}

Tensor Sample::to_tensor() const {
  std::vector<double> data(pixels.begin(), pixels.end());
  return Tensor(Shape{kImageSide, kImageSide, 1}, std::move(data));
}

Mask glyph_mask(std::size_t digit) { return place_glyph(digit, 0, 0); }

Mask render_mask(std::size_t digit, std::uint64_t jitter_seed) {
  CounterRng rng(jitter_seed);
  const int dy = static_cast<int>(rng.uniform_index(2 * kMaxJitter + 1)) - kMaxJitter;
  const int dx = static_cast<int>(rng.uniform_index(2 * kMaxJitter + 1)) - kMaxJitter;
  return place_glyph(digit, dy, dx);
}

GeneratedImage generate_image(std::size_t digit, CounterRng& rng, double mean, double variance) {
  GeneratedImage g;
  g.mask = render_mask(digit, rng.next_u64());

  const double sd = std::sqrt(variance);
  g.draws.resize(kImagePixels);
  for (double& v : g.draws) v = static_cast<float>(mean + sd * rng.normal());

  std::vector<double> sorted = g.draws;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  std::vector<std::size_t> on, off;
  for (std::size_t i = 0; i < kImagePixels; ++i) (g.mask[i] ? on : off).push_back(i);

  std::vector<double> high(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(on.size()));
  std::vector<double> low(sorted.begin() + static_cast<std::ptrdiff_t>(on.size()), sorted.end());
  shuffle(std::span<double>(high), rng);
  shuffle(std::span<double>(low), rng);

  g.image = Tensor(Shape{kImageSide, kImageSide, 1});
  for (std::size_t k = 0; k < on.size(); ++k) g.image[on[k]] = high[k];
  for (std::size_t k = 0; k < off.size(); ++k) g.image[off[k]] = low[k];
  return g;
}

SyntheticDataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  SyntheticDataset ds;
  ds.spec = spec;

  auto fill_split = [&](std::vector<Sample>& split, std::size_t per_class, Stream images, Stream labels) {
    const std::size_t n = per_class * spec.classes;
    split.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t digit = i % spec.classes;
      CounterRng rng(derive_seed(spec.seed, images, i));
      GeneratedImage g = generate_image(digit, rng, spec.pixel_mean, spec.pixel_variance);
      split[i].pixels.assign(g.image.data().begin(), g.image.data().end());
      split[i].label = static_cast<std::uint8_t>(digit);
    }
    if (spec.label_mode == LabelMode::kRandomLabels) {
      CounterRng rng(derive_seed(spec.seed, labels));
      for (Sample& s : split) s.label = static_cast<std::uint8_t>(rng.uniform_index(spec.classes));
    }
  };
  fill_split(ds.train, spec.train_per_class, kTrainImages, kTrainLabels);
  fill_split(ds.test, spec.test_per_class, kTestImages, kTestLabels);
  return ds;
}

// Header layout (24 bytes, little-endian):
//   0  magic "GSYN"     4  version u16     6  label_mode u8   7  classes u8
//   8  train count u32  12 test count u32  16 seed u64
// Records follow, train split first: label u8, then 1024 float32 pixels row-major.
std::vector<std::uint8_t> serialize_dataset(const SyntheticDataset& ds) {
  std::vector<std::uint8_t> out;
  out.reserve(kDatasetHeaderBytes + (ds.train.size() + ds.test.size()) * kDatasetRecordBytes);
  for (char c : {'G', 'S', 'Y', 'N'}) put_u8(out, static_cast<std::uint8_t>(c));
  put_u16(out, kDatasetVersion);
  put_u8(out, static_cast<std::uint8_t>(ds.spec.label_mode));
  put_u8(out, static_cast<std::uint8_t>(ds.spec.classes));
  put_u32(out, static_cast<std::uint32_t>(ds.train.size()));
  put_u32(out, static_cast<std::uint32_t>(ds.test.size()));
  put_u64(out, ds.spec.seed);
  for (const auto* split : {&ds.train, &ds.test}) {
    for (const Sample& s : *split) {
      if (s.pixels.size() != kImagePixels) {
        throw std::invalid_argument("serialize_dataset: sample has " + std::to_string(s.pixels.size()) +
                                    " pixels, expected " + std::to_string(kImagePixels));
      }
      put_u8(out, s.label);
      for (float p : s.pixels) put_u32(out, std::bit_cast<std::uint32_t>(p));
    }
  }
  return out;
}

SyntheticDataset deserialize_dataset(const std::vector<std::uint8_t>& bytes) {
  using Kind = DatasetFormatError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "GSYN", 4) != 0) {
    throw DatasetFormatError(Kind::kBadMagic, "dataset: bad magic (expected \"GSYN\")");
  }
  if (bytes.size() < kDatasetHeaderBytes) {
    throw DatasetFormatError(Kind::kTruncated, "dataset: truncated header (" + std::to_string(bytes.size()) +
                                                   " bytes)");
  }
  const std::uint8_t* h = bytes.data();
  const auto version = static_cast<std::uint16_t>(get_le(h + 4, 2));
  if (version != kDatasetVersion) {
    throw DatasetFormatError(Kind::kVersionMismatch, "dataset: unsupported version " + std::to_string(version) +
                                                         " (expected " + std::to_string(kDatasetVersion) + ")");
  }
  SyntheticDataset ds;
  const std::uint8_t mode = h[6];
  if (mode > 1) throw DatasetFormatError(Kind::kInvalidHeader, "dataset: unknown label mode " + std::to_string(mode));
  ds.spec.label_mode = static_cast<LabelMode>(mode);
  ds.spec.classes = h[7];
  const std::size_t n_train = get_le(h + 8, 4);
  const std::size_t n_test = get_le(h + 12, 4);
  ds.spec.seed = get_le(h + 16, 8);
  if (ds.spec.classes < 1 || ds.spec.classes > kGlyphCount || n_train % ds.spec.classes != 0 ||
      n_test % ds.spec.classes != 0) {
    throw DatasetFormatError(Kind::kInvalidHeader, "dataset: inconsistent class count " +
                                                       std::to_string(ds.spec.classes) + " for " +
                                                       std::to_string(n_train) + "/" + std::to_string(n_test) +
                                                       " records");
  }
  ds.spec.train_per_class = n_train / ds.spec.classes;
  ds.spec.test_per_class = n_test / ds.spec.classes;

  const std::size_t expected = kDatasetHeaderBytes + (n_train + n_test) * kDatasetRecordBytes;
  if (bytes.size() < expected) {
    throw DatasetFormatError(Kind::kTruncated, "dataset: truncated body (" + std::to_string(bytes.size()) +
                                                   " of " + std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) {
    throw DatasetFormatError(Kind::kInvalidHeader, "dataset: " + std::to_string(bytes.size() - expected) +
                                                       " trailing bytes after the last record");
  }

  const std::uint8_t* p = h + kDatasetHeaderBytes;
  auto read_split = [&](std::vector<Sample>& split, std::size_t n) {
    split.resize(n);
    for (Sample& s : split) {
      s.label = *p++;
      if (s.label >= ds.spec.classes) {
        throw DatasetFormatError(Kind::kInvalidHeader, "dataset: label " + std::to_string(s.label) +
                                                           " out of range");
      }
      s.pixels.resize(kImagePixels);
      for (float& v : s.pixels) {
        v = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(p, 4)));
        p += 4;
      }
    }
  };
  read_split(ds.train, n_train);
  read_split(ds.test, n_test);
  return ds;
}

void save_dataset(const SyntheticDataset& ds, const std::filesystem::path& path) {
  const auto bytes = serialize_dataset(ds);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DatasetFormatError(DatasetFormatError::Kind::kIo, "dataset: cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DatasetFormatError(DatasetFormatError::Kind::kIo, "dataset: write to " + path.string() + " failed");
}

SyntheticDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DatasetFormatError(DatasetFormatError::Kind::kIo, "dataset: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_dataset(bytes);
}

}  // namespace gibbs_lens
