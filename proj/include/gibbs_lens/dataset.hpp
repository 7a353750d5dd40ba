#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gibbs_lens/rng.hpp"
#include "gibbs_lens/tensor.hpp"

namespace gibbs_lens {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;
inline constexpr std::size_t kGlyphCount = 10;

enum class LabelMode : std::uint8_t { kTrueLabels = 0, kRandomLabels = 1 };

struct DatasetSpec {
  std::size_t classes = 10;
  std::size_t train_per_class = 1000;
  std::size_t test_per_class = 1000;
  double pixel_mean = 0.0;
  double pixel_variance = 1024.0;
  std::uint64_t seed = 0;
  LabelMode label_mode = LabelMode::kTrueLabels;

  void validate() const;
  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

/// One image with its label. Pixels are row-major and float-valued on disk and in memory.
struct Sample {
  std::vector<float> pixels;
  std::uint8_t label = 0;

  Tensor to_tensor() const;
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct SyntheticDataset {
  DatasetSpec spec;
  std::vector<Sample> train;
  std::vector<Sample> test;

  /// Glyph class drawn in record `index` of a split; records cycle through the classes.
  std::size_t content_class(std::size_t index) const { return index % spec.classes; }

  friend bool operator==(const SyntheticDataset&, const SyntheticDataset&) = default;
};

using Mask = std::array<std::uint8_t, kImagePixels>;

/// Digit glyph for `digit`, jittered by an integer translation in [-2, 2]^2 derived from
/// `jitter_seed`. Pixels shifted off the frame are dropped.
Mask render_mask(std::size_t digit, std::uint64_t jitter_seed);

/// The unjittered glyph placed at its nominal position.
Mask glyph_mask(std::size_t digit);

struct GeneratedImage {
  Tensor image;               // [32, 32, 1]
  std::vector<double> draws;  // the i.i.d. Gaussian sample, in draw order
  Mask mask;
};

/// Draws 1024 i.i.d. N(mean, variance) values (rounded to float), sorts them descending,
/// and hands the largest |mask| of them to the glyph pixels and the rest to the background,
/// each group shuffled. The pixel multiset equals the draw multiset.
GeneratedImage generate_image(std::size_t digit, CounterRng& rng, double mean = 0.0,
                              double variance = 1024.0);

SyntheticDataset generate_dataset(const DatasetSpec& spec);

/// Raised by load_dataset; `kind()` tells the failure modes apart.
class DatasetFormatError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kVersionMismatch, kTruncated, kInvalidHeader };
  DatasetFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::size_t kDatasetHeaderBytes = 24;
inline constexpr std::size_t kDatasetRecordBytes = 1 + 4 * kImagePixels;
inline constexpr std::uint16_t kDatasetVersion = 1;

std::vector<std::uint8_t> serialize_dataset(const SyntheticDataset& ds);
SyntheticDataset deserialize_dataset(const std::vector<std::uint8_t>& bytes);

void save_dataset(const SyntheticDataset& ds, const std::filesystem::path& path);
SyntheticDataset load_dataset(const std::filesystem::path& path);

}  // namespace gibbs_lens
