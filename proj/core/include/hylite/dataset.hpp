#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hylite/error.hpp"

namespace hylite {

/// Labeled hyperspectral cube. Reflectance is pixel-major with the band index
/// innermost: value(r, c, b) lives at ((r * w) + c) * m + b. Labels use 0 for
/// unlabeled pixels and 1..c for classes.
struct HsiCube {
  std::size_t h = 0, w = 0, m = 0;
  std::vector<float> reflectance;      // h * w * m
  std::vector<std::uint16_t> labels;   // h * w

  float at(std::size_t r, std::size_t c, std::size_t b) const {
    return reflectance[(r * w + c) * m + b];
  }
  std::uint16_t label(std::size_t r, std::size_t c) const { return labels[r * w + c]; }
  std::size_t num_classes() const;
};

struct SplitEntry {
  std::uint32_t row = 0, col = 0;
  std::uint16_t cls = 0;  // 1-based class id
  bool operator==(const SplitEntry&) const = default;
};
using SplitList = std::vector<SplitEntry>;

/// Batch of patch instances. Each instance is m spectral tokens of p*p pixels,
/// stored token-major: inputs[i * m * p * p + band * p * p + pixel]. Targets
/// are 0-based class indices (dataset label minus one).
struct PatchBatch {
  std::size_t m = 0, p = 0;
  std::vector<double> inputs;
  std::vector<int> targets;
  std::size_t size() const { return targets.size(); }
  std::span<const double> instance(std::size_t i) const {
    return {inputs.data() + i * m * p * p, m * p * p};
  }
};

// HSIB v1 / HSIL v1 container files (little-endian).
HsiCube load_cube(const std::string& cube_path, const std::string& labels_path);
void save_cube(const HsiCube& cube, const std::string& cube_path, const std::string& labels_path);

SplitList load_split(const std::string& path);
void save_split(const SplitList& split, const std::string& path);

/// Checks that every entry is labeled and matches the cube's label raster.
void validate_split(const HsiCube& cube, const SplitList& split);

enum class Normalize { minmax, zscore, none };

/// Per-band normalization over the whole cube. minmax maps each band to
/// [0, 1]; constant bands map to 0. Idempotent.
HsiCube normalize_bands(const HsiCube& cube, Normalize mode = Normalize::minmax);

/// Extracts the p x p window around (row, col) for every band, mirror-padded
/// at the borders (reflection without repeating the edge pixel), flattened to
/// m tokens of p^2 pixels.
std::vector<double> patchify(const HsiCube& cube, std::size_t row, std::size_t col, std::size_t p);

/// Deterministic batch stream over a split. The same seed always yields the
/// same batch sequence; the final partial batch is emitted.
class BatchStream {
 public:
  BatchStream(const HsiCube& cube, const SplitList& split, std::size_t p, std::size_t batch_size,
              std::uint64_t seed, bool shuffle);
  bool next(PatchBatch& out);
  void reset();

 private:
  const HsiCube& cube_;
  const SplitList& split_;
  std::size_t p_, batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Per-class stratified subsample: floor(fraction * n_k) entries per class,
/// at least one. Subsets are nested across fractions for a fixed seed.
SplitList subsample_split(const SplitList& split, double fraction, std::uint64_t seed);

/// Flat prototype spectrum of class k (1-based) at band b. The last two
/// classes share the same spectrum; they are distinguishable only by texture.
double synth_prototype(std::size_t k, std::size_t b, std::size_t m, std::size_t c);

/// Checkerboard modulation factor applied to the last class's pixels.
double synth_texture(std::size_t k, std::size_t row, std::size_t col, std::size_t c,
                     double amplitude);

/// Synthetic fixture: c vertical class stripes with smooth prototype spectra
/// plus Gaussian noise. The last two classes are spectrally confusable; they
/// differ only in spatial texture (flat vs checkerboard).
HsiCube synth_generate(std::size_t h, std::size_t w, std::size_t m, std::size_t c, double noise,
                       std::uint64_t seed, double texture_amplitude = 0.2);

struct SplitPair {
  SplitList train, test;
};

/// Stratified train/test split of all labeled pixels: train_per_class random
/// pixels per class for training, the rest for testing.
SplitPair make_split(const HsiCube& cube, std::size_t train_per_class, std::uint64_t seed);

}  // namespace hylite
