#include "hylite/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "hylite/rng.hpp"

namespace hylite {

namespace {

constexpr std::size_t kMaxElements = std::size_t{1} << 31;

void wr_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t rd_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    fail(Err::TruncatedPayload, "short read in " + what);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

void check_magic(std::istream& is, const char expect[4], const std::string& path) {
  char m[4];
  if (!is.read(m, 4)) fail(Err::TruncatedPayload, path + ": file shorter than header");
  if (std::memcmp(m, expect, 4) != 0)
    fail(Err::BadMagic, path + ": expected magic \"" + std::string(expect, 4) + "\"");
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Err::Io, "cannot open " + path);
  return f;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(Err::Io, "cannot open " + path + " for writing");
  return f;
}

std::size_t mirror_index(std::ptrdiff_t q, std::size_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t nn = static_cast<std::ptrdiff_t>(n);
  while (q < 0 || q >= nn) {
    if (q < 0) q = -q;
    if (q >= nn) q = 2 * nn - 2 - q;
  }
  return static_cast<std::size_t>(q);
}

}  // namespace

std::size_t HsiCube::num_classes() const {
  std::uint16_t mx = 0;
  for (std::uint16_t l : labels) mx = std::max(mx, l);
  return mx;
}

HsiCube load_cube(const std::string& cube_path, const std::string& labels_path) {
  HsiCube cube;
  {
    auto f = open_in(cube_path);
    check_magic(f, "HSIB", cube_path);
    const std::uint32_t version = rd_u32(f, cube_path);
    if (version != 1) fail(Err::BadMagic, cube_path + ": unsupported HSIB version");
    const std::uint32_t h = rd_u32(f, cube_path), w = rd_u32(f, cube_path),
                        m = rd_u32(f, cube_path), dtype = rd_u32(f, cube_path);
    if (dtype != 1) fail(Err::BadMagic, cube_path + ": unsupported dtype");
    if (h == 0 || w == 0 || m == 0 ||
        std::size_t(h) * w > kMaxElements / m)
      fail(Err::DimOverflow, cube_path + ": dims " + std::to_string(h) + "x" + std::to_string(w) +
                                 "x" + std::to_string(m));
    cube.h = h;
    cube.w = w;
    cube.m = m;
    cube.reflectance.resize(std::size_t(h) * w * m);
    if (!f.read(reinterpret_cast<char*>(cube.reflectance.data()),
                static_cast<std::streamsize>(cube.reflectance.size() * sizeof(float))))
      fail(Err::TruncatedPayload,
           cube_path + ": payload shorter than h*w*m*4 = " +
               std::to_string(cube.reflectance.size() * sizeof(float)) + " bytes");
  }
  {
    auto f = open_in(labels_path);
    check_magic(f, "HSIL", labels_path);
    const std::uint32_t version = rd_u32(f, labels_path);
    if (version != 1) fail(Err::BadMagic, labels_path + ": unsupported HSIL version");
    const std::uint32_t h = rd_u32(f, labels_path), w = rd_u32(f, labels_path);
    if (h != cube.h || w != cube.w)
      fail(Err::LengthMismatch, labels_path + ": label raster does not match cube dims");
    cube.labels.resize(std::size_t(h) * w);
    if (!f.read(reinterpret_cast<char*>(cube.labels.data()),
                static_cast<std::streamsize>(cube.labels.size() * sizeof(std::uint16_t))))
      fail(Err::TruncatedPayload, labels_path + ": payload shorter than h*w*2 bytes");
  }
  return cube;
}

void save_cube(const HsiCube& cube, const std::string& cube_path, const std::string& labels_path) {
  {
    auto f = open_out(cube_path);
    f.write("HSIB", 4);
    wr_u32(f, 1);
    wr_u32(f, static_cast<std::uint32_t>(cube.h));
    wr_u32(f, static_cast<std::uint32_t>(cube.w));
    wr_u32(f, static_cast<std::uint32_t>(cube.m));
    wr_u32(f, 1);  // dtype: f32
    f.write(reinterpret_cast<const char*>(cube.reflectance.data()),
            static_cast<std::streamsize>(cube.reflectance.size() * sizeof(float)));
    if (!f) fail(Err::Io, "write failed: " + cube_path);
  }
  {
    auto f = open_out(labels_path);
    f.write("HSIL", 4);
    wr_u32(f, 1);
    wr_u32(f, static_cast<std::uint32_t>(cube.h));
    wr_u32(f, static_cast<std::uint32_t>(cube.w));
    f.write(reinterpret_cast<const char*>(cube.labels.data()),
            static_cast<std::streamsize>(cube.labels.size() * sizeof(std::uint16_t)));
    if (!f) fail(Err::Io, "write failed: " + labels_path);
  }
}

SplitList load_split(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(Err::Io, "cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) fail(Err::TruncatedPayload, path + ": empty split file");
  if (line != "row,col,class")
    fail(Err::BadMagic, path + ": split header must be \"row,col,class\"");
  SplitList out;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    SplitEntry e;
    char c1 = 0, c2 = 0;
    std::istringstream ss(line);
    long long row = -1, col = -1, cls = -1;
    if (!(ss >> row >> c1 >> col >> c2 >> cls) || c1 != ',' || c2 != ',' || row < 0 || col < 0 ||
        cls < 1 || cls > std::numeric_limits<std::uint16_t>::max())
      fail(Err::BadMagic, path + ":" + std::to_string(lineno) + ": malformed split line");
    e.row = static_cast<std::uint32_t>(row);
    e.col = static_cast<std::uint32_t>(col);
    e.cls = static_cast<std::uint16_t>(cls);
    out.push_back(e);
  }
  return out;
}

void save_split(const SplitList& split, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(Err::Io, "cannot open " + path + " for writing");
  f << "row,col,class\n";
  for (const SplitEntry& e : split)
    f << e.row << "," << e.col << "," << e.cls << "\n";
  if (!f) fail(Err::Io, "write failed: " + path);
}

void validate_split(const HsiCube& cube, const SplitList& split) {
  for (const SplitEntry& e : split) {
    if (e.row >= cube.h || e.col >= cube.w)
      fail(Err::LengthMismatch, "split entry (" + std::to_string(e.row) + "," +
                                    std::to_string(e.col) + ") outside cube");
    const std::uint16_t l = cube.label(e.row, e.col);
    if (l == 0 || l != e.cls)
      fail(Err::LengthMismatch, "split entry (" + std::to_string(e.row) + "," +
                                    std::to_string(e.col) + ") class " + std::to_string(e.cls) +
                                    " does not match raster label " + std::to_string(l));
  }
}

HsiCube normalize_bands(const HsiCube& cube, Normalize mode) {
  HsiCube out = cube;
  if (mode == Normalize::none) return out;
  const std::size_t pixels = cube.h * cube.w;
  for (std::size_t b = 0; b < cube.m; ++b) {
    if (mode == Normalize::minmax) {
      float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
      for (std::size_t px = 0; px < pixels; ++px) {
        const float v = cube.reflectance[px * cube.m + b];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      const float range = hi - lo;
      for (std::size_t px = 0; px < pixels; ++px) {
        float& v = out.reflectance[px * cube.m + b];
        v = range > 0.0f ? (v - lo) / range : 0.0f;
      }
    } else {
      double mean = 0.0;
      for (std::size_t px = 0; px < pixels; ++px) mean += cube.reflectance[px * cube.m + b];
      mean /= static_cast<double>(pixels);
      double var = 0.0;
      for (std::size_t px = 0; px < pixels; ++px) {
        const double d = cube.reflectance[px * cube.m + b] - mean;
        var += d * d;
      }
      var /= static_cast<double>(pixels);
      const double sd = std::sqrt(var);
      for (std::size_t px = 0; px < pixels; ++px) {
        float& v = out.reflectance[px * cube.m + b];
        v = sd > 0.0 ? static_cast<float>((v - mean) / sd) : 0.0f;
      }
    }
  }
  return out;
}

std::vector<double> patchify(const HsiCube& cube, std::size_t row, std::size_t col,
                             std::size_t p) {
  if (p % 2 == 0) fail(Err::InvalidConfig, "patch side must be odd");
  if (cube.label(row, col) == 0)
    fail(Err::UnlabeledCenter,
         "center (" + std::to_string(row) + "," + std::to_string(col) + ") is unlabeled");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(p / 2);
  std::vector<double> out(cube.m * p * p);
  for (std::size_t wr = 0; wr < p; ++wr) {
    const std::size_t rr =
        mirror_index(static_cast<std::ptrdiff_t>(row) - half + static_cast<std::ptrdiff_t>(wr),
                     cube.h);
    for (std::size_t wc = 0; wc < p; ++wc) {
      const std::size_t cc =
          mirror_index(static_cast<std::ptrdiff_t>(col) - half + static_cast<std::ptrdiff_t>(wc),
                       cube.w);
      const float* px = cube.reflectance.data() + (rr * cube.w + cc) * cube.m;
      const std::size_t pix = wr * p + wc;
      for (std::size_t b = 0; b < cube.m; ++b) out[b * p * p + pix] = px[b];
    }
  }
  return out;
}

BatchStream::BatchStream(const HsiCube& cube, const SplitList& split, std::size_t p,
                         std::size_t batch_size, std::uint64_t seed, bool shuffle)
    : cube_(cube), split_(split), p_(p), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (split.empty()) fail(Err::EmptySplit, "batch stream over an empty split");
  if (batch_size == 0) fail(Err::InvalidConfig, "batch size must be positive");
  reset();
}

void BatchStream::reset() {
  order_.resize(split_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (shuffle_) {
    Rng rng(seed_);
    rng.shuffle(order_);
  }
  pos_ = 0;
}

bool BatchStream::next(PatchBatch& out) {
  if (pos_ >= order_.size()) return false;
  const std::size_t n = std::min(batch_size_, order_.size() - pos_);
  out.m = cube_.m;
  out.p = p_;
  out.inputs.resize(n * cube_.m * p_ * p_);
  out.targets.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const SplitEntry& e = split_[order_[pos_ + i]];
    const auto inst = patchify(cube_, e.row, e.col, p_);
    std::copy(inst.begin(), inst.end(), out.inputs.begin() + i * inst.size());
    out.targets[i] = static_cast<int>(e.cls) - 1;
  }
  pos_ += n;
  return true;
}

SplitList subsample_split(const SplitList& split, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    fail(Err::FractionOutOfRange, "fraction " + std::to_string(fraction) + " outside (0, 1]");
  std::map<std::uint16_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < split.size(); ++i) by_class[split[i].cls].push_back(i);

  std::vector<bool> selected(split.size(), false);
  for (auto& [cls, idx] : by_class) {
    // One stream per class keyed by (seed, class): selections are prefixes,
    // so smaller fractions are subsets of larger ones at the same seed.
    Rng rng(Rng::mix(seed, cls));
    rng.shuffle(idx);
    const std::size_t take =
        std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < take && i < idx.size(); ++i) selected[idx[i]] = true;
  }
  SplitList out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (selected[i]) out.push_back(split[i]);
  return out;
}

double synth_prototype(std::size_t k, std::size_t b, std::size_t m, std::size_t c) {
  const double md = static_cast<double>(m);
  // the last class reuses class c-1's spectrum exactly; only texture differs
  const std::size_t kk = k == c ? c - 1 : k;
  const double center = md * static_cast<double>(kk) / static_cast<double>(c);
  const double width = md / (2.0 * static_cast<double>(c));
  const double z = (static_cast<double>(b) - center) / width;
  return 0.2 + 0.75 * std::exp(-0.5 * z * z);
}

double synth_texture(std::size_t k, std::size_t row, std::size_t col, std::size_t c,
                     double amplitude) {
  if (k != c) return 1.0;
  return 1.0 + ((row + col) % 2 == 0 ? amplitude : -amplitude);
}

HsiCube synth_generate(std::size_t h, std::size_t w, std::size_t m, std::size_t c, double noise,
                       std::uint64_t seed, double texture_amplitude) {
  if (c < 2 || w < c) fail(Err::InvalidConfig, "synth cube needs c >= 2 and w >= c");
  HsiCube cube;
  cube.h = h;
  cube.w = w;
  cube.m = m;
  cube.reflectance.resize(h * w * m);
  cube.labels.resize(h * w);
  Rng rng(seed);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t col = 0; col < w; ++col) {
      const std::size_t k = std::min(c, col * c / w + 1);
      cube.labels[r * w + col] = static_cast<std::uint16_t>(k);
      const double tex = synth_texture(k, r, col, c, texture_amplitude);
      for (std::size_t b = 0; b < m; ++b) {
        const double v = synth_prototype(k, b, m, c) * tex + noise * rng.normal();
        cube.reflectance[(r * w + col) * m + b] = static_cast<float>(v);
      }
    }
  }
  return cube;
}

SplitPair make_split(const HsiCube& cube, std::size_t train_per_class, std::uint64_t seed) {
  std::map<std::uint16_t, std::vector<SplitEntry>> by_class;
  for (std::size_t r = 0; r < cube.h; ++r)
    for (std::size_t c = 0; c < cube.w; ++c)
      if (const std::uint16_t l = cube.label(r, c); l != 0)
        by_class[l].push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c), l});

  SplitPair out;
  for (auto& [cls, entries] : by_class) {
    Rng rng(Rng::mix(seed, cls));
    rng.shuffle(entries);
    const std::size_t n_train = std::min(train_per_class, entries.size());
    if (n_train == entries.size())
      fail(Err::InvalidConfig,
           "class " + std::to_string(cls) + " has no pixels left for testing");
    for (std::size_t i = 0; i < entries.size(); ++i)
      (i < n_train ? out.train : out.test).push_back(entries[i]);
  }
  return out;
}

}  // namespace hylite
