#include <cstring>
#include <fstream>
#include <map>

#include "hylite/model.hpp"

namespace hylite {

namespace {

void wr_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t rd_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    fail(Err::TruncatedPayload, path + ": short read in checkpoint");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(Err::Io, "cannot open " + path + " for writing");
  std::uint32_t count = 0;
  params.for_each([&count](const std::string&, const Tensor&) { ++count; });
  f.write("HYCK", 4);
  wr_u32(f, 1);
  wr_u32(f, count);
  params.for_each([&f](const std::string& name, const Tensor& t) {
    wr_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    wr_u32(f, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) wr_u32(f, static_cast<std::uint32_t>(d));
    for (double v : t.value()) {
      const float fv = static_cast<float>(v);
      char b[4];
      std::memcpy(b, &fv, 4);
      f.write(b, 4);
    }
  });
  if (!f) fail(Err::Io, "write failed: " + path);
}

void load_checkpoint(ModelParams& params, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Err::Io, "cannot open " + path);
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, "HYCK", 4) != 0)
    fail(Err::BadMagic, path + ": expected magic \"HYCK\"");
  if (rd_u32(f, path) != 1) fail(Err::BadMagic, path + ": unsupported HYCK version");
  const std::uint32_t count = rd_u32(f, path);

  std::map<std::string, std::pair<Shape, std::vector<double>>> stored;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = rd_u32(f, path);
    std::string name(name_len, '\0');
    if (!f.read(name.data(), name_len)) fail(Err::TruncatedPayload, path + ": short tensor name");
    const std::uint32_t ndim = rd_u32(f, path);
    Shape shape(ndim);
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape[d] = rd_u32(f, path);
      n *= shape[d];
    }
    std::vector<double> data(n);
    for (std::size_t j = 0; j < n; ++j) {
      char b[4];
      if (!f.read(b, 4))
        fail(Err::TruncatedPayload, path + ": payload short for tensor " + name);
      float fv;
      std::memcpy(&fv, b, 4);
      data[j] = fv;
    }
    stored.emplace(std::move(name), std::make_pair(std::move(shape), std::move(data)));
  }

  std::size_t used = 0;
  params.for_each([&](const std::string& name, Tensor& t) {
    auto it = stored.find(name);
    if (it == stored.end())
      fail(Err::CheckpointMismatch, path + ": missing tensor " + name);
    if (it->second.first != t.shape())
      fail(Err::CheckpointMismatch, path + ": shape mismatch for " + name);
    auto dst = t.value_mut();
    std::copy(it->second.second.begin(), it->second.second.end(), dst.begin());
    ++used;
  });
  if (used != stored.size())
    fail(Err::CheckpointMismatch,
         path + ": checkpoint holds " + std::to_string(stored.size()) + " tensors, model expects " +
             std::to_string(used));
}

}  // namespace hylite
