#include "landseg/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "landseg/common.hpp"

namespace landseg {

namespace {

constexpr char kMagic[8] = {'L', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot write checkpoint: " + path);
  f.write(kMagic, sizeof(kMagic));
  write_pod(f, kVersion);
  write_pod(f, static_cast<std::uint32_t>(ckpt.tensors.size() + ckpt.blobs.size()));
  auto write_key = [&](const std::string& key) {
    write_pod(f, static_cast<std::uint32_t>(key.size()));
    f.write(key.data(), static_cast<std::streamsize>(key.size()));
  };
  for (const auto& [key, t] : ckpt.tensors) {
    write_key(key);
    write_pod<std::uint8_t>(f, 0);
    write_pod(f, static_cast<std::uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) write_pod(f, static_cast<std::uint32_t>(t.dim(d)));
    f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  for (const auto& [key, blob] : ckpt.blobs) {
    write_key(key);
    write_pod<std::uint8_t>(f, 1);
    write_pod(f, static_cast<std::uint64_t>(blob.size()));
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  if (!f) throw data_error("failed while writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot read checkpoint: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw data_error("not a checkpoint file: " + path);
  const auto version = read_pod<std::uint32_t>(f);
  if (version != kVersion) throw data_error("unsupported checkpoint version in " + path);
  const auto count = read_pod<std::uint32_t>(f);

  Checkpoint out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto key_len = read_pod<std::uint32_t>(f);
    std::string key(key_len, '\0');
    f.read(key.data(), key_len);
    const auto kind = read_pod<std::uint8_t>(f);
    if (kind == 0) {
      const auto ndim = read_pod<std::uint32_t>(f);
      if (ndim == 0 || ndim > 4) throw data_error("bad tensor rank in checkpoint: " + path);
      std::vector<int> shape(ndim);
      for (auto& d : shape) d = static_cast<int>(read_pod<std::uint32_t>(f));
      Tensor t(shape);
      f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
      out.tensors.emplace(std::move(key), std::move(t));
    } else if (kind == 1) {
      const auto size = read_pod<std::uint64_t>(f);
      std::string blob(size, '\0');
      f.read(blob.data(), static_cast<std::streamsize>(size));
      out.blobs.emplace(std::move(key), std::move(blob));
    } else {
      throw data_error("unknown checkpoint entry kind in " + path);
    }
    if (!f) throw data_error("truncated checkpoint: " + path);
  }
  return out;
}

}  // namespace landseg
