#include "pcdnet/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace pcdnet {
namespace {

constexpr char kMagic[4] = {'P', 'C', 'D', 'T'};

template <typename T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 0 : 1;
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

template <typename T>
void write_pcdt(std::ostream& os, const Tensor<T>& t) {
  os.write(kMagic, 4);
  const std::uint8_t dtype = dtype_code<T>();
  const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
  os.put(static_cast<char>(dtype));
  os.put(static_cast<char>(rank));
  for (std::size_t d : t.shape()) write_u64(os, d);
  os.write(reinterpret_cast<const char*>(t.values().data()),
           static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!os) throw IoError("pcdt: write failed");
}

template <typename T>
Tensor<T> read_pcdt(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("pcdt: bad magic");
  }
  const int dtype = is.get();
  const int rank = is.get();
  if (dtype < 0 || dtype > 1 || rank < 0) throw IoError("pcdt: bad header");
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& d : shape) d = static_cast<std::size_t>(read_u64(is));
  const std::size_t n = shape_size(shape);

  const auto read_values = [&](auto tag) {
    using S = decltype(tag);
    std::vector<S> raw(n);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(S)));
    if (!is) throw IoError("pcdt: truncated data");
    return raw;
  };

  std::vector<T> values(n);
  if (dtype == dtype_code<T>()) {
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(n * sizeof(T)));
    if (!is) throw IoError("pcdt: truncated data");
  } else if (dtype == 0) {
    auto raw = read_values(float{});
    for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<T>(raw[i]);
  } else {
    auto raw = read_values(double{});
    for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<T>(raw[i]);
  }
  return Tensor<T>(std::move(shape), std::move(values));
}

template <typename T>
void save_pcdt(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ostringstream ss(std::ios::binary);
  write_pcdt(ss, t);
  atomic_write(path, ss.str());
}

template <typename T>
Tensor<T> load_pcdt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("pcdt: cannot open " + path.string());
  return read_pcdt<T>(is);
}

template <typename T>
void export_ply(const Tensor<T>& cloud, const std::filesystem::path& path) {
  if (cloud.rank() != 2 || cloud.extent(1) != 3) {
    throw DimensionError("ply: cloud " + shape_str(cloud.shape()) + ", expected (n,3)");
  }
  const std::size_t n = cloud.extent(0);
  const T* p = cloud.values().data();
  std::string out;
  out.reserve(64 + n * 24);
  out += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(n) +
         "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  char line[96];
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(p[i * 3]);
    const double y = static_cast<double>(p[i * 3 + 1]);
    const double z = static_cast<double>(p[i * 3 + 2]);
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
      throw IoError("ply: non-finite coordinate at point " + std::to_string(i));
    }
    std::snprintf(line, sizeof(line), "%.6g %.6g %.6g\n", x, y, z);
    out += line;
  }
  atomic_write(path, out);
}

template <typename T>
Tensor<T> import_ply(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("ply: cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  bool saw_magic = false, in_header = true;
  while (in_header && std::getline(is, line)) {
    if (!saw_magic) {
      if (line != "ply") throw IoError("ply: missing magic line in " + path.string());
      saw_magic = true;
      continue;
    }
    if (line.rfind("element vertex ", 0) == 0) {
      n = static_cast<std::size_t>(std::stoull(line.substr(15)));
    } else if (line == "end_header") {
      in_header = false;
    }
  }
  if (in_header) throw IoError("ply: header not terminated in " + path.string());
  std::vector<T> values(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    double x, y, z;
    if (!(is >> x >> y >> z)) {
      throw IoError("ply: truncated vertex list at point " + std::to_string(i));
    }
    values[i * 3] = static_cast<T>(x);
    values[i * 3 + 1] = static_cast<T>(y);
    values[i * 3 + 2] = static_cast<T>(z);
  }
  return Tensor<T>({n, 3}, std::move(values));
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

#define PCDNET_INSTANTIATE_IO(T)                                          \
  template void write_pcdt<T>(std::ostream&, const Tensor<T>&);           \
  template Tensor<T> read_pcdt<T>(std::istream&);                         \
  template void save_pcdt<T>(const std::filesystem::path&, const Tensor<T>&); \
  template Tensor<T> load_pcdt<T>(const std::filesystem::path&);          \
  template void export_ply<T>(const Tensor<T>&, const std::filesystem::path&); \
  template Tensor<T> import_ply<T>(const std::filesystem::path&);

PCDNET_INSTANTIATE_IO(float)
PCDNET_INSTANTIATE_IO(double)

#undef PCDNET_INSTANTIATE_IO

}  // namespace pcdnet
