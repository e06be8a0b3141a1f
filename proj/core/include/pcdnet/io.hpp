#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "pcdnet/tensor.hpp"

namespace pcdnet {

// Raw tensor format: magic "PCDT", u8 dtype (0 = f32, 1 = f64), u8 rank,
// rank x u64 little-endian dims, then raw little-endian values.
template <typename T>
void write_pcdt(std::ostream& os, const Tensor<T>& t);

// Reads one PCDT record; values stored in the other dtype are converted.
template <typename T>
Tensor<T> read_pcdt(std::istream& is);

template <typename T>
void save_pcdt(const std::filesystem::path& path, const Tensor<T>& t);

template <typename T>
Tensor<T> load_pcdt(const std::filesystem::path& path);

// ASCII PLY export of an [n,3] cloud, one vertex line per point, 6 significant
// digits. A non-finite coordinate is a serialization error naming the point.
template <typename T>
void export_ply(const Tensor<T>& cloud, const std::filesystem::path& path);

template <typename T>
Tensor<T> import_ply(const std::filesystem::path& path);

// Writes content to path via a temp file + rename so readers never observe a
// partial file.
void atomic_write(const std::filesystem::path& path, const std::string& content);

}  // namespace pcdnet
