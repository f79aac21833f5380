#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>

#include "mlt/tensor.hpp"

namespace mlt {

// On-disk tensor layout, all little-endian:
//   "MLT1" | u32 rank | rank x u32 extents | numel x f64 payload
inline constexpr char kTensorMagic[4] = {'M', 'L', 'T', '1'};

void write_tensor(std::ostream& out, const Tensor& t);
/// Throws CorruptFileError on a bad magic or a truncated payload.
Tensor read_tensor(std::istream& in);
/// Encoded size of `t` in bytes.
std::size_t tensor_byte_size(const Tensor& t);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Writes through a sibling temporary file and renames it over `path`, so a
/// failed writer never leaves a partial file behind.
void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer);

}  // namespace mlt
