#include "mlt/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "mlt/errors.hpp"

namespace mlt {

namespace {

template <class UInt>
void put_le(std::ostream& out, UInt value) {
  std::array<char, sizeof(UInt)> bytes;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

template <class UInt>
UInt get_le(std::istream& in) {
  std::array<unsigned char, sizeof(UInt)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw CorruptFileError("tensor stream truncated");
  }
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) value |= static_cast<UInt>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kTensorMagic, sizeof(kTensorMagic));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t extent : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
  for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, sizeof(magic))) throw CorruptFileError("tensor stream truncated before magic");
  if (std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) throw CorruptFileError("bad tensor magic");
  const std::uint32_t rank = get_le<std::uint32_t>(in);
  if (rank > 16) throw CorruptFileError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& extent : shape) {
    extent = get_le<std::uint32_t>(in);
    if (extent == 0) throw CorruptFileError("zero tensor extent");
  }
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  return Tensor(std::move(shape), std::move(data));
}

std::size_t tensor_byte_size(const Tensor& t) { return 4 + 4 + 4 * t.rank() + 8 * t.numel(); }

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  atomic_write(path, [&](std::ostream& out) { write_tensor(out, t); });
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensor(in);
}

void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  try {
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
      writer(out);
      out.flush();
      if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
}

}  // namespace mlt
