#include "msfa/volume_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "msfa/errors.hpp"

namespace msfa::io {
namespace {

constexpr char kMagic[4] = {'M', 'V', 'T', 'F'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return v;
}

}  // namespace

std::size_t header_size(std::size_t rank) { return 8 + 4 * rank; }

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype) {
  if (!t.all_finite()) throw ValueError("write_tensor: tensor contains non-finite values");
  if (t.rank() > 255) throw ShapeError("write_tensor: rank exceeds 255");
  std::vector<std::uint8_t> out;
  const std::size_t width = dtype == DType::f32 ? 4 : 8;
  out.reserve(header_size(t.rank()) + t.size() * width);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_le<std::uint16_t>(out, kFormatVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) {
    if (d > 0xFFFFFFFFULL) throw ShapeError("write_tensor: extent exceeds u32");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (double v : t.data()) {
    if (dtype == DType::f32) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, DType* dtype_out) {
  if (bytes.size() < 8) throw FormatError("MVTF: truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("MVTF: bad magic");
  const auto version = get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kFormatVersion) throw FormatError("MVTF: unsupported version " + std::to_string(version));
  const std::uint8_t dt = bytes[6];
  if (dt > 1) throw FormatError("MVTF: unknown dtype " + std::to_string(dt));
  const auto dtype = static_cast<DType>(dt);
  const std::size_t rank = bytes[7];
  if (bytes.size() < header_size(rank)) throw CorruptionError("MVTF: truncated dims");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) shape[i] = get_le<std::uint32_t>(bytes.data() + 8 + 4 * i);
  const std::size_t n = shape_size(shape);
  const std::size_t width = dtype == DType::f32 ? 4 : 8;
  const std::size_t expected = header_size(rank) + n * width;
  if (bytes.size() != expected) {
    throw CorruptionError("MVTF: payload size " + std::to_string(bytes.size() - header_size(rank)) +
                          " bytes, expected " + std::to_string(n * width));
  }
  std::vector<double> data(n);
  const std::uint8_t* p = bytes.data() + header_size(rank);
  for (std::size_t i = 0; i < n; ++i) {
    if (dtype == DType::f32) {
      data[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i));
    } else {
      data[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * i));
    }
  }
  if (dtype_out) *dtype_out = dtype;
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const Tensor& t, const std::filesystem::path& path, DType dtype) {
  const auto bytes = encode_tensor(t, dtype);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

Tensor read_tensor(const std::filesystem::path& path, DType* dtype_out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes, dtype_out);
}

SegProbs one_hot_nested(const Tensor& labels) {
  SegProbs out{Tensor::like(labels), Tensor::like(labels), Tensor::like(labels)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = labels[i];
    if (!(v == 0.0 || v == 1.0 || v == 2.0 || v == 3.0)) {
      throw ValueError("one_hot_nested: label " + std::to_string(v) + " outside {0,1,2,3}");
    }
    out.wt[i] = v >= 1.0 ? 1.0 : 0.0;
    out.tc[i] = v >= 2.0 ? 1.0 : 0.0;
    out.et[i] = v == 3.0 ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace msfa::io
