#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "msfa/seg_probs.hpp"
#include "msfa/tensor.hpp"

// RawTensorFile ("MVTF"): little-endian header followed by a row-major payload.
//
//   offset  size       field
//   0       4          magic "MVTF"
//   4       2          version (u16, = 1)
//   6       1          dtype (0 = f32, 1 = f64)
//   7       1          rank
//   8       4 * rank   dims (u32 each)
//   ...                payload, product(dims) values
namespace msfa::io {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

inline constexpr std::uint16_t kFormatVersion = 1;

std::size_t header_size(std::size_t rank);

// f32 encoding rounds each value to float; round trips are exact only for float-representable data.
std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype = DType::f64);
Tensor decode_tensor(std::span<const std::uint8_t> bytes, DType* dtype_out = nullptr);

void write_tensor(const Tensor& t, const std::filesystem::path& path, DType dtype = DType::f64);
Tensor read_tensor(const std::filesystem::path& path, DType* dtype_out = nullptr);

// Label map {0 background, 1 WT only, 2 TC (non-enhancing core), 3 ET} to cumulative masks:
// WT = label >= 1, TC = label >= 2, ET = label == 3.
SegProbs one_hot_nested(const Tensor& labels);

}  // namespace msfa::io
