#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace scf {

// Storage dtypes understood by the checkpoint container. Computation always
// happens in f64; these only describe how values sit on disk.
enum class DType : std::uint8_t { F64, F32, F16, BF16 };

std::size_t byte_width(DType dtype) noexcept;
std::string_view dtype_name(DType dtype) noexcept;
std::optional<DType> parse_dtype(std::string_view name) noexcept;

// Bit-level half-precision codecs. Decoding is exact (every f16/bf16 value,
// including NaN payloads, is representable in f64). Encoding rounds to
// nearest-even, saturating to infinity on overflow.
double decode_f16(std::uint16_t bits) noexcept;
double decode_bf16(std::uint16_t bits) noexcept;
std::uint16_t encode_f16(double value) noexcept;
std::uint16_t encode_bf16(double value) noexcept;

double decode_f32(std::uint32_t bits) noexcept;
std::uint32_t encode_f32(double value) noexcept;

// Reads / writes one little-endian element of the given dtype.
double load_element(DType dtype, const std::byte* src) noexcept;
void store_element(DType dtype, double value, std::byte* dst) noexcept;

// True when `value` survives a trip through `dtype` unchanged (bitwise).
bool representable(DType dtype, double value) noexcept;

}  // namespace scf
