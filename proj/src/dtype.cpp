#include "scf/dtype.hpp"

#include <bit>
#include <cmath>
#include <cstring>

namespace scf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts need byte swapping");

namespace {

constexpr std::uint64_t kF64ExpMask = 0x7FFull << 52;
constexpr std::uint64_t kF64MantMask = (1ull << 52) - 1;

// IEEE-style binary format with `E` exponent bits and `M` stored mantissa bits.
template <int E, int M>
struct Minifloat {
    static constexpr int kBias = (1 << (E - 1)) - 1;
    static constexpr std::uint32_t kExpAll = (1u << E) - 1;
    static constexpr std::uint32_t kMantMask = (1u << M) - 1;

    static double decode(std::uint32_t bits) noexcept {
        const bool negative = (bits >> (E + M)) & 1u;
        const std::uint32_t exp = (bits >> M) & kExpAll;
        const std::uint32_t mant = bits & kMantMask;
        if (exp == kExpAll) {
            std::uint64_t out = kF64ExpMask | (static_cast<std::uint64_t>(mant) << (52 - M));
            if (negative) out |= 1ull << 63;
            return std::bit_cast<double>(out);
        }
        double magnitude;
        if (exp == 0) {
            magnitude = std::ldexp(static_cast<double>(mant), 1 - kBias - M);
        } else {
            magnitude = std::ldexp(static_cast<double>(mant | (1u << M)),
                                   static_cast<int>(exp) - kBias - M);
        }
        return negative ? -magnitude : magnitude;
    }

    static std::uint32_t encode(double value) noexcept {
        const std::uint64_t in = std::bit_cast<std::uint64_t>(value);
        const std::uint32_t sign = static_cast<std::uint32_t>(in >> 63) << (E + M);
        if ((in & kF64ExpMask) == kF64ExpMask) {
            std::uint32_t mant = 0;
            if ((in & kF64MantMask) != 0) {
                mant = static_cast<std::uint32_t>((in & kF64MantMask) >> (52 - M));
                if (mant == 0) mant = 1u << (M - 1);
            }
            return sign | (kExpAll << M) | mant;
        }
        const double a = std::fabs(value);
        if (a == 0.0) return sign;

        int e2 = 0;
        std::frexp(a, &e2);
        const int unbiased = e2 - 1;
        const bool subnormal = unbiased < 1 - kBias;
        const int quantum_exp = subnormal ? 1 - kBias - M : unbiased - M;
        // Exact: scaling by a power of two.
        const double scaled = std::ldexp(a, -quantum_exp);
        const auto n = static_cast<std::uint64_t>(std::nearbyint(scaled));

        std::uint64_t bits;
        if (subnormal) {
            bits = n;  // n == 2^M rolls over into the smallest normal
        } else {
            const auto biased = static_cast<std::uint64_t>(unbiased + kBias);
            bits = (biased << M) + (n - (1ull << M));  // mantissa carry bumps the exponent
        }
        if (bits >= (static_cast<std::uint64_t>(kExpAll) << M)) {
            return sign | (kExpAll << M);
        }
        return sign | static_cast<std::uint32_t>(bits);
    }
};

using Half = Minifloat<5, 10>;
using BFloat = Minifloat<8, 7>;
using Single = Minifloat<8, 23>;

}  // namespace

std::size_t byte_width(DType dtype) noexcept {
    switch (dtype) {
        case DType::F64: return 8;
        case DType::F32: return 4;
        case DType::F16:
        case DType::BF16: return 2;
    }
    return 0;
}

std::string_view dtype_name(DType dtype) noexcept {
    switch (dtype) {
        case DType::F64: return "F64";
        case DType::F32: return "F32";
        case DType::F16: return "F16";
        case DType::BF16: return "BF16";
    }
    return "?";
}

std::optional<DType> parse_dtype(std::string_view name) noexcept {
    if (name == "F64") return DType::F64;
    if (name == "F32") return DType::F32;
    if (name == "F16") return DType::F16;
    if (name == "BF16") return DType::BF16;
    return std::nullopt;
}

double decode_f16(std::uint16_t bits) noexcept { return Half::decode(bits); }
double decode_bf16(std::uint16_t bits) noexcept { return BFloat::decode(bits); }
std::uint16_t encode_f16(double value) noexcept {
    return static_cast<std::uint16_t>(Half::encode(value));
}
std::uint16_t encode_bf16(double value) noexcept {
    return static_cast<std::uint16_t>(BFloat::encode(value));
}

double decode_f32(std::uint32_t bits) noexcept {
    const float f = std::bit_cast<float>(bits);
    // Hardware float->double conversion quiets signalling NaNs; keep the payload.
    if (std::isnan(f)) return Single::decode(bits);
    return static_cast<double>(f);
}

std::uint32_t encode_f32(double value) noexcept {
    if (std::isnan(value)) return Single::encode(value);
    return std::bit_cast<std::uint32_t>(static_cast<float>(value));
}

double load_element(DType dtype, const std::byte* src) noexcept {
    switch (dtype) {
        case DType::F64: {
            double v;
            std::memcpy(&v, src, sizeof v);
            return v;
        }
        case DType::F32: {
            std::uint32_t b;
            std::memcpy(&b, src, sizeof b);
            return decode_f32(b);
        }
        case DType::F16: {
            std::uint16_t b;
            std::memcpy(&b, src, sizeof b);
            return decode_f16(b);
        }
        case DType::BF16: {
            std::uint16_t b;
            std::memcpy(&b, src, sizeof b);
            return decode_bf16(b);
        }
    }
    return 0.0;
}

void store_element(DType dtype, double value, std::byte* dst) noexcept {
    switch (dtype) {
        case DType::F64:
            std::memcpy(dst, &value, sizeof value);
            return;
        case DType::F32: {
            const std::uint32_t b = encode_f32(value);
            std::memcpy(dst, &b, sizeof b);
            return;
        }
        case DType::F16: {
            const std::uint16_t b = encode_f16(value);
            std::memcpy(dst, &b, sizeof b);
            return;
        }
        case DType::BF16: {
            const std::uint16_t b = encode_bf16(value);
            std::memcpy(dst, &b, sizeof b);
            return;
        }
    }
}

bool representable(DType dtype, double value) noexcept {
    std::byte buf[8];
    store_element(dtype, value, buf);
    return std::bit_cast<std::uint64_t>(load_element(dtype, buf)) ==
           std::bit_cast<std::uint64_t>(value);
}

}  // namespace scf
