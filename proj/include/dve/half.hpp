#pragma once

#include <cstdint>

namespace dve {

/// IEEE 754 binary16 conversion, round-to-nearest-even; overflow goes to inf.
std::uint16_t float_to_half(float value) noexcept;
/// Rounds once from double, so no double-rounding through float.
std::uint16_t double_to_half(double value) noexcept;
float half_to_float(std::uint16_t bits) noexcept;

}  // namespace dve
