#pragma once

#include <array>
#include <string>

#include <boost/multiprecision/cpp_bin_float.hpp>

namespace diqre {

// 50 significant decimal digits; used for feasibility checks and stored factors.
using HighPrec = boost::multiprecision::cpp_bin_float_50;

HighPrec parse_decimal(const std::string& text);
std::string format_decimal(const HighPrec& value, int digits = 40);

template <std::size_t N>
std::array<HighPrec, N> to_highprec(const std::array<double, N>& v) {
    std::array<HighPrec, N> out;
    for (std::size_t i = 0; i < N; ++i) out[i] = HighPrec(v[i]);
    return out;
}

}  // namespace diqre
