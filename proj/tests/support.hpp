#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "eitcool/constants.hpp"
#include "eitcool/histogram.hpp"

namespace eitcool::testing {

inline double mhz(double f) { return constants::angular(f * 1e6); }
inline double khz(double f) { return constants::angular(f * 1e3); }

/// Box-Muller on the portable uniform, so noisy fixtures are identical everywhere.
inline double standard_normal(std::mt19937_64& rng) {
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = unit_uniform(rng);
    const double u2 = unit_uniform(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(constants::two_pi * u2);
}

inline std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = n == 1 ? a : a + (b - a) * i / (n - 1);
    return v;
}

struct Moments {
    double mean = 0.0;
    double sd = 0.0;
};

inline Moments moments(const std::vector<double>& x) {
    Moments m;
    for (double v : x) m.mean += v;
    m.mean /= static_cast<double>(x.size());
    for (double v : x) m.sd += (v - m.mean) * (v - m.mean);
    m.sd = std::sqrt(m.sd / static_cast<double>(x.size() - 1));
    return m;
}

}  // namespace eitcool::testing
