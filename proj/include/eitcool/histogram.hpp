#pragma once

// Distribution over the number of excited ions and its shot-noise sampler.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "eitcool/errors.hpp"

namespace eitcool {

struct ExcitationHistogram {
    std::vector<double> probabilities;  // index k = number of excited ions, 0..N
    long shots = 0;                     // 0 for an exact (unsampled) distribution

    int ion_count() const { return static_cast<int>(probabilities.size()) - 1; }

    double mean() const {
        double m = 0.0;
        for (size_t k = 0; k < probabilities.size(); ++k) m += static_cast<double>(k) * probabilities[k];
        return m;
    }

    void validate() const {
        if (probabilities.empty()) throw ConfigError("histogram: no bins");
        double s = 0.0;
        for (double p : probabilities) {
            if (!(p >= 0.0)) throw ConfigError("histogram: negative or non-finite probability");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-9) throw ConfigError("histogram: probabilities do not sum to 1");
        if (shots < 0) throw ConfigError("histogram: negative shot count");
    }
};

/// Uniform double in [0, 1) from the top 53 bits, identical on every platform
/// (std::uniform_real_distribution is not).
inline double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Multinomial sampling of `shots` outcomes by inverse CDF. Small negative
/// round-off in the input is clipped; the input must otherwise sum to 1.
inline ExcitationHistogram histogram_sampler(const std::vector<double>& probabilities, long shots,
                                             std::uint64_t seed) {
    if (shots <= 0) throw ConfigError("histogram sampler: shots must be positive");
    std::vector<double> p(probabilities);
    for (auto& x : p) {
        if (x < -1e-12 || !std::isfinite(x)) throw ConfigError("histogram sampler: invalid probability");
        x = std::max(x, 0.0);
    }
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    if (p.empty() || std::abs(total - 1.0) > 1e-9)
        throw ConfigError("histogram sampler: probabilities must sum to 1");
    std::vector<double> cdf(p.size());
    std::partial_sum(p.begin(), p.end(), cdf.begin());
    for (auto& c : cdf) c /= total;

    std::mt19937_64 rng(seed);
    std::vector<long> counts(p.size(), 0);
    for (long s = 0; s < shots; ++s) {
        const double u = unit_uniform(rng);
        size_t k = 0;
        while (k + 1 < cdf.size() && (u >= cdf[k] || p[k] == 0.0)) ++k;
        ++counts[k];
    }
    ExcitationHistogram h;
    h.shots = shots;
    h.probabilities.resize(p.size());
    for (size_t k = 0; k < p.size(); ++k)
        h.probabilities[k] = static_cast<double>(counts[k]) / static_cast<double>(shots);
    return h;
}

inline ExcitationHistogram histogram_sampler(const ExcitationHistogram& exact, long shots, std::uint64_t seed) {
    return histogram_sampler(exact.probabilities, shots, seed);
}

}  // namespace eitcool
