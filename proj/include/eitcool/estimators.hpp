#pragma once

// Phonon-number and rate estimators: sideband ratio, thermal fits to Rabi
// flops and excitation histograms, cooling and heating rate fits, and the
// Ramsey fit used for polarization calibration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "eitcool/constants.hpp"
#include "eitcool/errors.hpp"
#include "eitcool/histogram.hpp"
#include "eitcool/optimize.hpp"
#include "eitcool/sideband.hpp"

namespace eitcool {

struct ThermalDistribution {
    double nbar = 0.0;

    explicit ThermalDistribution(double mean) : nbar(mean) {
        if (!(nbar >= 0.0) || !std::isfinite(nbar)) throw ConfigError("thermal distribution: nbar must be >= 0");
    }

    double ratio() const { return nbar / (nbar + 1.0); }

    double p(int n) const {
        if (n < 0) return 0.0;
        if (nbar == 0.0) return n == 0 ? 1.0 : 0.0;
        return std::exp(n * std::log(ratio())) / (nbar + 1.0);
    }

    /// Probability of n >= cutoff.
    double tail(int cutoff) const {
        if (cutoff <= 0) return 1.0;
        if (nbar == 0.0) return 0.0;
        return std::exp(cutoff * std::log(ratio()));
    }

    /// Smallest cutoff with tail(cutoff) below `tail_budget`.
    int cutoff_for(double tail_budget) const {
        if (nbar == 0.0) return 1;
        return std::max(1, static_cast<int>(std::ceil(std::log(tail_budget) / std::log(ratio()))));
    }

    /// p_0..p_{n_max}.
    std::vector<double> populations(int n_max) const {
        std::vector<double> out(n_max + 1);
        for (int n = 0; n <= n_max; ++n) out[n] = p(n);
        return out;
    }

    /// Distribution of min(n, N): bins 0..N-1 as p_n, bin N absorbs the tail.
    std::vector<double> censored(int ion_count) const {
        std::vector<double> out(ion_count + 1);
        for (int k = 0; k < ion_count; ++k) out[k] = p(k);
        out[ion_count] = tail(ion_count);
        return out;
    }
};

struct FitResult {
    std::vector<std::string> names;
    std::vector<double> values;
    std::vector<double> sigmas;  // 1-sigma, linearized unless bootstrapped
    double residual_norm = 0.0;
    bool converged = false;
    bool low_confidence = false;  // data too short to pin the model
    bool lower_bound = false;     // estimate is a lower bound only
    std::vector<std::string> warnings;

    bool usable() const { return converged; }

    size_t index(std::string_view name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw ConfigError("fit result has no parameter '" + std::string(name) + "'");
    }

    double value(std::string_view name) const {
        if (!converged) throw NumericalError("fit did not converge; '" + std::string(name) + "' is unusable");
        return values[index(name)];
    }

    double sigma(std::string_view name) const { return sigmas[index(name)]; }
};

struct SidebandRatioResult {
    double nbar = 0.0;
    bool single_ion_valid = true;
    std::optional<std::string> warning;
};

/// nbar = p_r / (p_b - p_r). Exact for one ion in a thermal state; for N > 1
/// ions the number is still returned but flagged as not meaningful.
inline SidebandRatioResult sideband_ratio_nbar(double p_red, double p_blue, int ion_count = 1) {
    if (!(p_red >= 0.0) || !(p_blue <= 1.0)) throw ConfigError("sideband ratio: probabilities must lie in [0, 1]");
    if (!(p_red < p_blue))
        throw RegimeError("sideband ratio: p_red >= p_blue, the estimate is undefined (heating or multi-ion artifact)");
    if (ion_count < 1) throw ConfigError("sideband ratio: ion_count must be >= 1");
    SidebandRatioResult r;
    r.nbar = p_red / (p_blue - p_red);
    if (ion_count > 1) {
        r.single_ion_valid = false;
        r.warning = "sideband ratio: formula assumes a single ion; with " + std::to_string(ion_count) +
                    " ions excited collectively the estimate is biased";
    }
    return r;
}

namespace detail {

inline void require_series(const std::vector<double>& t, const std::vector<double>& y, size_t min_points,
                           const char* who) {
    if (t.size() != y.size()) throw ConfigError(std::string(who) + ": time and value series differ in length");
    if (t.size() < min_points)
        throw ConfigError(std::string(who) + ": need at least " + std::to_string(min_points) + " points");
    for (size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t[i]) || !std::isfinite(y[i])) throw ConfigError(std::string(who) + ": non-finite data");
}

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Multi-start simplex on the sum of squares, Levenberg-Marquardt polish,
/// linearized uncertainties. `to_params` maps optimizer coordinates to the
/// reported parameters; uncertainties are computed in the reported ones.
inline FitResult least_squares(const ResidualFn& residuals_opt, const std::vector<Eigen::VectorXd>& starts,
                               const Eigen::VectorXd& step,
                               const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& to_params,
                               const ResidualFn& residuals_params, std::vector<std::string> names) {
    auto cost = [&](const Eigen::VectorXd& x) { return residuals_opt(x).squaredNorm(); };
    optimize::SimplexOptions opt;
    opt.max_evaluations = 6000;
    const auto best = optimize::multi_start(cost, starts, step, opt);
    const Eigen::VectorXd p0 = to_params(best.x);
    const Eigen::VectorXd p = optimize::levenberg_marquardt(residuals_params, p0);
    const Eigen::VectorXd r = residuals_params(p);

    FitResult fr;
    fr.names = std::move(names);
    fr.values.assign(p.data(), p.data() + p.size());
    fr.residual_norm = r.norm();
    fr.converged = p.allFinite() && std::isfinite(fr.residual_norm) &&
                   (best.converged || r.squaredNorm() <= best.value);
    const Eigen::VectorXd s = optimize::linearized_sigma(optimize::numerical_jacobian(residuals_params, p),
                                                         r.squaredNorm());
    fr.sigmas.assign(s.data(), s.data() + s.size());
    return fr;
}

/// Case-resampling bootstrap: refits `fit` on resampled (t, y) pairs and
/// replaces the sigmas with the sample standard deviation of each parameter.
inline void bootstrap_sigmas(FitResult& fr, const std::vector<double>& t, const std::vector<double>& y,
                             int samples, std::uint64_t seed,
                             const std::function<FitResult(const std::vector<double>&, const std::vector<double>&)>& fit) {
    if (samples < 2) return;
    std::mt19937_64 rng(seed);
    const size_t m = t.size();
    std::vector<std::vector<double>> draws(fr.values.size());
    for (int s = 0; s < samples; ++s) {
        std::vector<double> tb(m), yb(m);
        for (size_t i = 0; i < m; ++i) {
            const auto k = static_cast<size_t>(unit_uniform(rng) * static_cast<double>(m));
            tb[i] = t[std::min(k, m - 1)];
            yb[i] = y[std::min(k, m - 1)];
        }
        try {
            const FitResult b = fit(tb, yb);
            if (!b.converged) continue;
            for (size_t j = 0; j < b.values.size(); ++j) draws[j].push_back(b.values[j]);
        } catch (const std::exception&) {
            // degenerate resample (e.g. all times equal); skip it
        }
    }
    for (size_t j = 0; j < draws.size(); ++j) {
        const auto& d = draws[j];
        if (d.size() < 2) continue;
        double mean = 0.0;
        for (double v : d) mean += v;
        mean /= static_cast<double>(d.size());
        double var = 0.0;
        for (double v : d) var += (v - mean) * (v - mean);
        fr.sigmas[j] = std::sqrt(var / static_cast<double>(d.size() - 1));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Thermal fit to sideband Rabi oscillations.

struct RabiFitOptions {
    bool fit_rabi = false;           // also fit the carrier Rabi frequency
    double dephasing_time = 0.0;     // > 0 enables a Gaussian damping exp(-(t/tau)^2) per Fock term
    std::vector<double> sigmas;      // per-point standard errors; empty = unweighted
    int bootstrap_samples = 0;
    std::uint64_t bootstrap_seed = 1;
};

/// P(t) = sum_n p_n sin^2(Omega_n t / 2), Omega_n = rabi eta sqrt(n+1) (blue) or sqrt(n) (red).
inline double thermal_sideband_excitation(double t, double nbar, double eta, double rabi, Sideband side,
                                          double dephasing_time = 0.0) {
    const ThermalDistribution th(nbar);
    const int n_max = std::min(20000, th.cutoff_for(1e-13) + 1);
    const double damp = dephasing_time > 0.0 ? std::exp(-(t / dephasing_time) * (t / dephasing_time)) : 1.0;
    double p = 0.0, pn = 1.0 / (nbar + 1.0);
    const double q = th.ratio();
    for (int n = 0; n <= n_max; ++n) {
        const double k = side == Sideband::blue ? std::sqrt(n + 1.0) : std::sqrt(static_cast<double>(n));
        p += pn * 0.5 * (1.0 - damp * std::cos(rabi * eta * k * t));
        pn *= q;
        if (pn == 0.0) break;
    }
    return p;
}

inline FitResult thermal_fit_rabi(const std::vector<double>& times, const std::vector<double>& excitation,
                                  double eta, double rabi, Sideband side, const RabiFitOptions& opt = {}) {
    detail::require_series(times, excitation, opt.fit_rabi ? 3 : 2, "thermal_fit_rabi");
    if (!(eta > 0.0) || !(rabi > 0.0)) throw ConfigError("thermal_fit_rabi: eta and rabi must be positive");
    if (!opt.sigmas.empty() && opt.sigmas.size() != times.size())
        throw ConfigError("thermal_fit_rabi: sigma vector length mismatch");
    for (double s : opt.sigmas)
        if (!(s > 0.0)) throw ConfigError("thermal_fit_rabi: sigmas must be positive");

    auto fit_core = [&](const std::vector<double>& t, const std::vector<double>& y,
                        const std::vector<double>& w) {
        auto residuals = [&](const Eigen::VectorXd& p) {
            const double nb = std::abs(p[0]);
            const double om = opt.fit_rabi ? p[1] : rabi;
            Eigen::VectorXd r(t.size());
            for (size_t i = 0; i < t.size(); ++i) {
                r[i] = thermal_sideband_excitation(t[i], nb, eta, om, side, opt.dephasing_time) - y[i];
                if (!w.empty()) r[i] /= w[i];
            }
            return r;
        };
        std::vector<Eigen::VectorXd> starts;
        for (double nb0 : {0.05, 0.7, 4.0}) {
            Eigen::VectorXd s(opt.fit_rabi ? 2 : 1);
            s[0] = nb0;
            if (opt.fit_rabi) s[1] = rabi;
            starts.push_back(s);
        }
        Eigen::VectorXd step(opt.fit_rabi ? 2 : 1);
        step[0] = 0.3;
        if (opt.fit_rabi) step[1] = 0.05 * rabi;
        auto identity = [](const Eigen::VectorXd& x) { return x; };
        std::vector<std::string> names{"nbar"};
        if (opt.fit_rabi) names.emplace_back("rabi");
        FitResult fr = detail::least_squares(residuals, starts, step, identity, residuals, names);
        fr.values[0] = std::abs(fr.values[0]);
        return fr;
    };

    FitResult fr = fit_core(times, excitation, opt.sigmas);
    const double t_span = *std::max_element(times.begin(), times.end()) - *std::min_element(times.begin(), times.end());
    const double period = 2.0 * constants::pi / (rabi * eta);
    if (t_span < period) {
        fr.low_confidence = true;
        fr.warnings.emplace_back("thermal_fit_rabi: data span shorter than one sideband oscillation");
    }
    if (opt.bootstrap_samples > 0) {
        // resampled pairs are refitted unweighted
        auto refit = [&](const std::vector<double>& t, const std::vector<double>& y) { return fit_core(t, y, {}); };
        detail::bootstrap_sigmas(fr, times, excitation, opt.bootstrap_samples, opt.bootstrap_seed, refit);
    }
    return fr;
}

// ---------------------------------------------------------------------------
// Thermal fit to an excitation histogram.

/// Maximum-likelihood nbar for a thermal distribution observed through
/// k = min(n, N). The likelihood is q^S (1-q)^M with S = sum_k k h_k and
/// M = sum_{k<N} h_k, so nbar = S / M in closed form. All mass in the k = N
/// bin leaves only a lower bound, reported with `lower_bound` set.
inline FitResult thermal_fit_histogram(const ExcitationHistogram& hist, int ion_count) {
    hist.validate();
    if (ion_count < 1 || hist.ion_count() != ion_count)
        throw ConfigError("thermal_fit_histogram: histogram must have N+1 bins");
    double s = 0.0, m = 0.0;
    for (int k = 0; k <= ion_count; ++k) {
        s += k * hist.probabilities[k];
        if (k < ion_count) m += hist.probabilities[k];
    }
    const double shots = hist.shots > 0 ? static_cast<double>(hist.shots) : 1.0;
    FitResult fr;
    fr.names = {"nbar"};
    fr.converged = true;
    if (m * shots < 0.5) {
        // no shot below k = N: nbar at which one of `shots` outcomes would fall below N
        fr.lower_bound = true;
        const double q = std::pow(1.0 - 1.0 / (shots + 1.0), 1.0 / ion_count);
        fr.values = {q / (1.0 - q)};
        fr.sigmas = {std::numeric_limits<double>::infinity()};
        fr.warnings.emplace_back("thermal_fit_histogram: all mass in the k=N bin, nbar is a lower bound");
        return fr;
    }
    const double nbar = s / m;
    const double q = nbar / (nbar + 1.0);
    double sigma = 0.0;
    if (s > 0.0) {
        const double info = shots * (s / (q * q) + m / ((1.0 - q) * (1.0 - q)));
        sigma = 1.0 / std::sqrt(info) / ((1.0 - q) * (1.0 - q));
    }
    fr.values = {nbar};
    fr.sigmas = {sigma};
    // residual: distance between the data and the fitted censored distribution
    const auto model = ThermalDistribution(nbar).censored(ion_count);
    double rn = 0.0;
    for (int k = 0; k <= ion_count; ++k) rn += (model[k] - hist.probabilities[k]) * (model[k] - hist.probabilities[k]);
    fr.residual_norm = std::sqrt(rn);
    return fr;
}

// ---------------------------------------------------------------------------
// Cooling-rate fit, n(t) = A exp(-R t) + n_eq, least squares on log n.

struct CoolingFitOptions {
    double floor = 1e-3;  // phonons; values below are raised to it before the log
    int bootstrap_samples = 0;
    std::uint64_t bootstrap_seed = 1;
};

inline FitResult cooling_rate_fit(const std::vector<double>& times, const std::vector<double>& nbar,
                                  const CoolingFitOptions& opt = {}) {
    detail::require_series(times, nbar, 4, "cooling_rate_fit");
    for (double n : nbar)
        if (!(n > 0.0)) throw ConfigError("cooling_rate_fit: mean phonon numbers must be positive for the log transform");
    if (!(opt.floor > 0.0)) throw ConfigError("cooling_rate_fit: floor must be positive");

    auto fit_once = [&](const std::vector<double>& t, const std::vector<double>& y) {
        const double t0 = *std::min_element(t.begin(), t.end());
        const double span = *std::max_element(t.begin(), t.end()) - t0;
        if (!(span > 0.0)) throw ConfigError("cooling_rate_fit: all times are equal");
        const double scale = *std::max_element(y.begin(), y.end());
        std::vector<double> logy(y.size());
        for (size_t i = 0; i < y.size(); ++i) logy[i] = std::log(std::max(y[i], opt.floor));

        // parameters (R, A, n_eq); A refers to t = 0
        auto residuals = [&](const Eigen::VectorXd& p) {
            Eigen::VectorXd r(t.size());
            for (size_t i = 0; i < t.size(); ++i) {
                const double model = p[1] * std::exp(-p[0] * t[i]) + p[2];
                r[i] = std::log(std::max(model, opt.floor)) - logy[i];
            }
            return r;
        };
        // optimizer coordinates: (R span, A exp(-R t0) / scale, n_eq / scale)
        auto to_params = [&](const Eigen::VectorXd& x) {
            Eigen::VectorXd p(3);
            p[0] = std::abs(x[0]) / span;
            p[1] = x[1] * scale * std::exp(p[0] * t0);
            p[2] = x[2] * scale;
            return p;
        };
        auto residuals_opt = [&](const Eigen::VectorXd& x) { return residuals(to_params(x)); };

        const double tail = *std::min_element(y.begin(), y.end()) / scale;
        std::vector<Eigen::VectorXd> starts;
        for (double rs : {1.0, 4.0, 15.0}) starts.push_back(Eigen::Vector3d(rs, 1.0, 0.5 * tail));
        FitResult fr = detail::least_squares(residuals_opt, starts, Eigen::Vector3d(0.5, 0.2, 0.05), to_params,
                                             residuals, {"rate", "amplitude", "n_eq"});
        fr.values[0] = std::abs(fr.values[0]);
        return fr;
    };

    FitResult fr = fit_once(times, nbar);
    if (opt.bootstrap_samples > 0) detail::bootstrap_sigmas(fr, times, nbar, opt.bootstrap_samples, opt.bootstrap_seed, fit_once);
    return fr;
}

// ---------------------------------------------------------------------------
// Heating-rate fit, n(t) = n0 + rate t, ordinary least squares.

inline FitResult heating_rate_fit(const std::vector<double>& wait_times, const std::vector<double>& nbar) {
    detail::require_series(wait_times, nbar, 3, "heating_rate_fit");
    const auto m = static_cast<Eigen::Index>(wait_times.size());
    Eigen::MatrixXd x(m, 2);
    Eigen::VectorXd y(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        x(i, 0) = 1.0;
        x(i, 1) = wait_times[i];
        y[i] = nbar[i];
    }
    // centre the time column so the rank test is scale free
    const double tmean = x.col(1).mean();
    Eigen::MatrixXd xc = x;
    xc.col(1).array() -= tmean;
    const double sxx = xc.col(1).squaredNorm();
    const double tscale = std::max(1.0, x.col(1).cwiseAbs().maxCoeff());
    if (!(sxx > 1e-24 * tscale * tscale * static_cast<double>(m)))
        throw ConfigError("heating_rate_fit: rank-deficient design, all wait times are equal");

    const double slope = xc.col(1).dot(y) / sxx;
    const double ymean = y.mean();
    const double intercept = ymean - slope * tmean;
    const Eigen::VectorXd r = y - (intercept + slope * x.col(1).array()).matrix();
    const double rss = r.squaredNorm();
    const double s2 = m > 2 ? rss / static_cast<double>(m - 2) : 0.0;

    FitResult fr;
    fr.names = {"rate", "intercept"};
    fr.values = {slope, intercept};
    fr.sigmas = {std::sqrt(s2 / sxx), std::sqrt(s2 * (1.0 / static_cast<double>(m) + tmean * tmean / sxx))};
    fr.residual_norm = std::sqrt(rss);
    fr.converged = true;
    return fr;
}

// ---------------------------------------------------------------------------
// Ramsey signal 0.5 + 0.5 exp(-t/tau) sin(shift t).

inline double ramsey_signal(double t, double shift, double decay_rate) {
    return 0.5 + 0.5 * std::exp(-decay_rate * t) * std::sin(shift * t);
}

/// Fits shift (rad/s) and decay rate (1/s). The shift is bracketed by a grid
/// scan up to the Nyquist frequency of the sampling before the local fit.
inline FitResult ramsey_fit(const std::vector<double>& times, const std::vector<double>& signal) {
    detail::require_series(times, signal, 4, "ramsey_fit");
    const double tmax = *std::max_element(times.begin(), times.end());
    if (!(tmax > 0.0)) throw ConfigError("ramsey_fit: need positive durations");
    std::vector<double> sorted(times);
    std::sort(sorted.begin(), sorted.end());
    double dt = tmax;
    for (size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i] > sorted[i - 1]) dt = std::min(dt, sorted[i] - sorted[i - 1]);
    const double nyquist = constants::pi / dt;

    auto residuals = [&](const Eigen::VectorXd& p) {
        Eigen::VectorXd r(times.size());
        for (size_t i = 0; i < times.size(); ++i)
            r[i] = ramsey_signal(times[i], p[0], std::abs(p[1])) - signal[i];
        return r;
    };
    // coarse scan of the shift (both signs) with a few decay rates
    double best_shift = 0.0, best_decay = 0.0, best_cost = std::numeric_limits<double>::infinity();
    const int grid = 400;
    for (int i = -grid; i <= grid; ++i) {
        const double w = nyquist * i / grid;
        for (double g : {0.0, 0.3 / tmax, 1.0 / tmax, 3.0 / tmax}) {
            const double c = residuals(Eigen::Vector2d(w, g)).squaredNorm();
            if (c < best_cost) {
                best_cost = c;
                best_shift = w;
                best_decay = g;
            }
        }
    }
    // optimizer coordinates are (shift tmax, decay tmax)
    auto to_params = [&](const Eigen::VectorXd& x) {
        Eigen::VectorXd p(2);
        p[0] = x[0] / tmax;
        p[1] = std::abs(x[1]) / tmax;
        return p;
    };
    auto residuals_opt = [&](const Eigen::VectorXd& x) { return residuals(to_params(x)); };
    const double step0 = nyquist * tmax / grid;
    std::vector<Eigen::VectorXd> starts;
    for (double f : {-1.0, 0.0, 1.0})
        starts.push_back(Eigen::Vector2d(best_shift * tmax + f * 0.5 * step0, best_decay * tmax + 0.1));
    FitResult fr = detail::least_squares(residuals_opt, starts, Eigen::Vector2d(0.5 * step0, 0.2), to_params, residuals,
                                         {"shift", "decay_rate"});
    fr.values[1] = std::abs(fr.values[1]);
    return fr;
}

}  // namespace eitcool
