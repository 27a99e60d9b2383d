#pragma once

// The command-line workflows. Each command computes everything in memory and
// returns its tables; the caller writes them only after success.

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "eitcool/chain_mechanics.hpp"
#include "eitcool/collective_dynamics.hpp"
#include "eitcool/config.hpp"
#include "eitcool/csv.hpp"
#include "eitcool/eit_rate_model.hpp"
#include "eitcool/estimators.hpp"
#include "eitcool/lindblad_engine.hpp"

namespace eitcool::cli {

inline constexpr const char* version = "1.0.0";

struct RunOptions {
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string fit_model;  // overrides fit.model
    std::string fit_data;   // overrides fit.data
};

struct CommandResult {
    std::vector<csv::Table> tables;
    std::string report;
};

namespace detail {

using config::ExperimentConfig;
using csv::format;

inline double hz(double omega) { return constants::cyclic(omega); }

template <class T>
const T& require(const std::optional<T>& block, const char* section, const char* command) {
    if (!block) throw ConfigError(std::string(command) + " needs a '" + section + "' section in the config");
    return *block;
}

struct DynamicsMode {
    double frequency = 0.0;
    double eta = 0.0;
    std::string label;
};

inline DynamicsMode resolve_dynamics_mode(const ExperimentConfig& cfg) {
    const auto& d = *cfg.dynamics;
    DynamicsMode m;
    if (d.branch) {
        const ModeSet set = compute_modes(*cfg.trap, cfg.geometry);
        const Mode* mode = set.branch(*d.branch).at(d.mode_index);
        m.frequency = mode->frequency;
        m.eta = std::sqrt(mode->lamb_dicke.squaredNorm());
        m.label = std::string(branch_name(mode->branch)) + "_" + std::to_string(mode->index);
    } else {
        m.eta = *d.eta;
        m.frequency = d.mode_frequency.value_or(light_shift(*cfg.beams));
        m.label = d.mode_frequency ? "given" : "light_shift";
    }
    if (!(m.frequency > 0.0)) throw ConfigError("dynamics: mode frequency must be positive");
    return m;
}

inline double effective_eta(const std::vector<double>& eta) {
    double s = 0.0;
    for (double e : eta) s += e * e;
    return std::sqrt(s);
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline CommandResult cmd_modes(const config::ExperimentConfig& cfg, const RunOptions&) {
    const auto& trap = detail::require(cfg.trap, "trap", "modes");
    ModeSet set = normal_modes(trap, equilibrium_positions(trap));
    if (cfg.has_geometry) set = lamb_dicke_factors(std::move(set), cfg.geometry, trap);

    CommandResult r;
    std::vector<std::string> columns{"branch", "mode_index", "freq_hz"};
    for (int i = 1; i <= trap.ion_count; ++i) columns.push_back("b_" + std::to_string(i));
    for (int i = 1; i <= trap.ion_count; ++i) columns.push_back("eta_" + std::to_string(i));
    csv::Table t{"modes.csv", columns, {}};
    std::ostringstream rep;
    rep << "modes: " << trap.ion_count << " ions\n";
    for (Branch b : all_branches) {
        const auto modes = set.branch(b);
        double lo = modes.front()->frequency, hi = lo;
        for (const Mode* m : modes) {
            lo = std::min(lo, m->frequency);
            hi = std::max(hi, m->frequency);
            std::vector<std::string> row{std::string(branch_name(b)), std::to_string(m->index),
                                         detail::format(detail::hz(m->frequency))};
            for (int i = 0; i < trap.ion_count; ++i) row.push_back(detail::format(m->participation(i)));
            for (int i = 0; i < trap.ion_count; ++i)
                row.push_back(m->lamb_dicke.size() ? detail::format(m->lamb_dicke(i)) : "nan");
            t.add(std::move(row));
        }
        rep << "  " << branch_name(b) << ": " << modes.size() << " modes, " << detail::format(detail::hz(lo) / 1e6)
            << " to " << detail::format(detail::hz(hi) / 1e6) << " MHz, spread "
            << detail::format(detail::hz(hi - lo) / 1e6) << " MHz\n";
    }
    r.tables.push_back(std::move(t));
    r.report = rep.str();
    return r;
}

inline CommandResult cmd_cooling_range(const config::ExperimentConfig& cfg, const RunOptions&) {
    const auto& beams = detail::require(cfg.beams, "beams", "cooling-range");
    const auto& block = detail::require(cfg.cooling_range, "cooling_range", "cooling-range");
    std::vector<double> omegas(block.points);
    for (int i = 0; i < block.points; ++i)
        omegas[i] = block.from + (block.to - block.from) * i / (block.points - 1);
    const auto scan = cooling_range_scan(beams, block.eta, omegas);

    CommandResult r;
    csv::Table t{"cooling_range.csv", {"omega_hz", "a_plus", "a_minus", "nbar_ss", "rate_per_s", "status"}, {}};
    int heating = 0;
    double best_nbar = std::numeric_limits<double>::infinity(), best_at = 0.0;
    for (const auto& p : scan) {
        t.add({detail::format(detail::hz(p.omega)), detail::format(p.coefficients.a_plus),
               detail::format(p.coefficients.a_minus), detail::format(p.nbar_ss), detail::format(p.rate),
               status_name(p.status)});
        if (p.status == ModeStatus::heating) ++heating;
        if (p.status == ModeStatus::ok && p.nbar_ss < best_nbar) {
            best_nbar = p.nbar_ss;
            best_at = p.omega;
        }
    }
    std::ostringstream rep;
    rep << "cooling-range: light shift " << detail::format(detail::hz(light_shift(beams)) / 1e6) << " MHz, "
        << scan.size() << " points, " << heating << " in the heating regime\n";
    if (std::isfinite(best_nbar))
        rep << "  lowest nbar_ss " << detail::format(best_nbar) << " at " << detail::format(detail::hz(best_at) / 1e6)
            << " MHz\n";
    r.tables.push_back(std::move(t));
    r.report = rep.str();
    return r;
}

inline CommandResult cmd_dynamics(const config::ExperimentConfig& cfg, const RunOptions&) {
    const auto& beams = detail::require(cfg.beams, "beams", "dynamics");
    const auto& d = detail::require(cfg.dynamics, "dynamics", "dynamics");
    const auto mode = detail::resolve_dynamics_mode(cfg);
    const auto times = linear_time_grid(d.duration, d.points);
    const auto rc = rate_coefficients(beams, mode.frequency);
    const double rate = cooling_rate(mode.eta, rc);
    const double heating = mode.eta * mode.eta * rc.a_plus + d.heating_rate;

    const bool want_rate = d.model != "lindblad";
    const bool want_lindblad = d.model != "rate";
    std::vector<double> n_rate, n_lindblad;
    if (want_rate) {
        n_rate = rate > 0.0 ? evolve_nbar(d.initial_nbar, rate, heating, times).nbar.front()
                            : integrate_nbar(
                                  d.initial_nbar, [&](double) { return rate; }, [&](double) { return heating; }, times)
                                  .nbar.front();
    }
    std::ostringstream rep;
    rep << "dynamics: mode " << mode.label << " at " << detail::format(detail::hz(mode.frequency) / 1e6)
        << " MHz, eta " << detail::format(mode.eta) << "\n";
    rep << "  rate model: R = " << detail::format(rate) << " 1/s";
    if (rc.cools()) rep << ", nbar_ss = " << detail::format(heating / rate);
    else rep << " (heating regime)";
    rep << "\n";
    if (want_lindblad) {
        LambdaSystem sys;
        sys.beams = beams;
        sys.fock_cutoff = d.fock_cutoff;
        sys.eta_total = mode.eta;
        sys.mode_frequency = mode.frequency;
        IntegratorOptions opt;
        opt.relative_tolerance = d.relative_tolerance;
        const auto res = simulate_eit_cooling(sys, d.initial_nbar, times, opt);
        n_lindblad = res.trajectory.nbar.front();
        rep << "  master equation: final nbar = " << detail::format(n_lindblad.back()) << " after " << res.steps
            << " steps\n";
        const auto fit = cooling_rate_fit(times, n_lindblad);
        if (fit.usable())
            rep << "  fitted rate " << detail::format(fit.value("rate")) << " +- " << detail::format(fit.sigma("rate"))
                << " 1/s\n";
    }

    CommandResult r;
    csv::Table t{"dynamics.csv", {"time_s"}, {}};
    if (want_rate) t.columns.push_back("nbar_rate_model");
    if (want_lindblad) t.columns.push_back("nbar_master_equation");
    for (size_t i = 0; i < times.size(); ++i) {
        std::vector<std::string> row{detail::format(times[i])};
        if (want_rate) row.push_back(detail::format(n_rate[i]));
        if (want_lindblad) row.push_back(detail::format(n_lindblad[i]));
        t.add(std::move(row));
    }
    r.tables.push_back(std::move(t));
    r.report = rep.str();
    return r;
}

inline CommandResult cmd_spectrum(const config::ExperimentConfig& cfg, const RunOptions& run) {
    const auto& s = detail::require(cfg.spectrum, "spectrum", "spectrum");
    const auto modes = config::resolve_coupling(s.coupling, cfg.trap);
    std::vector<double> grid(s.points);
    for (int i = 0; i < s.points; ++i)
        grid[i] = s.points == 1 ? 0.0 : -0.5 * s.span + s.span * i / (s.points - 1);

    CommandResult r;
    csv::Table t{"spectrum.csv", {"side", "mode", "mode_frequency_hz", "detuning_hz", "mean_excited_fraction"}, {}};
    std::ostringstream rep;
    for (const auto& m : modes) {
        const int ions = static_cast<int>(m.eta.size());
        const double eta_eff = detail::effective_eta(m.eta);
        if (!(eta_eff > 0.0)) throw ConfigError("spectrum: mode " + m.label + " does not couple to the probe");
        const double pulse = s.pulse_time.value_or(constants::pi / (s.rabi * eta_eff));
        SpectrumOptions opt;
        opt.truncation = s.truncation;
        opt.threads = run.threads;
        double peak[2] = {0.0, 0.0};
        for (Sideband side : s.sides) {
            opt.side = side;
            const auto scan = sideband_spectrum(ions, m.eta, s.nbar, s.rabi, pulse, grid, opt);
            for (size_t j = 0; j < grid.size(); ++j)
                t.add({sideband_name(side), m.label, detail::format(detail::hz(m.frequency)),
                       detail::format(detail::hz(grid[j])), detail::format(scan.excited_fraction[j])});
            peak[side == Sideband::red ? 0 : 1] =
                *std::max_element(scan.excited_fraction.begin(), scan.excited_fraction.end());
        }
        rep << "spectrum: mode " << m.label << ", " << ions << " ions, pulse " << detail::format(pulse * 1e6)
            << " us\n";
        if (s.sides.size() == 2) {
            rep << "  peak red " << detail::format(peak[0]) << ", blue " << detail::format(peak[1]);
            if (peak[0] < peak[1]) {
                const auto est = sideband_ratio_nbar(peak[0], peak[1], ions);
                rep << ", ratio estimate nbar " << detail::format(est.nbar) << " (true " << detail::format(s.nbar)
                    << ")";
                if (est.warning) rep << "\n  warning: " << *est.warning;
            }
            rep << "\n";
        }
    }
    r.tables.push_back(std::move(t));
    r.report = rep.str();
    return r;
}

inline CommandResult cmd_rap(const config::ExperimentConfig& cfg, const RunOptions& run) {
    const auto& b = detail::require(cfg.rap, "rap", "rap");
    const auto modes = config::resolve_coupling(b.coupling, cfg.trap);
    if (modes.size() != 1) throw ConfigError("rap: the coupling must select a single mode");
    const auto& eta = modes.front().eta;
    const int ions = static_cast<int>(eta.size());

    RapTransferOptions opt;
    opt.side = b.side;
    opt.start = b.start;
    opt.threads = run.threads;
    opt.integration.tolerance = b.tolerance;
    const auto phonons = b.nbar ? truncated_thermal(*b.nbar) : b.phonon_distribution;
    const auto result = rap_transfer(ions, eta, b.sweep, phonons, opt);
    const auto sampled = histogram_sampler(result.histogram, b.shots, run.seed);
    const int n_max = b.fidelity_n_max > 0 ? b.fidelity_n_max : ions;
    const auto fidelity = rap_fidelity_map(ions, eta, b.sweep, n_max, opt);

    CommandResult r;
    csv::Table h{"rap_histogram.csv", {"k_excited", "probability", "sampled_probability"}, {}};
    for (int k = 0; k <= ions; ++k)
        h.add({std::to_string(k), detail::format(result.histogram.probabilities[k]),
               detail::format(sampled.probabilities[k])});
    csv::Table f{"rap_fidelity.csv", {"n", "fidelity"}, {}};
    for (int n = 0; n <= n_max; ++n) f.add({std::to_string(n), detail::format(fidelity[n])});

    std::ostringstream rep;
    rep << "rap: mode " << modes.front().label << ", " << ions << " ions, " << start_state_name(b.start)
        << " start on the " << sideband_name(b.side) << " sideband\n";
    rep << "  mean excited " << detail::format(result.histogram.mean()) << ", mean transferred "
        << detail::format(result.mean_transferred(b.start)) << " of " << ions << "\n";
    rep << "  " << b.shots << " shots sampled with seed " << run.seed << ": mean excited "
        << detail::format(sampled.mean()) << "\n";
    if (b.start == StartState::ground && b.side == Sideband::red) {
        const auto fit = thermal_fit_histogram(sampled, ions);
        if (fit.usable())
            rep << "  thermal fit of the sampled histogram: nbar " << detail::format(fit.value("nbar")) << " +- "
                << detail::format(fit.sigma("nbar")) << (fit.lower_bound ? " (lower bound)" : "") << "\n";
    }
    r.tables.push_back(std::move(h));
    r.tables.push_back(std::move(f));
    r.report = rep.str();
    return r;
}

inline CommandResult cmd_fit(const config::ExperimentConfig* cfg, const RunOptions& run) {
    config::FitBlock b;
    if (cfg && cfg->fit) b = *cfg->fit;
    if (!run.fit_model.empty()) b.model = run.fit_model;
    if (!run.fit_data.empty()) b.data = run.fit_data;
    if (b.model.empty()) throw ConfigError("fit: no model given (use --model)");
    if (b.data.empty()) throw ConfigError("fit: no data file given (use --data)");
    const auto cols = csv::read_numeric_columns(b.data, 2);
    const auto& x = cols[0];
    const auto& y = cols[1];

    FitResult fit;
    if (b.model == "cooling") {
        fit = cooling_rate_fit(x, y);
    } else if (b.model == "heating") {
        fit = heating_rate_fit(x, y);
    } else if (b.model == "ramsey") {
        fit = ramsey_fit(x, y);
    } else if (b.model == "rabi") {
        if (!(b.eta > 0.0) || !(b.rabi > 0.0)) throw ConfigError("fit: rabi model needs fit.eta and fit.rabi");
        fit = thermal_fit_rabi(x, y, b.eta, b.rabi, b.side);
    } else if (b.model == "histogram") {
        // columns: k, counts
        ExcitationHistogram h;
        const int ions = static_cast<int>(*std::max_element(x.begin(), x.end()));
        if (ions < 1) throw ConfigError("fit: histogram needs at least bins 0 and 1");
        h.probabilities.assign(ions + 1, 0.0);
        double total = 0.0;
        for (size_t i = 0; i < x.size(); ++i) {
            if (x[i] < 0 || x[i] != std::floor(x[i]) || y[i] < 0)
                throw ConfigError("fit: histogram rows must be (k >= 0, count >= 0)");
            h.probabilities[static_cast<size_t>(x[i])] += y[i];
            total += y[i];
        }
        if (!(total > 0.0)) throw ConfigError("fit: histogram has no counts");
        for (double& p : h.probabilities) p /= total;
        h.shots = static_cast<long>(std::llround(total));
        fit = thermal_fit_histogram(h, ions);
    } else {
        throw ConfigError("fit: unknown model '" + b.model + "' (cooling, heating, rabi, histogram, ramsey)");
    }
    if (!fit.converged) throw NumericalError("fit: " + b.model + " fit did not converge");

    CommandResult r;
    csv::Table t{"fit.csv", {"parameter", "value", "sigma"}, {}};
    std::ostringstream rep;
    rep << "fit: " << b.model << " model, " << x.size() << " points from " << b.data << "\n";
    for (size_t i = 0; i < fit.names.size(); ++i) {
        t.add({fit.names[i], detail::format(fit.values[i]), detail::format(fit.sigmas[i])});
        rep << "  " << fit.names[i] << " = " << detail::format(fit.values[i]) << " +- "
            << detail::format(fit.sigmas[i]) << "\n";
    }
    rep << "  residual norm " << detail::format(fit.residual_norm) << "\n";
    if (fit.low_confidence) rep << "  low confidence: data span too short for this model\n";
    if (fit.lower_bound) rep << "  lower bound only: all mass in the top bin\n";
    for (const auto& w : fit.warnings) rep << "  warning: " << w << "\n";
    r.tables.push_back(std::move(t));
    r.report = rep.str();
    return r;
}

/// Resolved physical parameters, printed by --dry-run.
inline std::string describe(const config::ExperimentConfig& cfg, const std::string& command) {
    std::ostringstream o;
    auto mhz = [](double w) { return detail::format(detail::hz(w) / 1e6) + " MHz"; };
    o << "command: " << command << "\nconfig: " << cfg.path << " (fnv1a " << config::hex64(cfg.hash()) << ")\n";
    if (cfg.trap) {
        const auto& t = *cfg.trap;
        o << "trap: " << t.ion_count << " ions of " << detail::format(t.ion_mass_u) << " u, axial "
          << mhz(t.omega_axial) << ", radial " << mhz(t.omega_radial_1) << " / " << mhz(t.omega_radial_2) << "\n";
        if (cfg.has_geometry) {
            const auto set = compute_modes(t, cfg.geometry);
            for (const auto& m : set.modes)
                o << "  mode " << branch_name(m.branch) << "_" << m.index << ": " << mhz(m.frequency) << ", eta "
                  << detail::format(m.eta_com_equivalent) << "\n";
        }
    }
    if (cfg.beams) {
        const auto& b = *cfg.beams;
        o << "beams: omega_sigma " << mhz(b.omega_sigma) << ", omega_pi " << mhz(b.omega_pi) << ", delta "
          << mhz(b.delta) << ", delta_pi " << mhz(b.delta_pi) << ", gamma " << mhz(b.gamma) << "\n";
        o << "  light shift delta = " << mhz(light_shift(b)) << "\n";
        for (const auto& w : b.warnings()) o << "  warning: " << w << "\n";
    }
    auto coupling = [&](const config::CouplingSpec& c) {
        for (const auto& m : config::resolve_coupling(c, cfg.trap)) {
            o << "  coupling " << m.label;
            if (m.frequency > 0.0) o << " at " << mhz(m.frequency);
            o << ", eta per ion:";
            for (double e : m.eta) o << " " << detail::format(e);
            o << "\n";
        }
    };
    if (command == "dynamics" && cfg.dynamics) {
        const auto m = detail::resolve_dynamics_mode(cfg);
        o << "dynamics: mode " << m.label << " at " << mhz(m.frequency) << ", eta " << detail::format(m.eta) << ", "
          << cfg.dynamics->model << " model\n";
    }
    if (command == "spectrum" && cfg.spectrum) {
        o << "spectrum: nbar " << detail::format(cfg.spectrum->nbar) << ", rabi " << mhz(cfg.spectrum->rabi) << "\n";
        coupling(cfg.spectrum->coupling);
    }
    if (command == "rap" && cfg.rap) {
        const auto& s = cfg.rap->sweep;
        o << "rap: sweep " << detail::format(s.duration * 1e3) << " ms over " << mhz(s.span) << ", peak rabi "
          << mhz(s.peak_rabi) << ", envelope truncation " << detail::format(s.truncation) << "\n";
        coupling(cfg.rap->coupling);
    }
    return o.str();
}

inline CommandResult run_command(const std::string& command, const config::ExperimentConfig* cfg,
                                 const RunOptions& run) {
    if (command == "fit") return cmd_fit(cfg, run);
    if (!cfg) throw ConfigError(command + " needs --config");
    if (command == "modes") return cmd_modes(*cfg, run);
    if (command == "cooling-range") return cmd_cooling_range(*cfg, run);
    if (command == "dynamics") return cmd_dynamics(*cfg, run);
    if (command == "spectrum") return cmd_spectrum(*cfg, run);
    if (command == "rap") return cmd_rap(*cfg, run);
    throw ConfigError("unknown command '" + command + "'");
}

}  // namespace eitcool::cli
