#pragma once

// Experiment configuration files (YAML). Every physical quantity is a string
// with a unit, unknown keys are rejected, and errors carry file:line.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "eitcool/chain_mechanics.hpp"
#include "eitcool/collective_dynamics.hpp"
#include "eitcool/eit_rate_model.hpp"
#include "eitcool/errors.hpp"
#include "eitcool/sideband.hpp"
#include "eitcool/units.hpp"

namespace eitcool::config {

/// 64-bit FNV-1a, used to tag outputs with the config they came from.
inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// A YAML mapping with a dotted path for messages and a closed key set.
class Section {
public:
    Section(YAML::Node node, std::string path, std::string file)
        : node_(std::move(node)), path_(std::move(path)), file_(std::move(file)) {
        if (!node_.IsMap()) fail(node_, "expected a mapping");
    }

    const std::string& path() const { return path_; }

    [[noreturn]] void fail(const YAML::Node& at, const std::string& msg) const {
        const auto mark = at.Mark();
        std::string where = file_;
        if (mark.line >= 0) where += ":" + std::to_string(mark.line + 1);
        throw ConfigError(where + ": " + (path_.empty() ? "" : path_ + ": ") + msg);
    }

    [[noreturn]] void fail(const std::string& msg) const { fail(node_, msg); }

    void allow(std::initializer_list<std::string_view> keys) const {
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            bool known = false;
            for (auto k : keys) known = known || k == key;
            if (!known) fail(kv.first, "unknown key '" + key + "'");
        }
    }

    bool has(const std::string& key) const { return static_cast<bool>(node_[key]); }

    YAML::Node at(const std::string& key) const {
        const YAML::Node n = node_[key];
        if (!n) fail("missing required key '" + key + "'");
        return n;
    }

    Section child(const std::string& key) const {
        return Section(at(key), path_.empty() ? key : path_ + "." + key, file_);
    }

    std::string text(const std::string& key) const {
        const auto n = at(key);
        if (!n.IsScalar()) fail(n, "'" + key + "' must be a scalar");
        return n.as<std::string>();
    }

    std::string text(const std::string& key, const std::string& fallback) const {
        return has(key) ? text(key) : fallback;
    }

    double quantity(const std::string& key, units::Dimension dim) const {
        const auto n = at(key);
        if (!n.IsScalar()) fail(n, "'" + key + "' must be a quantity with a unit");
        try {
            return units::parse_quantity(n.as<std::string>(), dim);
        } catch (const ConfigError& e) {
            fail(n, key + ": " + e.what());
        }
    }

    std::optional<double> quantity_opt(const std::string& key, units::Dimension dim) const {
        if (!has(key)) return std::nullopt;
        return quantity(key, dim);
    }

    double number(const std::string& key) const {
        const auto n = at(key);
        try {
            return n.as<double>();
        } catch (const YAML::Exception&) {
            fail(n, "'" + key + "' must be a plain number");
        }
    }

    double number(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }

    long long integer(const std::string& key) const {
        const auto n = at(key);
        try {
            return n.as<long long>();
        } catch (const YAML::Exception&) {
            fail(n, "'" + key + "' must be an integer");
        }
    }

    long long integer(const std::string& key, long long fallback) const {
        return has(key) ? integer(key) : fallback;
    }

    std::vector<double> numbers(const std::string& key) const {
        const auto n = at(key);
        if (!n.IsSequence()) fail(n, "'" + key + "' must be a list of numbers");
        try {
            return n.as<std::vector<double>>();
        } catch (const YAML::Exception&) {
            fail(n, "'" + key + "' must be a list of numbers");
        }
    }

    /// One of `choices`, reported with the allowed values on mismatch.
    std::string choice(const std::string& key, std::initializer_list<std::string_view> choices,
                       const std::string& fallback) const {
        const std::string v = text(key, fallback);
        std::string list;
        for (auto c : choices) {
            if (c == v) return v;
            list += (list.empty() ? "" : ", ") + std::string(c);
        }
        fail(at(key), "'" + key + "' must be one of: " + list);
    }

    /// Runs a validator, prefixing its ConfigError with this section's location.
    template <class F>
    void validated(F&& f) const {
        try {
            f();
        } catch (const ConfigError& e) {
            std::string msg = e.what();
            const std::string own = path_ + ": ";
            if (msg.rfind(own, 0) == 0) msg.erase(0, own.size());
            fail(msg);
        }
    }

private:
    YAML::Node node_;
    std::string path_;
    std::string file_;
};

/// Where per-ion Lamb-Dicke factors come from.
struct CouplingSpec {
    // Either an explicit single-ion equivalent shared equally by the ions ...
    std::optional<double> eta;
    int ions = 1;
    // ... or a normal mode of the configured trap driven by a single beam.
    Branch branch = Branch::radial_1;
    std::string mode = "com";  // "com", "all" or a mode index
    double wavelength = 729e-9;
    double angle = 0.0;
};

struct ResolvedMode {
    std::string label;
    double frequency = 0.0;  // rad/s, 0 when not from a trap
    std::vector<double> eta;
};

struct CoolingRangeBlock {
    double eta = 0.05;
    double from = 0.0, to = 0.0;  // rad/s
    int points = 101;
};

struct DynamicsBlock {
    std::string model = "rate";  // rate | lindblad | both
    std::optional<double> eta;
    std::optional<double> mode_frequency;  // rad/s; default: the light shift
    std::optional<Branch> branch;          // take eta and frequency from a trap mode instead
    int mode_index = 0;
    double initial_nbar = 0.5;
    double duration = 0.0;
    int points = 51;
    double heating_rate = 0.0;
    int fock_cutoff = 15;
    double relative_tolerance = 1e-8;
};

struct SpectrumBlock {
    CouplingSpec coupling;
    double nbar = 0.0;
    double rabi = 0.0;
    std::optional<double> pulse_time;  // default: pi time of the n = 1 sideband
    double span = 0.0;
    int points = 81;
    std::vector<Sideband> sides{Sideband::red, Sideband::blue};
    double truncation = 1e-4;
};

struct RapBlock {
    CouplingSpec coupling;
    SweepProfile sweep;
    StartState start = StartState::ground;
    Sideband side = Sideband::red;
    std::optional<double> nbar;
    std::vector<double> phonon_distribution;  // used when nbar is absent
    long shots = 500;
    int fidelity_n_max = 0;  // 0: ion count
    double tolerance = 1e-8;
};

struct FitBlock {
    std::string model;  // cooling | heating | rabi | histogram | ramsey
    std::string data;
    double eta = 0.0;
    double rabi = 0.0;
    Sideband side = Sideband::red;
    int ions = 1;
};

struct ExperimentConfig {
    std::string path;
    std::string text;
    std::uint64_t seed = 0;
    std::string output;
    std::optional<TrapConfig> trap;
    BeamGeometry geometry;
    bool has_geometry = false;
    std::optional<EITBeams> beams;
    std::optional<CoolingRangeBlock> cooling_range;
    std::optional<DynamicsBlock> dynamics;
    std::optional<SpectrumBlock> spectrum;
    std::optional<RapBlock> rap;
    std::optional<FitBlock> fit;

    std::uint64_t hash() const { return fnv1a(text); }
};

namespace detail {

using units::Dimension;

inline Branch parse_branch(const Section& s, const std::string& key) {
    const auto name = s.choice(key, {"axial", "radial_1", "radial_2"}, "radial_1");
    if (name == "axial") return Branch::axial;
    return name == "radial_1" ? Branch::radial_1 : Branch::radial_2;
}

inline Sideband parse_side(const Section& s, const std::string& key) {
    return s.choice(key, {"red", "blue"}, "red") == "red" ? Sideband::red : Sideband::blue;
}

inline Eigen::Vector3d parse_direction(const Section& s, const std::string& key) {
    const auto v = s.numbers(key);
    if (v.size() != 3) s.fail(s.at(key), "'" + key + "' needs three components");
    Eigen::Vector3d d(v[0], v[1], v[2]);
    if (!(d.norm() > 0.0)) s.fail(s.at(key), "'" + key + "' must be non-zero");
    return d.normalized();
}

inline TrapConfig parse_trap(const Section& s) {
    s.allow({"ions", "mass", "axial", "radial_1", "radial_2"});
    TrapConfig t;
    t.ion_count = static_cast<int>(s.integer("ions"));
    if (s.has("mass")) t.ion_mass_u = s.quantity("mass", Dimension::mass) / constants::atomic_mass_unit;
    t.omega_axial = s.quantity("axial", Dimension::frequency);
    t.omega_radial_1 = s.quantity("radial_1", Dimension::frequency);
    t.omega_radial_2 = s.quantity("radial_2", Dimension::frequency);
    s.validated([&] { t.validate(); });
    return t;
}

inline BeamGeometry parse_geometry(const Section& s) {
    s.allow({"wavelength", "k_sigma", "k_pi", "raman_direction", "opening_angle"});
    const double wavelength = s.quantity("wavelength", Dimension::length);
    BeamGeometry g;
    if (s.has("raman_direction")) {
        if (s.has("k_sigma") || s.has("k_pi"))
            s.fail("give either 'raman_direction' with 'opening_angle' or 'k_sigma' with 'k_pi'");
        g = BeamGeometry::from_raman_direction(wavelength, parse_direction(s, "raman_direction"),
                                               s.quantity("opening_angle", Dimension::angle));
    } else {
        g.wavelength = wavelength;
        g.unit_k_sigma = parse_direction(s, "k_sigma");
        g.unit_k_pi = parse_direction(s, "k_pi");
    }
    s.validated([&] { g.validate(); });
    return g;
}

inline EITBeams parse_beams(const Section& s) {
    s.allow({"omega_sigma", "light_shift", "omega_pi", "delta", "delta_pi", "gamma", "branching_g"});
    EITBeams b;
    b.delta = s.quantity("delta", Dimension::frequency);
    b.gamma = s.quantity("gamma", Dimension::frequency);
    b.omega_pi = s.quantity("omega_pi", Dimension::frequency);
    if (s.has("omega_sigma") == s.has("light_shift"))
        s.fail("give exactly one of 'omega_sigma' and 'light_shift'");
    if (s.has("omega_sigma")) {
        b.omega_sigma = s.quantity("omega_sigma", Dimension::frequency);
    } else {
        const double shift = s.quantity("light_shift", Dimension::frequency);
        s.validated([&] { b.omega_sigma = inverse_light_shift(shift, b.delta); });
    }
    b.delta_pi = s.quantity_opt("delta_pi", Dimension::frequency).value_or(b.delta);
    b.branching_g = s.number("branching_g", 2.0 / 3.0);
    b.branching_f = 1.0 - b.branching_g;
    s.validated([&] { b.validate(); });
    return b;
}

inline CouplingSpec parse_coupling(const Section& s, const std::optional<TrapConfig>& trap) {
    s.allow({"eta", "ions", "branch", "mode", "wavelength", "angle"});
    CouplingSpec c;
    if (s.has("eta")) {
        for (const char* k : {"branch", "mode", "wavelength", "angle"})
            if (s.has(k)) s.fail(s.at(k), "'" + std::string(k) + "' cannot be combined with 'eta'");
        c.eta = s.number("eta");
        if (!(*c.eta > 0.0)) s.fail(s.at("eta"), "'eta' must be positive");
        c.ions = static_cast<int>(s.integer("ions", trap ? trap->ion_count : 1));
        if (c.ions < 1) s.fail(s.at("ions"), "'ions' must be >= 1");
        return c;
    }
    if (!trap) s.fail("a trap mode coupling needs a [trap] section (or give 'eta')");
    if (s.has("ions")) s.fail(s.at("ions"), "'ions' comes from the trap section here");
    c.ions = trap->ion_count;
    c.branch = parse_branch(s, "branch");
    c.mode = s.text("mode", "com");
    if (c.mode != "com" && c.mode != "all") {
        char* end = nullptr;
        const long idx = std::strtol(c.mode.c_str(), &end, 10);
        if (*end != '\0' || idx < 0 || idx >= c.ions)
            s.fail(s.at("mode"), "'mode' must be com, all or an index below the ion count");
    }
    c.wavelength = s.quantity("wavelength", Dimension::length);
    c.angle = s.quantity_opt("angle", Dimension::angle).value_or(0.0);
    return c;
}

inline SweepProfile parse_sweep(const Section& s) {
    s.allow({"duration", "span", "peak_rabi", "truncation"});
    SweepProfile p;
    p.duration = s.quantity("duration", Dimension::time);
    p.span = s.quantity("span", Dimension::frequency);
    p.peak_rabi = s.quantity("peak_rabi", Dimension::frequency);
    p.truncation = s.number("truncation", p.truncation);
    s.validated([&] { p.validate(); });
    return p;
}

}  // namespace detail

/// Resolves a coupling to one or more modes with per-ion Lamb-Dicke factors.
inline std::vector<ResolvedMode> resolve_coupling(const CouplingSpec& c, const std::optional<TrapConfig>& trap) {
    if (c.eta) {
        return {ResolvedMode{"com", 0.0, std::vector<double>(c.ions, *c.eta / std::sqrt(c.ions))}};
    }
    const ModeSet modes = normal_modes(*trap, equilibrium_positions(*trap));
    std::vector<const Mode*> chosen;
    if (c.mode == "com")
        chosen.push_back(&modes.com(c.branch));
    else if (c.mode == "all")
        chosen = modes.branch(c.branch);
    else
        chosen.push_back(modes.branch(c.branch).at(std::stoul(c.mode)));
    std::vector<ResolvedMode> out;
    for (const Mode* m : chosen) {
        ResolvedMode r;
        r.label = std::string(branch_name(m->branch)) + "_" + std::to_string(m->index);
        r.frequency = m->frequency;
        r.eta = mode_lamb_dicke(*m, c.wavelength, c.angle, trap->mass_kg());
        out.push_back(std::move(r));
    }
    return out;
}

inline ExperimentConfig parse_config(const std::string& text, const std::string& path) {
    using units::Dimension;
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(path + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
    if (!root || root.IsNull()) throw ConfigError(path + ": empty configuration");
    const Section top(root, "", path);
    top.allow({"seed", "output", "trap", "geometry", "beams", "cooling_range", "dynamics", "spectrum", "rap", "fit"});

    ExperimentConfig cfg;
    cfg.path = path;
    cfg.text = text;
    if (top.has("seed")) {
        try {
            cfg.seed = top.at("seed").as<std::uint64_t>();
        } catch (const YAML::Exception&) {
            top.fail(top.at("seed"), "'seed' must be a non-negative 64-bit integer");
        }
    }
    cfg.output = top.text("output", "");
    if (top.has("trap")) cfg.trap = detail::parse_trap(top.child("trap"));
    if (top.has("geometry")) {
        cfg.geometry = detail::parse_geometry(top.child("geometry"));
        cfg.has_geometry = true;
    }
    if (top.has("beams")) cfg.beams = detail::parse_beams(top.child("beams"));

    if (top.has("cooling_range")) {
        const auto s = top.child("cooling_range");
        s.allow({"eta", "from", "to", "points"});
        CoolingRangeBlock b;
        b.eta = s.number("eta");
        b.from = s.quantity("from", Dimension::frequency);
        b.to = s.quantity("to", Dimension::frequency);
        b.points = static_cast<int>(s.integer("points", b.points));
        if (!(b.from > 0.0) || !(b.to > b.from)) s.fail("need 0 < from < to");
        if (b.points < 2) s.fail(s.at("points"), "'points' must be >= 2");
        if (!(b.eta > 0.0)) s.fail(s.at("eta"), "'eta' must be positive");
        cfg.cooling_range = b;
    }

    if (top.has("dynamics")) {
        const auto s = top.child("dynamics");
        s.allow({"model", "eta", "mode_frequency", "branch", "mode_index", "initial_nbar", "duration", "points",
                 "heating_rate", "fock_cutoff", "relative_tolerance"});
        DynamicsBlock b;
        b.model = s.choice("model", {"rate", "lindblad", "both"}, "rate");
        if (s.has("branch")) {
            if (!cfg.trap || !cfg.has_geometry) s.fail("'branch' needs [trap] and [geometry] sections");
            if (s.has("eta") || s.has("mode_frequency"))
                s.fail("give either 'branch' or 'eta'/'mode_frequency', not both");
            b.branch = detail::parse_branch(s, "branch");
            b.mode_index = static_cast<int>(s.integer("mode_index", 0));
            if (b.mode_index < 0 || b.mode_index >= cfg.trap->ion_count)
                s.fail(s.at("mode_index"), "'mode_index' out of range");
        } else {
            b.eta = s.number("eta");
            if (!(*b.eta > 0.0)) s.fail(s.at("eta"), "'eta' must be positive");
            b.mode_frequency = s.quantity_opt("mode_frequency", Dimension::frequency);
        }
        b.initial_nbar = s.number("initial_nbar", b.initial_nbar);
        b.duration = s.quantity("duration", Dimension::time);
        b.points = static_cast<int>(s.integer("points", b.points));
        b.heating_rate = s.quantity_opt("heating_rate", Dimension::rate).value_or(0.0);
        b.fock_cutoff = static_cast<int>(s.integer("fock_cutoff", b.fock_cutoff));
        b.relative_tolerance = s.number("relative_tolerance", b.relative_tolerance);
        if (!(b.initial_nbar >= 0.0)) s.fail("'initial_nbar' must be >= 0");
        if (!(b.duration > 0.0) || b.points < 2) s.fail("need duration > 0 and points >= 2");
        if (!cfg.beams) s.fail("dynamics needs a [beams] section");
        cfg.dynamics = b;
    }

    if (top.has("spectrum")) {
        const auto s = top.child("spectrum");
        s.allow({"coupling", "nbar", "rabi", "pulse_time", "span", "points", "sides", "truncation"});
        SpectrumBlock b;
        b.coupling = detail::parse_coupling(s.child("coupling"), cfg.trap);
        b.nbar = s.number("nbar");
        b.rabi = s.quantity("rabi", Dimension::frequency);
        b.pulse_time = s.quantity_opt("pulse_time", Dimension::time);
        b.span = s.quantity("span", Dimension::frequency);
        b.points = static_cast<int>(s.integer("points", b.points));
        const auto sides = s.choice("sides", {"red", "blue", "both"}, "both");
        if (sides == "red") b.sides = {Sideband::red};
        if (sides == "blue") b.sides = {Sideband::blue};
        b.truncation = s.number("truncation", b.truncation);
        if (!(b.nbar >= 0.0)) s.fail(s.at("nbar"), "'nbar' must be >= 0");
        if (!(b.rabi > 0.0) || !(b.span > 0.0)) s.fail("'rabi' and 'span' must be positive");
        if (b.points < 1) s.fail(s.at("points"), "'points' must be >= 1");
        if (b.pulse_time && !(*b.pulse_time > 0.0)) s.fail(s.at("pulse_time"), "'pulse_time' must be positive");
        if (!(b.truncation > 0.0 && b.truncation < 1.0)) s.fail(s.at("truncation"), "'truncation' must lie in (0, 1)");
        cfg.spectrum = b;
    }

    if (top.has("rap")) {
        const auto s = top.child("rap");
        s.allow({"coupling", "sweep", "start", "side", "nbar", "phonon_distribution", "shots", "fidelity_n_max",
                 "tolerance"});
        RapBlock b;
        b.coupling = detail::parse_coupling(s.child("coupling"), cfg.trap);
        b.sweep = s.has("sweep") ? detail::parse_sweep(s.child("sweep")) : SweepProfile{};
        b.start = s.choice("start", {"ground", "metastable"}, "ground") == "ground" ? StartState::ground
                                                                                    : StartState::metastable;
        b.side = detail::parse_side(s, "side");
        if (s.has("nbar") == s.has("phonon_distribution"))
            s.fail("give exactly one of 'nbar' and 'phonon_distribution'");
        if (s.has("nbar")) {
            b.nbar = s.number("nbar");
            if (!(*b.nbar >= 0.0)) s.fail(s.at("nbar"), "'nbar' must be >= 0");
        } else {
            b.phonon_distribution = s.numbers("phonon_distribution");
        }
        b.shots = static_cast<long>(s.integer("shots", b.shots));
        b.fidelity_n_max = static_cast<int>(s.integer("fidelity_n_max", 0));
        b.tolerance = s.number("tolerance", b.tolerance);
        if (b.shots < 1) s.fail(s.at("shots"), "'shots' must be >= 1");
        if (b.fidelity_n_max < 0) s.fail(s.at("fidelity_n_max"), "'fidelity_n_max' must be >= 0");
        if (!(b.tolerance > 0.0)) s.fail(s.at("tolerance"), "'tolerance' must be positive");
        cfg.rap = b;
    }

    if (top.has("fit")) {
        const auto s = top.child("fit");
        s.allow({"model", "data", "eta", "rabi", "side", "ions"});
        FitBlock b;
        b.model = s.choice("model", {"cooling", "heating", "rabi", "histogram", "ramsey"}, "cooling");
        b.data = s.text("data", "");
        if (!b.data.empty() && std::filesystem::path(b.data).is_relative())
            b.data = (std::filesystem::path(path).parent_path() / b.data).string();
        b.eta = s.number("eta", 0.0);
        if (s.has("rabi")) b.rabi = s.quantity("rabi", Dimension::frequency);
        b.side = detail::parse_side(s, "side");
        b.ions = static_cast<int>(s.integer("ions", 1));
        cfg.fit = b;
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open configuration file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path);
}

}  // namespace eitcool::config
