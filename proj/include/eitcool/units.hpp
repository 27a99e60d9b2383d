#pragma once

// Quantities with explicit units, e.g. "0.50 MHz" or "4 ms".
// Frequencies are written as cyclic (Hz) and returned as angular (rad/s);
// rates such as "65 1/s" are returned unchanged.

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eitcool/constants.hpp"
#include "eitcool/errors.hpp"

namespace eitcool::units {

enum class Dimension { frequency, rate, time, length, mass, angle };

inline const char* dimension_name(Dimension d) {
    switch (d) {
        case Dimension::frequency: return "frequency";
        case Dimension::rate: return "rate";
        case Dimension::time: return "time";
        case Dimension::length: return "length";
        case Dimension::mass: return "mass";
        case Dimension::angle: return "angle";
    }
    return "?";
}

struct UnitEntry {
    std::string_view symbol;
    Dimension dimension;
    double scale;  // to SI (angular for frequencies)
};

inline const std::vector<UnitEntry>& unit_table() {
    static const std::vector<UnitEntry> table{
        {"Hz", Dimension::frequency, constants::two_pi},
        {"kHz", Dimension::frequency, constants::two_pi * 1e3},
        {"MHz", Dimension::frequency, constants::two_pi * 1e6},
        {"GHz", Dimension::frequency, constants::two_pi * 1e9},
        {"rad/s", Dimension::frequency, 1.0},
        {"1/s", Dimension::rate, 1.0},
        {"s^-1", Dimension::rate, 1.0},
        {"1/ms", Dimension::rate, 1e3},
        {"s", Dimension::time, 1.0},
        {"ms", Dimension::time, 1e-3},
        {"us", Dimension::time, 1e-6},
        {"ns", Dimension::time, 1e-9},
        {"m", Dimension::length, 1.0},
        {"mm", Dimension::length, 1e-3},
        {"um", Dimension::length, 1e-6},
        {"nm", Dimension::length, 1e-9},
        {"u", Dimension::mass, constants::atomic_mass_unit},
        {"kg", Dimension::mass, 1.0},
        {"rad", Dimension::angle, 1.0},
        {"deg", Dimension::angle, constants::pi / 180.0},
    };
    return table;
}

/// Parses "<number> <unit>" and converts to SI. Throws ConfigError naming the
/// offending text when the unit is missing, unknown or of the wrong dimension.
inline double parse_quantity(const std::string& text, Dimension expected) {
    const char* begin = text.c_str();
    char* end = nullptr;
    const double value = std::strtod(begin, &end);
    if (end == begin || !std::isfinite(value))
        throw ConfigError("'" + text + "' does not start with a number");
    std::string unit(end);
    while (!unit.empty() && std::isspace(static_cast<unsigned char>(unit.front()))) unit.erase(unit.begin());
    while (!unit.empty() && std::isspace(static_cast<unsigned char>(unit.back()))) unit.pop_back();
    if (unit.empty())
        throw ConfigError("'" + text + "' has no unit (expected a " + dimension_name(expected) + ")");
    for (const auto& e : unit_table()) {
        if (e.symbol != unit) continue;
        if (e.dimension != expected)
            throw ConfigError("'" + text + "' is a " + dimension_name(e.dimension) + ", expected a " +
                              dimension_name(expected));
        return value * e.scale;
    }
    throw ConfigError("'" + text + "' has unknown unit '" + unit + "'");
}

}  // namespace eitcool::units
