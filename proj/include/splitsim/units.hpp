#pragma once

#include <cctype>
#include <cstdlib>
#include <string>
#include <string_view>

#include "splitsim/constants.hpp"
#include "splitsim/errors.hpp"

// Quantity strings for config files: a number followed by a unit token,
// e.g. "80 um", "0.5 MHz", "1.9 kG/cm". Every config key has a fixed
// dimension, and a value carrying the wrong unit (or none) is rejected
// rather than silently reinterpreted -- mixing up mA and A in a wire
// current moves the trap by the same factor.

namespace splitsim {

namespace units_detail {

struct UnitEntry {
    const char* token;
    double factor; // multiply by this to get the SI value
};

struct Dimension {
    const char* name;     // used in error messages
    const char* hint;     // accepted tokens, for error messages
    const UnitEntry* entries;
    int count;
};

// One table per physical dimension. Factors convert to SI base forms
// (m, s, A, Hz, T, T/m, J/m, rad). Frequencies stay plain cycles/s;
// callers multiply by 2*pi where an angular rate is wanted.
inline const UnitEntry length_units[] = {
    {"m", 1.0}, {"cm", 1e-2}, {"mm", 1e-3}, {"um", 1e-6}, {"nm", 1e-9},
};
inline const UnitEntry time_units[] = {
    {"s", 1.0}, {"ms", 1e-3}, {"us", 1e-6}, {"ns", 1e-9},
};
inline const UnitEntry current_units[] = {
    {"A", 1.0}, {"mA", 1e-3}, {"uA", 1e-6},
};
inline const UnitEntry frequency_units[] = {
    {"Hz", 1.0}, {"kHz", 1e3}, {"MHz", 1e6}, {"GHz", 1e9},
};
inline const UnitEntry field_units[] = {
    {"T", 1.0}, {"mT", 1e-3}, {"uT", 1e-6}, {"G", 1e-4}, {"mG", 1e-7},
};
inline const UnitEntry gradient_units[] = {
    {"T/m", 1.0}, {"G/cm", 1e-2}, {"kG/cm", 10.0}, {"T/cm", 100.0},
};
// Potential-energy slope across the trap; frequency forms are shorthand
// for h * f per unit length.
inline const UnitEntry tilt_units[] = {
    {"J/m", 1.0},
    {"Hz/m", constants::planck},
    {"Hz/um", constants::planck * 1e6},
    {"kHz/um", constants::planck * 1e9},
};
inline const UnitEntry angle_units[] = {
    {"rad", 1.0}, {"mrad", 1e-3}, {"deg", constants::pi / 180.0},
};

inline const Dimension dimensions[] = {
    {"length", "m, cm, mm, um, nm", length_units, 5},
    {"time", "s, ms, us, ns", time_units, 4},
    {"current", "A, mA, uA", current_units, 3},
    {"frequency", "Hz, kHz, MHz, GHz", frequency_units, 4},
    {"field", "T, mT, uT, G, mG", field_units, 5},
    {"gradient", "T/m, G/cm, kG/cm, T/cm", gradient_units, 4},
    {"tilt", "J/m, Hz/m, Hz/um, kHz/um", tilt_units, 4},
    {"angle", "rad, mrad, deg", angle_units, 3},
};

inline const Dimension& find_dimension(std::string_view name) {
    for (const Dimension& d : dimensions) {
        if (name == d.name) return d;
    }
    throw ValidationError("unknown quantity dimension '" + std::string(name) + "'");
}

} // namespace units_detail

// Parse "<number> <unit>" where <unit> must belong to `dimension`
// ("length", "time", "current", "frequency", "field", "gradient",
// "tilt", "angle"). Whitespace between number and unit is optional.
inline double parse_quantity(std::string_view text, std::string_view dimension) {
    const units_detail::Dimension& dim = units_detail::find_dimension(dimension);

    size_t a = 0, b = text.size();
    while (a < b && std::isspace(static_cast<unsigned char>(text[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(text[b - 1]))) --b;
    const std::string trimmed(text.substr(a, b - a));
    if (trimmed.empty())
        throw ValidationError(std::string("empty ") + dim.name + " quantity");

    const char* begin = trimmed.c_str();
    char* num_end = nullptr;
    const double value = std::strtod(begin, &num_end);
    if (num_end == begin)
        throw ValidationError("quantity '" + trimmed + "' does not start with a number");

    std::string unit(num_end);
    size_t u = 0;
    while (u < unit.size() && std::isspace(static_cast<unsigned char>(unit[u]))) ++u;
    unit.erase(0, u);

    if (unit.empty())
        throw ValidationError("quantity '" + trimmed + "' is missing a " +
                              dim.name + " unit (expected one of: " + dim.hint + ")");
    for (int i = 0; i < dim.count; ++i) {
        if (unit == dim.entries[i].token) return value * dim.entries[i].factor;
    }
    throw ValidationError("'" + unit + "' is not a " + dim.name +
                          " unit (expected one of: " + dim.hint + ")");
}

} // namespace splitsim
