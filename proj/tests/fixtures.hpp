#pragma once

// Shared test layouts.
//
// chip_trap(): the realistic geometry -- a 50 um d.c. strip on the chip
// surface (y = 0), a 10 um rf strip 80 um to the side, and a 45-degree bias
// that parks the trap 80 um below the rf wire. Current / bias follow from the
// thin-wire relations for a requested transverse gradient:
//     I = B' r^2 2pi/mu0,   |bias| = B' r,   r = 80*sqrt(2) um.
// The finite strip width shifts things at the percent level; tests that need
// exact numbers measure them instead of assuming.
//
// ideal_double_well(): an exactly x-mirror-symmetric fixture. The trap sits
// straight below the d.c. wire and two counter-fed rf strips at +-40 um make
// the rf field at the trap purely vertical, which splits the well
// horizontally with epsilon = 0 by construction.

#include <splitsim/dressed_potential.hpp>
#include <splitsim/field_model.hpp>

namespace fixtures {

using namespace splitsim;

inline constexpr double trap_height = 80e-6;
inline constexpr double wire_gap = 80e-6;
// gradient giving omega_perp = 2*pi*2.1 kHz at a 1 G trap bottom for 87Rb F=2,mF=2
inline constexpr double nominal_gradient = 16.4597;  // [T/m]

inline ChipLayout chip_trap(double gradient = nominal_gradient, double ioffe_tesla = 1e-4) {
    const double r2 = trap_height * trap_height + wire_gap * wire_gap;
    const double current = gradient * r2 * 2.0 * constants::pi / constants::mu0;
    const double bias_mag = gradient * std::sqrt(r2);
    ChipLayout lay;
    lay.wires.push_back({{0, 0, 0}, 50e-6, current, WireKind::dc, 0});
    lay.wires.push_back({{wire_gap, 0, 0}, 10e-6, 60e-3, WireKind::rf, 2 * constants::pi * 500e3});
    const double c = bias_mag / std::sqrt(2.0);
    lay.bias = {-c, -c, 0};
    lay.ioffe = ioffe_tesla;
    return lay;
}

inline ChipLayout ideal_double_well(double rf_amp = 80e-3, double rf_freq = 500e3) {
    const double h = trap_height;
    const double current = 1.0;
    const double c = constants::mu0 * current / (2 * constants::pi);
    ChipLayout lay;
    lay.wires.push_back({{0, 0, 0}, 50e-6, current, WireKind::dc, 0});
    lay.wires.push_back({{+40e-6, 0, 0}, 10e-6, +rf_amp, WireKind::rf, 2 * constants::pi * rf_freq});
    lay.wires.push_back({{-40e-6, 0, 0}, 10e-6, -rf_amp, WireKind::rf, 2 * constants::pi * rf_freq});
    lay.bias = {-c / h, 0, 0};
    lay.ioffe = 1e-4;
    return lay;
}

// synthetic map of an arbitrary analytic potential
template <typename F>
inline PotentialMap synthetic_map(F&& f, const GridSpec2D& g,
                                  const AtomSpecies& sp = AtomSpecies::rb87()) {
    PotentialMap m{g, {}, sp, {2 * constants::pi * 500e3, 0.06}};
    m.v.resize(static_cast<size_t>(g.nx) * g.ny);
    for (int iy = 0; iy < g.ny; ++iy)
        for (int ix = 0; ix < g.nx; ++ix)
            m.v[static_cast<size_t>(iy) * g.nx + ix] =
                f(g.x0 + ix * g.dx(), g.y0 + iy * g.dy());
    return m;
}

} // namespace fixtures
