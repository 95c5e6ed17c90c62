#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "constants.hpp"
#include "errors.hpp"
#include "field_model.hpp"
#include "vec3.hpp"

namespace splitsim {

struct AtomSpecies {
    double mass = 0;                // [kg]
    double m_f = 0;                 // magnetic quantum number of the trapped state
    double g_f = 0;                 // Lande factor
    double scattering_length = 0;   // s-wave [m]

    // 87Rb in |F=2, mF=2>
    static AtomSpecies rb87() {
        return {86.909180531 * constants::amu, 2.0, 0.5, 5.24e-9};
    }

    void validate() const {
        if (!(mass > 0)) throw ValidationError("species mass must be > 0");
        if (!(m_f * g_f > 0))
            throw ValidationError("m_f * g_f must be > 0 (state is not low-field seeking)");
        if (!(scattering_length > 0))
            throw ValidationError("scattering length must be > 0");
    }
};

// One point of the rf drive: angular frequency and the amplitude current fed
// to the rf wire(s). When a layout has several rf wires their listed currents
// act as a fixed pattern that is rescaled so the strongest one carries
// `current` (signs preserved).
struct RfSetting {
    double omega = 0;    // [rad/s]
    double current = 0;  // [A]
};

inline double larmor_omega(const AtomSpecies& a, double b_mag) {
    return constants::mu_bohr * a.g_f * b_mag / constants::hbar;
}

// |component of b_rf perpendicular to b_dc|. Degenerate when the static field
// vanishes: the local quantization axis is undefined.
inline double perpendicular_rf(const Vec3& b_dc, const Vec3& b_rf) {
    const double b2 = dot(b_dc, b_dc);
    if (!(b2 > 0))
        throw DomainError("static field vanishes, rf decomposition undefined");
    const Vec3 par = b_dc * (dot(b_rf, b_dc) / b2);
    return norm(b_rf - par);
}

// Adiabatic rf-dressed level in the rotating-wave approximation:
//   V = m_F sqrt[(mu_B g_F B_dc - hbar w)^2 + (mu_B g_F B_rf_perp / 2)^2]
// std::hypot keeps the two exact reductions (pure Zeeman detuning at zero
// coupling, pure coupling on resonance) exact to the last ulp.
inline double dressed_energy(const AtomSpecies& a, double b_dc_mag, double b_rf_perp,
                             double omega_rf) {
    const double detuning = constants::mu_bohr * a.g_f * b_dc_mag - constants::hbar * omega_rf;
    const double coupling = 0.5 * constants::mu_bohr * a.g_f * b_rf_perp;
    return a.m_f * std::hypot(detuning, coupling);
}

namespace detail {

// scale factor turning the layout's rf wire pattern into the requested amplitude
inline double rf_pattern_scale(const ChipLayout& layout, const RfSetting& rf) {
    double ref = 0;
    for (const auto& w : layout.wires)
        if (w.kind == WireKind::rf) ref = std::max(ref, std::abs(w.current));
    if (!(ref > 0))
        throw ValidationError("rf wires carry no pattern current to rescale");
    return rf.current / ref;
}

} // namespace detail

// Dressed potential at a point, including the optional gravity term.
inline double effective_potential(const ChipLayout& layout, const AtomSpecies& a,
                                  const RfSetting& rf, const Vec3& p) {
    const Vec3 b_dc = static_field(layout, p);
    const Vec3 b_rf = rf_field_vector(layout, p) * detail::rf_pattern_scale(layout, rf);
    double v = dressed_energy(a, norm(b_dc), perpendicular_rf(b_dc, b_rf), rf.omega);
    if (layout.gravity)
        v -= a.mass * constants::g_earth * dot(normalized(layout.gravity_direction), p);
    return v;
}

struct GridSpec2D {
    double x0 = 0, x1 = 0;
    int nx = 0;
    double y0 = 0, y1 = 0;
    int ny = 0;

    void validate() const {
        if (nx < 4 || ny < 4) throw ValidationError("potential map needs at least 4x4 points");
        if (!(x1 > x0) || !(y1 > y0)) throw ValidationError("degenerate map extent");
    }
    double dx() const { return (x1 - x0) / (nx - 1); }
    double dy() const { return (y1 - y0) / (ny - 1); }
};

// Sampled transverse map of the dressed potential (z = trap axis is ignored;
// the model is translationally invariant along it).
struct PotentialMap {
    GridSpec2D grid;
    std::vector<double> v;   // row-major, v[iy*nx + ix] [J]
    AtomSpecies species;
    RfSetting rf;

    double at(int ix, int iy) const { return v[static_cast<size_t>(iy) * grid.nx + ix]; }
    double x(int ix) const { return grid.x0 + ix * grid.dx(); }
    double y(int iy) const { return grid.y0 + iy * grid.dy(); }
};

inline PotentialMap map_potential(const ChipLayout& layout, const AtomSpecies& a,
                                  const RfSetting& rf, const GridSpec2D& grid) {
    grid.validate();
    a.validate();
    layout.validate();
    const double scale = detail::rf_pattern_scale(layout, rf);
    PotentialMap map{grid, {}, a, rf};
    map.v.resize(static_cast<size_t>(grid.nx) * grid.ny);
    const double grav = layout.gravity ? a.mass * constants::g_earth : 0.0;
    const Vec3 gdir = layout.gravity ? normalized(layout.gravity_direction) : Vec3{};
    for (int iy = 0; iy < grid.ny; ++iy) {
        const double y = grid.y0 + iy * grid.dy();
        for (int ix = 0; ix < grid.nx; ++ix) {
            const Vec3 p{grid.x0 + ix * grid.dx(), y, 0.0};
            const Vec3 b_dc = static_field(layout, p);
            const Vec3 b_rf = rf_field_vector(layout, p) * scale;
            double val = dressed_energy(a, norm(b_dc), perpendicular_rf(b_dc, b_rf), rf.omega);
            if (layout.gravity) val -= grav * dot(gdir, p);
            map.v[static_cast<size_t>(iy) * grid.nx + ix] = val;
        }
    }
    return map;
}

struct Point2 {
    double x = 0, y = 0;
};

struct WellInfo {
    Point2 pos;
    double value = 0;    // refined potential at the minimum [J]
    double omega_x = 0;  // curvature frequencies at the minimum [rad/s]
    double omega_y = 0;
};

// Geometry of the (single or double) well found in a map. For a double well
// the wells are ordered along the splitting axis; epsilon = V[1] - V[0]
// ("right minus left" for a horizontal split).
struct DoubleWellGeometry {
    int n_wells = 0;
    std::array<WellInfo, 2> well{};
    double d = 0;            // minima separation [m]
    double v_bar = 0;        // saddle minus lower minimum [J]
    double epsilon = 0;      // [J]
    Point2 saddle;
    double saddle_value = 0;
};

namespace detail {

inline double catmull_rom(double pm1, double p0, double p1, double p2, double t) {
    return 0.5 * ((2.0 * p0) + (-pm1 + p1) * t + (2.0 * pm1 - 5.0 * p0 + 4.0 * p1 - p2) * t * t +
                  (-pm1 + 3.0 * p0 - 3.0 * p1 + p2) * t * t * t);
}

// bicubic Catmull-Rom on the map, clamped at the edges
inline double interp_map(const PotentialMap& m, double x, double y) {
    const auto& g = m.grid;
    const double fx = (x - g.x0) / g.dx();
    const double fy = (y - g.y0) / g.dy();
    const int ix = std::clamp(static_cast<int>(std::floor(fx)), 0, g.nx - 2);
    const int iy = std::clamp(static_cast<int>(std::floor(fy)), 0, g.ny - 2);
    const double tx = fx - ix, ty = fy - iy;
    auto cl = [&](int i, int j) {
        return m.at(std::clamp(i, 0, g.nx - 1), std::clamp(j, 0, g.ny - 1));
    };
    double rows[4];
    for (int j = 0; j < 4; ++j) {
        const int jj = iy - 1 + j;
        rows[j] = catmull_rom(cl(ix - 1, jj), cl(ix, jj), cl(ix + 1, jj), cl(ix + 2, jj), tx);
    }
    return catmull_rom(rows[0], rows[1], rows[2], rows[3], ty);
}

struct Refined {
    double off = 0;    // sub-grid offset in units of the spacing
    double value_correction = 0;
    double second_diff = 0;
};

inline Refined refine_parabola(double vm, double v0, double vp) {
    Refined r;
    const double curv = vm - 2.0 * v0 + vp;
    r.second_diff = curv;
    if (curv > 0) {
        r.off = 0.5 * (vm - vp) / curv;
        r.off = std::clamp(r.off, -0.5, 0.5);
        r.value_correction = -(vm - vp) * (vm - vp) / (8.0 * curv);
    }
    return r;
}

} // namespace detail

// Locate the potential minima of a sampled map: interior local minima on the
// grid, refined per axis with a three-point parabola. For two wells the
// barrier is taken as the maximum of the (bicubically interpolated) potential
// along the straight path between the refined minima.
inline DoubleWellGeometry locate_wells(const PotentialMap& m) {
    const auto& g = m.grid;
    if (m.v.empty()) throw ValidationError("empty potential map");

    struct Cand {
        int ix, iy;
        double v;
    };
    std::vector<Cand> mins;
    for (int iy = 1; iy + 1 < g.ny; ++iy) {
        for (int ix = 1; ix + 1 < g.nx; ++ix) {
            const double v0 = m.at(ix, iy);
            bool is_min = true;
            for (int dy = -1; dy <= 1 && is_min; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    if (m.at(ix + dx, iy + dy) <= v0) {
                        is_min = false;
                        break;
                    }
                }
            if (is_min) mins.push_back({ix, iy, v0});
        }
    }
    if (mins.empty()) {
        // distinguish "monotone across the box" from a minimum pinned to the edge
        const auto it = std::min_element(m.v.begin(), m.v.end());
        const int flat = static_cast<int>(it - m.v.begin());
        const int ix = flat % g.nx, iy = flat / g.nx;
        if (ix == 0 || iy == 0 || ix == g.nx - 1 || iy == g.ny - 1)
            throw GridError("potential minimum sits on the map boundary; enlarge the grid");
        throw GridError("no interior minimum found in the map");
    }

    std::sort(mins.begin(), mins.end(), [](const Cand& a, const Cand& b) { return a.v < b.v; });
    if (mins.size() > 2) mins.resize(2);

    DoubleWellGeometry geo;
    geo.n_wells = static_cast<int>(mins.size());
    const double mass = m.species.mass;
    for (int k = 0; k < geo.n_wells; ++k) {
        const auto& c = mins[k];
        const auto rx = detail::refine_parabola(m.at(c.ix - 1, c.iy), c.v, m.at(c.ix + 1, c.iy));
        const auto ry = detail::refine_parabola(m.at(c.ix, c.iy - 1), c.v, m.at(c.ix, c.iy + 1));
        WellInfo w;
        w.pos = {m.x(c.ix) + rx.off * g.dx(), m.y(c.iy) + ry.off * g.dy()};
        w.value = c.v + rx.value_correction + ry.value_correction;
        w.omega_x = rx.second_diff > 0 ? std::sqrt(rx.second_diff / (g.dx() * g.dx() * mass)) : 0;
        w.omega_y = ry.second_diff > 0 ? std::sqrt(ry.second_diff / (g.dy() * g.dy() * mass)) : 0;
        geo.well[k] = w;
    }

    if (geo.n_wells == 1) {
        geo.d = 0;
        geo.saddle = geo.well[0].pos;
        geo.saddle_value = geo.well[0].value;
        return geo;
    }

    // order along the dominant splitting axis
    const auto &a = geo.well[0], &b = geo.well[1];
    const bool by_x = std::abs(b.pos.x - a.pos.x) >= std::abs(b.pos.y - a.pos.y);
    if ((by_x && b.pos.x < a.pos.x) || (!by_x && b.pos.y < a.pos.y))
        std::swap(geo.well[0], geo.well[1]);

    const Point2 p0 = geo.well[0].pos, p1 = geo.well[1].pos;
    geo.d = std::hypot(p1.x - p0.x, p1.y - p0.y);
    geo.epsilon = geo.well[1].value - geo.well[0].value;

    // barrier: scan the straight inter-minima path, parabola-refine the peak
    const int nseg = 257;
    double best_t = 0.5, best_v = -std::numeric_limits<double>::infinity();
    std::vector<double> vals(nseg);
    for (int i = 0; i < nseg; ++i) {
        const double t = static_cast<double>(i) / (nseg - 1);
        vals[i] = detail::interp_map(m, p0.x + t * (p1.x - p0.x), p0.y + t * (p1.y - p0.y));
        if (vals[i] > best_v) {
            best_v = vals[i];
            best_t = static_cast<double>(i) / (nseg - 1);
        }
    }
    const int ib = std::clamp(static_cast<int>(best_t * (nseg - 1)), 1, nseg - 2);
    const double curv = vals[ib - 1] - 2.0 * vals[ib] + vals[ib + 1];
    double t_ref = static_cast<double>(ib) / (nseg - 1);
    double v_ref = vals[ib];
    if (curv < 0) {
        const double off = std::clamp(0.5 * (vals[ib - 1] - vals[ib + 1]) / curv, -0.5, 0.5);
        t_ref += off / (nseg - 1);
        v_ref = vals[ib] - (vals[ib - 1] - vals[ib + 1]) * (vals[ib - 1] - vals[ib + 1]) / (8.0 * curv);
    }
    geo.saddle = {p0.x + t_ref * (p1.x - p0.x), p0.y + t_ref * (p1.y - p0.y)};
    geo.saddle_value = v_ref;
    geo.v_bar = v_ref - std::min(geo.well[0].value, geo.well[1].value);
    return geo;
}

// ---- ramps ----------------------------------------------------------------

struct RampPoint {
    double t = 0;  // [s]
    RfSetting rf;
};

// Piecewise-linear rf program (both amplitude and frequency interpolate
// linearly between knots; evaluation clamps outside the range).
struct RampSchedule {
    std::vector<RampPoint> points;

    void validate() const {
        if (points.empty()) throw ValidationError("empty ramp schedule");
        for (size_t i = 1; i < points.size(); ++i)
            if (!(points[i].t > points[i - 1].t))
                throw ValidationError("ramp times must be strictly increasing");
        for (const auto& p : points)
            if (!(p.rf.omega > 0) || p.rf.current < 0)
                throw ValidationError("ramp points need omega > 0 and current >= 0");
    }

    double t_begin() const { return points.front().t; }
    double t_end() const { return points.back().t; }
    double duration() const { return t_end() - t_begin(); }

    RfSetting at(double t) const {
        if (t <= points.front().t) return points.front().rf;
        if (t >= points.back().t) return points.back().rf;
        size_t hi = 1;
        while (points[hi].t < t) ++hi;
        const auto &a = points[hi - 1], &b = points[hi];
        const double f = (t - a.t) / (b.t - a.t);
        return {a.rf.omega + f * (b.rf.omega - a.rf.omega),
                a.rf.current + f * (b.rf.current - a.rf.current)};
    }
};

// Static trap centre: analytic thin-wire estimate from the first d.c. wire,
// then a deterministic zoom scan on |B|.
inline Vec3 find_static_minimum(const ChipLayout& layout) {
    layout.validate();
    const StripWire* dc = nullptr;
    for (const auto& w : layout.wires)
        if (w.kind == WireKind::dc && w.current != 0) {
            dc = &w;
            break;
        }
    if (!dc) throw ValidationError("no d.c. wire with current");
    const double c = constants::mu0 * dc->current / (2.0 * constants::pi);
    const double bb2 = layout.bias.x * layout.bias.x + layout.bias.y * layout.bias.y;
    if (!(bb2 > 0)) throw ValidationError("transverse bias required to close the trap");
    // zero of (thin wire + bias): p = c/|B|^2 * (-By, Bx) relative to the wire
    Vec3 p{dc->center.x - c / bb2 * layout.bias.y, dc->center.y + c / bb2 * layout.bias.x, 0};
    double half = 0.75 * std::sqrt(c * c / bb2);  // 3/4 of the wire distance
    for (int level = 0; level < 6; ++level) {
        const int n = 25;
        Vec3 best = p;
        double bmin = std::numeric_limits<double>::infinity();
        for (int iy = 0; iy < n; ++iy)
            for (int ix = 0; ix < n; ++ix) {
                Vec3 q{p.x + (-1.0 + 2.0 * ix / (n - 1)) * half,
                       p.y + (-1.0 + 2.0 * iy / (n - 1)) * half, 0};
                double b;
                try {
                    b = norm(static_field(layout, q));
                } catch (const DomainError&) {
                    continue;
                }
                if (b < bmin) {
                    bmin = b;
                    best = q;
                }
            }
        p = best;
        half *= 2.2 / (25 - 1);  // next level spans ~2 old cells
    }
    return p;
}

// Magnitude slope B' of the transverse quadrupole. The ioffe field rounds
// the bottom, |B(r)|^2 = B0^2 + (B' r)^2, so the slope has to be read off
// the linear zone, not from a difference quotient at the minimum (which is
// ~0 by symmetry). Probes outward until the quadrupole term dominates; a
// slight overestimate from wire-field nonlinearity only widens downstream
// scan windows, which is the safe direction.
inline double transverse_gradient(const ChipLayout& layout, const Vec3& centre,
                                  double h = 3e-6) {
    const double b0 = norm(static_field(layout, centre));
    double best = 0;
    for (int k = 0; k < 4; ++k, h *= 2.0) {
        const double bp = norm(static_field(layout, {centre.x + h, centre.y, 0}));
        const double bm = norm(static_field(layout, {centre.x - h, centre.y, 0}));
        const double b = std::max(bp, bm);
        const double s = std::sqrt(std::max(0.0, b * b - b0 * b0)) / h;
        best = std::max(best, s);
        if (s * h > 3.0 * b0) break;  // well inside the linear zone
    }
    return best;
}

// Radius at which the static Zeeman energy matches hbar*omega, in the local
// quadrupole model. Zero while the drive stays below the trap-bottom Larmor
// frequency. Used to size scan windows.
inline double resonance_radius_estimate(const ChipLayout& layout, const AtomSpecies& a,
                                        double omega_rf) {
    const Vec3 centre = find_static_minimum(layout);
    const double b0 = norm(static_field(layout, centre));
    const double b_res = constants::hbar * omega_rf / (constants::mu_bohr * a.g_f);
    if (b_res <= b0) return 0;
    const double grad = transverse_gradient(layout, centre);
    return std::sqrt(b_res * b_res - b0 * b0) / grad;
}

struct SplitScanOptions {
    double dx = 0.04e-6;          // map resolution near the bifurcation [m]
    double x_half_min = 9e-6;     // minimum half window along the split axis [m]
    double y_half = 4e-6;         // half window transverse to it [m]
    double coarse_dx = 0.25e-6;   // resolution used once the wells are far apart [m]
    int n_samples = 0;            // 0 = sample at the ramp knots
};

// Window chooser shared by the curve scan and the time-dependent solver cuts.
inline GridSpec2D split_scan_grid(const ChipLayout& layout, const AtomSpecies& a,
                                  const RfSetting& rf, const Vec3& centre,
                                  const SplitScanOptions& opt) {
    const double rad = resonance_radius_estimate(layout, a, rf.omega);
    const double xh = std::max(opt.x_half_min, 1.6 * rad + 6e-6);
    const double yh = std::max(opt.y_half, 1.2 * rad + 3e-6);
    double dx = xh > 3.0 * opt.x_half_min ? opt.coarse_dx : opt.dx;
    const int nx = 2 * static_cast<int>(std::ceil(xh / dx)) + 1;
    double dy = std::max(dx, opt.y_half / 40.0);
    const int ny = 2 * static_cast<int>(std::ceil(yh / dy)) + 1;
    return {centre.x - xh, centre.x + xh, nx, centre.y - yh, centre.y + yh, ny};
}

// Walk a ramp and measure the double-well geometry at each sample.
inline std::vector<std::pair<double, DoubleWellGeometry>>
splitting_curve(const ChipLayout& layout, const AtomSpecies& a, const RampSchedule& ramp,
                const SplitScanOptions& opt = {}) {
    ramp.validate();
    const Vec3 centre = find_static_minimum(layout);
    std::vector<double> ts;
    if (opt.n_samples > 1) {
        for (int i = 0; i < opt.n_samples; ++i)
            ts.push_back(ramp.t_begin() + ramp.duration() * i / (opt.n_samples - 1));
    } else {
        for (const auto& p : ramp.points) ts.push_back(p.t);
    }
    std::vector<std::pair<double, DoubleWellGeometry>> out;
    out.reserve(ts.size());
    for (double t : ts) {
        const RfSetting rf = ramp.at(t);
        const GridSpec2D grid = split_scan_grid(layout, a, rf, centre, opt);
        out.emplace_back(t, locate_wells(map_potential(layout, a, rf, grid)));
    }
    return out;
}

} // namespace splitsim
