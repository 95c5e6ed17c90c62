#pragma once

#include <cmath>
#include <vector>

#include "constants.hpp"
#include "errors.hpp"
#include "vec3.hpp"

namespace splitsim {

enum class WireKind { dc, rf };

// Infinitely long, zero-thickness strip conductor. The strip runs along z
// (the long axis of the trap), lies in the plane y = center.y and extends
// width/2 to either side of center.x. Current flows in +z for current > 0.
//
// For rf wires `current` is the oscillation amplitude and `rf_omega` the
// angular drive frequency; the field is treated quasi-statically (amplitude
// vector at the drive frequency).
struct StripWire {
    Vec3 center;
    double width = 0;       // [m]
    double current = 0;     // [A]
    WireKind kind = WireKind::dc;
    double rf_omega = 0;    // [rad/s], rf wires only

    void validate() const {
        if (!(width > 0))
            throw ValidationError("wire width must be > 0");
        if (!std::isfinite(current))
            throw ValidationError("wire current must be finite");
        if (kind == WireKind::rf && !(rf_omega > 0))
            throw ValidationError("rf wire needs a positive drive frequency");
    }
};

// Chip wires plus the homogeneous external fields. `bias` is the transverse
// bias coil field; `ioffe` is the longitudinal (z) field that lifts the trap
// bottom away from zero. Gravity, when enabled, adds -m g (dir . r) to the
// potential (dir is the direction gravity pulls, default -y).
struct ChipLayout {
    std::vector<StripWire> wires;
    Vec3 bias;                        // [T]
    double ioffe = 0;                 // [T]
    bool gravity = false;
    Vec3 gravity_direction{0, -1, 0};

    bool has_dc() const {
        for (const auto& w : wires)
            if (w.kind == WireKind::dc) return true;
        return false;
    }
    bool has_rf() const {
        for (const auto& w : wires)
            if (w.kind == WireKind::rf) return true;
        return false;
    }

    void validate(bool require_static_trap = true) const {
        for (const auto& w : wires) w.validate();
        if (require_static_trap && !has_dc())
            throw ValidationError("layout has no d.c. wire, cannot form a static trap");
        if (require_static_trap && std::abs(ioffe) <= 0.0)
            throw ValidationError("Ioffe field must be non-zero to avoid a zero-field point");
        if (gravity && !(norm(gravity_direction) > 0))
            throw ValidationError("gravity enabled but direction vector is zero");
    }
};

// Field of one strip at point p (translational invariance in z -> Bz = 0).
// Closed form from integrating thin-wire contributions across the width:
//   Bx = -mu0 K / (2 pi) * [atan(x2/Y) - atan(x1/Y)]
//   By =  mu0 K / (4 pi) * ln((x2^2+Y^2)/(x1^2+Y^2))
// with K = I/width, x1,2 = x offsets to the strip edges, Y the height above
// the strip plane. Throws if p lies on the conductor itself.
inline Vec3 strip_field(const StripWire& wire, const Vec3& p) {
    const double yy = p.y - wire.center.y;
    const double x1 = p.x - wire.center.x - 0.5 * wire.width;
    const double x2 = p.x - wire.center.x + 0.5 * wire.width;
    if (yy == 0.0 && x1 <= 0.0 && x2 >= 0.0)
        throw DomainError("field requested on the conductor");
    if (wire.current == 0.0) return {};

    if (wire.width == 0.0) {
        // thin-wire limit, kept as a convenience for synthetic layouts
        const double r2 = p.x - wire.center.x, r2y = yy;
        const double rr = r2 * r2 + r2y * r2y;
        const double c = constants::mu0 * wire.current / (2.0 * constants::pi * rr);
        return {-c * r2y, c * r2, 0.0};
    }

    const double c = constants::mu0 * wire.current / (2.0 * constants::pi * wire.width);
    double bx;
    if (yy == 0.0) {
        bx = 0.0; // in-plane, outside the strip: thin-wire Bx contributions cancel
    } else {
        bx = -c * (std::atan(x2 / yy) - std::atan(x1 / yy));
    }
    const double by = 0.5 * c * std::log((x2 * x2 + yy * yy) / (x1 * x1 + yy * yy));
    return {bx, by, 0.0};
}

// Static field: all d.c. strips + bias coils + Ioffe field along z.
inline Vec3 static_field(const ChipLayout& layout, const Vec3& p) {
    Vec3 b = layout.bias;
    b.z += layout.ioffe;
    for (const auto& w : layout.wires)
        if (w.kind == WireKind::dc) b += strip_field(w, p);
    return b;
}

// RF amplitude vector: coherent sum of all rf strips (common drive phase).
inline Vec3 rf_field_vector(const ChipLayout& layout, const Vec3& p) {
    if (!layout.has_rf())
        throw ValidationError("layout has no rf wire");
    Vec3 b;
    for (const auto& w : layout.wires)
        if (w.kind == WireKind::rf) b += strip_field(w, p);
    return b;
}

// Drive frequency shared by the rf wires of a layout. Wires may be listed
// with individual frequencies for bookkeeping but a mixed set is rejected:
// the dressed-potential model assumes a single drive.
inline double rf_drive_omega(const ChipLayout& layout) {
    double omega = 0;
    for (const auto& w : layout.wires) {
        if (w.kind != WireKind::rf) continue;
        if (omega == 0)
            omega = w.rf_omega;
        else if (w.rf_omega != omega)
            throw ValidationError("rf wires with different drive frequencies");
    }
    if (omega == 0)
        throw ValidationError("layout has no rf wire");
    return omega;
}

} // namespace splitsim
