#pragma once

// Two-mode (Josephson) reduction of the split condensate: a left and a right
// mode coupled by tunnelling through the barrier. Conventions used throughout:
//
//   z   = (N_right - N_left) / N          population imbalance
//   phi = arg(left) - arg(right)          relative phase, as relative_phase()
//   eps = E_right - E_left                well energy difference
//
// With these signs the classical equations are
//
//   dz/dt   = -(2J/hbar) sqrt(1-z^2) sin(phi)
//   dphi/dt = eps/hbar + (U N/hbar) z + (2J/hbar) z cos(phi)/sqrt(1-z^2)
//
// i.e. lifting the right well (eps > 0) or overfilling it (z > 0) makes its
// phase run ahead and phi grow. They conserve the classical energy per atom
//   h = (U N/4) z^2 + (eps/2) z - J sqrt(1-z^2) cos(phi).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include <lapacke.h>

#include "errors.hpp"
#include "gpe.hpp"

namespace splitsim {

struct TwoModeParams {
    double tunnel = 0;     // J, half the symmetric/antisymmetric splitting [J]
    double onsite = 0;     // U, interaction cost of moving one atom across [J]
    double imbalance = 0;  // eps = E_right - E_left [J]
    double atoms = 2;      // N entering the mean-field term U N z

    void validate() const {
        if (!(tunnel >= 0)) throw ValidationError("tunnel coupling must be >= 0");
        if (!(atoms >= 2)) throw ValidationError("two-mode model needs at least two atoms");
        if (!std::isfinite(onsite) || !std::isfinite(imbalance))
            throw ValidationError("two-mode parameters must be finite");
    }
};

struct TwoModeState {
    double z = 0;    // population imbalance in [-1, 1]
    double phi = 0;  // relative phase [rad]

    void validate() const {
        if (!(std::abs(z) <= 1)) throw ValidationError("population imbalance must be in [-1, 1]");
        if (!std::isfinite(phi)) throw ValidationError("relative phase must be finite");
    }
};

// classical two-mode energy per atom [J]; conserved for constant parameters
inline double two_mode_energy(const TwoModeState& s, const TwoModeParams& p) {
    return 0.25 * p.onsite * p.atoms * s.z * s.z + 0.5 * p.imbalance * s.z -
           p.tunnel * std::sqrt(std::max(0.0, 1.0 - s.z * s.z)) * std::cos(s.phi);
}

struct TwoModePoint {
    double t = 0;
    double z = 0;
    double phi = 0;  // reported unwrapped so slow drifts and quadratic growth stay fittable
};

struct TwoModeTrajectory {
    std::vector<TwoModePoint> points;  // initial state first, final state last
    bool clamped = false;              // |z| hit 1 and was pushed back onto the sphere
};

// Fixed-step RK4 over [t0, t1] with parameters sampled at the RK4 stage times.
// The phase is integrated without wrapping. The pole of the phase equation at
// |z| = 1 is regularised; a trajectory that actually reaches it sets the
// clamped flag and is only qualitative from there on.
inline TwoModeTrajectory evolve_two_mode(const TwoModeState& start,
                                         const std::function<TwoModeParams(double)>& params_at,
                                         double dt, double t0, double t1,
                                         size_t sample_every = 1) {
    start.validate();
    if (!(dt > 0)) throw ValidationError("two-mode time step must be > 0");
    if (!(t1 >= t0)) throw ValidationError("two-mode evolution must run forward in time");
    params_at(t0).validate();
    params_at(t1).validate();

    const size_t nsteps =
        t1 == t0 ? 0
                 : std::max<size_t>(1, static_cast<size_t>(std::ceil((t1 - t0) / dt - 1e-12)));
    const double h = nsteps ? (t1 - t0) / static_cast<double>(nsteps) : 0.0;

    struct Deriv {
        double z, phi;
    };
    auto rhs = [&params_at](double t, double z, double phi) {
        const TwoModeParams p = params_at(t);
        const double s = std::sqrt(std::max(1e-18, 1.0 - z * z));
        const double jr = 2.0 * p.tunnel / constants::hbar;
        return Deriv{-jr * s * std::sin(phi),
                     (p.imbalance + p.onsite * p.atoms * z) / constants::hbar +
                         jr * (z / s) * std::cos(phi)};
    };

    TwoModeTrajectory out;
    out.points.reserve(nsteps / std::max<size_t>(1, sample_every) + 2);
    double z = start.z, phi = start.phi;
    out.points.push_back({t0, z, phi});
    for (size_t s = 0; s < nsteps; ++s) {
        const double t = t0 + static_cast<double>(s) * h;
        const Deriv k1 = rhs(t, z, phi);
        const Deriv k2 = rhs(t + 0.5 * h, z + 0.5 * h * k1.z, phi + 0.5 * h * k1.phi);
        const Deriv k3 = rhs(t + 0.5 * h, z + 0.5 * h * k2.z, phi + 0.5 * h * k2.phi);
        const Deriv k4 = rhs(t + h, z + h * k3.z, phi + h * k3.phi);
        z += h / 6.0 * (k1.z + 2.0 * k2.z + 2.0 * k3.z + k4.z);
        phi += h / 6.0 * (k1.phi + 2.0 * k2.phi + 2.0 * k3.phi + k4.phi);
        if (std::abs(z) > 1.0) {
            z = std::clamp(z, -1.0, 1.0);
            out.clamped = true;
        }
        const bool last = (s + 1 == nsteps);
        if ((sample_every && (s + 1) % sample_every == 0) || last)
            out.points.push_back({t0 + static_cast<double>(s + 1) * h, z, phi});
    }
    return out;
}

inline TwoModeTrajectory evolve_two_mode(const TwoModeState& start, const TwoModeParams& params,
                                         double dt, double duration, size_t sample_every = 1) {
    params.validate();
    return evolve_two_mode(
        start, [&params](double) { return params; }, dt, 0.0, duration, sample_every);
}

// piecewise-linear parameter timeline, clamped outside its span
struct TwoModeSchedule {
    std::vector<double> times;
    std::vector<TwoModeParams> params;

    void validate() const {
        if (times.empty() || times.size() != params.size())
            throw ValidationError("two-mode schedule needs one parameter set per knot");
        for (size_t i = 1; i < times.size(); ++i)
            if (!(times[i] > times[i - 1]))
                throw ValidationError("two-mode schedule knots must be strictly increasing");
        for (const auto& p : params) p.validate();
    }

    TwoModeParams at(double t) const {
        if (times.size() == 1 || t <= times.front()) return params.front();
        if (t >= times.back()) return params.back();
        size_t hi = 1;
        while (times[hi] < t) ++hi;
        const double f = (t - times[hi - 1]) / (times[hi] - times[hi - 1]);
        const TwoModeParams &a = params[hi - 1], &b = params[hi];
        return {a.tunnel + f * (b.tunnel - a.tunnel), a.onsite + f * (b.onsite - a.onsite),
                a.imbalance + f * (b.imbalance - a.imbalance), a.atoms + f * (b.atoms - a.atoms)};
    }
};

namespace detail {

// parabola through three equidistant samples; returns the refined extremum value
inline double refine_extremum_value(double vm, double v0, double vp) {
    const double curv = vm - 2.0 * v0 + vp;
    if (curv == 0) return v0;
    const double slope = 0.5 * (vp - vm);
    return v0 - 0.5 * slope * slope / curv;
}

} // namespace detail

// Map a double-well cut onto the two-mode model:
//   J   = (E1 - E0)/2 from the two lowest single-particle levels (tridiagonal
//         finite differences, bisection + inverse iteration),
//   U   = g1d * integral |phi_onsite|^4 averaged over the left/right modes
//         built from the symmetric/antisymmetric pair,
//   eps = E_right - E_left from the parabola-refined well minima.
// Throws RegimeError when the cut has no barrier between two minima (around
// the bifurcation the levels cross over and the reduction is meaningless).
inline TwoModeParams extract_two_mode(const PotentialCut& cut, const AtomSpecies& species,
                                      const GpeParams& par) {
    cut.validate();
    species.validate();
    par.validate();
    const size_t n = cut.v.size();

    // locate the two deepest interior minima and the barrier between them
    std::vector<size_t> minima;
    for (size_t j = 1; j + 1 < n; ++j)
        if (cut.v[j] < cut.v[j - 1] && cut.v[j] <= cut.v[j + 1]) minima.push_back(j);
    if (minima.size() > 2)
        std::sort(minima.begin(), minima.end(),
                  [&](size_t a, size_t b) { return cut.v[a] < cut.v[b]; });
    if (minima.size() < 2)
        throw RegimeError("potential cut is not a double well: fewer than two minima");
    size_t jl = minima[0], jr = minima[1];
    if (jl > jr) std::swap(jl, jr);
    size_t jb = jl;
    for (size_t j = jl; j <= jr; ++j)
        if (cut.v[j] > cut.v[jb]) jb = j;
    if (!(cut.v[jb] > cut.v[jl] && cut.v[jb] > cut.v[jr]))
        throw RegimeError("potential cut is not a double well: no barrier between the minima");

    const auto sc = detail::solver_scales(species, par.scale_omega);
    const double dxi = cut.dx / sc.length;

    // lowest two levels of the discrete single-particle Hamiltonian
    std::vector<double> diag(n), off(n - 1);
    const double k = 0.5 / (dxi * dxi);
    for (size_t j = 0; j < n; ++j) diag[j] = 2.0 * k + cut.v[j] / sc.energy;
    std::fill(off.begin(), off.end(), -k);

    lapack_int m = 0;
    std::vector<double> w(n), vecs(n * 2);
    std::vector<lapack_int> isuppz(2 * n);
    const lapack_int info = LAPACKE_dstevr(
        LAPACK_COL_MAJOR, 'V', 'I', static_cast<lapack_int>(n), diag.data(), off.data(), 0.0,
        0.0, 1, 2, 0.0, &m, w.data(), vecs.data(), static_cast<lapack_int>(n), isuppz.data());
    if (info != 0 || m != 2) {
        char msg[96];
        std::snprintf(msg, sizeof msg, "level solve failed (info %d, found %d of 2)",
                      static_cast<int>(info), static_cast<int>(m));
        throw ConvergenceError(msg);
    }

    TwoModeParams out;
    // ascending levels; the max() only absorbs roundoff when the pair is degenerate
    out.tunnel = std::max(0.0, 0.5 * (w[1] - w[0]) * sc.energy);
    out.atoms = par.atoms;
    out.imbalance =
        detail::refine_extremum_value(cut.v[jr - 1], cut.v[jr], cut.v[jr + 1]) -
        detail::refine_extremum_value(cut.v[jl - 1], cut.v[jl], cut.v[jl + 1]);

    // On-site modes: rotate the level pair so one combination lives in each
    // well. For a resolved symmetric pair this lands on (g0 +- g1)/sqrt(2); for
    // a quasi-degenerate pair the eigensolver returns an arbitrary mix of the
    // two, and only the rotation that maximises the right-side weight
    //   r(theta) = <u_R|P_R|u_R> + <u_L|P_L|u_L>,   2 theta = atan2(2c, a - b)
    // recovers the localised modes U is defined on.
    double a = 0, bq = 0, cq = 0;
    for (size_t j = jb; j < n; ++j) {
        a += vecs[j] * vecs[j];
        bq += vecs[n + j] * vecs[n + j];
        cq += vecs[j] * vecs[n + j];
    }
    const double th = 0.5 * std::atan2(2.0 * cq, a - bq);
    const double ct = std::cos(th), st = std::sin(th);
    double quart = 0;
    for (size_t j = 0; j < n; ++j) {
        const double ur = ct * vecs[j] + st * vecs[n + j];
        const double ul = -st * vecs[j] + ct * vecs[n + j];
        quart += 0.5 * (ur * ur * ur * ur + ul * ul * ul * ul);
    }
    // sum v^4 / dxi is integral phi^4 dxi; one more length scale converts to SI
    out.onsite = par.g1d * quart / (dxi * sc.length);
    return out;
}

// ---- phase locking along a splitting sequence ---------------------------------

struct PhaseLockOptions {
    double threshold = 5.0 * constants::pi / 180.0;  // lock criterion on |phi| [rad]
};

struct PhaseLockReport {
    bool crossed = false;          // chemical potential dropped below the barrier top
    double t_star = 0;             // [s] interpolated crossing time
    double d_star = 0;             // [m] well separation at the crossing
    double max_phase_before = 0;   // largest |phi| while mu > barrier [rad]
    double max_phase_after = 0;    // largest |phi| afterwards [rad]
    bool locked = false;           // max_phase_before < threshold
};

// Scan a splitting timeline for the moment the chemical potential falls below
// the barrier top and summarise how the relative phase behaved on either side.
// Until that crossing the condensates stay connected and the phase cannot run
// away; afterwards any energy imbalance winds it up freely.
inline PhaseLockReport phase_locking_test(const std::vector<SplitSample>& timeline,
                                          const PhaseLockOptions& opts = {}) {
    if (timeline.empty()) throw ValidationError("phase locking needs a non-empty timeline");

    PhaseLockReport rep;
    size_t cross = timeline.size();
    for (size_t i = 0; i < timeline.size(); ++i) {
        const auto& s = timeline[i];
        if (s.geometry.n_wells != 2) continue;
        if (s.mu <= s.geometry.saddle_value) {
            cross = i;
            break;
        }
    }
    if (cross < timeline.size()) {
        rep.crossed = true;
        const auto& b = timeline[cross];
        rep.t_star = b.t;
        rep.d_star = b.geometry.d;
        if (cross > 0 && timeline[cross - 1].geometry.n_wells == 2) {
            const auto& a = timeline[cross - 1];
            const double fa = a.mu - a.geometry.saddle_value;
            const double fb = b.mu - b.geometry.saddle_value;
            if (fa > 0 && fb < fa) {
                const double f = fa / (fa - fb);
                rep.t_star = a.t + f * (b.t - a.t);
                rep.d_star = a.geometry.d + f * (b.geometry.d - a.geometry.d);
            }
        }
    }
    for (const auto& s : timeline) {
        const double p = std::abs(wrap_angle(s.phase));
        if (!rep.crossed || s.t <= rep.t_star)
            rep.max_phase_before = std::max(rep.max_phase_before, p);
        else
            rep.max_phase_after = std::max(rep.max_phase_after, p);
    }
    rep.locked = rep.max_phase_before < opts.threshold;
    return rep;
}

} // namespace splitsim
