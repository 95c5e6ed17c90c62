#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "constants.hpp"
#include "dressed_potential.hpp"
#include "errors.hpp"
#include "fft.hpp"

namespace splitsim {

inline bool is_pow2(size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

// wrap an angle to (-pi, pi]
inline double wrap_angle(double a) {
    a = std::fmod(a + constants::pi, 2.0 * constants::pi);
    if (a <= 0) a += 2.0 * constants::pi;
    return a - constants::pi;
}

// Complex amplitude on a uniform grid centred on x = 0: x_i = (i - n/2) dx.
// The amplitude is kept at unit norm (sum |psi|^2 dx = 1); the atom number
// rides along separately so line densities can be rescaled without touching
// the state itself.
struct Wavefunction {
    std::vector<std::complex<double>> amp;
    double dx = 0;                            // [m]
    double atoms = 1;
    double time = 0;                          // [s]
    AtomSpecies species = AtomSpecies::rb87();

    size_t size() const { return amp.size(); }
    double x(size_t i) const {
        return (static_cast<double>(i) - static_cast<double>(amp.size() / 2)) * dx;
    }

    void validate() const {
        if (!is_pow2(amp.size()))
            throw ValidationError("wavefunction grid size must be a power of two (>= 2)");
        if (!(dx > 0)) throw ValidationError("wavefunction grid spacing must be > 0");
        if (!(atoms > 0)) throw ValidationError("atom number must be > 0");
        species.validate();
    }

    double norm() const {
        double s = 0;
        for (const auto& a : amp) s += std::norm(a);
        return s * dx;
    }

    void normalize() {
        const double n = norm();
        if (!(n > 0)) throw ValidationError("cannot normalise a null wavefunction");
        const double f = 1.0 / std::sqrt(n);
        for (auto& a : amp) a *= f;
    }

    double mean_position() const {
        double s = 0, w = 0;
        for (size_t i = 0; i < amp.size(); ++i) {
            const double d = std::norm(amp[i]);
            s += d * x(i);
            w += d;
        }
        return s / w;
    }

    double rms_width() const {
        const double x0 = mean_position();
        double s = 0, w = 0;
        for (size_t i = 0; i < amp.size(); ++i) {
            const double d = std::norm(amp[i]);
            const double r = x(i) - x0;
            s += d * r * r;
            w += d;
        }
        return std::sqrt(s / w);
    }

    // atoms per metre
    std::vector<double> line_density() const {
        std::vector<double> out(amp.size());
        for (size_t i = 0; i < amp.size(); ++i) out[i] = atoms * std::norm(amp[i]);
        return out;
    }
};

// a potential sampled on the same centred grid the wavefunction lives on
struct PotentialCut {
    std::vector<double> v;  // [J]
    double dx = 0;          // [m]

    void validate() const {
        if (v.size() < 2 || !(dx > 0)) throw ValidationError("empty potential cut");
        for (double e : v)
            if (!std::isfinite(e)) throw ValidationError("potential cut contains non-finite values");
    }
    double x(size_t i) const {
        return (static_cast<double>(i) - static_cast<double>(v.size() / 2)) * dx;
    }
};

namespace detail {

inline void require_match(const Wavefunction& wf, const PotentialCut& cut) {
    if (cut.v.size() != wf.size() ||
        std::abs(cut.dx - wf.dx) > 1e-12 * std::max(cut.dx, wf.dx))
        throw GridError("potential cut does not match the wavefunction grid");
}

} // namespace detail

struct GpeParams {
    double g1d = 0;           // effective 1d coupling [J m]
    double atoms = 1;         // N entering the nonlinear term
    double dt = 1e-7;         // real-time step [s]; the step guard in evolve()
                              // rejects this if it is too coarse for the potential
    double scale_omega = 2.0 * constants::pi * 2.1e3;  // reference frequency fixing
                                                       // the internal dimensionless units

    void validate() const {
        if (g1d < 0) throw ValidationError("g1d must be >= 0");
        if (!(atoms > 0)) throw ValidationError("atom number must be > 0");
        if (!(dt > 0)) throw ValidationError("time step must be > 0");
        if (!(scale_omega > 0)) throw ValidationError("scale frequency must be > 0");
    }
};

// effective 1d coupling of a transversally frozen cloud: g = 2 hbar w_perp a_s
inline double coupling_g1d(const AtomSpecies& a, double omega_perp) {
    return 2.0 * constants::hbar * omega_perp * a.scattering_length;
}

namespace detail {

// the solver works in units hbar = m = 1 with time measured in 1/scale_omega;
// everything is O(1) there, which keeps the exponential kicks well conditioned
struct Scales {
    double length = 0;  // sqrt(hbar / (m w)) [m]
    double energy = 0;  // hbar w [J]
    double tunit = 0;   // 1 / w [s]
};

inline Scales solver_scales(const AtomSpecies& sp, double omega_ref) {
    return {std::sqrt(constants::hbar / (sp.mass * omega_ref)),
            constants::hbar * omega_ref, 1.0 / omega_ref};
}

// dimensionless kinetic factors k_j^2 / 2 for each fft bin
inline std::vector<double> kinetic_factors(size_t n, double dxi) {
    std::vector<double> t(n);
    for (size_t j = 0; j < n; ++j) {
        const double k = fft_wavenumber(j, n, dxi);
        t[j] = 0.5 * k * k;
    }
    return t;
}

} // namespace detail

// ---- energies ---------------------------------------------------------------

struct EnergyBreakdown {
    double kinetic = 0;      // [J] per atom
    double potential = 0;
    double interaction = 0;  // (g1d N / 2) * integral |psi|^4
    double total = 0;
};

inline EnergyBreakdown energy_breakdown(const Wavefunction& wf, const PotentialCut& cut,
                                        const GpeParams& par) {
    wf.validate();
    cut.validate();
    par.validate();
    detail::require_match(wf, cut);
    const size_t n = wf.size();
    EnergyBreakdown e;

    std::vector<std::complex<double>> c(wf.amp);
    Fft1D fft(n);
    fft.forward(c.data());
    const double kin_pref = constants::hbar * constants::hbar / (2.0 * wf.species.mass);
    double kin = 0;
    for (size_t j = 0; j < n; ++j) {
        const double k = fft_wavenumber(j, n, wf.dx);
        kin += k * k * std::norm(c[j]);
    }
    e.kinetic = kin_pref * kin * wf.dx / static_cast<double>(n);

    double pot = 0, quart = 0;
    for (size_t j = 0; j < n; ++j) {
        const double d = std::norm(wf.amp[j]);
        pot += cut.v[j] * d;
        quart += d * d;
    }
    e.potential = pot * wf.dx;
    e.interaction = 0.5 * par.g1d * par.atoms * quart * wf.dx;
    e.total = e.kinetic + e.potential + e.interaction;
    return e;
}

inline double total_energy(const Wavefunction& wf, const PotentialCut& cut,
                           const GpeParams& par) {
    return energy_breakdown(wf, cut, par).total;
}

// Eigenvalue of the stationary nonlinear equation: mu = E_kin + E_pot +
// g1d N * integral |psi|^4. Equals the total energy when g1d = 0, and in the
// strongly interacting limit reproduces density = (mu - V)/g1d in the bulk.
inline double chemical_potential(const Wavefunction& wf, const PotentialCut& cut,
                                 const GpeParams& par) {
    const EnergyBreakdown e = energy_breakdown(wf, cut, par);
    return e.kinetic + e.potential + 2.0 * e.interaction;
}

// Potential clipping level for real-time propagation: far above both the
// chemical potential and the reference energy, so the clipped region carries
// only exponentially small density (and any inter-well barrier, which peaks
// near mu, stays uncapped), yet low enough that steep confining walls do not
// force an absurdly small step through the stability guard.
inline double auto_cap_height(const Wavefunction& wf, const PotentialCut& cut,
                              const GpeParams& par) {
    const double vmin = *std::min_element(cut.v.begin(), cut.v.end());
    const double mu = chemical_potential(wf, cut, par);
    return 12.0 * std::max(constants::hbar * par.scale_omega, mu - vmin);
}

// ---- ground state -----------------------------------------------------------

struct GroundStateOptions {
    size_t max_iterations = 200000;  // across all stages
    // Final-stage stopping criterion on the relaxation velocity |dpsi/dtau|
    // (dimensionless L2 norm). Velocity is linear in the amplitude of any
    // leftover excitation, unlike the energy change which is quadratic and
    // goes blind long before the density has actually settled.
    double tolerance = 1e-7;
    // imaginary step sizes in units of 1/scale_omega; each stage runs to a
    // tolerance 30x looser than the next so the expensive small steps only
    // polish an already converged state
    std::vector<double> stage_dtau = {0.5, 0.1, 0.02, 0.004, 0.002, 0.001};
    // The fixed point of the split imaginary step is offset from the true
    // ground state at first order in dtau (the nonlinear term sees a density
    // that changes within the step). With the offset linear and the last two
    // stages converged, extrapolating across them removes it.
    bool extrapolate = true;
};

struct GroundStateResult {
    Wavefunction state;
    std::vector<double> energy_trace;  // absolute energy after every iteration [J]
    std::vector<size_t> stage_bounds;  // trace index where each stage ended
    size_t iterations = 0;
};

// Imaginary-time relaxation with Strang splitting and renormalisation after
// every step. The energy decreases monotonically within a stage; the
// extrapolation across the last two stages removes the O(dtau) bias of the
// fixed point.
inline GroundStateResult ground_state(const PotentialCut& cut, const AtomSpecies& species,
                                      const GpeParams& par, GroundStateOptions opts = {}) {
    cut.validate();
    species.validate();
    par.validate();
    const size_t n = cut.v.size();
    if (!is_pow2(n)) throw ValidationError("solver grid size must be a power of two");
    if (opts.stage_dtau.empty()) throw ValidationError("need at least one imaginary-time stage");

    const auto sc = detail::solver_scales(species, par.scale_omega);
    const double dxi = cut.dx / sc.length;
    const double vmin = *std::min_element(cut.v.begin(), cut.v.end());
    std::vector<double> vt(n);
    for (size_t j = 0; j < n; ++j) vt[j] = (cut.v[j] - vmin) / sc.energy;
    const double gt = par.g1d * par.atoms / (sc.energy * sc.length);

    // spread the starting guess with a Boltzmann-like profile so single and
    // double wells are both covered without branching
    std::vector<double> vs(vt);
    std::nth_element(vs.begin(), vs.begin() + n / 2, vs.end());
    const double t0 = std::max(1.0, vs[n / 2] / 6.0);
    std::vector<std::complex<double>> psi(n);
    for (size_t j = 0; j < n; ++j) psi[j] = std::exp(-vt[j] / (2.0 * t0)) + 1e-9;

    auto renorm = [&] {
        double s = 0;
        for (const auto& a : psi) s += std::norm(a);
        const double f = 1.0 / std::sqrt(s * dxi);
        for (auto& a : psi) a *= f;
    };
    renorm();

    Fft1D fft(n);
    const std::vector<double> tfac = detail::kinetic_factors(n, dxi);
    std::vector<std::complex<double>> work(n);

    // dimensionless energy of the offset potential; the offset would otherwise
    // mask relative changes when the cut sits on a large constant pedestal
    auto energy_now = [&]() {
        work = psi;
        fft.forward(work.data());
        double kin = 0, tot = 0;
        for (size_t j = 0; j < n; ++j) kin += tfac[j] * std::norm(work[j]);
        for (size_t j = 0; j < n; ++j) {
            const double d = std::norm(psi[j]);
            tot += (vt[j] + 0.5 * gt * d) * d;
        }
        return kin * dxi / static_cast<double>(n) + tot * dxi;
    };

    GroundStateResult res;
    std::vector<std::complex<double>> prev(n), penult;
    size_t iter = 0;
    const size_t nstage = opts.stage_dtau.size();
    for (size_t s = 0; s < nstage; ++s) {
        const double dtau = opts.stage_dtau[s];
        if (!(dtau > 0)) throw ValidationError("imaginary-time steps must be > 0");
        const bool final_stage = (s + 1 == nstage);
        // The two stages feeding the extrapolation must both reach the final
        // tolerance or their difference is unconverged noise, not the offset.
        double tol = opts.tolerance;
        if (s + 2 < nstage)
            for (size_t k = s + 2; k < nstage; ++k) tol = std::min(tol * 30.0, 3e-3);
        // Large steps are rough positioning: at strong coupling they can sit on
        // a limit cycle and never meet a velocity tolerance, so give non-final
        // stages a budget and a stagnation exit instead of failing there.
        const size_t stage_cap = final_stage
                                     ? opts.max_iterations
                                     : std::min(opts.max_iterations,
                                                iter + std::max<size_t>(1000, opts.max_iterations / 40));

        std::vector<double> kdecay(n);
        for (size_t j = 0; j < n; ++j) kdecay[j] = std::exp(-tfac[j] * dtau);

        double vel_mark = std::numeric_limits<double>::infinity();
        size_t stage_it = 0;
        for (;;) {
            if (iter >= stage_cap) {
                if (!final_stage) break;
                char msg[160];
                std::snprintf(msg, sizeof msg,
                              "imaginary-time relaxation did not converge; last energy %.9e J",
                              res.energy_trace.empty()
                                  ? energy_now() * sc.energy + vmin
                                  : res.energy_trace.back());
                throw ConvergenceError(msg);
            }
            prev = psi;
            for (size_t j = 0; j < n; ++j)
                psi[j] *= std::exp(-(vt[j] + gt * std::norm(psi[j])) * dtau * 0.5);
            fft.forward(psi.data());
            for (size_t j = 0; j < n; ++j) psi[j] *= kdecay[j];
            fft.backward(psi.data());
            // the norm decays during the step; the second kick must see a unit-
            // norm density or the nonlinear term biases the fixed point
            double cur = 0;
            for (const auto& a : psi) cur += std::norm(a);
            const double g2 = gt / (cur * dxi);
            for (size_t j = 0; j < n; ++j)
                psi[j] *= std::exp(-(vt[j] + g2 * std::norm(psi[j])) * dtau * 0.5);
            renorm();
            ++iter;
            ++stage_it;

            res.energy_trace.push_back(energy_now() * sc.energy + vmin);
            double dn = 0;
            for (size_t j = 0; j < n; ++j) dn += std::norm(psi[j] - prev[j]);
            const double vel = std::sqrt(dn * dxi) / dtau;
            if (vel <= tol) break;
            if (!final_stage && stage_it % 200 == 0) {
                if (vel > 0.9 * vel_mark) break;  // stalled or cycling, smaller steps will help
                vel_mark = vel;
            }
        }
        res.stage_bounds.push_back(res.energy_trace.size());
        if (opts.extrapolate && s + 2 == nstage) penult = psi;
    }

    if (opts.extrapolate && nstage >= 2 && !penult.empty()) {
        // states converged at the last two dtau values straddle the true ground
        // state linearly; eliminate the leading offset between them
        const double h1 = opts.stage_dtau[nstage - 2], h2 = opts.stage_dtau[nstage - 1];
        const double w1 = -h2 / (h1 - h2), w2 = h1 / (h1 - h2);
        for (size_t j = 0; j < n; ++j) psi[j] = w1 * penult[j] + w2 * psi[j];
        renorm();
        res.energy_trace.push_back(energy_now() * sc.energy + vmin);
    }

    Wavefunction wf;
    wf.amp.resize(n);
    const double to_si = 1.0 / std::sqrt(sc.length);
    for (size_t j = 0; j < n; ++j) wf.amp[j] = psi[j] * to_si;
    wf.dx = cut.dx;
    wf.atoms = par.atoms;
    wf.time = 0;
    wf.species = species;
    wf.normalize();  // absorb the dxi-vs-dx rounding of the two normalisations
    res.state = std::move(wf);
    res.iterations = iter;
    return res;
}

// ---- real-time propagation --------------------------------------------------

// potential snapshots at strictly increasing times, linearly interpolated
struct PotentialTimeline {
    std::vector<double> times;                // [s]
    std::vector<std::vector<double>> frames;  // one V(x) per knot [J]
    double dx = 0;

    static PotentialTimeline single(const PotentialCut& cut) {
        cut.validate();
        return {{0.0}, {cut.v}, cut.dx};
    }

    void validate() const {
        if (times.empty() || times.size() != frames.size())
            throw ValidationError("potential timeline needs one frame per knot");
        if (!(dx > 0)) throw ValidationError("potential timeline needs a grid spacing");
        for (size_t i = 1; i < times.size(); ++i) {
            if (!(times[i] > times[i - 1]))
                throw ValidationError("timeline knots must be strictly increasing");
            if (frames[i].size() != frames[0].size())
                throw ValidationError("timeline frames must share one grid");
        }
    }

    // clamped linear interpolation
    void value_at(double t, std::vector<double>& out) const {
        const size_t m = times.size();
        if (m == 1 || t <= times.front()) {
            out = frames.front();
            return;
        }
        if (t >= times.back()) {
            out = frames.back();
            return;
        }
        size_t hi = 1;
        while (times[hi] < t) ++hi;
        const double f = (t - times[hi - 1]) / (times[hi] - times[hi - 1]);
        const auto &a = frames[hi - 1], &b = frames[hi];
        out.resize(a.size());
        for (size_t j = 0; j < a.size(); ++j) out[j] = a[j] + f * (b[j] - a[j]);
    }
};

struct EvolveOptions {
    std::function<void(double, const Wavefunction&)> observer;  // t + current state
    size_t sample_every = 0;        // steps between observer calls (0 = only at the end)
    double cap_height = std::numeric_limits<double>::infinity();  // clip V at min+cap [J]
    std::function<double(double)> g_factor;  // time-dependent coupling scale
    bool guard = true;  // reject steps too coarse for the potential, the state's
                        // kinetic energy, or (interacting) the grid's k_max
};

// Strang-split spectral step: half potential kick, full kinetic step, half
// potential kick, with the frame interpolated at each step midpoint and the
// nonlinear term using the instantaneous density. Unitary up to roundoff.
inline void evolve(Wavefunction& wf, const PotentialTimeline& pot, const GpeParams& par,
                   double t0, double t1, const EvolveOptions& opts = {}) {
    wf.validate();
    par.validate();
    pot.validate();
    if (pot.frames[0].size() != wf.size() ||
        std::abs(pot.dx - wf.dx) > 1e-12 * std::max(pot.dx, wf.dx))
        throw GridError("potential timeline does not match the wavefunction grid");
    if (!(t1 >= t0)) throw ValidationError("evolution must run forward in time");
    if (t1 == t0) return;  // identity, bit for bit

    const size_t n = wf.size();
    const size_t nsteps =
        std::max<size_t>(1, static_cast<size_t>(std::ceil((t1 - t0) / par.dt - 1e-12)));
    const double dt = (t1 - t0) / static_cast<double>(nsteps);

    const auto sc = detail::solver_scales(wf.species, par.scale_omega);
    const double dxi = wf.dx / sc.length;
    const double dtt = dt / sc.tunit;
    const double gt0 = par.g1d * par.atoms / (sc.energy * sc.length);

    std::vector<std::complex<double>> psi(n);
    const double to_dimless = std::sqrt(sc.length);
    for (size_t j = 0; j < n; ++j) psi[j] = wf.amp[j] * to_dimless;

    Fft1D fft(n);
    const std::vector<double> tfac = detail::kinetic_factors(n, dxi);
    std::vector<std::complex<double>> kphase(n);
    for (size_t j = 0; j < n; ++j)
        kphase[j] = std::polar(1.0, -tfac[j] * dtt);

    // With a nonlinear term, grid modes whose kinetic phase advances by more
    // than pi per step sit in the parametric gain windows of the split map and
    // grow out of the roundoff floor. Harmless at g = 0 (the kinetic step is
    // exact there no matter how far the phase wraps), so only guard
    // interacting runs.
    if (opts.guard && gt0 != 0) {
        const double tmax = *std::max_element(tfac.begin(), tfac.end());
        if (dtt * tmax >= constants::pi) {
            char msg[200];
            std::snprintf(msg, sizeof msg,
                          "time step too coarse for this grid: dt*T_max/hbar = %.3g must stay "
                          "below pi or high-k modes are resonantly amplified",
                          dtt * tmax);
            throw StepSizeError(msg);
        }
    }

    std::vector<double> vbuf, nl(n);
    Wavefunction probe;  // reused for observer callbacks

    for (size_t s = 0; s < nsteps; ++s) {
        const double tm = t0 + (static_cast<double>(s) + 0.5) * dt;
        pot.value_at(tm, vbuf);
        double vmin = vbuf[0];
        for (double v : vbuf) vmin = std::min(vmin, v);
        const double cap = vmin + opts.cap_height;
        const double gt = gt0 * (opts.g_factor ? opts.g_factor(tm) : 1.0);

        double nlmax = 0;
        for (size_t j = 0; j < n; ++j) {
            nl[j] = (std::min(vbuf[j], cap) - vmin) / sc.energy + gt * std::norm(psi[j]);
            nlmax = std::max(nlmax, nl[j]);
        }
        if (opts.guard && dtt * nlmax >= 0.1) {
            char msg[160];
            std::snprintf(msg, sizeof msg,
                          "time step too coarse: dt*V_max/hbar = %.3g (need < 0.1)",
                          dtt * nlmax);
            throw StepSizeError(msg);
        }
        // The frame minimum is peeled off above only so the guard sees the span;
        // it stays in the applied phase. Gauging it away per frame would make the
        // accumulated phase depend on how the steps sample vmin(t), so two runs
        // of the same problem at different step sizes would disagree by a pure
        // phase.
        const double vbase = vmin / sc.energy;
        for (size_t j = 0; j < n; ++j)
            psi[j] *= std::polar(1.0, -(nl[j] + vbase) * dtt * 0.5);

        fft.forward(psi.data());
        if (opts.guard) {
            double tw = 0, nn = 0;
            for (size_t j = 0; j < n; ++j) {
                const double d = std::norm(psi[j]);
                tw += tfac[j] * d;
                nn += d;
            }
            if (dtt * tw / nn >= 0.1) {
                char msg[160];
                std::snprintf(msg, sizeof msg,
                              "time step too coarse: dt*E_kin/hbar = %.3g (need < 0.1)",
                              dtt * tw / nn);
                throw StepSizeError(msg);
            }
        }
        for (size_t j = 0; j < n; ++j) psi[j] *= kphase[j];
        fft.backward(psi.data());

        for (size_t j = 0; j < n; ++j) {
            const double ph =
                (std::min(vbuf[j], cap) - vmin) / sc.energy + vbase + gt * std::norm(psi[j]);
            psi[j] *= std::polar(1.0, -ph * dtt * 0.5);
        }

        const bool last = (s + 1 == nsteps);
        if (opts.observer && ((opts.sample_every && (s + 1) % opts.sample_every == 0) || last)) {
            probe.amp.resize(n);
            const double to_si = 1.0 / to_dimless;
            for (size_t j = 0; j < n; ++j) probe.amp[j] = psi[j] * to_si;
            probe.dx = wf.dx;
            probe.atoms = wf.atoms;
            probe.species = wf.species;
            probe.time = t0 + static_cast<double>(s + 1) * dt;
            opts.observer(probe.time, probe);
        }
    }

    const double to_si = 1.0 / to_dimless;
    for (size_t j = 0; j < n; ++j) wf.amp[j] = psi[j] * to_si;
    wf.time += (t1 - t0);
}

// convenience: static potential
inline void evolve(Wavefunction& wf, const PotentialCut& cut, const GpeParams& par,
                   double duration, const EvolveOptions& opts = {}) {
    evolve(wf, PotentialTimeline::single(cut), par, wf.time, wf.time + duration, opts);
}

// ---- time of flight ---------------------------------------------------------

struct TofOptions {
    bool interactions = false;
    size_t grid = 8192;               // zero-padded grid size (power of two)
    double dt = 0;                    // interacting path step; 0 = params.dt
    bool dilute = true;               // g(t) = g / sqrt(1 + (w_perp t)^2) after release
    double transverse_omega = 2.0 * constants::pi * 2.1e3;
    double margin = 0.9;              // fraction of the half window the cloud may fill
    double interact_until = 0;        // integrate interactions only this long after
                                      // release, then finish with one exact free step
                                      // (dilution + dropping density make the leftover
                                      // interaction phase negligible); 0 = full span
};

// Free expansion after a sudden trap switch-off. Interactions off: one exact
// spectral step (the free propagator is diagonal in k). Interactions on:
// split-step evolution on V = 0 with the 1d coupling optionally diluted as the
// transverse direction expands.
inline Wavefunction time_of_flight(const Wavefunction& in, double t, const GpeParams& par,
                                   const TofOptions& opts = {}) {
    in.validate();
    par.validate();
    if (!(t >= 0)) throw ValidationError("time of flight must be >= 0");
    if (!is_pow2(opts.grid) || opts.grid < in.size())
        throw ValidationError("tof grid must be a power of two >= the input grid");

    const size_t n = opts.grid;
    Wavefunction out;
    out.amp.assign(n, {0.0, 0.0});
    const size_t off = (n - in.size()) / 2;
    std::copy(in.amp.begin(), in.amp.end(), out.amp.begin() + off);
    out.dx = in.dx;
    out.atoms = in.atoms;
    out.time = in.time;
    out.species = in.species;

    // aliasing guard: the fastest populated momentum must not carry the cloud
    // past the padded window within t
    {
        std::vector<std::complex<double>> c(out.amp);
        Fft1D fft(n);
        fft.forward(c.data());
        double peak = 0;
        for (const auto& a : c) peak = std::max(peak, std::norm(a));
        double kq = 0;
        for (size_t j = 0; j < n; ++j)
            if (std::norm(c[j]) >= 1e-14 * peak)
                kq = std::max(kq, std::abs(fft_wavenumber(j, n, out.dx)));
        double dpk = 0;
        for (size_t j = 0; j < out.size(); ++j) dpk = std::max(dpk, std::norm(out.amp[j]));
        double xext = 0;
        for (size_t j = 0; j < out.size(); ++j)
            if (std::norm(out.amp[j]) >= 1e-14 * dpk) xext = std::max(xext, std::abs(out.x(j)));
        const double reach = xext + constants::hbar * kq / in.species.mass * t;
        const double half = 0.5 * static_cast<double>(n) * out.dx;
        if (reach > opts.margin * half) {
            char msg[160];
            std::snprintf(msg, sizeof msg,
                          "expanded cloud (%.1f um) would wrap the %.1f um window; "
                          "enlarge the tof grid",
                          reach * 1e6, half * 1e6);
            throw GridError(msg);
        }
    }

    if (t == 0) return out;

    if (!opts.interactions || par.g1d == 0) {
        // exact free propagator, one spectral step
        Fft1D fft(n);
        fft.forward(out.amp.data());
        const double pref = constants::hbar * t / (2.0 * in.species.mass);
        for (size_t j = 0; j < n; ++j) {
            const double k = fft_wavenumber(j, n, out.dx);
            out.amp[j] *= std::polar(1.0, -pref * k * k);
        }
        fft.backward(out.amp.data());
        out.time += t;
        return out;
    }

    PotentialTimeline flat{{out.time}, {std::vector<double>(n, 0.0)}, out.dx};
    GpeParams p2 = par;
    if (opts.dt > 0) p2.dt = opts.dt;
    EvolveOptions eo;
    const double released = out.time;
    const double wp = opts.transverse_omega;
    if (opts.dilute)
        eo.g_factor = [released, wp](double tt) {
            const double u = wp * (tt - released);
            return 1.0 / std::sqrt(1.0 + u * u);
        };
    const double t_int =
        opts.interact_until > 0 ? std::min(opts.interact_until, t) : t;
    evolve(out, flat, p2, released, released + t_int, eo);
    if (t_int < t) {
        Fft1D fft(n);
        fft.forward(out.amp.data());
        const double pref = constants::hbar * (t - t_int) / (2.0 * in.species.mass);
        for (size_t j = 0; j < n; ++j) {
            const double k = fft_wavenumber(j, n, out.dx);
            out.amp[j] *= std::polar(1.0, -pref * k * k);
        }
        fft.backward(out.amp.data());
        out.time += t - t_int;
    }
    return out;
}

// ---- state diagnostics ------------------------------------------------------

// relative phase between the two sides of a barrier at x_split:
// arg(sum_left psi) - arg(sum_right psi), wrapped to (-pi, pi]
inline double relative_phase(const Wavefunction& wf, double x_split = 0) {
    std::complex<double> sl = 0, sr = 0;
    for (size_t j = 0; j < wf.size(); ++j)
        (wf.x(j) < x_split ? sl : sr) += wf.amp[j];
    if (std::abs(sl) == 0 || std::abs(sr) == 0) return 0;
    return wrap_angle(std::arg(sl) - std::arg(sr));
}

// norm of the antisymmetric component about the grid centre
inline double odd_norm(const Wavefunction& wf) {
    const size_t n = wf.size();
    double s = 0;
    for (size_t j = 1; j < n; ++j) {
        if (j >= n - j) break;
        s += std::norm(wf.amp[j] - wf.amp[n - j]) * 0.25 * 2.0;
    }
    return std::sqrt(s * wf.dx);
}

// ---- checkpoints ------------------------------------------------------------

// binary layout (little-endian): u64 grid size, f64 spacing, f64 atom number,
// f64 time, then n interleaved re/im f64 pairs; the grid is centred on x = 0
inline void write_checkpoint(const std::string& path, const Wavefunction& wf) {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint format is little-endian");
    wf.validate();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ValidationError("cannot open checkpoint for writing: " + path);
    const uint64_t n = wf.amp.size();
    f.write(reinterpret_cast<const char*>(&n), sizeof n);
    f.write(reinterpret_cast<const char*>(&wf.dx), sizeof wf.dx);
    f.write(reinterpret_cast<const char*>(&wf.atoms), sizeof wf.atoms);
    f.write(reinterpret_cast<const char*>(&wf.time), sizeof wf.time);
    f.write(reinterpret_cast<const char*>(wf.amp.data()),
            static_cast<std::streamsize>(n * sizeof(std::complex<double>)));
    if (!f) throw ValidationError("short write on checkpoint: " + path);
}

inline Wavefunction read_checkpoint(const std::string& path,
                                    const AtomSpecies& species = AtomSpecies::rb87()) {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint format is little-endian");
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open checkpoint: " + path);
    uint64_t n = 0;
    Wavefunction wf;
    wf.species = species;
    f.read(reinterpret_cast<char*>(&n), sizeof n);
    f.read(reinterpret_cast<char*>(&wf.dx), sizeof wf.dx);
    f.read(reinterpret_cast<char*>(&wf.atoms), sizeof wf.atoms);
    f.read(reinterpret_cast<char*>(&wf.time), sizeof wf.time);
    if (!f || n < 2 || n > (1u << 28))
        throw ValidationError("corrupt checkpoint header: " + path);
    wf.amp.resize(n);
    f.read(reinterpret_cast<char*>(wf.amp.data()),
           static_cast<std::streamsize>(n * sizeof(std::complex<double>)));
    if (!f) throw ValidationError("truncated checkpoint: " + path);
    wf.validate();
    return wf;
}

// ---- splitting orchestration --------------------------------------------------

struct SplitOptions {
    size_t grid = 1024;              // solver points
    double window_half = 10e-6;      // solver half window [m]
    double frame_interval = 50e-6;   // time between potential frames [s]
    double cap_height = 0;           // 0 = auto: 12 x max(hbar w_ref, mu - V_min)
    double extra_tilt = 0;           // linear potential along the split axis [J/m]
    double hold = 0;                 // extra time at the final setting [s]
    SplitScanOptions scan{0.08e-6, 7e-6, 3.5e-6, 0.25e-6, 0};
    GroundStateOptions gs;
};

struct SplitSample {
    double t = 0;
    RfSetting rf;
    DoubleWellGeometry geometry;  // includes the tilt contribution
    double mu = 0;                // chemical potential of the evolving state [J]
    double phase = 0;             // left/right relative phase [rad]
    double odd_norm = 0;
    EnergyBreakdown energy;
};

struct SplitResult {
    Wavefunction state;
    std::vector<SplitSample> timeline;
    PotentialCut final_cut;
    double x_origin = 0;   // lab x of the solver grid origin [m]
    double y_origin = 0;   // lab y of the initial cut line [m]
    double cap_height = 0;
};

// Ground state in the initial configuration, then split-step propagation
// through the rf ramp. The 2d map is rebuilt at every frame to track the well
// geometry; the solver potential is the cut through the wells at their common
// height, so the slight transverse relaxation is followed adiabatically.
inline SplitResult split_sequence(const ChipLayout& layout, const AtomSpecies& species,
                                  const RampSchedule& ramp, const GpeParams& par,
                                  const SplitOptions& opts = {}) {
    layout.validate();
    species.validate();
    par.validate();
    ramp.validate();
    if (!is_pow2(opts.grid)) throw ValidationError("solver grid size must be a power of two");

    const Vec3 centre = find_static_minimum(layout);
    const double t0 = ramp.t_begin();
    const double t_end = ramp.t_end() + opts.hold;
    const size_t nframes =
        2 + static_cast<size_t>(std::floor((t_end - t0) / opts.frame_interval));
    const double dt_frame = (t_end - t0) / static_cast<double>(nframes - 1);
    const double dx = 2.0 * opts.window_half / static_cast<double>(opts.grid);

    // one scan window sized for the widest split of the ramp
    const GridSpec2D grid2d =
        split_scan_grid(layout, species, ramp.at(ramp.t_end()), centre, opts.scan);

    SplitResult res;
    res.x_origin = centre.x;
    res.cap_height = opts.cap_height;

    PotentialTimeline line;
    line.dx = dx;
    std::vector<DoubleWellGeometry> geos(nframes);
    std::vector<RfSetting> rfs(nframes);
    for (size_t f = 0; f < nframes; ++f) {
        const double t = t0 + static_cast<double>(f) * dt_frame;
        const RfSetting rf = ramp.at(std::min(t, ramp.t_end()));
        PotentialMap map = map_potential(layout, species, rf, grid2d);
        if (opts.extra_tilt != 0)
            for (int iy = 0; iy < grid2d.ny; ++iy)
                for (int ix = 0; ix < grid2d.nx; ++ix)
                    map.v[static_cast<size_t>(iy) * grid2d.nx + ix] +=
                        opts.extra_tilt * (map.x(ix) - centre.x);
        DoubleWellGeometry geo = locate_wells(map);
        const double y_cut = geo.n_wells == 2
                                 ? 0.5 * (geo.well[0].pos.y + geo.well[1].pos.y)
                                 : geo.well[0].pos.y;
        if (f == 0) res.y_origin = y_cut;
        std::vector<double> v(opts.grid);
        for (size_t j = 0; j < opts.grid; ++j) {
            const double xi = (static_cast<double>(j) - static_cast<double>(opts.grid / 2)) * dx;
            v[j] = effective_potential(layout, species, rf, {centre.x + xi, y_cut, 0}) +
                   opts.extra_tilt * xi;
        }
        line.times.push_back(t);
        line.frames.push_back(std::move(v));
        geos[f] = geo;
        rfs[f] = rf;
    }

    const PotentialCut cut0{line.frames.front(), dx};
    GroundStateResult gs = ground_state(cut0, species, par, opts.gs);
    Wavefunction wf = std::move(gs.state);
    wf.time = t0;

    double cap = opts.cap_height;
    if (cap <= 0) cap = auto_cap_height(wf, cut0, par);
    res.cap_height = cap;

    EvolveOptions eo;
    eo.cap_height = cap;

    auto sample = [&](size_t f) {
        SplitSample s;
        s.t = line.times[f];
        s.rf = rfs[f];
        s.geometry = geos[f];
        const PotentialCut cutf{line.frames[f], dx};
        s.energy = energy_breakdown(wf, cutf, par);
        s.mu = s.energy.kinetic + s.energy.potential + 2.0 * s.energy.interaction;
        const double xs = s.geometry.n_wells == 2 ? s.geometry.saddle.x - centre.x : 0.0;
        s.phase = relative_phase(wf, xs);
        s.odd_norm = splitsim::odd_norm(wf);
        res.timeline.push_back(std::move(s));
    };

    sample(0);
    for (size_t f = 1; f < nframes; ++f) {
        evolve(wf, line, par, line.times[f - 1], line.times[f], eo);
        sample(f);
    }

    res.state = std::move(wf);
    res.final_cut = {line.frames.back(), dx};
    return res;
}

} // namespace splitsim
