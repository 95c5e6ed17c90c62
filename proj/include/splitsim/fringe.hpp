#pragma once

// Fringe-side analysis. A released double-well cloud lands on the detector as
// a gaussian envelope carrying a cosine modulation; this header fits that
// model to line-density profiles, converts the fringe spacing to a source
// separation through the far-field point-source law, reduces shot ensembles
// to circular phase statistics with a randomness verdict, and mimics finite
// imaging (optical blur, pixel averaging, shot noise).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "fft.hpp"
#include "gpe.hpp"
#include "rng.hpp"

namespace splitsim {

// one measured (or simulated) line-density profile on a uniform grid
struct DensityProfile {
    std::vector<double> z;  // positions [m], ascending
    std::vector<double> n;  // line density [1/m]
    double pixel = 0;       // box size the samples were averaged over; 0 = raw grid

    double dz() const { return z[1] - z[0]; }

    void validate() const {
        if (z.size() != n.size())
            throw ValidationError("profile position/density size mismatch");
        if (z.size() < 16)
            throw ValidationError("profile needs at least 16 samples");
        const double step = z[1] - z[0];
        if (!(step > 0))
            throw ValidationError("profile positions must be increasing");
        for (size_t i = 1; i < z.size(); ++i)
            if (std::abs(z[i] - z[i - 1] - step) > 1e-6 * step)
                throw ValidationError("profile positions must be uniformly spaced");
        for (double v : n)
            if (!std::isfinite(v) || v < 0)
                throw ValidationError("line density must be finite and non-negative");
        if (!(pixel >= 0) || !std::isfinite(pixel))
            throw ValidationError("pixel size must be finite and >= 0");
    }
};

// sample a wavefunction's line density, optionally cropped to |x| <= halfspan
// (time-of-flight grids are mostly empty padding; fits don't need it)
inline DensityProfile line_profile(const Wavefunction& wf, double halfspan = 0) {
    wf.validate();
    DensityProfile p;
    for (size_t i = 0; i < wf.size(); ++i) {
        const double x = wf.x(i);
        if (halfspan > 0 && std::abs(x) > halfspan) continue;
        p.z.push_back(x);
        p.n.push_back(wf.atoms * std::norm(wf.amp[i]));
    }
    p.validate();
    return p;
}

// gaussian envelope times a cosine:
//   f(z) = offset + A exp(-(z-z0)^2 / 2w^2) (1 + C cos(2 pi z / dz + phi))
struct FringeFit {
    double amplitude = 0;  // envelope height A [1/m]
    double offset = 0;     // flat background [1/m]
    double centre = 0;     // envelope centre z0 [m]
    double width = 0;      // envelope rms width w [m]
    double spacing = 0;    // fringe period [m]
    double phase = 0;      // cosine phase at z = 0, wrapped to (-pi, pi]
    double contrast = 0;   // modulation depth C in [0, 1]
    double residual = 0;   // euclidean norm of the remaining misfit [1/m]
};

// the model a FringeFit parameterizes, evaluated at z
inline double fringe_model(const FringeFit& f, double z) {
    const double u = z - f.centre;
    const double env = std::exp(-0.5 * u * u / (f.width * f.width));
    const double th = 2.0 * constants::pi * z / f.spacing + f.phase;
    return f.offset + f.amplitude * env * (1.0 + f.contrast * std::cos(th));
}

namespace detail {

struct FringeSeed {
    double spacing = 0;  // in the length unit of the input grid
    double phase = 0;    // cosine phase at z = 0
};

// Locate the fringe line in the spectrum of the mean-subtracted profile. The
// envelope owns the lowest bins, so the peak search starts above the
// envelope's own spectral support (estimated from the moment width) and only
// accepts local maxima; the median magnitude plays the noise floor. A clean
// fringe-free envelope leaves nothing but round-off rubble up there, which the
// relative-power cutoff rejects.
inline FringeSeed fringe_seed(const std::vector<double>& z, const std::vector<double>& y) {
    const size_t n = z.size();
    const double dz = z[1] - z[0];
    const double span = static_cast<double>(n) * dz;

    double mean = 0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(n);

    std::vector<std::complex<double>> spec(n);
    for (size_t i = 0; i < n; ++i) spec[i] = y[i] - mean;
    Fft1D fft(n);
    fft.forward(spec.data());

    const size_t half = n / 2;
    std::vector<double> mag(half, 0.0);
    for (size_t k = 1; k < half; ++k) mag[k] = std::abs(spec[k]);

    // moment width of the profile -> first bin clear of the envelope's spectrum
    double ymin = y[0];
    for (double v : y) ymin = std::min(ymin, v);
    double wsum = 0, zc = 0;
    for (size_t i = 0; i < n; ++i) {
        wsum += y[i] - ymin;
        zc += (y[i] - ymin) * z[i];
    }
    if (!(wsum > 0)) throw RegimeError("profile has no structure to fit");
    zc /= wsum;
    double var = 0;
    for (size_t i = 0; i < n; ++i) var += (y[i] - ymin) * (z[i] - zc) * (z[i] - zc);
    const double west = std::max(std::sqrt(std::max(var / wsum, 0.0)), 4.0 * dz);
    const size_t kmin = std::clamp<size_t>(
        static_cast<size_t>(std::ceil(0.6 * span / west)), 2, half / 2);

    std::vector<double> sorted(mag.begin() + 1, mag.end());
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double floor_mag = sorted[sorted.size() / 2];

    size_t kbest = 0;
    double best = 0, top = 0;
    for (size_t k = 1; k < half; ++k) top = std::max(top, mag[k]);
    for (size_t k = kmin; k + 1 < half; ++k)
        if (mag[k] > mag[k - 1] && mag[k] >= mag[k + 1] && mag[k] > best) {
            best = mag[k];
            kbest = k;
        }
    if (kbest == 0 || best <= 3.0 * floor_mag || best <= 1e-9 * top)
        throw RegimeError("no fringe peak above the spectral noise floor");

    // parabolic refinement of the peak bin
    const double m0 = mag[kbest - 1], m1 = mag[kbest], m2 = mag[kbest + 1];
    const double den = m0 - 2.0 * m1 + m2;
    double delta = den < 0 ? 0.5 * (m0 - m2) / den : 0.0;
    delta = std::clamp(delta, -0.5, 0.5);

    FringeSeed s;
    s.spacing = span / (static_cast<double>(kbest) + delta);
    // DFT phase at the peak bin is the cosine phase at the window start
    s.phase = std::arg(spec[kbest]) - 2.0 * constants::pi * z[0] / s.spacing;
    return s;
}

} // namespace detail

// Least-squares fit of the enveloped-cosine model, seeded from the spectrum
// and polished by damped Gauss-Newton. Expects at least two fringe periods
// inside the envelope; below that the fringe line collides with the
// envelope's own spectrum and the seed (rightly) reports no fringes.
inline FringeFit fit_fringes(const DensityProfile& prof) {
    prof.validate();
    const size_t n = prof.z.size();

    // fit in O(1) variables: positions about the window centre in units of
    // the span, densities in units of the peak; the raw problem mixes scales
    // of 1e-5 m against 1e9 /m and the normal equations lose too many digits
    const double span = static_cast<double>(n) * prof.dz();
    const double zmid = 0.5 * (prof.z.front() + prof.z.back());
    double ymax = 0;
    for (double v : prof.n) ymax = std::max(ymax, v);
    const double yscale = ymax > 0 ? ymax : 1.0;

    std::vector<double> zs(n), ys(n);
    for (size_t i = 0; i < n; ++i) {
        zs[i] = (prof.z[i] - zmid) / span;
        ys[i] = prof.n[i] / yscale;
    }

    const detail::FringeSeed seed = detail::fringe_seed(zs, ys);

    double ymin = ys[0];
    for (double v : ys) ymin = std::min(ymin, v);
    double wsum = 0, zc = 0;
    for (size_t i = 0; i < n; ++i) {
        wsum += ys[i] - ymin;
        zc += (ys[i] - ymin) * zs[i];
    }
    zc /= wsum;  // wsum > 0 or the seed would have thrown
    double var = 0;
    for (size_t i = 0; i < n; ++i) var += (ys[i] - ymin) * (zs[i] - zc) * (zs[i] - zc);
    const double west = std::max(std::sqrt(std::max(var / wsum, 0.0)),
                                 2.0 / static_cast<double>(n));

    using Vec7 = Eigen::Matrix<double, 7, 1>;
    using Mat7 = Eigen::Matrix<double, 7, 7>;
    const double twopi = 2.0 * constants::pi;

    // p = (A, offset, z0, w, spacing, phase, C)
    Vec7 p;
    p << (1.0 - ymin) / 1.5, ymin, zc, west, seed.spacing, wrap_angle(seed.phase), 0.5;

    auto eval = [&](const Vec7& q, Mat7& H, Vec7& g) {
        H.setZero();
        g.setZero();
        double sse = 0;
        const double A = q[0], off = q[1], z0 = q[2], w = q[3];
        const double sp = q[4], ph = q[5], C = q[6];
        Vec7 j;
        for (size_t i = 0; i < n; ++i) {
            const double u = zs[i] - z0;
            const double env = std::exp(-0.5 * u * u / (w * w));
            const double th = twopi * zs[i] / sp + ph;
            const double cth = std::cos(th), sth = std::sin(th);
            const double M = 1.0 + C * cth;
            const double Ae = A * env;
            const double r = off + Ae * M - ys[i];
            j[0] = env * M;
            j[1] = 1.0;
            j[2] = Ae * M * u / (w * w);
            j[3] = Ae * M * u * u / (w * w * w);
            j[4] = Ae * C * sth * twopi * zs[i] / (sp * sp);
            j[5] = -Ae * C * sth;
            j[6] = Ae * cth;
            H += j * j.transpose();
            g += r * j;
            sse += r * r;
        }
        return sse;
    };

    Mat7 H;
    Vec7 g;
    double cost = eval(p, H, g);
    double lambda = 1e-3;
    bool converged = false;
    int iter = 0;
    while (iter++ < 200) {
        Mat7 Hd = H;
        for (int d = 0; d < 7; ++d)
            Hd(d, d) = H(d, d) > 0 ? H(d, d) * (1.0 + lambda) : lambda;
        Vec7 q = p + Hd.ldlt().solve(Vec7(-g));
        q[3] = std::abs(q[3]);  // width enters squared
        Mat7 Hq;
        Vec7 gq;
        const double cq = (q.allFinite() && q[4] > 0) ? eval(q, Hq, gq)
                                                      : std::numeric_limits<double>::infinity();
        if (cq <= cost) {
            const double drop = cost - cq;
            p = q;
            cost = cq;
            H = Hq;
            g = gq;
            lambda = std::max(lambda / 3.0, 1e-12);
            if (drop <= 1e-12 * (cost + 1e-300)) {
                converged = true;
                break;
            }
        } else {
            lambda *= 4.0;
            if (lambda > 1e15) break;
        }
    }
    if (!converged) {
        char msg[96];
        std::snprintf(msg, sizeof msg, "fringe fit stalled after %d steps (cost %.3e)",
                      iter, cost);
        throw ConvergenceError(msg);
    }

    double C = p[6], ph = p[5];
    if (C < 0) {  // sign flip is a half-period phase shift
        C = -C;
        ph += constants::pi;
    }
    FringeFit fit;
    fit.amplitude = p[0] * yscale;
    fit.offset = p[1] * yscale;
    fit.centre = zmid + p[2] * span;
    fit.width = std::abs(p[3]) * span;
    fit.spacing = p[4] * span;
    fit.phase = wrap_angle(ph - twopi * zmid / fit.spacing);
    fit.contrast = std::min(C, 1.0);
    fit.residual = std::sqrt(cost) * yscale;
    return fit;
}

// far-field fringe spacing of two coherent sources a distance d apart,
// observed a time t after release
inline double point_source_spacing(double d, double t, const AtomSpecies& sp) {
    sp.validate();
    if (!(d > 0) || !(t > 0))
        throw ValidationError("separation and flight time must be > 0");
    return constants::planck * t / (sp.mass * d);
}

struct SeparationEstimate {
    double separation = 0;           // [m]
    bool interaction_biased = false; // see infer_separation
};

// invert the point-source law; below 5 um the mean-field kick during release
// is not negligible against the relative momentum, so the estimate is flagged
inline SeparationEstimate infer_separation(const FringeFit& fit, double t,
                                           const AtomSpecies& sp) {
    sp.validate();
    if (!(fit.spacing > 0) || !(t > 0))
        throw ValidationError("fringe spacing and flight time must be > 0");
    SeparationEstimate est;
    est.separation = constants::planck * t / (sp.mass * fit.spacing);
    est.interaction_biased = est.separation < 5e-6;
    return est;
}

// one interference shot reduced to its fitted phase and contrast
struct PhaseSample {
    double phase = 0;  // [rad]
    double contrast = 0;
};

struct StatsOptions {
    size_t null_draws = 100000;             // Monte-Carlo size for the uniform null
    std::uint64_t null_seed = 20260814ULL;  // fixed: verdicts must reproduce
};

// ensemble reduction of many shots; angles in radians throughout
struct PhaseEnsemble {
    std::vector<PhaseSample> samples;
    size_t n = 0;
    double mean = 0;             // circular mean
    double resultant = 0;        // R = |<e^{i phi}>|; 1 = perfectly locked
    double sigma = 0;            // wrapped-gaussian fit to the 10-degree histogram
    double sigma_resultant = 0;  // sqrt(-2 ln R)
    double null_mean = 0;        // R statistics of same-size uniform ensembles
    double null_sigma = 0;
    double sigma_above_null = 0;      // (R - null_mean) / null_sigma
    bool above_null_1sigma = false;   // distinguishable from random at one sigma
    bool above_null_3sigma = false;   // ... at three sigma
};

namespace detail {

// width of a gaussian (wrapped onto the circle) fit to binned counts, by
// closed-form amplitude per width and a log-spaced grid search with a
// parabolic polish; deterministic by construction. The model integrates the
// gaussian over each bin -- with bins as wide as the width itself, sampling
// the density at bin centres would bias the fit low.
inline double wrapped_sigma_fit(const std::vector<double>& counts,
                                const std::vector<double>& centres) {
    const double twopi = 2.0 * constants::pi;
    const double bw = twopi / static_cast<double>(counts.size());
    auto sse_at = [&](double sig) {
        double gg = 0, gc = 0;
        std::vector<double> shape(counts.size());
        const double inv = 1.0 / (sig * std::sqrt(2.0));
        for (size_t b = 0; b < counts.size(); ++b) {
            double s = 0;
            for (int m = -1; m <= 1; ++m) {
                const double lo = centres[b] - 0.5 * bw + twopi * m;
                s += 0.5 * (std::erf((lo + bw) * inv) - std::erf(lo * inv));
            }
            shape[b] = s;
            gg += s * s;
            gc += s * counts[b];
        }
        const double amp = gg > 0 ? std::max(gc / gg, 0.0) : 0.0;
        double sse = 0;
        for (size_t b = 0; b < counts.size(); ++b) {
            const double d = counts[b] - amp * shape[b];
            sse += d * d;
        }
        return sse;
    };

    const double lo = std::log(2.0 * constants::pi / 180.0);  // 2 degrees
    const double hi = std::log(constants::pi);                // 180 degrees
    const int steps = 240;
    int ibest = 0;
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> sse(steps);
    for (int i = 0; i < steps; ++i) {
        const double sig = std::exp(lo + (hi - lo) * i / (steps - 1));
        sse[i] = sse_at(sig);
        if (sse[i] < best) {
            best = sse[i];
            ibest = i;
        }
    }
    double li = lo + (hi - lo) * ibest / (steps - 1);
    if (ibest > 0 && ibest + 1 < steps) {
        const double d2 = sse[ibest - 1] - 2.0 * sse[ibest] + sse[ibest + 1];
        if (d2 > 0)
            li += 0.5 * (sse[ibest - 1] - sse[ibest + 1]) / d2 * (hi - lo) / (steps - 1);
    }
    return std::exp(li);
}

// mean and width of the resultant length under the uniform-phase null
inline void null_resultant(size_t n, const StatsOptions& o, double* mu, double* sd) {
    std::mt19937_64 gen(o.null_seed);
    double s1 = 0, s2 = 0;
    for (size_t k = 0; k < o.null_draws; ++k) {
        double cs = 0, sn = 0;
        for (size_t i = 0; i < n; ++i) {
            const double a = 2.0 * constants::pi * uniform01(gen);
            cs += std::cos(a);
            sn += std::sin(a);
        }
        const double r = std::hypot(cs, sn) / static_cast<double>(n);
        s1 += r;
        s2 += r * r;
    }
    *mu = s1 / static_cast<double>(o.null_draws);
    *sd = std::sqrt(std::max(s2 / static_cast<double>(o.null_draws) - *mu * *mu, 0.0));
}

} // namespace detail

inline PhaseEnsemble circular_stats(const std::vector<PhaseSample>& samples,
                                    const StatsOptions& opts = {}) {
    if (samples.size() < 2)
        throw ValidationError("circular statistics need at least 2 phases");
    if (opts.null_draws < 100)
        throw ValidationError("null_draws must be at least 100");
    for (const auto& s : samples)
        if (!std::isfinite(s.phase))
            throw ValidationError("phases must be finite");

    PhaseEnsemble e;
    e.samples = samples;
    e.n = samples.size();
    double cs = 0, sn = 0;
    for (const auto& s : samples) {
        cs += std::cos(s.phase);
        sn += std::sin(s.phase);
    }
    cs /= static_cast<double>(e.n);
    sn /= static_cast<double>(e.n);
    e.resultant = std::min(std::hypot(cs, sn), 1.0);
    e.mean = std::atan2(sn, cs);

    if (e.resultant >= 1.0 - 1e-9) {
        // a point mass: both spread measures collapse to zero
        e.sigma = 0;
        e.sigma_resultant = 0;
    } else {
        e.sigma_resultant = std::sqrt(-2.0 * std::log(e.resultant));
        // 10-degree bins centred on the circular mean
        const int nbins = 36;
        const double bw = 2.0 * constants::pi / nbins;
        std::vector<double> counts(nbins, 0.0), centres(nbins);
        for (int b = 0; b < nbins; ++b) centres[b] = -constants::pi + (b + 0.5) * bw;
        for (const auto& s : samples) {
            const double th = wrap_angle(s.phase - e.mean);
            const int b = std::clamp(static_cast<int>(std::floor((th + constants::pi) / bw)),
                                     0, nbins - 1);
            counts[b] += 1.0;
        }
        e.sigma = detail::wrapped_sigma_fit(counts, centres);
    }

    detail::null_resultant(e.n, opts, &e.null_mean, &e.null_sigma);
    e.sigma_above_null = (e.resultant - e.null_mean) / e.null_sigma;
    e.above_null_1sigma = e.sigma_above_null > 1.0;
    e.above_null_3sigma = e.sigma_above_null > 3.0;
    return e;
}

inline PhaseEnsemble circular_stats(const std::vector<double>& phases,
                                    const StatsOptions& opts = {}) {
    std::vector<PhaseSample> s(phases.size());
    for (size_t i = 0; i < phases.size(); ++i) s[i] = {phases[i], 1.0};
    return circular_stats(s, opts);
}

// what the camera does to a clean profile
struct ImagingSpec {
    double pixel = 3e-6;       // detector pixel size [m]
    double blur_fwhm = 6e-6;   // optical resolution as a gaussian FWHM [m]; 0 = none
    double noise = 0;          // additive gaussian rms as a fraction of the peak
    std::uint64_t seed = 1;    // noise seed

    void validate() const {
        if (!(pixel > 0) || !std::isfinite(pixel))
            throw ValidationError("pixel size must be > 0");
        if (!(blur_fwhm >= 0) || !std::isfinite(blur_fwhm))
            throw ValidationError("blur FWHM must be >= 0");
        if (!(noise >= 0) || !std::isfinite(noise))
            throw ValidationError("noise fraction must be >= 0");
    }
};

// gaussian blur, then average over pixels, then seeded shot noise (clamped at
// zero signal); deterministic for a given seed
inline DensityProfile synth_image(const DensityProfile& in, const ImagingSpec& spec) {
    in.validate();
    spec.validate();
    const double dz = in.dz();
    const size_t n = in.z.size();

    // optics: the density outside the grid is genuinely empty, so zero-pad
    std::vector<double> blur = in.n;
    if (spec.blur_fwhm > 0) {
        const double sig = spec.blur_fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
        const int half = static_cast<int>(std::ceil(4.0 * sig / dz));
        std::vector<double> ker(2 * half + 1);
        double ksum = 0;
        for (int j = -half; j <= half; ++j) {
            ker[j + half] = std::exp(-0.5 * (j * dz) * (j * dz) / (sig * sig));
            ksum += ker[j + half];
        }
        for (double& kv : ker) kv /= ksum;
        for (size_t i = 0; i < n; ++i) {
            double acc = 0;
            const int lo = std::max<int>(-half, -static_cast<int>(i));
            const int hi = std::min<int>(half, static_cast<int>(n - 1 - i));
            for (int j = lo; j <= hi; ++j) acc += ker[j + half] * in.n[i + j];
            blur[i] = acc;
        }
    }

    // detector: average the optical image over each pixel
    const double ratio = spec.pixel / dz;
    const size_t q = static_cast<size_t>(std::llround(ratio));
    if (q < 1 || std::abs(ratio - static_cast<double>(q)) > 1e-6 * ratio)
        throw ValidationError("pixel size must be an integer multiple of the grid spacing");

    DensityProfile out;
    out.pixel = static_cast<double>(q) * dz;
    const size_t m = n / q;
    out.z.resize(m);
    out.n.resize(m);
    for (size_t b = 0; b < m; ++b) {
        double zsum = 0, acc = 0;
        for (size_t j = 0; j < q; ++j) {
            zsum += in.z[b * q + j];
            acc += blur[b * q + j];
        }
        out.z[b] = zsum / static_cast<double>(q);
        out.n[b] = acc / static_cast<double>(q);
    }

    if (spec.noise > 0) {
        double peak = 0;
        for (double v : out.n) peak = std::max(peak, v);
        const double rms = spec.noise * peak;
        std::mt19937_64 gen(spec.seed);
        for (double& v : out.n) v = std::max(0.0, v + rms * normal01(gen));
    }
    out.validate();
    return out;
}

} // namespace splitsim
