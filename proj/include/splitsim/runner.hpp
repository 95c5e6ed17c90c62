#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "splitsim/config.hpp"
#include "splitsim/dressed_potential.hpp"
#include "splitsim/fringe.hpp"
#include "splitsim/gpe.hpp"
#include "splitsim/rng.hpp"
#include "splitsim/two_mode.hpp"
#include "splitsim/version.hpp"

// Scenario orchestration: config -> layout/ramp/solver settings, seeded
// noise draws, the ground-state -> split -> time-of-flight -> fringe-fit ->
// statistics chain per shot, and the canned figure pipelines. Everything a
// run writes is plain CSV plus one JSON manifest with content hashes, so a
// rerun with the same config and seed is comparable file-by-file. Wall-clock
// timings go to a separate untracked file for the same reason.

namespace splitsim {

namespace runner_detail {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// shortest round-trip decimal form
inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace runner_detail

// Accumulates output files as (name, content) and flushes them together, so
// the manifest can hash exactly the bytes on disk.
class OutputSet {
public:
    explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {}

    void add(const std::string& name, std::string content) {
        files_.emplace_back(name, std::move(content));
    }

    const std::filesystem::path& dir() const { return dir_; }

    // Writes all files plus manifest.json; `meta` carries run identity
    // (config hash, seed, scenario) and is merged into the manifest.
    void commit(const nlohmann::json& meta) const {
        std::filesystem::create_directories(dir_);
        nlohmann::json manifest = meta;
        manifest["version"] = version_string;
        auto& hashes = manifest["files"];
        for (const auto& [name, content] : files_) {
            write_file(name, content);
            hashes[name] = runner_detail::hex64(runner_detail::fnv1a64(content));
        }
        write_file("manifest.json", manifest.dump(2) + "\n");
    }

private:
    void write_file(const std::string& name, const std::string& content) const {
        const std::filesystem::path p = dir_ / name;
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        if (!f) throw ValidationError("cannot open output file '" + p.string() + "'");
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) throw ValidationError("short write on '" + p.string() + "'");
    }

    std::filesystem::path dir_;
    std::vector<std::pair<std::string, std::string>> files_;
};

// ---- scenario ---------------------------------------------------------------

struct NoiseModel {
    double sigma_pos = 0;      // shot-to-shot d.c.-wire position jitter [m]
    double sigma_current = 0;  // relative d.c.-current jitter
    double sigma_atoms = 0;    // relative atom-number jitter

    void validate() const {
        if (!(sigma_pos >= 0) || !(sigma_current >= 0) || !(sigma_atoms >= 0) ||
            !std::isfinite(sigma_pos + sigma_current + sigma_atoms))
            throw ValidationError("noise sigmas must be finite and >= 0");
    }
};

struct TofSpec {
    double time = 14e-3;            // flight time [s]
    size_t grid = 131072;           // padded expansion grid
    double crop = 100e-6;           // half window kept for the fringe fit [m]
    bool interactions = false;
    double interact_until = 1.5e-3; // see TofOptions
    double dt = 2.5e-7;             // interacting-path step [s]

    void validate() const {
        if (!(time > 0)) throw ValidationError("flight time must be > 0");
        if (!(crop > 0)) throw ValidationError("tof crop must be > 0");
        if (!(dt > 0)) throw ValidationError("tof step must be > 0");
    }

    TofOptions options() const {
        TofOptions o;
        o.interactions = interactions;
        o.grid = grid;
        o.dt = dt;
        o.interact_until = interact_until;
        return o;
    }
};

struct Scenario {
    std::string name = "scenario";
    ChipLayout layout;
    AtomSpecies species = AtomSpecies::rb87();
    RampSchedule ramp;
    double hold = 1e-3;          // dwell at the final setting [s]
    double tilt = 0;             // extra potential slope along the split axis [J/m]
    double atoms = 4000;
    double time_step = 2.5e-8;   // solver step [s]
    double transverse_freq = 2100;  // tight-direction trap frequency [Hz]
    size_t grid = 1024;
    double window_half = 10e-6;
    double frame_interval = 50e-6;
    size_t shots = 1;
    std::uint64_t seed = 1;
    NoiseModel noise;
    TofSpec tof;
    bool imaging_enabled = false;
    ImagingSpec imaging;

    GpeParams gpe_params() const {
        GpeParams p;
        p.g1d = coupling_g1d(species, 2.0 * constants::pi * transverse_freq);
        p.atoms = atoms;
        p.dt = time_step;
        p.scale_omega = 2.0 * constants::pi * transverse_freq;
        return p;
    }

    SplitOptions split_options() const {
        SplitOptions o;
        o.grid = grid;
        o.window_half = window_half;
        o.frame_interval = frame_interval;
        o.extra_tilt = tilt;
        o.hold = hold;
        return o;
    }

    void validate() const {
        layout.validate();
        species.validate();
        ramp.validate();
        noise.validate();
        tof.validate();
        gpe_params().validate();
        if (imaging_enabled) imaging.validate();
        if (shots < 1) throw ValidationError("a scenario needs at least one shot");
        if (!(hold >= 0)) throw ValidationError("hold time must be >= 0");
        if (!(transverse_freq > 0))
            throw ValidationError("transverse trap frequency must be > 0");
        if (!std::isfinite(tilt)) throw ValidationError("tilt must be finite");
    }
};

// ---- layout presets ---------------------------------------------------------

// Mirror-symmetric splitter: a d.c. strip with the trap parked straight
// below it and two counter-fed rf strips at +-offset. The x-symmetry makes
// the well imbalance zero by construction. Passing gradient > 0 sets the
// wire current and bias from the thin-wire relations I = g 2pi h^2/mu0,
// |bias| = g h instead of using dc_current.
struct SymmetricLayoutSpec {
    double dc_current = 1.0;
    double gradient = 0;        // 0 = use dc_current
    double trap_height = 80e-6;
    double dc_width = 50e-6;
    double rf_width = 10e-6;
    double strip_offset = 40e-6;
    double rf_current = 80e-3;  // seed amplitude; ramps override it per frame
    double rf_frequency = 500e3;
    double ioffe = 1e-4;
};

inline ChipLayout symmetric_layout(const SymmetricLayoutSpec& s) {
    const double h = s.trap_height;
    if (!(h > 0)) throw ValidationError("trap height must be > 0");
    double current = s.dc_current;
    if (s.gradient > 0)
        current = s.gradient * 2.0 * constants::pi * h * h / constants::mu0;
    ChipLayout lay;
    lay.wires.push_back({{0, 0, 0}, s.dc_width, current, WireKind::dc, 0});
    if (s.rf_current != 0) {
        const double om = 2.0 * constants::pi * s.rf_frequency;
        lay.wires.push_back(
            {{+s.strip_offset, 0, 0}, s.rf_width, +s.rf_current, WireKind::rf, om});
        lay.wires.push_back(
            {{-s.strip_offset, 0, 0}, s.rf_width, -s.rf_current, WireKind::rf, om});
    }
    const double c = constants::mu0 * current / (2.0 * constants::pi);
    lay.bias = {-c / h, 0, 0};
    lay.ioffe = s.ioffe;
    return lay;
}

// Single-sided geometry: d.c. strip plus one rf strip to the side, with a
// 45-degree bias parking the trap below the rf wire. Closer to a real chip;
// the imbalance is not zero by construction.
struct SideLayoutSpec {
    double gradient = 16.4597;
    double trap_height = 80e-6;
    double wire_gap = 80e-6;
    double dc_width = 50e-6;
    double rf_width = 10e-6;
    double rf_current = 60e-3;
    double rf_frequency = 500e3;
    double ioffe = 1e-4;
};

inline ChipLayout side_layout(const SideLayoutSpec& s) {
    const double r2 = s.trap_height * s.trap_height + s.wire_gap * s.wire_gap;
    const double current = s.gradient * r2 * 2.0 * constants::pi / constants::mu0;
    ChipLayout lay;
    lay.wires.push_back({{0, 0, 0}, s.dc_width, current, WireKind::dc, 0});
    if (s.rf_current != 0)
        lay.wires.push_back({{s.wire_gap, 0, 0}, s.rf_width, s.rf_current, WireKind::rf,
                             2.0 * constants::pi * s.rf_frequency});
    const double c = s.gradient * std::sqrt(r2) / std::sqrt(2.0);
    lay.bias = {-c, -c, 0};
    lay.ioffe = s.ioffe;
    return lay;
}

// ---- figure settings ----------------------------------------------------------

struct Fig2aSettings {
    std::array<double, 3> gradients{11.0, 19.0, 24.0};  // [T/m]
    double rf_current = 60e-3;
    double frequency_start = 0.5e6;
    double frequency_stop = 4.0e6;
    int points = 8;
    double trap_height = 80e-6;
};

struct Fig2cSettings {
    double current_start = 60e-3;
    double current_stop = 125e-3;
    int points = 6;
    double lobe_sigma = 0.3e-6;   // released-lobe width [m]
    double lobe_atoms = 1000;     // atoms for the released pair
};

struct Fig3Settings {
    double wide_current = 110e-3;  // stage-2 ramp endpoint
    size_t control_shots = 16;
    double scramble = 50;          // position-noise inflation for the control
};

struct Fig4Settings {
    double tilt = constants::planck * 100e6;  // 100 Hz/um as an energy slope [J/m]
    double fit_delay = 0.2e-3;    // settle time after decoupling before fitting [s]
    double fit_window = 2e-3;     // span of the quadratic/linear phase fits [s]
};

struct RunSettings {
    Scenario scenario;
    Fig2aSettings fig2a;
    Fig2cSettings fig2c;
    Fig3Settings fig3;
    Fig4Settings fig4;
    std::string config_hash;  // canonical-text hash of the source config
};

// ---- config loading -----------------------------------------------------------

inline RunSettings load_run_settings(const Config& cfg) {
    RunSettings rs;
    Scenario& sc = rs.scenario;

    sc.name = cfg.get_string("scenario", "name", "scenario");

    const std::string preset = cfg.get_string("layout", "preset", "symmetric");
    const double rf_freq = cfg.get_quantity("ramp", "frequency", "frequency", 500e3);
    if (preset == "symmetric") {
        SymmetricLayoutSpec ls;
        ls.dc_current = cfg.get_quantity("layout", "dc_current", "current", ls.dc_current);
        ls.gradient = cfg.get_quantity("layout", "gradient", "gradient", 0.0);
        ls.trap_height = cfg.get_quantity("layout", "trap_height", "length", ls.trap_height);
        ls.dc_width = cfg.get_quantity("layout", "dc_width", "length", ls.dc_width);
        ls.rf_width = cfg.get_quantity("layout", "rf_width", "length", ls.rf_width);
        ls.strip_offset = cfg.get_quantity("layout", "strip_offset", "length", ls.strip_offset);
        ls.rf_current = cfg.get_quantity("layout", "rf_current", "current", ls.rf_current);
        ls.ioffe = cfg.get_quantity("layout", "ioffe", "field", ls.ioffe);
        ls.rf_frequency = rf_freq;
        sc.layout = symmetric_layout(ls);
    } else if (preset == "side") {
        SideLayoutSpec ls;
        ls.gradient = cfg.get_quantity("layout", "gradient", "gradient", ls.gradient);
        ls.trap_height = cfg.get_quantity("layout", "trap_height", "length", ls.trap_height);
        ls.wire_gap = cfg.get_quantity("layout", "wire_gap", "length", ls.wire_gap);
        ls.dc_width = cfg.get_quantity("layout", "dc_width", "length", ls.dc_width);
        ls.rf_width = cfg.get_quantity("layout", "rf_width", "length", ls.rf_width);
        ls.rf_current = cfg.get_quantity("layout", "rf_current", "current", ls.rf_current);
        ls.ioffe = cfg.get_quantity("layout", "ioffe", "field", ls.ioffe);
        ls.rf_frequency = rf_freq;
        sc.layout = side_layout(ls);
    } else {
        throw ValidationError("unknown layout preset '" + preset +
                              "' (expected symmetric or side)");
    }

    const double f_end = cfg.get_quantity("ramp", "frequency_end", "frequency", rf_freq);
    const double i0 = cfg.get_quantity("ramp", "start_current", "current", 30e-3);
    const double i1 = cfg.get_quantity("ramp", "end_current", "current", 80e-3);
    const double dur = cfg.get_quantity("ramp", "duration", "time", 4e-3);
    if (!(dur > 0)) throw ValidationError("ramp duration must be > 0");
    sc.ramp.points.clear();
    sc.ramp.points.push_back({0.0, {2.0 * constants::pi * rf_freq, i0}});
    sc.ramp.points.push_back({dur, {2.0 * constants::pi * f_end, i1}});
    sc.hold = cfg.get_quantity("ramp", "hold", "time", sc.hold);

    sc.atoms = cfg.get_number("solver", "atoms", sc.atoms);
    sc.grid = static_cast<size_t>(cfg.get_integer("solver", "grid", static_cast<long>(sc.grid)));
    sc.window_half = cfg.get_quantity("solver", "window_half", "length", sc.window_half);
    sc.time_step = cfg.get_quantity("solver", "time_step", "time", sc.time_step);
    sc.transverse_freq =
        cfg.get_quantity("solver", "transverse_frequency", "frequency", sc.transverse_freq);
    sc.frame_interval =
        cfg.get_quantity("solver", "frame_interval", "time", sc.frame_interval);
    sc.tilt = cfg.get_quantity("solver", "tilt", "tilt", sc.tilt);

    sc.tof.time = cfg.get_quantity("tof", "flight_time", "time", sc.tof.time);
    sc.tof.grid =
        static_cast<size_t>(cfg.get_integer("tof", "grid", static_cast<long>(sc.tof.grid)));
    sc.tof.crop = cfg.get_quantity("tof", "crop", "length", sc.tof.crop);
    sc.tof.interactions = cfg.get_bool("tof", "interactions", sc.tof.interactions);
    sc.tof.interact_until =
        cfg.get_quantity("tof", "interact_until", "time", sc.tof.interact_until);
    sc.tof.dt = cfg.get_quantity("tof", "time_step", "time", sc.tof.dt);

    sc.shots = static_cast<size_t>(cfg.get_integer("ensemble", "shots", 1));
    sc.seed = cfg.get_seed("ensemble", "seed", 1);

    sc.noise.sigma_pos = cfg.get_quantity("noise", "position_sigma", "length", 0.0);
    sc.noise.sigma_current = cfg.get_number("noise", "current_sigma", 0.0);
    sc.noise.sigma_atoms = cfg.get_number("noise", "atom_sigma", 0.0);

    sc.imaging_enabled = cfg.get_bool("imaging", "enabled", false);
    sc.imaging.pixel = cfg.get_quantity("imaging", "pixel", "length", sc.imaging.pixel);
    sc.imaging.blur_fwhm =
        cfg.get_quantity("imaging", "blur_fwhm", "length", sc.imaging.blur_fwhm);
    sc.imaging.noise = cfg.get_number("imaging", "noise", sc.imaging.noise);

    Fig2aSettings& fa = rs.fig2a;
    fa.gradients[0] = cfg.get_quantity("fig2a", "gradient_a", "gradient", fa.gradients[0]);
    fa.gradients[1] = cfg.get_quantity("fig2a", "gradient_b", "gradient", fa.gradients[1]);
    fa.gradients[2] = cfg.get_quantity("fig2a", "gradient_c", "gradient", fa.gradients[2]);
    fa.rf_current = cfg.get_quantity("fig2a", "rf_current", "current", fa.rf_current);
    fa.frequency_start =
        cfg.get_quantity("fig2a", "frequency_start", "frequency", fa.frequency_start);
    fa.frequency_stop =
        cfg.get_quantity("fig2a", "frequency_stop", "frequency", fa.frequency_stop);
    fa.points = static_cast<int>(cfg.get_integer("fig2a", "points", fa.points));
    fa.trap_height = cfg.get_quantity("fig2a", "trap_height", "length", fa.trap_height);

    Fig2cSettings& fc = rs.fig2c;
    fc.current_start = cfg.get_quantity("fig2c", "current_start", "current", fc.current_start);
    fc.current_stop = cfg.get_quantity("fig2c", "current_stop", "current", fc.current_stop);
    fc.points = static_cast<int>(cfg.get_integer("fig2c", "points", fc.points));
    fc.lobe_sigma = cfg.get_quantity("fig2c", "lobe_sigma", "length", fc.lobe_sigma);
    fc.lobe_atoms = cfg.get_number("fig2c", "lobe_atoms", fc.lobe_atoms);

    Fig3Settings& f3 = rs.fig3;
    f3.wide_current = cfg.get_quantity("fig3", "wide_current", "current", f3.wide_current);
    f3.control_shots = static_cast<size_t>(
        cfg.get_integer("fig3", "control_shots", static_cast<long>(f3.control_shots)));
    f3.scramble = cfg.get_number("fig3", "scramble", f3.scramble);

    Fig4Settings& f4 = rs.fig4;
    f4.tilt = cfg.get_quantity("fig4", "tilt", "tilt", f4.tilt);
    f4.fit_delay = cfg.get_quantity("fig4", "fit_delay", "time", f4.fit_delay);
    f4.fit_window = cfg.get_quantity("fig4", "fit_window", "time", f4.fit_window);

    cfg.reject_unknown();
    rs.config_hash = runner_detail::hex64(runner_detail::fnv1a64(cfg.canonical_text()));
    rs.scenario.validate();
    return rs;
}

// ---- per-shot pipeline ----------------------------------------------------------

struct ShotRecord {
    size_t index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    double dx_wire = 0;   // drawn d.c.-wire displacement [m]
    double di_rel = 0;    // drawn relative current offset
    double atoms = 0;     // drawn atom number
    double t_star = -1;   // barrier crossing time [s]; -1 = never crossed
    double d_star = 0;    // separation at the crossing [m]
    FringeFit fit;
    double separation = 0;  // back-inferred source separation [m]
    bool biased = false;
    std::string message;    // failure reason when !ok
};

struct EnsembleResult {
    std::vector<ShotRecord> shots;
    PhaseEnsemble stats;  // over successful shots
    size_t failed = 0;
};

// Interpolated time and separation where the chemical potential of the
// evolving state drops below the barrier top.
inline void find_barrier_crossing(const std::vector<SplitSample>& timeline, double* t_star,
                                  double* d_star) {
    *t_star = -1;
    *d_star = 0;
    for (size_t i = 0; i < timeline.size(); ++i) {
        const auto& s = timeline[i];
        if (s.geometry.n_wells != 2) continue;
        if (s.mu >= s.geometry.saddle_value) continue;
        const auto& p = timeline[i - (i > 0)];
        if (i > 0 && p.geometry.n_wells == 2 && p.mu >= p.geometry.saddle_value) {
            const double fp = p.mu - p.geometry.saddle_value;
            const double fs = s.mu - s.geometry.saddle_value;
            const double u = fp / (fp - fs);
            *t_star = p.t + u * (s.t - p.t);
            *d_star = p.geometry.d + u * (s.geometry.d - p.geometry.d);
        } else {
            *t_star = s.t;
            *d_star = s.geometry.d;
        }
        return;
    }
}

// One complete shot: draw noise, split, fly, image, fit. Throws on numerical
// failure; run_ensemble catches and records per shot.
inline ShotRecord run_shot(const Scenario& sc, size_t index) {
    ShotRecord rec;
    rec.index = index;
    rec.seed = shot_seed(sc.seed, index);

    std::mt19937_64 rng(rec.seed);
    const double gx = normal01(rng);
    const double gi = normal01(rng);
    const double gn = normal01(rng);
    rec.dx_wire = gx * sc.noise.sigma_pos;
    rec.di_rel = gi * sc.noise.sigma_current;
    rec.atoms = std::max(2.0, sc.atoms * (1.0 + gn * sc.noise.sigma_atoms));

    ChipLayout lay = sc.layout;
    for (auto& w : lay.wires)
        if (w.kind == WireKind::dc) {
            w.center.x += rec.dx_wire;
            w.current *= 1.0 + rec.di_rel;
        }

    GpeParams par = sc.gpe_params();
    par.atoms = rec.atoms;

    const SplitResult res = split_sequence(lay, sc.species, sc.ramp, par, sc.split_options());
    find_barrier_crossing(res.timeline, &rec.t_star, &rec.d_star);

    const Wavefunction far = time_of_flight(res.state, sc.tof.time, par, sc.tof.options());
    DensityProfile prof = line_profile(far, sc.tof.crop);
    if (sc.imaging_enabled) {
        ImagingSpec img = sc.imaging;
        img.seed = mix_seed(rec.seed ^ 0x696d616765ULL);  // decorrelate from noise draws
        prof = synth_image(prof, img);
    }
    rec.fit = fit_fringes(prof);
    const SeparationEstimate sep = infer_separation(rec.fit, sc.tof.time, sc.species);
    rec.separation = sep.separation;
    rec.biased = sep.interaction_biased;
    rec.ok = true;
    return rec;
}

inline EnsembleResult run_ensemble(const Scenario& sc, int threads = 1) {
    sc.validate();
    EnsembleResult out;
    out.shots.resize(sc.shots);

    auto work = [&](size_t first, size_t stride) {
        for (size_t i = first; i < sc.shots; i += stride) {
            try {
                out.shots[i] = run_shot(sc, i);
            } catch (const Error& e) {
                out.shots[i].index = i;
                out.shots[i].seed = shot_seed(sc.seed, i);
                out.shots[i].ok = false;
                out.shots[i].message = e.what();
            }
        }
    };

    const size_t nthreads =
        std::clamp<size_t>(threads < 1 ? 1 : static_cast<size_t>(threads), 1, sc.shots);
    if (nthreads == 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(nthreads);
        for (size_t k = 0; k < nthreads; ++k)
            pool.emplace_back(work, k, nthreads);
        for (auto& th : pool) th.join();
    }

    std::vector<PhaseSample> samples;
    for (const auto& s : out.shots) {
        if (s.ok)
            samples.push_back({s.fit.phase, s.fit.contrast});
        else
            ++out.failed;
    }
    if (samples.size() >= 2) out.stats = circular_stats(samples);
    return out;
}

// ---- CSV builders ---------------------------------------------------------------

namespace runner_detail {

inline void row(std::string& s, std::initializer_list<double> vals) {
    bool first = true;
    for (double v : vals) {
        if (!first) s += ',';
        s += fmt(v);
        first = false;
    }
    s += '\n';
}

} // namespace runner_detail

inline std::string profile_csv(const DensityProfile& prof) {
    std::string s = "position_m,density_per_m\n";
    for (size_t i = 0; i < prof.z.size(); ++i)
        runner_detail::row(s, {prof.z[i], prof.n[i]});
    return s;
}

inline DensityProfile read_profile_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open profile '" + path + "'");
    DensityProfile prof;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const char* p = line.c_str();
        char* end = nullptr;
        const double z = std::strtod(p, &end);
        if (end == p) {
            if (lineno == 1 || line.empty()) continue;  // header or blank
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": expected 'position,density'");
        }
        while (*end == ',' || *end == ' ' || *end == '\t') ++end;
        char* end2 = nullptr;
        const double n = std::strtod(end, &end2);
        if (end2 == end)
            throw ValidationError(path + ":" + std::to_string(lineno) +
                                  ": missing density column");
        prof.z.push_back(z);
        prof.n.push_back(n);
    }
    prof.validate();
    return prof;
}

inline std::string shots_csv(const EnsembleResult& res) {
    std::string s = "shot,seed,dx_wire_m,di_rel,atoms,t_star_s,d_star_m,status,message\n";
    for (const auto& r : res.shots) {
        s += std::to_string(r.index) + ',' + runner_detail::hex64(r.seed) + ',';
        s += runner_detail::fmt(r.dx_wire) + ',' + runner_detail::fmt(r.di_rel) + ',';
        s += runner_detail::fmt(r.atoms) + ',' + runner_detail::fmt(r.t_star) + ',';
        s += runner_detail::fmt(r.d_star) + ',';
        s += r.ok ? "ok" : "failed";
        s += ',';
        std::string msg = r.message;
        for (char& c : msg)
            if (c == ',' || c == '\n') c = ';';
        s += msg + '\n';
    }
    return s;
}

inline std::string fits_csv(const EnsembleResult& res) {
    std::string s = "shot,spacing_m,phase_rad,contrast,residual\n";
    for (const auto& r : res.shots) {
        if (!r.ok) continue;
        s += std::to_string(r.index) + ',';
        runner_detail::row(s, {r.fit.spacing, r.fit.phase, r.fit.contrast, r.fit.residual});
    }
    return s;
}

inline std::string ensemble_csv(const PhaseEnsemble& st) {
    const double deg = 180.0 / constants::pi;
    std::string s =
        "n,mean_rad,mean_deg,sigma_rad,sigma_deg,sigma_resultant_rad,sigma_resultant_deg,"
        "resultant,null_mean,null_sigma,sigma_above_null,verdict\n";
    s += std::to_string(st.n) + ',';
    s += runner_detail::fmt(st.mean) + ',' + runner_detail::fmt(st.mean * deg) + ',';
    s += runner_detail::fmt(st.sigma) + ',' + runner_detail::fmt(st.sigma * deg) + ',';
    s += runner_detail::fmt(st.sigma_resultant) + ',' +
         runner_detail::fmt(st.sigma_resultant * deg) + ',';
    s += runner_detail::fmt(st.resultant) + ',' + runner_detail::fmt(st.null_mean) + ',';
    s += runner_detail::fmt(st.null_sigma) + ',' + runner_detail::fmt(st.sigma_above_null) + ',';
    s += st.above_null_3sigma ? "locked" : "consistent-with-random";
    s += '\n';
    return s;
}

// 10-degree bins centred on the circular mean, matching the spread fit
inline std::string histogram_csv(const PhaseEnsemble& st) {
    constexpr int nbins = 36;
    std::array<int, nbins> counts{};
    for (const auto& smp : st.samples) {
        const double rel = wrap_angle(smp.phase - st.mean);
        int b = static_cast<int>(std::floor((rel + constants::pi) / (2.0 * constants::pi) * nbins));
        b = std::clamp(b, 0, nbins - 1);
        ++counts[b];
    }
    std::string s = "offset_deg,count\n";
    for (int b = 0; b < nbins; ++b) {
        const double centre = -180.0 + (b + 0.5) * 10.0;
        s += runner_detail::fmt(centre) + ',' + std::to_string(counts[b]) + '\n';
    }
    return s;
}

inline std::string timeline_csv(const SplitResult& res) {
    std::string s =
        "t_s,rf_frequency_hz,rf_current_a,n_wells,d_m,v_bar_j,epsilon_j,mu_j,"
        "phase_rad,odd_norm,kinetic_j,potential_j,interaction_j\n";
    for (const auto& smp : res.timeline)
        runner_detail::row(
            s, {smp.t, smp.rf.omega / (2.0 * constants::pi), smp.rf.current,
                static_cast<double>(smp.geometry.n_wells), smp.geometry.d, smp.geometry.v_bar,
                smp.geometry.epsilon, smp.mu, smp.phase, smp.odd_norm, smp.energy.kinetic,
                smp.energy.potential, smp.energy.interaction});
    return s;
}

// ---- two-mode reduction along a split -------------------------------------------

struct TwoModeKnot {
    double t = 0;
    double d = 0;
    double tunnel = 0;
    double onsite = 0;
    double eps = 0;
};

// Rebuilds the solver's cut at every two-well frame and maps it onto the
// two-mode model. J and U come from the untilted cut (a linear tilt only
// skews the levels); eps keeps the tilt. Frames too close to the
// bifurcation for the reduction are skipped.
inline std::vector<TwoModeKnot> extract_two_mode_knots(const ChipLayout& lay,
                                                       const AtomSpecies& species,
                                                       const SplitResult& res,
                                                       const SplitOptions& opts,
                                                       const GpeParams& par) {
    std::vector<TwoModeKnot> knots;
    const size_t n = opts.grid;
    const double dx = 2.0 * opts.window_half / static_cast<double>(n);
    for (const auto& s : res.timeline) {
        if (s.geometry.n_wells != 2) continue;
        const double ycut = 0.5 * (s.geometry.well[0].pos.y + s.geometry.well[1].pos.y);
        PotentialCut bare{std::vector<double>(n), dx}, tilted{std::vector<double>(n), dx};
        for (size_t j = 0; j < n; ++j) {
            const double xi = (static_cast<double>(j) - static_cast<double>(n / 2)) * dx;
            bare.v[j] = effective_potential(lay, species, s.rf, {res.x_origin + xi, ycut, 0});
            tilted.v[j] = bare.v[j] + opts.extra_tilt * xi;
        }
        try {
            const TwoModeParams p = extract_two_mode(bare, species, par);
            const double eps = opts.extra_tilt == 0
                                   ? p.imbalance
                                   : extract_two_mode(tilted, species, par).imbalance;
            knots.push_back({s.t, s.geometry.d, p.tunnel, p.onsite, eps});
        } catch (const Error&) {
            // barely-bifurcated frames miss the two-minima structure
        }
    }
    return knots;
}

inline std::string knots_csv(const std::vector<TwoModeKnot>& knots) {
    std::string s = "t_s,d_m,tunnel_j,onsite_j,epsilon_j\n";
    for (const auto& k : knots)
        runner_detail::row(s, {k.t, k.d, k.tunnel, k.onsite, k.eps});
    return s;
}

// ---- command implementations -----------------------------------------------------

inline nlohmann::json run_meta(const RunSettings& rs, const std::string& command) {
    nlohmann::json meta;
    meta["command"] = command;
    meta["scenario"] = rs.scenario.name;
    meta["config_hash"] = rs.config_hash;
    meta["seed"] = rs.scenario.seed;
    return meta;
}

// Static field, dressed potential and well geometry at one rf setting
// (default: the ramp endpoint).
inline DoubleWellGeometry cmd_potential(const RunSettings& rs, const RfSetting& rf,
                                        const std::string& outdir) {
    const Scenario& sc = rs.scenario;
    const Vec3 centre = find_static_minimum(sc.layout);
    const GridSpec2D grid = split_scan_grid(sc.layout, sc.species, rf, centre, {});
    const PotentialMap map = map_potential(sc.layout, sc.species, rf, grid);
    const DoubleWellGeometry geo = locate_wells(map);

    std::string field = "x_m,y_m,bx_t,by_t,bz_t\n";
    std::string pot = "x_m,y_m,v_j\n";
    for (int iy = 0; iy < grid.ny; ++iy)
        for (int ix = 0; ix < grid.nx; ++ix) {
            const Vec3 p{map.x(ix), map.y(iy), 0};
            const Vec3 b = static_field(sc.layout, p);
            runner_detail::row(field, {p.x, p.y, b.x, b.y, b.z});
            runner_detail::row(pot, {p.x, p.y, map.at(ix, iy)});
        }

    std::string wells = "n_wells,d_m,v_bar_j,epsilon_j,x0_m,y0_m,x1_m,y1_m,omega_x0_rad_s,"
                        "omega_x1_rad_s,saddle_x_m,saddle_y_m,saddle_v_j\n";
    runner_detail::row(wells,
                       {static_cast<double>(geo.n_wells), geo.d, geo.v_bar, geo.epsilon,
                        geo.well[0].pos.x, geo.well[0].pos.y, geo.well[1].pos.x,
                        geo.well[1].pos.y, geo.well[0].omega_x, geo.well[1].omega_x,
                        geo.saddle.x, geo.saddle.y, geo.saddle_value});

    // 1d cut through the wells at their common height, solver-ready
    const double ycut = geo.n_wells == 2 ? 0.5 * (geo.well[0].pos.y + geo.well[1].pos.y)
                                         : geo.well[0].pos.y;
    const double dx = 2.0 * sc.window_half / static_cast<double>(sc.grid);
    std::string cut = "x_m,v_j\n";
    for (size_t j = 0; j < sc.grid; ++j) {
        const double xi = (static_cast<double>(j) - static_cast<double>(sc.grid / 2)) * dx;
        runner_detail::row(
            cut, {centre.x + xi,
                  effective_potential(sc.layout, sc.species, rf, {centre.x + xi, ycut, 0})});
    }

    OutputSet out(outdir);
    out.add("field.csv", std::move(field));
    out.add("potential.csv", std::move(pot));
    out.add("wells.csv", std::move(wells));
    out.add("cut.csv", std::move(cut));
    nlohmann::json meta = run_meta(rs, "potential");
    meta["rf_frequency_hz"] = rf.omega / (2.0 * constants::pi);
    meta["rf_current_a"] = rf.current;
    out.commit(meta);
    return geo;
}

// Ground state at the ramp start; writes the density and a restart checkpoint.
inline GroundStateResult cmd_groundstate(const RunSettings& rs, const std::string& outdir) {
    const Scenario& sc = rs.scenario;
    const RfSetting rf = sc.ramp.at(sc.ramp.t_begin());
    const Vec3 centre = find_static_minimum(sc.layout);
    const GridSpec2D grid = split_scan_grid(sc.layout, sc.species, rf, centre, {});
    const DoubleWellGeometry geo = locate_wells(map_potential(sc.layout, sc.species, rf, grid));
    const double ycut = geo.n_wells == 2 ? 0.5 * (geo.well[0].pos.y + geo.well[1].pos.y)
                                         : geo.well[0].pos.y;
    const double dx = 2.0 * sc.window_half / static_cast<double>(sc.grid);
    PotentialCut cut{std::vector<double>(sc.grid), dx};
    for (size_t j = 0; j < sc.grid; ++j) {
        const double xi = (static_cast<double>(j) - static_cast<double>(sc.grid / 2)) * dx;
        cut.v[j] = effective_potential(sc.layout, sc.species, rf, {centre.x + xi, ycut, 0});
    }
    const GpeParams par = sc.gpe_params();
    GroundStateResult gs = ground_state(cut, sc.species, par);

    OutputSet out(outdir);
    out.add("density.csv", profile_csv(line_profile(gs.state)));
    nlohmann::json meta = run_meta(rs, "groundstate");
    meta["mu_j"] = chemical_potential(gs.state, cut, par);
    meta["iterations"] = gs.iterations;
    out.commit(meta);
    write_checkpoint((std::filesystem::path(outdir) / "state.ckpt").string(), gs.state);
    return gs;
}

struct SplitOutputs {
    SplitResult result;
    std::vector<TwoModeKnot> knots;
    double t_star = -1;
    double d_star = 0;
};

// Full splitting run on the noise-free layout; exports the timeline, the
// two-mode reduction and the final state.
inline SplitOutputs cmd_split(const RunSettings& rs, const std::string& outdir) {
    const Scenario& sc = rs.scenario;
    const GpeParams par = sc.gpe_params();
    SplitOutputs so;
    so.result = split_sequence(sc.layout, sc.species, sc.ramp, par, sc.split_options());
    so.knots = extract_two_mode_knots(sc.layout, sc.species, so.result, sc.split_options(), par);
    find_barrier_crossing(so.result.timeline, &so.t_star, &so.d_star);

    OutputSet out(outdir);
    out.add("timeline.csv", timeline_csv(so.result));
    out.add("knots.csv", knots_csv(so.knots));
    out.add("density.csv", profile_csv(line_profile(so.result.state)));
    nlohmann::json meta = run_meta(rs, "split");
    meta["t_star_s"] = so.t_star;
    meta["d_star_m"] = so.d_star;
    out.commit(meta);
    write_checkpoint((std::filesystem::path(outdir) / "state.ckpt").string(), so.result.state);
    return so;
}

// Expansion from a checkpointed state plus the fringe fit of the result.
inline FringeFit cmd_tof(const RunSettings& rs, const std::string& state_path,
                         const std::string& outdir) {
    const Scenario& sc = rs.scenario;
    const Wavefunction wf = read_checkpoint(state_path, sc.species);
    GpeParams par = sc.gpe_params();
    par.atoms = wf.atoms;
    const Wavefunction far = time_of_flight(wf, sc.tof.time, par, sc.tof.options());
    const DensityProfile prof = line_profile(far, sc.tof.crop);
    const FringeFit fit = fit_fringes(prof);

    OutputSet out(outdir);
    out.add("profile.csv", profile_csv(prof));
    std::string fitcsv = "spacing_m,phase_rad,contrast,residual,amplitude,offset,centre_m,width_m\n";
    runner_detail::row(fitcsv, {fit.spacing, fit.phase, fit.contrast, fit.residual,
                                fit.amplitude, fit.offset, fit.centre, fit.width});
    out.add("fit.csv", std::move(fitcsv));
    nlohmann::json meta = run_meta(rs, "tof");
    meta["state"] = state_path;
    meta["flight_time_s"] = sc.tof.time;
    out.commit(meta);
    return fit;
}

// Ensemble with outputs; enforces the shot-failure budget after persisting
// everything, so a failed run still leaves its evidence on disk.
inline EnsembleResult cmd_ensemble(const RunSettings& rs, const Scenario& sc,
                                   const std::string& outdir, int threads) {
    EnsembleResult res = run_ensemble(sc, threads);

    OutputSet out(outdir);
    out.add("shots.csv", shots_csv(res));
    out.add("fits.csv", fits_csv(res));
    if (res.shots.size() - res.failed >= 2) {
        out.add("ensemble.csv", ensemble_csv(res.stats));
        out.add("histogram.csv", histogram_csv(res.stats));
    }
    nlohmann::json meta = run_meta(rs, "ensemble");
    meta["scenario"] = sc.name;
    meta["seed"] = sc.seed;
    meta["shots"] = sc.shots;
    meta["failed"] = res.failed;
    out.commit(meta);

    if (res.failed * 10 > sc.shots) {
        char msg[128];
        std::snprintf(msg, sizeof msg, "%zu of %zu shots failed (budget is 10%%)", res.failed,
                      sc.shots);
        throw ConvergenceError(msg);
    }
    if (res.shots.size() - res.failed < 2)
        throw ConvergenceError("fewer than two shots succeeded; no ensemble statistics");
    return res;
}

inline EnsembleResult cmd_ensemble(const RunSettings& rs, const std::string& outdir,
                                   int threads) {
    return cmd_ensemble(rs, rs.scenario, outdir, threads);
}

// ---- figure pipelines -------------------------------------------------------------

// Well separation against rf frequency for three magnetic gradients.
// Gnuplot-friendly .dat: blocks separated by blank lines, one per gradient.
inline void pipeline_fig2a(const RunSettings& rs, const std::string& outdir) {
    const Fig2aSettings& fg = rs.fig2a;
    if (fg.points < 2) throw ValidationError("fig2a needs at least two sweep points");
    std::string csvs = "gradient_t_m,rf_frequency_hz,d_m,v_bar_j\n";
    std::string dat = "# rf_frequency_hz  d_m  (one block per gradient)\n";
    for (double grad : fg.gradients) {
        SymmetricLayoutSpec ls;
        ls.gradient = grad;
        ls.trap_height = fg.trap_height;
        ls.rf_current = fg.rf_current;
        ls.rf_frequency = fg.frequency_start;
        const ChipLayout lay = symmetric_layout(ls);
        const Vec3 centre = find_static_minimum(lay);
        dat += "# gradient " + runner_detail::fmt(grad) + " T/m\n";
        for (int i = 0; i < fg.points; ++i) {
            const double f = fg.frequency_start +
                             (fg.frequency_stop - fg.frequency_start) * i / (fg.points - 1);
            const RfSetting rf{2.0 * constants::pi * f, fg.rf_current};
            const GridSpec2D grid = split_scan_grid(lay, rs.scenario.species, rf, centre, {});
            const DoubleWellGeometry geo =
                locate_wells(map_potential(lay, rs.scenario.species, rf, grid));
            const double d = geo.n_wells == 2 ? geo.d : 0.0;
            runner_detail::row(csvs, {grad, f, d, geo.v_bar});
            dat += runner_detail::fmt(f) + "  " + runner_detail::fmt(d) + '\n';
        }
        dat += '\n';
    }
    OutputSet out(outdir);
    out.add("fig2a.csv", std::move(csvs));
    out.add("fig2a.dat", std::move(dat));
    out.commit(run_meta(rs, "figure 2a"));
}

// Fringe spacing against rf amplitude: geometric separation, the
// point-source law, and a GPE release of two condensate lobes at that
// separation (interactions tracked through the early expansion).
inline void pipeline_fig2c(const RunSettings& rs, const std::string& outdir) {
    const Scenario& sc = rs.scenario;
    const Fig2cSettings& fg = rs.fig2c;
    if (fg.points < 2) throw ValidationError("fig2c needs at least two sweep points");
    if (!(fg.lobe_sigma > 0) || !(fg.lobe_atoms > 1))
        throw ValidationError("fig2c lobe parameters must be positive");

    const Vec3 centre = find_static_minimum(sc.layout);
    GpeParams par = sc.gpe_params();
    par.atoms = fg.lobe_atoms;
    par.dt = sc.tof.dt;

    TofOptions tof;
    tof.interactions = true;
    tof.interact_until = sc.tof.interact_until;
    tof.dt = sc.tof.dt;
    tof.grid = 16384;

    const size_t n = 512;
    const double span = 16.0 * std::max(fg.lobe_sigma, 0.4e-6);

    std::string csvs =
        "rf_current_a,d_m,dz_law_m,dz_gpe_m,deviation_rel,contrast\n";
    std::string dat = "# d_m  dz_law_m  dz_gpe_m\n";
    for (int i = 0; i < fg.points; ++i) {
        const double amp =
            fg.current_start + (fg.current_stop - fg.current_start) * i / (fg.points - 1);
        const RfSetting rf{sc.ramp.at(sc.ramp.t_end()).omega, amp};
        const GridSpec2D grid = split_scan_grid(sc.layout, sc.species, rf, centre, {});
        const DoubleWellGeometry geo =
            locate_wells(map_potential(sc.layout, sc.species, rf, grid));
        if (geo.n_wells != 2)
            throw RegimeError("fig2c sweep point below the splitting threshold; raise "
                              "current_start");
        const double law = point_source_spacing(geo.d, sc.tof.time, sc.species);

        Wavefunction wf;
        wf.amp.assign(n, {0.0, 0.0});
        wf.dx = span / static_cast<double>(n);
        wf.atoms = fg.lobe_atoms;
        wf.species = sc.species;
        for (size_t j = 0; j < n; ++j) {
            const double x = wf.x(j);
            wf.amp[j] =
                std::exp(-(x - geo.d / 2) * (x - geo.d / 2) / (4 * fg.lobe_sigma * fg.lobe_sigma)) +
                std::exp(-(x + geo.d / 2) * (x + geo.d / 2) / (4 * fg.lobe_sigma * fg.lobe_sigma));
        }
        wf.normalize();

        const Wavefunction far = time_of_flight(wf, sc.tof.time, par, tof);
        const FringeFit fit = fit_fringes(line_profile(far, 150e-6));
        runner_detail::row(csvs, {amp, geo.d, law, fit.spacing, fit.spacing / law - 1.0,
                                  fit.contrast});
        dat += runner_detail::fmt(geo.d) + "  " + runner_detail::fmt(law) + "  " +
               runner_detail::fmt(fit.spacing) + '\n';
    }
    OutputSet out(outdir);
    out.add("fig2c.csv", std::move(csvs));
    out.add("fig2c.dat", std::move(dat));
    out.commit(run_meta(rs, "figure 2c"));
}

// Phase histograms at two splitting stages plus a scrambled control.
inline void pipeline_fig3(const RunSettings& rs, const std::string& outdir, int threads) {
    const Fig3Settings& fg = rs.fig3;
    const std::filesystem::path base(outdir);

    Scenario stage2 = rs.scenario;
    stage2.name += "-wide";
    stage2.ramp.points.back().rf.current = fg.wide_current;

    Scenario control = rs.scenario;
    control.name += "-control";
    control.shots = fg.control_shots;
    control.noise.sigma_pos *= fg.scramble;

    const double deg = 180.0 / constants::pi;
    std::string summary =
        "stage,n,failed,mean_deg,sigma_deg,resultant,sigma_above_null,verdict\n";
    auto add_stage = [&](const char* label, const Scenario& sc) {
        const EnsembleResult res = cmd_ensemble(rs, sc, (base / label).string(), threads);
        summary += std::string(label) + ',' + std::to_string(res.stats.n) + ',' +
                   std::to_string(res.failed) + ',' + runner_detail::fmt(res.stats.mean * deg) +
                   ',' + runner_detail::fmt(res.stats.sigma * deg) + ',' +
                   runner_detail::fmt(res.stats.resultant) + ',' +
                   runner_detail::fmt(res.stats.sigma_above_null) + ',' +
                   (res.stats.above_null_3sigma ? "locked" : "consistent-with-random");
        summary += '\n';
    };
    add_stage("stage1", rs.scenario);
    add_stage("stage2", stage2);
    add_stage("control", control);

    OutputSet out(outdir);
    out.add("summary.csv", std::move(summary));
    out.commit(run_meta(rs, "figure 3"));
}

struct PhasePolyFit {
    double c0 = 0, c1 = 0, c2 = 0;  // phi ~ c0 + c1 u + c2 u^2, u = t - t_ref
    double rms_quadratic = 0;
    double rms_linear = 0;
};

// Least-squares linear and quadratic models of phi(t) over a window
inline PhasePolyFit fit_phase_growth(const std::vector<double>& t, const std::vector<double>& phi,
                                     double t_ref) {
    if (t.size() != phi.size() || t.size() < 4)
        throw ValidationError("phase growth fit needs at least four samples");
    const auto n = static_cast<Eigen::Index>(t.size());
    Eigen::MatrixXd a(n, 3);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double u = t[static_cast<size_t>(i)] - t_ref;
        a(i, 0) = 1.0;
        a(i, 1) = u;
        a(i, 2) = u * u;
        y(i) = phi[static_cast<size_t>(i)];
    }
    PhasePolyFit out;
    const Eigen::Vector3d q = a.colPivHouseholderQr().solve(y);
    out.c0 = q(0);
    out.c1 = q(1);
    out.c2 = q(2);
    out.rms_quadratic = std::sqrt((a * q - y).squaredNorm() / static_cast<double>(n));
    const Eigen::Vector2d l =
        a.leftCols<2>().colPivHouseholderQr().solve(y);
    out.rms_linear =
        std::sqrt((a.leftCols<2>() * l - y).squaredNorm() / static_cast<double>(n));
    return out;
}

struct Fig4Branch {
    double tilt = 0;
    SplitOutputs split;
    TwoModeTrajectory reduced;
    PhasePolyFit fit;
    double worst_model_diff = 0;  // |phi_gpe - phi_twomode| over the compared span [rad]
};

// One tilted splitting run plus its two-mode shadow: the reduced model is
// driven by the extracted J(t), U(t), eps(t) knots from the local
// equilibrium at the decoupling point.
inline Fig4Branch run_fig4_branch(const RunSettings& rs, double tilt,
                                  const std::string& outdir) {
    RunSettings local = rs;
    local.scenario.tilt = tilt;
    Fig4Branch br;
    br.tilt = tilt;
    br.split = cmd_split(local, outdir);
    const auto& timeline = br.split.result.timeline;
    const auto& knots = br.split.knots;
    if (br.split.t_star < 0)
        throw RegimeError("tilted run never crossed the barrier; extend the ramp");
    if (knots.size() < 2)
        throw RegimeError("too few two-mode frames for the reduced comparison");

    const double t_fit0 = br.split.t_star + rs.fig4.fit_delay;

    // reduced-model shadow from the first timeline sample past the delay
    size_t istart = 0;
    while (istart < timeline.size() &&
           (timeline[istart].geometry.n_wells != 2 || timeline[istart].t < t_fit0))
        ++istart;
    if (istart >= timeline.size())
        throw RegimeError("no samples after the decoupling point; extend the hold");
    const auto& s0 = timeline[istart];

    auto lerp_knots = [&knots](double t) {
        if (t <= knots.front().t) return knots.front();
        if (t >= knots.back().t) return knots.back();
        size_t hi = 1;
        while (knots[hi].t < t) ++hi;
        const double f = (t - knots[hi - 1].t) / (knots[hi].t - knots[hi - 1].t);
        const TwoModeKnot &a = knots[hi - 1], &b = knots[hi];
        TwoModeKnot k;
        k.t = t;
        k.d = a.d + f * (b.d - a.d);
        k.tunnel = a.tunnel + f * (b.tunnel - a.tunnel);
        k.onsite = a.onsite + f * (b.onsite - a.onsite);
        k.eps = a.eps + f * (b.eps - a.eps);
        return k;
    };
    const double atoms = rs.scenario.atoms;
    auto params_at = [&](double t) {
        const TwoModeKnot k = lerp_knots(t);
        TwoModeParams p;
        p.tunnel = k.tunnel;
        p.onsite = k.onsite;
        p.imbalance = k.eps;
        p.atoms = atoms;
        return p;
    };
    TwoModeState start;
    start.phi = s0.phase;
    const TwoModeParams p0 = params_at(s0.t);
    start.z = -p0.imbalance / (p0.onsite * p0.atoms + 2.0 * p0.tunnel);
    start.z = std::clamp(start.z, -1.0, 1.0);
    br.reduced = evolve_two_mode(start, params_at, 1e-7, s0.t, timeline.back().t, 50);

    // unwrapped solver phase for the growth fits and the model comparison
    std::vector<double> ts, phis;
    double prev = s0.phase, offset = 0;
    for (const auto& s : timeline) {
        if (s.t < s0.t) continue;
        double ph = s.phase + offset;
        while (ph - prev > constants::pi) {
            offset -= 2.0 * constants::pi;
            ph -= 2.0 * constants::pi;
        }
        while (ph - prev < -constants::pi) {
            offset += 2.0 * constants::pi;
            ph += 2.0 * constants::pi;
        }
        ts.push_back(s.t);
        phis.push_back(ph);
        prev = ph;
    }

    // the reduced model runs on its own time grid; compare at the solver
    // frame times by linear interpolation (queries are ascending)
    size_t ti = 0;
    auto reduced_at = [&](double t) {
        const auto& pts = br.reduced.points;
        while (ti + 1 < pts.size() && pts[ti + 1].t < t) ++ti;
        if (ti + 1 >= pts.size()) return pts.back();
        const auto &a = pts[ti], &b = pts[ti + 1];
        const double f = std::clamp((t - a.t) / (b.t - a.t), 0.0, 1.0);
        return TwoModePoint{t, a.z + f * (b.z - a.z), a.phi + f * (b.phi - a.phi)};
    };
    for (size_t i = 0; i < ts.size(); ++i)
        br.worst_model_diff =
            std::max(br.worst_model_diff, std::abs(phis[i] - reduced_at(ts[i]).phi));

    std::vector<double> tw, pw;
    for (size_t i = 0; i < ts.size(); ++i)
        if (ts[i] <= t_fit0 + rs.fig4.fit_window) {
            tw.push_back(ts[i]);
            pw.push_back(phis[i]);
        }
    br.fit = fit_phase_growth(tw, pw, t_fit0);

    std::string curve = "t_s,phase_gpe_rad,phase_twomode_rad,z_twomode\n";
    ti = 0;
    for (size_t i = 0; i < ts.size(); ++i) {
        const TwoModePoint rp = reduced_at(ts[i]);
        runner_detail::row(curve, {ts[i], phis[i], rp.phi, rp.z});
    }
    OutputSet out(outdir);
    out.add("phase.csv", std::move(curve));
    std::string fits = "tilt_j_m,c0_rad,c1_rad_s,c2_rad_s2,rms_quadratic_rad,rms_linear_rad,"
                       "worst_model_diff_rad\n";
    runner_detail::row(fits, {tilt, br.fit.c0, br.fit.c1, br.fit.c2, br.fit.rms_quadratic,
                              br.fit.rms_linear, br.worst_model_diff});
    out.add("growth.csv", std::move(fits));
    nlohmann::json meta = run_meta(rs, "figure 4 branch");
    meta["tilt_j_m"] = tilt;
    out.commit(meta);
    return br;
}

struct Fig4Result {
    Fig4Branch plus;
    Fig4Branch minus;
};

// Phase evolution under opposite well imbalances, with quadratic growth fits
inline Fig4Result pipeline_fig4(const RunSettings& rs, const std::string& outdir) {
    const std::filesystem::path base(outdir);
    Fig4Result res;
    res.plus = run_fig4_branch(rs, +rs.fig4.tilt, (base / "tilt_pos").string());
    res.minus = run_fig4_branch(rs, -rs.fig4.tilt, (base / "tilt_neg").string());

    std::string summary =
        "branch,tilt_j_m,c2_rad_s2,rms_quadratic_rad,rms_linear_rad,worst_model_diff_rad\n";
    for (const Fig4Branch* br : {&res.plus, &res.minus}) {
        summary += (br->tilt >= 0 ? "positive," : "negative,");
        runner_detail::row(summary, {br->tilt, br->fit.c2, br->fit.rms_quadratic,
                                     br->fit.rms_linear, br->worst_model_diff});
    }
    OutputSet out(outdir);
    out.add("summary.csv", std::move(summary));
    out.commit(run_meta(rs, "figure 4"));
    return res;
}

} // namespace splitsim
