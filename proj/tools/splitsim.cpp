// Command-line front end: one subcommand per stage of the analysis chain
// plus the canned figure pipelines. All physics lives in the headers; this
// file only parses flags, loads the config and routes errors to exit codes
// (1 = bad input, 2 = a run that started but could not finish).

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "splitsim/runner.hpp"

namespace {

struct GlobalArgs {
    std::string config;
    std::string out = "out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
};

splitsim::RunSettings load(const GlobalArgs& g) {
    if (g.config.empty())
        throw splitsim::ValidationError("--config is required for this command");
    splitsim::RunSettings rs = splitsim::load_run_settings(splitsim::Config::load(g.config));
    if (g.seed_set) rs.scenario.seed = g.seed;
    return rs;
}

void print_fit(const splitsim::FringeFit& fit) {
    std::printf("spacing   %.4f um\n", fit.spacing * 1e6);
    std::printf("phase     %.4f deg\n", fit.phase * 180.0 / splitsim::constants::pi);
    std::printf("contrast  %.4f\n", fit.contrast);
    std::printf("residual  %.4g\n", fit.residual);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"atom-chip rf splitter simulation toolkit"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("-c,--config", g.config, "run configuration (toml)");
    app.add_option("-o,--out", g.out, "output directory");
    auto* seed_opt = app.add_option("-s,--seed", g.seed, "override the ensemble seed");
    app.add_option("-j,--threads", g.threads, "worker threads for ensembles");

    auto* c_pot = app.add_subcommand("potential", "field map, dressed potential and well geometry");
    std::string rf_freq_s, rf_curr_s;
    c_pot->add_option("--rf-frequency", rf_freq_s, "rf setting override, e.g. '500 kHz'");
    c_pot->add_option("--rf-current", rf_curr_s, "rf setting override, e.g. '80 mA'");

    auto* c_gs = app.add_subcommand("groundstate", "condensate ground state at the ramp start");
    auto* c_split = app.add_subcommand("split", "propagate the condensate through the rf ramp");
    auto* c_tof = app.add_subcommand("tof", "free expansion of a checkpointed state");
    std::string state_path;
    c_tof->add_option("--state", state_path, "checkpoint to expand (default <out>/state.ckpt)");

    auto* c_fit = app.add_subcommand("fit", "fringe fit of a density profile csv");
    std::string profile_path;
    c_fit->add_option("--profile", profile_path, "csv with position,density columns")->required();

    auto* c_ens = app.add_subcommand("ensemble", "repeated noisy shots with phase statistics");

    auto* c_fig = app.add_subcommand("figure", "canned analysis pipelines");
    std::string which;
    c_fig->add_option("name", which, "one of: 2a, 2c, 3, 4")->required();

    CLI11_PARSE(app, argc, argv);
    g.seed_set = seed_opt->count() > 0;

    try {
        if (c_pot->parsed()) {
            const splitsim::RunSettings rs = load(g);
            splitsim::RfSetting rf = rs.scenario.ramp.at(rs.scenario.ramp.t_end());
            if (!rf_freq_s.empty())
                rf.omega = 2.0 * splitsim::constants::pi *
                           splitsim::parse_quantity(rf_freq_s, "frequency");
            if (!rf_curr_s.empty()) rf.current = splitsim::parse_quantity(rf_curr_s, "current");
            const splitsim::DoubleWellGeometry geo = splitsim::cmd_potential(rs, rf, g.out);
            std::printf("wells     %d\n", geo.n_wells);
            if (geo.n_wells == 2) {
                std::printf("d         %.4f um\n", geo.d * 1e6);
                std::printf("barrier   %.4f kHz\n",
                            geo.v_bar / splitsim::constants::planck * 1e-3);
                std::printf("epsilon   %.4f Hz\n", geo.epsilon / splitsim::constants::planck);
            }
            std::printf("wrote %s\n", g.out.c_str());
        } else if (c_gs->parsed()) {
            const splitsim::RunSettings rs = load(g);
            const splitsim::GroundStateResult gs = splitsim::cmd_groundstate(rs, g.out);
            std::printf("iterations %zu\n", gs.iterations);
            std::printf("wrote %s\n", g.out.c_str());
        } else if (c_split->parsed()) {
            const splitsim::RunSettings rs = load(g);
            const splitsim::SplitOutputs so = splitsim::cmd_split(rs, g.out);
            if (so.t_star >= 0)
                std::printf("decoupled at %.4f ms, d = %.4f um\n", so.t_star * 1e3,
                            so.d_star * 1e6);
            else
                std::printf("chemical potential never dropped below the barrier\n");
            std::printf("wrote %s\n", g.out.c_str());
        } else if (c_tof->parsed()) {
            const splitsim::RunSettings rs = load(g);
            if (state_path.empty()) state_path = g.out + "/state.ckpt";
            const splitsim::FringeFit fit = splitsim::cmd_tof(rs, state_path, g.out);
            print_fit(fit);
            std::printf("wrote %s\n", g.out.c_str());
        } else if (c_fit->parsed()) {
            const splitsim::DensityProfile prof = splitsim::read_profile_csv(profile_path);
            print_fit(splitsim::fit_fringes(prof));
        } else if (c_ens->parsed()) {
            const splitsim::RunSettings rs = load(g);
            const splitsim::EnsembleResult res = splitsim::cmd_ensemble(rs, g.out, g.threads);
            const double deg = 180.0 / splitsim::constants::pi;
            std::printf("shots     %zu ok, %zu failed\n", res.stats.n, res.failed);
            std::printf("mean      %.3f deg\n", res.stats.mean * deg);
            std::printf("spread    %.3f deg\n", res.stats.sigma * deg);
            std::printf("R         %.4f (%.1f sigma above random)\n", res.stats.resultant,
                        res.stats.sigma_above_null);
            std::printf("wrote %s\n", g.out.c_str());
        } else if (c_fig->parsed()) {
            const splitsim::RunSettings rs = load(g);
            if (which == "2a")
                splitsim::pipeline_fig2a(rs, g.out);
            else if (which == "2c")
                splitsim::pipeline_fig2c(rs, g.out);
            else if (which == "3")
                splitsim::pipeline_fig3(rs, g.out, g.threads);
            else if (which == "4")
                splitsim::pipeline_fig4(rs, g.out);
            else
                throw splitsim::ValidationError("unknown figure '" + which +
                                                "' (expected 2a, 2c, 3 or 4)");
            std::printf("wrote %s\n", g.out.c_str());
        }
    } catch (const splitsim::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const splitsim::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
