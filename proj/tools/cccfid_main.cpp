#include "cccfid/cli_io.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

// exit codes: 0 ok, 1 usage, 2 runtime
int emit(const cccfid::Json& j, const std::string& out_path) {
    const std::string text = j.dump(2) + "\n";
    if (out_path.empty()) {
        std::cout << text;
    } else {
        std::ofstream out(out_path);
        if (!out) {
            std::cerr << "cannot write " << out_path << "\n";
            return 2;
        }
        out << text;
    }
    return 0;
}

void add_common(CLI::App* cmd, cccfid::RunConfig& config, std::string& out_path) {
    cmd->add_option("--alpha", config.alpha, "interval level alpha")
        ->check(CLI::Range(1e-6, 0.999999));
    cmd->add_option("--n-mc", config.n_mc, "Monte Carlo size for CCC evaluation");
    cmd->add_option("--seed", config.seed, "rng seed (auto-generated when absent)");
    cmd->add_option("--ccc-normalization", config.ccc_normalization,
                    "factor2_subject_avg | factor1_subject_avg | factor2_time_avg | "
                    "factor2_total_sum");
    cmd->add_option("--ccc-eval", config.ccc_eval, "closed | mc");
    cmd->add_option("--threads", config.n_threads, "worker threads (0 = hardware)");
    cmd->add_option("-o,--out", out_path, "write JSON here instead of stdout");
}

void add_model(CLI::App* cmd, cccfid::RunConfig& config) {
    cmd->add_option("--data", config.dataset_path, "long-format CSV dataset")
        ->required();
    cmd->add_option("--family", config.family, "gaussian | poisson | gamma");
    cmd->add_option("--spline-order", config.spline_order,
                    "highest random time-basis order S");
    cmd->add_option("--gamma", config.gamma,
                    "subject-time interaction: auto | on | off");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fiducial confidence intervals for the longitudinal concordance "
                 "correlation coefficient under generalized linear mixed models"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key=value config file (flags win)");

    cccfid::RunConfig config;
    std::string out_path;
    std::string table_path;
    bool list_scenarios = false;

    auto* fit = app.add_subcommand("fit", "fit the GLMM and report estimates");
    add_model(fit, config);
    add_common(fit, config, out_path);

    auto* interval =
        app.add_subcommand("interval", "confidence intervals for the CCC");
    add_model(interval, config);
    add_common(interval, config, out_path);
    interval->add_option("--methods", config.methods,
                         "fiducial, fisher_z, bootstrap (comma separated)")
        ->delimiter(',');
    interval->add_option("--n-draws", config.n_draws, "fiducial draws per interval");
    interval->add_option("--n-boot", config.n_boot, "bootstrap resamples");
    interval->add_option("--mode", config.mode, "pivot mode: joint | proxy");

    auto* bounds = app.add_subcommand("bounds", "attainable CCC bounds at the fit");
    add_model(bounds, config);
    add_common(bounds, config, out_path);

    auto* simulate =
        app.add_subcommand("simulate", "coverage/width study on a shipped scenario");
    simulate->add_option("--scenario", config.scenario, "scenario name");
    simulate->add_flag("--list", list_scenarios, "list the scenario catalog");
    add_common(simulate, config, out_path);
    simulate->add_option("--methods", config.methods,
                         "fiducial, fisher_z, bootstrap (comma separated)")
        ->delimiter(',');
    simulate->add_option("--n", config.n_subjects, "subject counts (comma separated)")
        ->delimiter(',');
    simulate->add_option("--replications", config.n_replications,
                         "replications per subject count");
    simulate->add_option("--n-draws", config.n_draws, "fiducial draws per interval");
    simulate->add_option("--n-boot", config.n_boot, "bootstrap resamples");
    simulate->add_option("--table", table_path, "also write the aligned text table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        cccfid::Json j;
        if (fit->parsed()) {
            config.command = "fit";
            j = cccfid::run_fit(config);
        } else if (interval->parsed()) {
            config.command = "interval";
            j = cccfid::run_interval(config);
        } else if (bounds->parsed()) {
            config.command = "bounds";
            j = cccfid::run_bounds(config);
        } else if (simulate->parsed()) {
            if (list_scenarios) {
                cccfid::Json names = cccfid::Json::array();
                for (const auto& s : cccfid::scenario_catalog())
                    names.push_back({{"name", s.name}, {"description", s.description}});
                return emit(cccfid::Json{{"scenarios", names}}, out_path);
            }
            if (config.scenario.empty()) {
                std::cerr << "simulate requires --scenario or --list\n";
                return 1;
            }
            config.command = "simulate";
            j = cccfid::run_simulate(config);
            if (!table_path.empty()) {
                std::ofstream t(table_path);
                t << j["table"].get<std::string>();
            }
        }
        return emit(j, out_path);
    } catch (const cccfid::Error& e) {
        cccfid::Json err{{"error", e.what()}};
        std::cerr << err.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << cccfid::Json{{"error", e.what()}}.dump() << "\n";
        return 2;
    }
}
