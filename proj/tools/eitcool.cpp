// eitcool: command-line front end for the cooling and readout simulations.
//
//   eitcool <modes|cooling-range|dynamics|spectrum|rap|fit> --config FILE
//           [--seed N] [--out DIR] [--threads N] [--dry-run]
//   eitcool fit --data FILE --model cooling [--config FILE]
//
// Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 regime error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "eitcool/commands.hpp"

namespace {

enum ExitCode { ok = 0, config_error = 2, numerical_error = 3, regime_error = 4 };

int run(const std::string& command, const std::string& config_path, std::optional<std::uint64_t> seed,
        const std::string& out_dir, unsigned threads, bool dry_run, const std::string& model,
        const std::string& data) {
    using namespace eitcool;
    std::optional<config::ExperimentConfig> cfg;
    if (!config_path.empty()) cfg = config::load_config(config_path);

    cli::RunOptions run;
    run.seed = seed ? *seed : (cfg ? cfg->seed : 0);
    run.threads = threads;
    run.fit_model = model;
    run.fit_data = data;

    if (dry_run) {
        if (cfg) std::cout << cli::describe(*cfg, command);
        std::cout << "seed: " << run.seed << "\nthreads: " << run.threads << "\n";
        if (command == "fit")
            std::cout << "fit: model '" << (model.empty() && cfg && cfg->fit ? cfg->fit->model : model)
                      << "', data '" << (data.empty() && cfg && cfg->fit ? cfg->fit->data : data) << "'\n";
        return ok;
    }

    const auto result = cli::run_command(command, cfg ? &*cfg : nullptr, run);

    std::string dir = out_dir;
    if (dir.empty() && cfg) dir = cfg->output;
    if (dir.empty()) dir = ".";
    const std::vector<std::pair<std::string, std::string>> metadata{
        {"eitcool", cli::version},
        {"command", command},
        {"config_fnv1a", cfg ? config::hex64(cfg->hash()) : "none"},
        {"seed", std::to_string(run.seed)},
    };
    const auto written = csv::write_bundle(dir, result.tables, metadata);
    std::cout << result.report;
    for (const auto& p : written) std::cout << "wrote " << p.string() << "\n";
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EIT cooling and collective readout simulations"};
    app.require_subcommand(1);

    std::string config_path, out_dir, model, data;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    bool dry_run = false;
    app.add_option("--config", config_path, "experiment configuration (YAML)")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "random seed; overrides the config");
    app.add_option("--out", out_dir, "output directory; overrides the config");
    app.add_option("--threads", threads, "worker threads for grid points")
        ->check(CLI::Range(1u, std::max(1u, 4 * std::thread::hardware_concurrency())));
    app.add_flag("--dry-run", dry_run, "print the resolved parameters and exit");
    // Global flags are also accepted after the verb; subcommands inherit this.
    app.fallthrough();

    for (const char* name : {"modes", "cooling-range", "dynamics", "spectrum", "rap"}) app.add_subcommand(name);
    auto* fit = app.add_subcommand("fit", "fit a model to a two-column CSV");
    fit->add_option("--model", model, "cooling, heating, rabi, histogram or ramsey")
        ->check(CLI::IsMember({"cooling", "heating", "rabi", "histogram", "ramsey"}));
    fit->add_option("--data", data, "data file")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_error;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    if (command != "fit" && config_path.empty()) {
        std::cerr << "error: " << command << " needs --config\n";
        return config_error;
    }
    try {
        return run(command, config_path, seed, out_dir, threads, dry_run, model, data);
    } catch (const eitcool::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return config_error;
    } catch (const eitcool::RegimeError& e) {
        std::cerr << "regime error: " << e.what() << "\n";
        return regime_error;
    } catch (const eitcool::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return numerical_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return numerical_error;
    }
}
