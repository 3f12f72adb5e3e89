// ssp: data generation, training, evaluation, gradient checks and ablations.

#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "ssp/commands.hpp"
#include "ssp/parallel.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Spectral latent propagator for periodic PDE forecasting"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    int threads = 0;
    app.add_option("--config", config_path, "run configuration (INI)")->required()->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "override [run] seed");
    app.add_option("--out", out, "override [run] out");
    app.add_option("--threads", threads, "worker threads (0 = hardware concurrency)")->check(CLI::NonNegativeNumber);

    app.add_subcommand("gen", "generate the dataset");
    app.add_subcommand("train", "train the model on the dataset");
    app.add_subcommand("eval", "evaluate a checkpoint (rollout or extrapolation protocol)");
    app.add_subcommand("gradcheck", "compare adjoint gradients with finite differences");
    app.add_subcommand("ablate", "train and evaluate ablation variants");
    app.fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : ssp::kExitConfig;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    return ssp::guarded(
        [&] {
            ssp::RunConfig cfg = ssp::load_run_config(config_path);
            if (seed) cfg.seed = *seed;
            if (!out.empty()) cfg.out = out;
            cfg.finalize();
            ssp::set_threads(threads);
            return ssp::run_command(command, cfg, std::cout);
        },
        std::cerr);
}
