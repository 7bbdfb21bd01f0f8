#include "volformer/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"volformer: 3D MR volume transformer pipeline"};
    app.set_version_flag("--version", volformer::kVersion);
    app.require_subcommand(1);

    volformer::CliOptions opt;
    long long seed_value = 0;
    const std::vector<std::string> commands = {"synth",  "match", "split",  "import",
                                               "train", "eval",  "rollout"};
    const std::vector<std::string> help = {
        "generate a synthetic matched cohort (volumes + manifest)",
        "greedy case-control matching over the manifest",
        "deal matched pairs into six folds",
        "adapt a 2D-pretrained checkpoint to the 3D geometry",
        "six-fold cross-validated training",
        "fold statistics report (AUC, operating points, paired t-tests)",
        "attention-rollout heatmaps for held-out cases",
    };
    for (std::size_t i = 0; i < commands.size(); ++i) {
        CLI::App* sub = app.add_subcommand(commands[i], help[i]);
        sub->add_option("--config", opt.config_path, "JSON run configuration")->required();
        sub->add_option("--seed", seed_value, "override the config seed")
            ->check(CLI::NonNegativeNumber);
        sub->add_option("--out", opt.out_override, "override paths.out");
        sub->add_flag("--dry-run", opt.dry_run, "validate the config and exit without writing");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    CLI::App* sub = app.get_subcommands().front();
    if (sub->count("--seed") > 0) {
        opt.has_seed_override = true;
        opt.seed_override = static_cast<std::uint64_t>(seed_value);
    }
    return volformer::run_command(sub->get_name(), opt);
}
