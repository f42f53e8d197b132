// Command-line front end for the one-shot federated learning simulator.
//
//   fedbens run <config.json> [--out DIR] [--threads N]
//   fedbens sweep <config.json> --axis AXIS --values v1,v2,... [--out DIR] [--threads N]
//   fedbens inspect-partition <config.json> [--out DIR] [--threads N]
//
// Exit codes: 0 success, 1 runtime failure, 2 config error.

#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedbens/experiment.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string output_dir;
    int threads = 0;

    fedbens::CliOverrides overrides() const {
        fedbens::CliOverrides o;
        if (!output_dir.empty()) o.output_dir = output_dir;
        if (threads > 0) o.threads = threads;
        return o;
    }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("config", args.config_path, "Experiment config (JSON)")->required();
    cmd->add_option("--out", args.output_dir, "Output directory (overrides config)");
    cmd->add_option("--threads", args.threads, "Worker threads (overrides config)");
}

std::vector<std::string> split_values(const std::string& csv) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= csv.size()) {
        const std::size_t comma = csv.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(csv.substr(start));
            break;
        }
        out.push_back(csv.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"One-shot federated learning with mixtures of Laplace approximations"};
    app.require_subcommand(1);

    CommonArgs run_args;
    CLI::App* run = app.add_subcommand("run", "Run the configured experiment");
    add_common(run, run_args);

    CommonArgs sweep_args;
    std::string axis;
    std::string values_csv;
    CLI::App* sweep = app.add_subcommand("sweep", "Re-run the experiment along one axis");
    add_common(sweep, sweep_args);
    sweep->add_option("--axis", axis, "mixtures | temperature | prior_var | hessian | alpha")
        ->required();
    sweep->add_option("--values", values_csv, "Comma-separated axis values")->required();

    CommonArgs inspect_args;
    CLI::App* inspect =
        app.add_subcommand("inspect-partition", "Write the per-client class histogram");
    add_common(inspect, inspect_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (run->parsed()) return fedbens::cmd_run(run_args.config_path, run_args.overrides());
    if (sweep->parsed())
        return fedbens::cmd_sweep(sweep_args.config_path, axis, split_values(values_csv),
                                  sweep_args.overrides());
    if (inspect->parsed())
        return fedbens::cmd_inspect_partition(inspect_args.config_path,
                                              inspect_args.overrides());
    return 2;
}
