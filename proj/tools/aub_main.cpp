#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aub/experiment.hpp"

namespace {

aub::ExperimentConfig load_with_overrides(const std::string& path,
                                          const std::optional<std::uint64_t>& seed,
                                          const std::optional<std::string>& out) {
    auto config = aub::load_experiment_config(path);
    if (seed) aub::override_seed(config, *seed);
    if (out) aub::override_out_dir(config, *out);
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cooperative flow-based alignment of multiple distributions"};
    app.require_subcommand(1);

    std::vector<std::string> config_paths;
    std::string checkpoint;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::size_t from_j = 0;
    std::size_t to_j = 0;
    std::string input_csv;

    auto add_common = [&](CLI::App* cmd, bool multi_config) {
        auto* opt = cmd->add_option("--config", config_paths, "experiment config file(s)")
                        ->required();
        if (!multi_config) opt->expected(1);
        cmd->add_option("--seed", seed, "override the config seed");
        cmd->add_option("--out", out_dir, "override the output directory");
    };

    auto* gen = app.add_subcommand("gen-data", "generate a dataset bundle");
    add_common(gen, false);

    auto* tr = app.add_subcommand("train", "train a model");
    add_common(tr, false);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(ev, false);
    ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

    auto* tl = app.add_subcommand("translate", "translate samples between domains");
    add_common(tl, false);
    tl->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    tl->add_option("--from", from_j, "source domain index")->required();
    tl->add_option("--to", to_j, "target domain index")->required();
    tl->add_option("--input", input_csv, "input csv of source-domain samples")->required();

    auto* cp = app.add_subcommand("compare", "train and evaluate several configs");
    add_common(cp, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            return aub::cmd_gen_data(load_with_overrides(config_paths[0], seed, out_dir),
                                     std::cout, std::cerr);
        }
        if (tr->parsed()) {
            return aub::cmd_train(load_with_overrides(config_paths[0], seed, out_dir),
                                  std::cout, std::cerr);
        }
        if (ev->parsed()) {
            return aub::cmd_eval(load_with_overrides(config_paths[0], seed, out_dir),
                                 checkpoint, std::cout, std::cerr);
        }
        if (tl->parsed()) {
            return aub::cmd_translate(load_with_overrides(config_paths[0], seed, out_dir),
                                      checkpoint, from_j, to_j, input_csv, std::cout,
                                      std::cerr);
        }
        if (cp->parsed()) {
            std::vector<aub::ExperimentConfig> configs;
            for (const auto& p : config_paths) {
                auto c = aub::load_experiment_config(p);
                if (seed) aub::override_seed(c, *seed);
                configs.push_back(std::move(c));
            }
            const std::filesystem::path out = out_dir ? *out_dir : "runs/compare";
            return aub::cmd_compare(configs, out, std::cout, std::cerr);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
