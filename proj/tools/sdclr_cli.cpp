// Command-line driver: make-data, pretrain, eval, mine-pies, report.
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdclr/errors.hpp"
#include "sdclr/experiment.hpp"
#include "sdclr/io.hpp"

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<double> prune_ratio;
    std::optional<int> epochs;
    std::string out;
    bool plots = false;
    bool force = false;
    bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config = true) {
    auto* opt = cmd->add_option("--config", c.config_path, "Experiment config (JSON)");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "Run only this seed instead of the config's seed list");
    cmd->add_option("--prune-ratio", c.prune_ratio, "Override train.prune_ratio");
    cmd->add_option("--epochs", c.epochs, "Override train.epochs");
    cmd->add_option("--out", c.out, "Override the output directory");
    cmd->add_flag("--plots", c.plots, "Also write SVG plots");
    cmd->add_flag("--force", c.force, "Start over / aggregate despite mismatched configs");
    cmd->add_flag("-q,--quiet", c.quiet, "Only print errors");
}

sdclr::ExperimentConfig resolve(const Common& c) {
    nlohmann::json j;
    try {
        j = sdclr::read_json(c.config_path);
    } catch (const nlohmann::json::exception& e) {
        throw sdclr::InvalidSpec(c.config_path + " is not valid JSON: " + e.what());
    }
    // Flags override file values; parsing afterwards validates the result.
    if (c.seed) j["seeds"] = std::vector<std::uint64_t>{*c.seed};
    if (c.prune_ratio) j["train"]["prune_ratio"] = *c.prune_ratio;
    if (c.epochs) j["train"]["epochs"] = *c.epochs;
    if (!c.out.empty()) j["out"] = c.out;
    return sdclr::experiment_config_from_json(j);
}

sdclr::StageOptions stage_options(const Common& c) {
    sdclr::StageOptions o;
    o.force = c.force;
    o.plots = c.plots;
    if (!c.quiet) o.log = [](const std::string& msg) { std::cerr << msg << "\n"; };
    return o;
}

void finish(const sdclr::ExperimentConfig& config, const sdclr::StageOutputs& outputs, bool quiet) {
    const auto manifest = sdclr::update_manifest(config.out, sdclr::experiment_hash(config), outputs);
    if (quiet) return;
    std::cout << outputs.stage << ": " << outputs.files.size() << " files, manifest " << manifest.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-damaging contrastive learning on long-tailed data"};
    app.require_subcommand(1);

    Common make_c, pre_c, eval_c, pie_c, rep_c;
    std::string pre_variant = "sdclr", eval_variant = "sdclr", pie_variant = "sdclr";
    std::string protocol = "both";
    std::vector<std::string> run_dirs;

    auto* make = app.add_subcommand("make-data", "Write long-tail, balanced, and group files for every seed");
    add_common(make, make_c);

    auto* pre = app.add_subcommand("pretrain", "Contrastive pre-training (resumes from the last checkpoint)");
    add_common(pre, pre_c);
    pre->add_option("--variant", pre_variant)->check(CLI::IsMember({"sdclr", "simclr", "dropout"}));

    auto* ev = app.add_subcommand("eval", "Linear and/or few-shot probes on the frozen backbone");
    add_common(ev, eval_c);
    ev->add_option("--variant", eval_variant)->check(CLI::IsMember({"sdclr", "simclr", "dropout"}));
    ev->add_option("--protocol", protocol)->check(CLI::IsMember({"linear", "fewshot", "few_shot", "both"}));

    auto* pie = app.add_subcommand("mine-pies", "Rank test samples by forgetting under the prune mask");
    add_common(pie, pie_c);
    pie->add_option("--variant", pie_variant)->check(CLI::IsMember({"sdclr", "simclr", "dropout"}));

    auto* rep = app.add_subcommand("report", "Aggregate eval results across runs into tables");
    add_common(rep, rep_c, false);
    rep->add_option("runs", run_dirs, "Experiment output directories (default: the config's out)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*make) {
            const auto config = resolve(make_c);
            finish(config, sdclr::make_data(config, stage_options(make_c)), make_c.quiet);
        } else if (*pre) {
            const auto config = resolve(pre_c);
            const auto variant = sdclr::variant_from_string(pre_variant);
            finish(config, sdclr::run_pretrain(config, variant, stage_options(pre_c)), pre_c.quiet);
        } else if (*ev) {
            const auto config = resolve(eval_c);
            const auto variant = sdclr::variant_from_string(eval_variant);
            std::vector<sdclr::Protocol> protocols;
            if (protocol == "both") {
                protocols = {sdclr::Protocol::linear, sdclr::Protocol::few_shot};
            } else {
                protocols = {sdclr::protocol_from_string(protocol)};
            }
            for (auto p : protocols) {
                finish(config, sdclr::run_eval(config, variant, p, stage_options(eval_c)), eval_c.quiet);
            }
        } else if (*pie) {
            const auto config = resolve(pie_c);
            const auto variant = sdclr::variant_from_string(pie_variant);
            finish(config, sdclr::run_mine_pies(config, variant, stage_options(pie_c)), pie_c.quiet);
        } else if (*rep) {
            std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
            std::filesystem::path out = rep_c.out;
            std::string hash = "mixed";
            if (!rep_c.config_path.empty()) {
                // Here --out names the report directory, not the experiment root.
                Common file_only = rep_c;
                file_only.out.clear();
                const auto config = resolve(file_only);
                if (dirs.empty()) dirs.push_back(config.out);
                if (out.empty()) out = config.out / "reports";
                hash = sdclr::experiment_hash(config);
            }
            if (dirs.empty()) throw sdclr::InvalidSpec("report needs run directories or --config");
            if (out.empty()) out = dirs.front() / "reports";
            const auto outputs = sdclr::run_report(dirs, out, stage_options(rep_c));
            const auto manifest = sdclr::update_manifest(out, hash, outputs);
            if (!rep_c.quiet) {
                std::cout << "report: " << outputs.files.size() << " files, manifest " << manifest.string() << "\n";
            }
        }
    } catch (const sdclr::InvalidSpec& e) {
        std::cerr << "error: invalid config: " << e.what() << "\n";
        return 2;
    } catch (const sdclr::CapacityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const sdclr::TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
