#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdclr/dataset.hpp"
#include "sdclr/evaluation.hpp"
#include "sdclr/longtail.hpp"
#include "sdclr/trainer.hpp"

namespace sdclr {

struct DataSourceConfig {
    /// synthetic | cifar10 | cifar100 | arrays
    std::string kind = "synthetic";
    /// Empty: $SDCLR_DATA_ROOT (real datasets only).
    std::string root;
    SyntheticConfig synthetic;
};

struct PieConfig {
    PieFeature feature = PieFeature::backbone;
    double top_fraction = 0.01;
    double ratio = 0.9;
    bool sparse_norm = true;
};

struct ExperimentConfig {
    std::string name = "experiment";
    DataSourceConfig data;
    LongTailSpec longtail;
    GroupScheme group_scheme = GroupScheme::thirds;
    int group_hi = 100;
    int group_lo = 20;
    std::size_t val_size = 0;
    TrainConfig train;
    ProbeConfig linear_probe = ProbeConfig::linear();
    ProbeConfig few_shot_probe = ProbeConfig::few_shot();
    PieConfig pie;
    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path out = "runs/experiment";

    void validate() const;
    /// Table label, e.g. "CIFAR10-LT".
    std::string dataset_label() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Missing keys keep their defaults; bad values throw InvalidSpec naming the
/// dotted field path.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Hash of everything that shapes results; seeds and the output directory
/// are left out so runs of one recipe under different seeds share it.
std::string experiment_hash(const ExperimentConfig& c);

enum class Variant { sdclr, simclr, dropout };
std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
Competitor competitor_for(Variant v);

/// Per-purpose seeds split off one run seed.
struct RunSeeds {
    std::uint64_t sampling;
    std::uint64_t training;
    std::uint64_t probing;
};
RunSeeds run_seeds(std::uint64_t seed);

SourceDataset load_source(const DataSourceConfig& config);

/// Train config for one (variant, seed) run.
TrainConfig run_train_config(const ExperimentConfig& c, Variant v, std::uint64_t seed);

// Output layout under config.out.
std::filesystem::path data_dir(const ExperimentConfig& c, std::uint64_t seed);
std::filesystem::path run_dir(const ExperimentConfig& c, Variant v, std::uint64_t seed);
std::filesystem::path eval_dir(const ExperimentConfig& c, Variant v, std::uint64_t seed);
std::filesystem::path pie_dir(const ExperimentConfig& c, Variant v, std::uint64_t seed);

/// Outputs of one subcommand invocation, recorded in <out>/manifest.json.
struct StageOutputs {
    std::string stage;
    std::vector<std::filesystem::path> files;
};

using Logger = std::function<void(const std::string&)>;

struct StageOptions {
    bool force = false;
    bool plots = false;
    Logger log;
};

StageOutputs make_data(const ExperimentConfig& c, const StageOptions& options = {});
StageOutputs run_pretrain(const ExperimentConfig& c, Variant v, const StageOptions& options = {});
StageOutputs run_eval(const ExperimentConfig& c, Variant v, Protocol protocol, const StageOptions& options = {});
StageOutputs run_mine_pies(const ExperimentConfig& c, Variant v, const StageOptions& options = {});
/// Aggregates eval reports found under each run directory into
/// <out>/<protocol>.csv|json. Mixed config hashes throw unless forced.
StageOutputs run_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out,
                        const StageOptions& options = {});

/// Merges the stage's files (with SHA-256) into <root>/manifest.json.
std::filesystem::path update_manifest(const std::filesystem::path& root, const std::string& config_hash,
                                      const StageOutputs& outputs);

/// Loaded final checkpoint of a run.
Checkpoint load_run(const ExperimentConfig& c, Variant v, std::uint64_t seed);
DatasetSplit load_split(const ExperimentConfig& c, std::uint64_t seed, bool balanced = false);

}  // namespace sdclr
