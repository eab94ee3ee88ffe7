#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdclr/augment.hpp"
#include "sdclr/dataset.hpp"
#include "sdclr/encoder.hpp"
#include "sdclr/pruning.hpp"

namespace sdclr {

/// What the second branch is built from.
enum class Competitor { magnitude, dropout, none };

std::string to_string(Competitor c);
Competitor competitor_from_string(const std::string& s);

enum class LrSchedule { cosine, step };

struct TrainConfig {
    int epochs = 60;
    int batch_size = 128;
    double lr = 0.5;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    LrSchedule schedule = LrSchedule::cosine;
    std::vector<int> milestones;  // step schedule, in epochs
    double step_gamma = 0.1;
    int warmup_epochs = 0;
    double tau = 0.5;
    double prune_ratio = 0.9;
    PruneScope prune_scope = PruneScope::global;
    int mask_refresh_epochs = 1;
    bool prune_head = false;
    /// Both branches read and update the dense branch's normalization state.
    bool shared_norm = false;
    Competitor competitor = Competitor::magnitude;
    std::uint64_t seed = 0;
    EncoderSpec encoder;
    AugmentationChain augmentation = AugmentationChain::simclr();

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);
std::string config_hash(const TrainConfig& config);

/// One weight store, one mask, two normalization states. The sparse branch's
/// weights are never stored; they are shared_params * mask at every forward.
struct DualBranchModel {
    TensorMap shared_params;
    PruneMask mask;
    NormState norm_dense;
    NormState norm_sparse;

    TensorMap sparse_params() const { return apply_mask(shared_params, mask); }
};

struct TrainState {
    int epoch = 0;  // completed epochs
    long long step = 0;
    std::vector<double> loss_history;  // one entry per step
    std::vector<double> epoch_losses;
    std::string rng_state;
    DualBranchModel model;
    /// SGD momentum buffers keyed "param/<name>", "dense/<name>", "sparse/<name>".
    TensorMap velocity;
};

TrainState init_state(const TrainConfig& config);

/// Recompute the mask from the current shared weights (magnitude), redraw it
/// (dropout), or reset it to all ones (none). Stamps it with state.epoch.
void refresh_mask(TrainState& state, const TrainConfig& config);

struct DualOutput {
    Tensor proj_dense;
    Tensor proj_sparse;
    NormState norm_dense;
    NormState norm_sparse;
};

/// view1 through the dense branch, view2 through the masked weights with the
/// sparse normalization state (or the dense one under shared_norm).
DualOutput forward_dual(const DualBranchModel& model, const TrainConfig& config, const Tensor& view1,
                        const Tensor& view2, Mode mode = Mode::train);

/// Instrumentation switches for gradient-routing tests.
struct StepHooks {
    bool drop_dense_gradient = false;
    bool drop_sparse_gradient = false;
};

struct StepResult {
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm_dense = 0.0;
    double grad_norm_sparse = 0.0;
    std::string mask_hash;
};

/// One SGD step on the NT-Xent loss over the 2B interleaved projections.
/// Kept weights receive gradient from both branches; dropped weights only
/// through the dense branch. Throws TrainingDiverged on a non-finite loss.
StepResult train_step(TrainState& state, const TrainConfig& config, const Tensor& view1, const Tensor& view2,
                      double lr, const StepHooks& hooks = {});

double learning_rate(const TrainConfig& config, long long step, long long steps_per_epoch);
long long steps_per_epoch(const TrainConfig& config, std::size_t n_samples);

/// Mini-batch order of one epoch, drawn from the epoch's seed.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n_samples, int batch_size, std::uint64_t epoch_seed);

/// Pop the next epoch seed from the state's root generator.
std::uint64_t next_epoch_seed(TrainState& state);

struct StepRecord {
    int epoch = 0;
    long long step = 0;
    double loss = 0.0;
    double lr = 0.0;
    std::string mask_hash;
};

struct PretrainOptions {
    /// Checkpoints and the CSV log go here; empty keeps everything in memory.
    std::filesystem::path out_dir;
    bool resume = true;
    int keep_last = 2;
    /// Stop after this many steps in total (negative: run every epoch).
    long long max_steps = -1;
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const TrainState&)> on_epoch;
};

/// Runs config.epochs epochs over pool[indices] with per-epoch mask refresh.
TrainState pretrain(const TrainConfig& config, const ImageSet& pool, const std::vector<std::size_t>& indices,
                    const PretrainOptions& options = {});

struct Checkpoint {
    TrainConfig config;
    TrainState state;
};

/// Writes <stem>.mask, <stem>.bin (float32 tensors) and <stem>.json, the
/// sidecar last. Every file is replaced atomically.
void save_checkpoint(const std::filesystem::path& stem, const TrainConfig& config, const TrainState& state);
/// Accepts the stem or the .json sidecar path.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// SimCLR trainer kept independent of the dual-branch code path: both views
/// run through one network with one normalization state.
class SimclrReference {
public:
    explicit SimclrReference(const TrainConfig& config);

    double step(const Tensor& view1, const Tensor& view2, double lr);

    const TensorMap& params() const { return params_; }
    const NormState& norm() const { return norm_; }

private:
    TrainConfig config_;
    Encoder encoder_;
    TensorMap params_;
    NormState norm_;
    TensorMap velocity_;
};

}  // namespace sdclr
