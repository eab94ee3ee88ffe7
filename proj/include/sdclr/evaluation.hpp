#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdclr/dataset.hpp"
#include "sdclr/encoder.hpp"
#include "sdclr/longtail.hpp"
#include "sdclr/pruning.hpp"
#include "sdclr/tensor.hpp"

namespace sdclr {

enum class Protocol { linear, few_shot };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

/// SGD on a single affine layer over frozen features.
struct ProbeConfig {
    Protocol protocol = Protocol::linear;
    int epochs = 30;
    double lr = 30.0;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::vector<int> milestones{10, 20};
    double gamma = 0.1;
    int batch_size = 256;
    /// Share of every class kept for training (few-shot protocol).
    double fraction = 1.0;
    /// Rescale every feature vector to unit length before the classifier.
    bool normalize_features = false;
    std::uint64_t seed = 0;

    static ProbeConfig linear();
    static ProbeConfig few_shot(double fraction = 0.01);
    void validate() const;
    /// Learning rate during `epoch` (0-based).
    double lr_at(int epoch) const;
};

nlohmann::json to_json(const ProbeConfig& c);
ProbeConfig probe_config_from_json(const nlohmann::json& j);

/// SHA-256 over names, shapes and raw float bytes of every tensor.
std::string tensors_hash(const TensorMap& tensors);

/// Backbone features (N x feature_dim) in eval mode, in batches.
Tensor extract_features(const EncoderSpec& spec, const TensorMap& params, const NormState& norm, const ImageSet& images,
                        const std::vector<std::size_t>& indices, bool projection = false, int batch_size = 256);

/// Per class, the first ceil(fraction * class size) (at least one) samples of
/// a seeded shuffle, returned in ascending order.
std::vector<std::size_t> few_shot_indices(const std::vector<int>& labels, int n_classes, double fraction,
                                          std::uint64_t seed);

struct LinearClassifier {
    Tensor weight;  // classes x features
    Tensor bias;    // classes
    bool normalize_features = false;

    int n_classes() const { return weight.dim(0); }
    std::vector<int> predict(const Tensor& features) const;
};

/// Softmax cross-entropy, mean over each mini-batch; zero-initialized weights.
LinearClassifier train_linear_classifier(const Tensor& features, const std::vector<int>& labels, int n_classes,
                                         const ProbeConfig& config);

struct ProbeResult {
    LinearClassifier classifier;
    std::vector<std::size_t> train_indices;
    std::vector<std::string> warnings;
};

/// Fits a probe on features of pool[indices] (already selected for the
/// protocol). Warns when the training set is not class balanced.
ProbeResult fit_probe(const Tensor& features, const std::vector<int>& labels, int n_classes,
                      const ProbeConfig& config);

/// Selects the protocol's training rows from a labeled pool, extracts their
/// features with the frozen backbone, and fits the classifier.
ProbeResult run_probe(const EncoderSpec& spec, const TensorMap& params, const NormState& norm, const ImageSet& pool,
                      const ProbeConfig& config);

struct EvalReport {
    Protocol protocol = Protocol::linear;
    std::vector<double> per_class_acc;  // percent; NaN for classes absent from the test set
    std::array<std::optional<double>, kGroupCount> group_acc;
    double std_groups = 0.0;
    double all_acc = 0.0;
    std::size_t n_test = 0;
    std::string config_hash;
    std::vector<std::string> warnings;
};

/// Population standard deviation.
double population_std(const std::vector<double>& values);

/// Accuracies in percent. A group is the pooled accuracy over the test samples
/// of its classes; a group without test samples is left empty and Std is
/// taken over the remaining groups.
EvalReport evaluate_predictions(const std::vector<int>& predictions, const std::vector<int>& labels, int n_classes,
                                const std::vector<Group>& group_of_class, Protocol protocol = Protocol::linear);

EvalReport evaluate(const LinearClassifier& classifier, const Tensor& test_features, const std::vector<int>& labels,
                    const std::vector<Group>& group_of_class, Protocol protocol = Protocol::linear);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Pruning identified exemplars
// ---------------------------------------------------------------------------

enum class PieFeature { backbone, projection };

struct PieOptions {
    PieFeature feature = PieFeature::backbone;
    double top_fraction = 0.01;
    /// Masked pass normalizes with the sparse state (else the dense one).
    bool sparse_norm = true;
    int batch_size = 256;
};

struct PieReport {
    std::vector<double> scores;       // per sample, in input order
    std::vector<std::size_t> ranked;  // positions into scores, descending score
    double top_fraction = 0.01;
    std::size_t top_count = 0;
    std::array<double, kGroupCount> group_pct{};  // among the top set, sums to 100
    std::array<double, kGroupCount> base_pct{};   // over all samples
    std::size_t zero_norm_count = 0;
};

/// 1 - cosine per row; a zero-norm row scores 2.
std::vector<double> forgetting_scores(const Tensor& before, const Tensor& after, std::size_t* zero_norm_count = nullptr);

/// Ranks scores (ties by position) and reports the group mix of the top
/// ceil(top_fraction * n) samples.
PieReport rank_pies(std::vector<double> scores, const std::vector<int>& labels, const std::vector<Group>& group_of_class,
                    double top_fraction);

PieReport mine_pies(const EncoderSpec& spec, const TensorMap& params, const PruneMask& mask, const NormState& norm_dense,
                    const NormState& norm_sparse, const ImageSet& images, const std::vector<std::size_t>& indices,
                    const std::vector<Group>& group_of_class, const PieOptions& options = {});

nlohmann::json to_json(const PieReport& r, std::size_t top_list = 0);

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

struct ReportRow {
    std::string dataset;
    std::string framework;
    std::vector<EvalReport> runs;  // one per seed
};

inline constexpr const char* kReportColumns = "Dataset,Framework,Many,Medium,Few,Std,All";

/// "mean ± std" with two decimals (population std over runs); "N/A" if empty.
std::string mean_pm_std(const std::vector<double>& values);

/// Header plus one line per row. The Std cell aggregates the per-run Std.
std::string report_csv(const std::vector<ReportRow>& rows);
/// Full detail including the Std of the seed-averaged group accuracies.
nlohmann::json report_json(const std::vector<ReportRow>& rows);

std::string group_bar_svg(const std::vector<ReportRow>& rows);
std::string sparsity_svg(const SparsityReport& report);

/// Writes <stem>.csv and <stem>.json (and, with plots, <stem>_groups.svg).
/// Returns the paths written.
std::vector<std::filesystem::path> emit_report(const std::vector<ReportRow>& rows, const std::filesystem::path& stem,
                                               bool plots = false);

}  // namespace sdclr
