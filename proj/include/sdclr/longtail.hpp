#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdclr/dataset.hpp"

namespace sdclr {

enum class ProfileKind { exponential, pareto };

/// Declarative recipe for a class-count profile.
struct LongTailSpec {
    ProfileKind profile_kind = ProfileKind::exponential;
    int n_classes = 10;
    int max_count = 500;
    double imbalance_factor = 100.0;  // exponential only
    int min_count = 5;                // pareto only
    double alpha = 6.0;               // pareto only
    std::uint64_t seed = 0;
};

/// Per-class sample numbers indexed by class rank (rank 0 is the largest).
struct ClassCountProfile {
    std::vector<int> counts;

    std::size_t n_classes() const { return counts.size(); }
    long long total() const;
};

/// counts[k] = round(max_count * imbalance_factor^(-k / (n - 1))), floored at 1.
ClassCountProfile exp_profile(int n_classes, int max_count, double imbalance_factor);

/// Plotting position offset used to discretize the Pareto quantile curve.
/// With it, the 1000-class / alpha 6 profile totals ~115.8K images and its
/// 100-class down-sample ~12.2K, the published ImageNet-LT and
/// ImageNet-100-LT sizes.
constexpr double kParetoPlottingOffset = 0.8;

/// Pareto(alpha) quantile curve sampled at positions (k + offset), mapped
/// affinely so that counts[0] = max_count and counts[n-1] = min_count.
ClassCountProfile pareto_profile(int n_classes, int max_count, int min_count, double alpha,
                                 double plotting_offset = kParetoPlottingOffset);

/// Keep n_target classes spread evenly over the rank axis of `profile`.
ClassCountProfile downsample_profile(const ClassCountProfile& profile, int n_target);

ClassCountProfile make_profile(const LongTailSpec& spec);

/// Which part of a source dataset a split draws from.
struct DatasetSplit {
    ClassCountProfile profile;
    std::uint64_t seed = 0;
    /// class_ranks[c] is the profile rank assigned to class c.
    std::vector<int> class_ranks;
    /// Indices into the source train pool.
    std::vector<std::size_t> train_indices;
    /// Indices into the source train pool, disjoint from train_indices.
    std::vector<std::size_t> val_indices;
    /// Indices into the source test pool.
    std::vector<std::size_t> test_indices;
    /// Label of every train index, same order.
    std::vector<int> train_labels;

    std::vector<int> train_class_counts(int n_classes) const;
};

/// Draws counts[rank(c)] samples of each class c; the class-to-rank
/// permutation is seeded. Throws CapacityError naming the short class.
DatasetSplit sample_longtail(const SourceDataset& source, const ClassCountProfile& profile,
                             std::uint64_t seed);

/// A subset of the given total size whose per-class counts differ by at most 1.
DatasetSplit sample_balanced_counterpart(const SourceDataset& source, long long total_size,
                                         std::uint64_t seed);

/// Fill split.val_indices with `val_size` train-pool samples not in the split.
void attach_validation(DatasetSplit& split, const SourceDataset& source, std::size_t val_size,
                       std::uint64_t seed);

enum class Group { many = 0, medium = 1, few = 2 };
constexpr int kGroupCount = 3;
std::string group_name(Group g);

enum class GroupScheme { thirds, thresholds };

struct GroupAssignment {
    GroupScheme scheme = GroupScheme::thirds;
    /// Group of each class rank.
    std::vector<Group> group_of_rank;
    int threshold_hi = 100;
    int threshold_lo = 20;

    std::vector<int> ranks_in(Group g) const;
    /// Group of each class id given the split's class ranks.
    std::vector<Group> by_class(const std::vector<int>& class_ranks) const;
};

/// thirds: the largest ceil/floor n/3 ranks are Many, Many takes the larger
/// share first. thresholds: Many > hi, Few < lo, Medium otherwise.
GroupAssignment assign_groups(const ClassCountProfile& profile, GroupScheme scheme,
                              int threshold_hi = 100, int threshold_lo = 20);

nlohmann::json to_json(const ClassCountProfile& profile);
nlohmann::json to_json(const DatasetSplit& split);
DatasetSplit split_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GroupAssignment& groups, const std::vector<int>& class_ranks);
std::string to_string(ProfileKind kind);
ProfileKind profile_kind_from_string(const std::string& s);

}  // namespace sdclr
