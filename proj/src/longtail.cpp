#include "sdclr/longtail.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdclr/errors.hpp"
#include "sdclr/rng.hpp"

namespace sdclr {

long long ClassCountProfile::total() const {
    return std::accumulate(counts.begin(), counts.end(), 0LL);
}

ClassCountProfile exp_profile(int n_classes, int max_count, double imbalance_factor) {
    if (n_classes < 2) throw InvalidSpec("n_classes must be >= 2");
    if (max_count < 1) throw InvalidSpec("max_count must be >= 1");
    if (!(imbalance_factor >= 1.0)) throw InvalidSpec("imbalance_factor must be >= 1");
    ClassCountProfile p;
    p.counts.resize(static_cast<std::size_t>(n_classes));
    for (int k = 0; k < n_classes; ++k) {
        const double exponent = -static_cast<double>(k) / (n_classes - 1);
        const double v = max_count * std::pow(imbalance_factor, exponent);
        p.counts[static_cast<std::size_t>(k)] = std::max(1, static_cast<int>(std::lround(v)));
    }
    return p;
}

ClassCountProfile pareto_profile(int n_classes, int max_count, int min_count, double alpha,
                                 double plotting_offset) {
    if (n_classes < 2) throw InvalidSpec("n_classes must be >= 2");
    if (min_count < 1) throw InvalidSpec("min_count must be >= 1");
    if (min_count >= max_count) throw InvalidSpec("min_count must be < max_count");
    if (!(alpha > 0.0)) throw InvalidSpec("alpha must be > 0");
    if (!(plotting_offset > 0.0)) throw InvalidSpec("plotting offset must be > 0");

    std::vector<double> quantile(static_cast<std::size_t>(n_classes));
    for (int k = 0; k < n_classes; ++k) {
        quantile[static_cast<std::size_t>(k)] = std::pow(k + plotting_offset, -1.0 / alpha);
    }
    const double hi = quantile.front();
    const double lo = quantile.back();
    ClassCountProfile p;
    p.counts.resize(quantile.size());
    for (std::size_t k = 0; k < quantile.size(); ++k) {
        const double t = (quantile[k] - lo) / (hi - lo);
        p.counts[k] = static_cast<int>(std::lround(min_count + (max_count - min_count) * t));
    }
    p.counts.front() = max_count;
    p.counts.back() = min_count;
    return p;
}

ClassCountProfile downsample_profile(const ClassCountProfile& profile, int n_target) {
    const int n = static_cast<int>(profile.n_classes());
    if (n_target < 2 || n_target > n) throw InvalidSpec("n_target must be in [2, n_classes]");
    ClassCountProfile out;
    out.counts.reserve(static_cast<std::size_t>(n_target));
    for (int j = 0; j < n_target; ++j) {
        const double pos = static_cast<double>(j) * (n - 1) / (n_target - 1);
        out.counts.push_back(profile.counts[static_cast<std::size_t>(std::lround(pos))]);
    }
    return out;
}

ClassCountProfile make_profile(const LongTailSpec& spec) {
    switch (spec.profile_kind) {
        case ProfileKind::exponential:
            return exp_profile(spec.n_classes, spec.max_count, spec.imbalance_factor);
        case ProfileKind::pareto:
            return pareto_profile(spec.n_classes, spec.max_count, spec.min_count, spec.alpha);
    }
    throw InvalidSpec("unknown profile kind");
}

std::vector<int> DatasetSplit::train_class_counts(int n_classes) const {
    std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
    for (int label : train_labels) ++counts.at(static_cast<std::size_t>(label));
    return counts;
}

namespace {

void finalize_train(DatasetSplit& split, const ImageSet& pool) {
    std::sort(split.train_indices.begin(), split.train_indices.end());
    split.train_labels.clear();
    split.train_labels.reserve(split.train_indices.size());
    for (std::size_t i : split.train_indices) split.train_labels.push_back(pool.labels[i]);
}

void fill_test(DatasetSplit& split, const SourceDataset& source) {
    split.test_indices.resize(source.test.size());
    std::iota(split.test_indices.begin(), split.test_indices.end(), std::size_t{0});
}

}  // namespace

DatasetSplit sample_longtail(const SourceDataset& source, const ClassCountProfile& profile,
                             std::uint64_t seed) {
    const int n_classes = source.train.n_classes;
    if (static_cast<int>(profile.n_classes()) != n_classes) {
        throw InvalidSpec("profile has " + std::to_string(profile.n_classes()) +
                          " classes but the source has " + std::to_string(n_classes));
    }
    for (std::size_t k = 1; k < profile.counts.size(); ++k) {
        if (profile.counts[k] > profile.counts[k - 1]) throw InvalidSpec("profile must be non-increasing");
    }
    Rng rng(derive_seed(seed, "longtail"));
    DatasetSplit split;
    split.profile = profile;
    split.seed = seed;
    const auto perm = permutation(static_cast<std::size_t>(n_classes), rng);
    split.class_ranks.assign(perm.begin(), perm.end());

    auto by_class = source.train.indices_by_class();
    for (int c = 0; c < n_classes; ++c) {
        auto& pool = by_class[static_cast<std::size_t>(c)];
        const int rank = split.class_ranks[static_cast<std::size_t>(c)];
        const auto need = static_cast<std::size_t>(profile.counts[static_cast<std::size_t>(rank)]);
        if (pool.size() < need) {
            throw CapacityError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                                " samples but rank " + std::to_string(rank) + " needs " +
                                std::to_string(need));
        }
        shuffle(pool, rng);
        split.train_indices.insert(split.train_indices.end(), pool.begin(),
                                   pool.begin() + static_cast<std::ptrdiff_t>(need));
    }
    finalize_train(split, source.train);
    fill_test(split, source);
    return split;
}

DatasetSplit sample_balanced_counterpart(const SourceDataset& source, long long total_size,
                                         std::uint64_t seed) {
    const int n_classes = source.train.n_classes;
    if (total_size < n_classes) {
        throw InvalidSpec("total_size " + std::to_string(total_size) + " is smaller than n_classes " +
                          std::to_string(n_classes));
    }
    if (total_size > static_cast<long long>(source.train.size())) {
        throw InvalidSpec("total_size exceeds the source train pool");
    }
    Rng rng(derive_seed(seed, "balanced"));
    const long long base = total_size / n_classes;
    const long long extra = total_size % n_classes;

    // Classes that receive the +1 take the top ranks.
    const auto perm = permutation(static_cast<std::size_t>(n_classes), rng);
    DatasetSplit split;
    split.seed = seed;
    split.class_ranks.assign(perm.begin(), perm.end());
    split.profile.counts.resize(static_cast<std::size_t>(n_classes));
    for (int r = 0; r < n_classes; ++r) {
        split.profile.counts[static_cast<std::size_t>(r)] = static_cast<int>(base + (r < extra ? 1 : 0));
    }

    auto by_class = source.train.indices_by_class();
    for (int c = 0; c < n_classes; ++c) {
        auto& pool = by_class[static_cast<std::size_t>(c)];
        const int rank = split.class_ranks[static_cast<std::size_t>(c)];
        const auto need = static_cast<std::size_t>(split.profile.counts[static_cast<std::size_t>(rank)]);
        if (pool.size() < need) {
            throw CapacityError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                                " samples but the balanced subset needs " + std::to_string(need));
        }
        shuffle(pool, rng);
        split.train_indices.insert(split.train_indices.end(), pool.begin(),
                                   pool.begin() + static_cast<std::ptrdiff_t>(need));
    }
    finalize_train(split, source.train);
    fill_test(split, source);
    return split;
}

void attach_validation(DatasetSplit& split, const SourceDataset& source, std::size_t val_size,
                       std::uint64_t seed) {
    std::vector<char> used(source.train.size(), 0);
    for (std::size_t i : split.train_indices) used.at(i) = 1;
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < used.size(); ++i) {
        if (!used[i]) candidates.push_back(i);
    }
    if (candidates.size() < val_size) {
        throw CapacityError("validation needs " + std::to_string(val_size) + " samples but only " +
                            std::to_string(candidates.size()) + " remain in the train pool");
    }
    Rng rng(derive_seed(seed, "validation"));
    shuffle(candidates, rng);
    candidates.resize(val_size);
    std::sort(candidates.begin(), candidates.end());
    split.val_indices = std::move(candidates);
}

std::string group_name(Group g) {
    switch (g) {
        case Group::many: return "Many";
        case Group::medium: return "Medium";
        case Group::few: return "Few";
    }
    return "?";
}

std::vector<int> GroupAssignment::ranks_in(Group g) const {
    std::vector<int> out;
    for (std::size_t r = 0; r < group_of_rank.size(); ++r) {
        if (group_of_rank[r] == g) out.push_back(static_cast<int>(r));
    }
    return out;
}

std::vector<Group> GroupAssignment::by_class(const std::vector<int>& class_ranks) const {
    if (class_ranks.size() != group_of_rank.size()) throw ContractError("class_ranks size mismatch");
    std::vector<Group> out(class_ranks.size());
    for (std::size_t c = 0; c < class_ranks.size(); ++c) {
        out[c] = group_of_rank.at(static_cast<std::size_t>(class_ranks[c]));
    }
    return out;
}

GroupAssignment assign_groups(const ClassCountProfile& profile, GroupScheme scheme, int threshold_hi,
                              int threshold_lo) {
    GroupAssignment ga;
    ga.scheme = scheme;
    ga.threshold_hi = threshold_hi;
    ga.threshold_lo = threshold_lo;
    const std::size_t n = profile.n_classes();
    ga.group_of_rank.resize(n);
    if (scheme == GroupScheme::thirds) {
        const std::size_t base = n / 3;
        const std::size_t rem = n % 3;
        const std::size_t n_many = base + (rem > 0 ? 1 : 0);
        const std::size_t n_medium = base + (rem > 1 ? 1 : 0);
        for (std::size_t r = 0; r < n; ++r) {
            ga.group_of_rank[r] = r < n_many ? Group::many
                                  : r < n_many + n_medium ? Group::medium
                                                          : Group::few;
        }
    } else {
        for (std::size_t r = 0; r < n; ++r) {
            const int c = profile.counts[r];
            ga.group_of_rank[r] = c > threshold_hi ? Group::many
                                  : c < threshold_lo ? Group::few
                                                     : Group::medium;
        }
    }
    return ga;
}

std::string to_string(ProfileKind kind) {
    return kind == ProfileKind::exponential ? "exponential" : "pareto";
}

ProfileKind profile_kind_from_string(const std::string& s) {
    if (s == "exponential" || s == "exp") return ProfileKind::exponential;
    if (s == "pareto") return ProfileKind::pareto;
    throw InvalidSpec("longtail.profile: unknown kind '" + s + "'");
}

nlohmann::json to_json(const ClassCountProfile& profile) {
    return {{"counts", profile.counts}, {"total", profile.total()}};
}

nlohmann::json to_json(const DatasetSplit& split) {
    return {{"profile", to_json(split.profile)},
            {"seed", split.seed},
            {"class_ranks", split.class_ranks},
            {"train", split.train_indices},
            {"train_labels", split.train_labels},
            {"val", split.val_indices},
            {"test", split.test_indices}};
}

DatasetSplit split_from_json(const nlohmann::json& j) {
    DatasetSplit s;
    s.profile.counts = j.at("profile").at("counts").get<std::vector<int>>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.class_ranks = j.at("class_ranks").get<std::vector<int>>();
    s.train_indices = j.at("train").get<std::vector<std::size_t>>();
    s.train_labels = j.at("train_labels").get<std::vector<int>>();
    s.val_indices = j.at("val").get<std::vector<std::size_t>>();
    s.test_indices = j.at("test").get<std::vector<std::size_t>>();
    return s;
}

nlohmann::json to_json(const GroupAssignment& groups, const std::vector<int>& class_ranks) {
    nlohmann::json j;
    j["scheme"] = groups.scheme == GroupScheme::thirds ? "thirds" : "thresholds";
    if (groups.scheme == GroupScheme::thresholds) {
        j["thresholds"] = {{"hi", groups.threshold_hi}, {"lo", groups.threshold_lo}};
    }
    const auto by_class = groups.by_class(class_ranks);
    for (Group g : {Group::many, Group::medium, Group::few}) {
        std::vector<int> classes;
        for (std::size_t c = 0; c < by_class.size(); ++c) {
            if (by_class[c] == g) classes.push_back(static_cast<int>(c));
        }
        j[group_name(g)] = classes;
    }
    return j;
}

}  // namespace sdclr
