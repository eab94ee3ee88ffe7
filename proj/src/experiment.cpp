#include "sdclr/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <map>
#include <set>
#include <sstream>

#include "sdclr/errors.hpp"
#include "sdclr/hashing.hpp"
#include "sdclr/io.hpp"

#ifndef SDCLR_SOURCE_REVISION
#define SDCLR_SOURCE_REVISION "unknown"
#endif

namespace sdclr {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

template <typename T>
T field(const nlohmann::json& j, const std::string& key, const std::string& path, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw InvalidSpec(path + key + ": wrong type (" + j.at(key).dump() + ")");
    }
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& path) {
    if (!j.is_object()) throw InvalidSpec((path.empty() ? std::string("config") : path) + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw InvalidSpec(path + key + ": unknown field");
    }
}

/// Re-raise nested parse errors with the section prefix when it is missing.
template <typename F>
auto within(const std::string& section, F&& parse) {
    try {
        return parse();
    } catch (const InvalidSpec& e) {
        const std::string msg = e.what();
        if (msg.rfind(section + ".", 0) == 0) throw;
        throw InvalidSpec(section + "." + msg);
    } catch (const InvalidParameter& e) {
        throw InvalidSpec(section + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw InvalidSpec(section + ": " + e.what());
    }
}

nlohmann::json synthetic_json(const SyntheticConfig& s) {
    return {{"n_classes", s.n_classes},   {"train_per_class", s.train_per_class}, {"test_per_class", s.test_per_class},
            {"image_size", s.image_size}, {"noise", s.noise},                     {"seed", s.seed}};
}

SyntheticConfig synthetic_from_json(const nlohmann::json& j) {
    const std::string p = "data.synthetic.";
    reject_unknown(j, {"n_classes", "train_per_class", "test_per_class", "image_size", "noise", "seed"}, p);
    SyntheticConfig s;
    s.n_classes = field(j, "n_classes", p, s.n_classes);
    s.train_per_class = field(j, "train_per_class", p, s.train_per_class);
    s.test_per_class = field(j, "test_per_class", p, s.test_per_class);
    s.image_size = field(j, "image_size", p, s.image_size);
    s.noise = field(j, "noise", p, s.noise);
    s.seed = field(j, "seed", p, s.seed);
    return s;
}

std::string to_string(PieFeature f) { return f == PieFeature::backbone ? "backbone" : "projection"; }

}  // namespace

void ExperimentConfig::validate() const {
    static const std::set<std::string> kinds{"synthetic", "cifar10", "cifar100", "arrays"};
    if (!kinds.count(data.kind)) throw InvalidSpec("data.kind: unknown source '" + data.kind + "'");
    if (data.kind == "synthetic") {
        const auto& s = data.synthetic;
        if (s.n_classes < 2 || s.n_classes > kSyntheticShapeCount) {
            throw InvalidSpec("data.synthetic.n_classes must be in [2, " + std::to_string(kSyntheticShapeCount) + "]");
        }
        if (s.train_per_class < 1) throw InvalidSpec("data.synthetic.train_per_class must be >= 1");
        if (s.test_per_class < 1) throw InvalidSpec("data.synthetic.test_per_class must be >= 1");
        if (s.image_size < 8) throw InvalidSpec("data.synthetic.image_size must be >= 8");
        if (s.image_size != train.encoder.image_size) {
            throw InvalidSpec("data.synthetic.image_size must equal train.encoder.image_size");
        }
        if (longtail.n_classes != s.n_classes) throw InvalidSpec("longtail.n_classes must equal data.synthetic.n_classes");
    }
    if (longtail.n_classes < 2) throw InvalidSpec("longtail.n_classes must be >= 2");
    if (longtail.max_count < 1) throw InvalidSpec("longtail.max_count must be >= 1");
    if (longtail.profile_kind == ProfileKind::exponential && !(longtail.imbalance_factor >= 1.0)) {
        throw InvalidSpec("longtail.imbalance_factor must be >= 1");
    }
    if (longtail.profile_kind == ProfileKind::pareto) {
        if (longtail.min_count < 1 || longtail.min_count >= longtail.max_count) {
            throw InvalidSpec("longtail.min_count must be in [1, max_count)");
        }
        if (!(longtail.alpha > 0.0)) throw InvalidSpec("longtail.alpha must be > 0");
    }
    if (group_lo > group_hi) throw InvalidSpec("groups.lo must be <= groups.hi");
    within("train", [&] {
        train.validate();
        return 0;
    });
    within("probe.linear", [&] {
        linear_probe.validate();
        return 0;
    });
    within("probe.few_shot", [&] {
        few_shot_probe.validate();
        return 0;
    });
    if (!(pie.top_fraction > 0.0 && pie.top_fraction <= 1.0)) throw InvalidSpec("pie.top_fraction must be in (0, 1]");
    if (!(pie.ratio >= 0.0 && pie.ratio < 1.0)) throw InvalidSpec("pie.ratio must be in [0, 1)");
    if (seeds.empty()) throw InvalidSpec("seeds must list at least one seed");
    if (out.empty()) throw InvalidSpec("out must not be empty");
}

std::string ExperimentConfig::dataset_label() const {
    if (data.kind == "cifar10") return "CIFAR10-LT";
    if (data.kind == "cifar100") return "CIFAR100-LT";
    if (data.kind == "synthetic") return "Shapes" + std::to_string(data.synthetic.n_classes) + "-LT";
    return name + "-LT";
}

nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json lt = {{"profile", to_string(c.longtail.profile_kind)},
                         {"n_classes", c.longtail.n_classes},
                         {"max_count", c.longtail.max_count},
                         {"imbalance_factor", c.longtail.imbalance_factor},
                         {"min_count", c.longtail.min_count},
                         {"alpha", c.longtail.alpha}};
    return {{"name", c.name},
            {"data", {{"kind", c.data.kind}, {"root", c.data.root}, {"synthetic", synthetic_json(c.data.synthetic)}}},
            {"longtail", lt},
            {"groups",
             {{"scheme", c.group_scheme == GroupScheme::thirds ? "thirds" : "thresholds"},
              {"hi", c.group_hi},
              {"lo", c.group_lo}}},
            {"val_size", c.val_size},
            {"train", to_json(c.train)},
            {"probe", {{"linear", to_json(c.linear_probe)}, {"few_shot", to_json(c.few_shot_probe)}}},
            {"pie",
             {{"feature", to_string(c.pie.feature)},
              {"top_fraction", c.pie.top_fraction},
              {"ratio", c.pie.ratio},
              {"sparse_norm", c.pie.sparse_norm}}},
            {"seeds", c.seeds},
            {"out", c.out.string()}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    reject_unknown(j, {"name", "data", "longtail", "groups", "val_size", "train", "probe", "pie", "seeds", "out"}, "");
    ExperimentConfig c;
    c.name = field(j, "name", "", c.name);
    if (j.contains("data")) {
        const auto& d = j["data"];
        reject_unknown(d, {"kind", "root", "synthetic"}, "data.");
        c.data.kind = field(d, "kind", "data.", c.data.kind);
        c.data.root = field(d, "root", "data.", c.data.root);
        if (d.contains("synthetic")) c.data.synthetic = synthetic_from_json(d["synthetic"]);
    }
    if (j.contains("longtail")) {
        const auto& l = j["longtail"];
        const std::string p = "longtail.";
        reject_unknown(l, {"profile", "n_classes", "max_count", "imbalance_factor", "min_count", "alpha"}, p);
        c.longtail.profile_kind =
            within("longtail", [&] { return profile_kind_from_string(field(l, "profile", p, std::string("exponential"))); });
        c.longtail.n_classes = field(l, "n_classes", p, c.longtail.n_classes);
        c.longtail.max_count = field(l, "max_count", p, c.longtail.max_count);
        c.longtail.imbalance_factor = field(l, "imbalance_factor", p, c.longtail.imbalance_factor);
        c.longtail.min_count = field(l, "min_count", p, c.longtail.min_count);
        c.longtail.alpha = field(l, "alpha", p, c.longtail.alpha);
    }
    if (j.contains("groups")) {
        const auto& g = j["groups"];
        reject_unknown(g, {"scheme", "hi", "lo"}, "groups.");
        const auto scheme = field(g, "scheme", "groups.", std::string("thirds"));
        if (scheme == "thirds") {
            c.group_scheme = GroupScheme::thirds;
        } else if (scheme == "thresholds") {
            c.group_scheme = GroupScheme::thresholds;
        } else {
            throw InvalidSpec("groups.scheme must be thirds or thresholds");
        }
        c.group_hi = field(g, "hi", "groups.", c.group_hi);
        c.group_lo = field(g, "lo", "groups.", c.group_lo);
    }
    c.val_size = field(j, "val_size", "", c.val_size);
    if (j.contains("train")) c.train = within("train", [&] { return train_config_from_json(j["train"]); });
    if (j.contains("probe")) {
        const auto& p = j["probe"];
        reject_unknown(p, {"linear", "few_shot"}, "probe.");
        if (p.contains("linear")) {
            auto sub = p["linear"];
            sub["protocol"] = "linear";
            c.linear_probe = within("probe.linear", [&] { return probe_config_from_json(sub); });
        }
        if (p.contains("few_shot")) {
            auto sub = p["few_shot"];
            sub["protocol"] = "few_shot";
            c.few_shot_probe = within("probe.few_shot", [&] { return probe_config_from_json(sub); });
        }
    }
    if (j.contains("pie")) {
        const auto& p = j["pie"];
        reject_unknown(p, {"feature", "top_fraction", "ratio", "sparse_norm"}, "pie.");
        const auto feature = field(p, "feature", "pie.", std::string("backbone"));
        if (feature == "backbone") {
            c.pie.feature = PieFeature::backbone;
        } else if (feature == "projection") {
            c.pie.feature = PieFeature::projection;
        } else {
            throw InvalidSpec("pie.feature must be backbone or projection");
        }
        c.pie.top_fraction = field(p, "top_fraction", "pie.", c.pie.top_fraction);
        c.pie.ratio = field(p, "ratio", "pie.", c.pie.ratio);
        c.pie.sparse_norm = field(p, "sparse_norm", "pie.", c.pie.sparse_norm);
    }
    c.seeds = field(j, "seeds", "", c.seeds);
    c.out = field(j, "out", "", c.out.string());
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    if (!fs::exists(path)) throw InvalidSpec("config file not found: " + path.string());
    nlohmann::json j;
    try {
        j = read_json(path);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidSpec("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return experiment_config_from_json(j);
}

std::string experiment_hash(const ExperimentConfig& c) {
    auto j = to_json(c);
    j.erase("seeds");
    j.erase("out");
    j["data"].erase("root");
    return sha256_hex(j.dump());
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::sdclr: return "sdclr";
        case Variant::simclr: return "simclr";
        case Variant::dropout: return "dropout";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    if (s == "sdclr") return Variant::sdclr;
    if (s == "simclr") return Variant::simclr;
    if (s == "dropout") return Variant::dropout;
    throw InvalidSpec("variant must be sdclr, simclr or dropout (got '" + s + "')");
}

Competitor competitor_for(Variant v) {
    switch (v) {
        case Variant::sdclr: return Competitor::magnitude;
        case Variant::simclr: return Competitor::none;
        case Variant::dropout: return Competitor::dropout;
    }
    return Competitor::magnitude;
}

namespace {

std::string framework_label(Variant v) {
    switch (v) {
        case Variant::sdclr: return "SDCLR";
        case Variant::simclr: return "SimCLR";
        case Variant::dropout: return "Dropout";
    }
    return "?";
}

}  // namespace

RunSeeds run_seeds(std::uint64_t seed) {
    return {derive_seed(seed, "sampling"), derive_seed(seed, "training"), derive_seed(seed, "probing")};
}

SourceDataset load_source(const DataSourceConfig& config) {
    if (config.kind == "synthetic") return make_synthetic_shapes(config.synthetic);
    fs::path root = config.root;
    if (root.empty()) {
        const char* env = std::getenv("SDCLR_DATA_ROOT");
        if (!env || !*env) {
            throw CapacityError("data.root is empty and SDCLR_DATA_ROOT is unset; point either at the directory "
                                "holding the " + config.kind + " files");
        }
        root = env;
    }
    if (config.kind == "cifar10") {
        const fs::path nested = root / "cifar-10-batches-bin";
        return load_cifar_binary(fs::exists(nested) ? nested : root, 10);
    }
    if (config.kind == "cifar100") {
        const fs::path nested = root / "cifar-100-binary";
        return load_cifar_binary(fs::exists(nested) ? nested : root, 100);
    }
    return load_array_dir(root);
}

TrainConfig run_train_config(const ExperimentConfig& c, Variant v, std::uint64_t seed) {
    TrainConfig t = c.train;
    t.competitor = competitor_for(v);
    t.seed = run_seeds(seed).training;
    if (v == Variant::simclr) t.shared_norm = true;
    return t;
}

namespace {

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

}  // namespace

fs::path data_dir(const ExperimentConfig& c, std::uint64_t seed) { return c.out / "data" / seed_dir(seed); }
fs::path run_dir(const ExperimentConfig& c, Variant v, std::uint64_t seed) {
    return c.out / "runs" / to_string(v) / seed_dir(seed);
}
fs::path eval_dir(const ExperimentConfig& c, Variant v, std::uint64_t seed) {
    return c.out / "eval" / to_string(v) / seed_dir(seed);
}
fs::path pie_dir(const ExperimentConfig& c, Variant v, std::uint64_t seed) {
    return c.out / "pies" / to_string(v) / seed_dir(seed);
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

namespace {

void say(const StageOptions& o, const std::string& msg) {
    if (o.log) o.log(msg);
}

fs::path write_json_artifact(StageOutputs& out, const fs::path& path, nlohmann::json j, const std::string& hash) {
    j["config_hash"] = hash;
    write_json_atomic(path, j);
    if (read_json(path) != j) throw ContractError("validation failed after writing " + path.string());
    out.files.push_back(path);
    return path;
}

GroupAssignment groups_for(const ExperimentConfig& c, const DatasetSplit& split) {
    return assign_groups(split.profile, c.group_scheme, c.group_hi, c.group_lo);
}

}  // namespace

StageOutputs make_data(const ExperimentConfig& c, const StageOptions& options) {
    c.validate();
    StageOutputs out{"make-data", {}};
    const std::string hash = experiment_hash(c);
    const SourceDataset source = load_source(c.data);
    if (source.train.n_classes != c.longtail.n_classes) {
        throw InvalidSpec("longtail.n_classes is " + std::to_string(c.longtail.n_classes) + " but the source has " +
                          std::to_string(source.train.n_classes) + " classes");
    }
    const ClassCountProfile profile = make_profile(c.longtail);
    for (std::uint64_t seed : c.seeds) {
        const RunSeeds seeds = run_seeds(seed);
        DatasetSplit lt = sample_longtail(source, profile, seeds.sampling);
        if (c.val_size > 0) attach_validation(lt, source, c.val_size, derive_seed(seeds.sampling, "val"));
        const DatasetSplit balanced =
            sample_balanced_counterpart(source, profile.total(), derive_seed(seeds.sampling, "balanced"));
        const fs::path dir = data_dir(c, seed);
        write_json_artifact(out, dir / "longtail_split.json", to_json(lt), hash);
        write_json_artifact(out, dir / "balanced_split.json", to_json(balanced), hash);
        write_json_artifact(out, dir / "groups.json", to_json(groups_for(c, lt), lt.class_ranks), hash);
        say(options, "seed " + std::to_string(seed) + ": " + std::to_string(lt.train_indices.size()) +
                         " long-tail train samples written to " + dir.string());
    }
    return out;
}

DatasetSplit load_split(const ExperimentConfig& c, std::uint64_t seed, bool balanced) {
    const fs::path path = data_dir(c, seed) / (balanced ? "balanced_split.json" : "longtail_split.json");
    if (!fs::exists(path)) throw CapacityError("split file " + path.string() + " is missing; run make-data first");
    return split_from_json(read_json(path));
}

Checkpoint load_run(const ExperimentConfig& c, Variant v, std::uint64_t seed) {
    const fs::path stem = run_dir(c, v, seed) / "final";
    if (!fs::exists(stem.string() + ".json")) {
        throw CapacityError("checkpoint " + stem.string() + ".json is missing; run pretrain --variant " + to_string(v) +
                            " first");
    }
    return load_checkpoint(stem);
}

StageOutputs run_pretrain(const ExperimentConfig& c, Variant v, const StageOptions& options) {
    c.validate();
    StageOutputs out{"pretrain", {}};
    const SourceDataset source = load_source(c.data);
    for (std::uint64_t seed : c.seeds) {
        const DatasetSplit split = load_split(c, seed);
        const TrainConfig tc = run_train_config(c, v, seed);
        const fs::path dir = run_dir(c, v, seed);
        if (options.force) fs::remove_all(dir);
        PretrainOptions po;
        po.out_dir = dir;
        po.resume = true;
        po.on_epoch = [&](const TrainState& s) {
            std::ostringstream msg;
            msg << to_string(v) << " seed " << seed << " epoch " << s.epoch << "/" << tc.epochs
                << " loss " << s.epoch_losses.back();
            say(options, msg.str());
        };
        const TrainState state = pretrain(tc, source.train, split.train_indices, po);
        // Validate what was written by reading it back.
        const Checkpoint back = load_checkpoint(dir / "final");
        if (back.state.step != state.step || tensors_hash(back.state.model.shared_params) !=
                                                 tensors_hash(state.model.shared_params)) {
            throw ContractError("final checkpoint of " + dir.string() + " does not round-trip");
        }
        for (const char* suffix : {"final.json", "final.bin", "final.mask", "train_log.csv"}) {
            out.files.push_back(dir / suffix);
        }
        for (const auto& entry : fs::directory_iterator(dir / "checkpoints")) out.files.push_back(entry.path());
    }
    return out;
}

StageOutputs run_eval(const ExperimentConfig& c, Variant v, Protocol protocol, const StageOptions& options) {
    c.validate();
    StageOutputs out{"eval", {}};
    const std::string hash = experiment_hash(c);
    const SourceDataset source = load_source(c.data);
    for (std::uint64_t seed : c.seeds) {
        const DatasetSplit split = load_split(c, seed);
        const Checkpoint ck = load_run(c, v, seed);
        const auto& model = ck.state.model;
        const std::string backbone_before = tensors_hash(model.shared_params);

        ProbeConfig pc = protocol == Protocol::linear ? c.linear_probe : c.few_shot_probe;
        pc.protocol = protocol;
        pc.seed = run_seeds(seed).probing;
        const ProbeResult probe = run_probe(ck.config.encoder, model.shared_params, model.norm_dense, source.train, pc);
        const Tensor test_features =
            extract_features(ck.config.encoder, model.shared_params, model.norm_dense, source.test, split.test_indices);
        std::vector<int> test_labels(split.test_indices.size());
        for (std::size_t i = 0; i < test_labels.size(); ++i) test_labels[i] = source.test.labels[split.test_indices[i]];
        EvalReport report =
            evaluate(probe.classifier, test_features, test_labels, groups_for(c, split).by_class(split.class_ranks),
                     protocol);
        report.config_hash = hash;
        report.warnings = probe.warnings;
        if (tensors_hash(model.shared_params) != backbone_before) {
            throw ContractError("probing changed the backbone parameters");
        }

        const fs::path dir = eval_dir(c, v, seed);
        nlohmann::json j = {{"dataset", c.dataset_label()},
                            {"framework", framework_label(v)},
                            {"seed", seed},
                            {"probe", to_json(pc)},
                            {"probe_train_size", probe.train_indices.size()},
                            {"backbone_hash", backbone_before},
                            {"report", to_json(report)}};
        write_json_artifact(out, dir / (to_string(protocol) + ".json"), j, hash);
        const std::vector<ReportRow> row{{c.dataset_label(), framework_label(v), {report}}};
        write_file_atomic(dir / (to_string(protocol) + ".csv"), report_csv(row));
        out.files.push_back(dir / (to_string(protocol) + ".csv"));
        if (options.plots) {
            write_file_atomic(dir / (to_string(protocol) + "_groups.svg"), group_bar_svg(row));
            out.files.push_back(dir / (to_string(protocol) + "_groups.svg"));
        }
        std::ostringstream msg;
        msg.precision(4);
        msg << to_string(v) << " seed " << seed << " " << to_string(protocol) << ": All " << report.all_acc << " Std "
            << report.std_groups;
        say(options, msg.str());
    }
    return out;
}

StageOutputs run_mine_pies(const ExperimentConfig& c, Variant v, const StageOptions& options) {
    c.validate();
    StageOutputs out{"mine-pies", {}};
    const std::string hash = experiment_hash(c);
    const SourceDataset source = load_source(c.data);
    for (std::uint64_t seed : c.seeds) {
        const DatasetSplit split = load_split(c, seed);
        const Checkpoint ck = load_run(c, v, seed);
        const auto& model = ck.state.model;
        const PruneMask mask =
            magnitude_mask(select(model.shared_params, prunable_names(ck.config.encoder, ck.config.prune_head)),
                           c.pie.ratio, ck.config.prune_scope);
        PieOptions po;
        po.feature = c.pie.feature;
        po.top_fraction = c.pie.top_fraction;
        // A shared-norm run never trained its second normalization state.
        po.sparse_norm = c.pie.sparse_norm && !ck.config.shared_norm;
        const PieReport pie = mine_pies(ck.config.encoder, model.shared_params, mask, model.norm_dense,
                                        model.norm_sparse, source.test, split.test_indices,
                                        groups_for(c, split).by_class(split.class_ranks), po);
        if (pie.zero_norm_count > 0) {
            say(options, std::to_string(pie.zero_norm_count) + " samples had zero-norm features (scored 2)");
        }
        const fs::path dir = pie_dir(c, v, seed);
        nlohmann::json j = to_json(pie);
        j["test_indices"] = split.test_indices;
        j["mask_ratio"] = c.pie.ratio;
        j["mask_hash"] = mask.hash();
        j["framework"] = framework_label(v);
        j["seed"] = seed;
        write_json_artifact(out, dir / "pie.json", j, hash);
        const SparsityReport sparsity =
            layerwise_sparsity(mask, weight_names_in_order(ck.config.encoder, ck.config.prune_head));
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& [name, frac] : sparsity.layers) layers.push_back({{"name", name}, {"zero_fraction", frac}});
        write_json_artifact(out, dir / "sparsity.json", {{"layers", layers}, {"overall", sparsity.overall}}, hash);
        if (options.plots) {
            write_file_atomic(dir / "sparsity.svg", sparsity_svg(sparsity));
            out.files.push_back(dir / "sparsity.svg");
        }
        std::ostringstream msg;
        msg.precision(4);
        msg << to_string(v) << " seed " << seed << " top " << pie.top_count << ": Many " << pie.group_pct[0]
            << "% Medium " << pie.group_pct[1] << "% Few " << pie.group_pct[2] << "%";
        say(options, msg.str());
    }
    return out;
}

StageOutputs run_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir, const StageOptions& options) {
    if (run_dirs.empty()) throw InvalidSpec("report needs at least one run directory");
    StageOutputs out{"report", {}};
    // protocol -> (dataset, framework) -> runs
    std::map<std::string, std::map<std::pair<std::string, std::string>, std::vector<EvalReport>>> table;
    std::set<std::string> hashes;
    for (const auto& root : run_dirs) {
        const fs::path eval_root = root / "eval";
        if (!fs::exists(eval_root)) throw CapacityError("no eval results under " + root.string());
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(eval_root)) {
            if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const auto j = read_json(f);
            if (!j.contains("report")) continue;
            hashes.insert(j.at("config_hash").get<std::string>());
            EvalReport r = eval_report_from_json(j.at("report"));
            table[to_string(r.protocol)][{j.at("dataset").get<std::string>(), j.at("framework").get<std::string>()}]
                .push_back(std::move(r));
        }
    }
    if (table.empty()) throw CapacityError("no eval reports found; run eval first");
    if (hashes.size() > 1 && !options.force) {
        throw InvalidSpec("run directories were produced by " + std::to_string(hashes.size()) +
                          " different configs; pass --force to aggregate anyway");
    }
    for (const auto& [protocol, rows_by_key] : table) {
        std::vector<ReportRow> rows;
        for (const auto& [key, runs] : rows_by_key) rows.push_back({key.first, key.second, runs});
        for (auto& p : emit_report(rows, out_dir / protocol, options.plots)) out.files.push_back(p);
        say(options, "wrote " + (out_dir / (protocol + ".csv")).string());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string platform_note() {
    std::ostringstream s;
#if defined(__clang__)
    s << "clang " << __clang_major__ << "." << __clang_minor__;
#elif defined(__GNUC__)
    s << "gcc " << __GNUC__ << "." << __GNUC_MINOR__;
#endif
#if defined(__linux__)
    s << ", linux";
#elif defined(__APPLE__)
    s << ", macos";
#endif
    s << ", float32 CPU kernels";
    return s.str();
}

}  // namespace

fs::path update_manifest(const fs::path& root, const std::string& config_hash, const StageOutputs& outputs) {
    const fs::path path = root / "manifest.json";
    nlohmann::json m;
    if (fs::exists(path)) m = read_json(path);
    if (!m.contains("created")) m["created"] = utc_now();
    m["updated"] = utc_now();
    m["config_hash"] = config_hash;
    m["source_revision"] = SDCLR_SOURCE_REVISION;
    m["platform"] = platform_note();
    if (!m.contains("artifacts")) m["artifacts"] = nlohmann::json::object();
    const fs::path base = fs::weakly_canonical(root);
    for (const auto& f : outputs.files) {
        if (!fs::exists(f)) continue;  // pruned checkpoint rotation
        const std::string rel = fs::relative(fs::weakly_canonical(f), base).generic_string();
        m["artifacts"][rel] = {{"sha256", sha256_file(f)}, {"stage", outputs.stage}};
    }
    // Drop entries whose files are gone (rotated checkpoints).
    for (auto it = m["artifacts"].begin(); it != m["artifacts"].end();) {
        if (!fs::exists(root / it.key())) {
            it = m["artifacts"].erase(it);
        } else {
            ++it;
        }
    }
    write_json_atomic(path, m);
    return path;
}

}  // namespace sdclr
