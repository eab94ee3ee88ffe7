#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sdclr/contrastive.hpp"
#include "sdclr/errors.hpp"
#include "sdclr/evaluation.hpp"
#include "sdclr/experiment.hpp"
#include "sdclr/longtail.hpp"
#include "sdclr/pruning.hpp"

namespace py = pybind11;
using namespace sdclr;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const F32& a) {
    std::vector<int> shape(a.shape(), a.shape() + a.ndim());
    return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

std::vector<Group> groups_from(const std::vector<std::string>& names) {
    std::vector<Group> out;
    for (const auto& n : names) {
        if (n == "Many") out.push_back(Group::many);
        else if (n == "Medium") out.push_back(Group::medium);
        else if (n == "Few") out.push_back(Group::few);
        else throw InvalidParameter("unknown group '" + n + "'");
    }
    return out;
}

ExperimentConfig parse(const std::string& config_json) {
    return experiment_config_from_json(nlohmann::json::parse(config_json));
}

std::vector<std::string> paths(const StageOutputs& o) {
    std::vector<std::string> out;
    for (const auto& p : o.files) out.push_back(p.string());
    return out;
}

StageOptions options(bool force, bool plots) {
    StageOptions o;
    o.force = force;
    o.plots = plots;
    return o;
}

// Stages record their outputs in the manifest, like the CLI.
std::vector<std::string> recorded(const ExperimentConfig& c, const StageOutputs& o) {
    update_manifest(c.out, experiment_hash(c), o);
    return paths(o);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Self-damaging contrastive learning core";

    py::register_exception<InvalidSpec>(m, "InvalidSpec", PyExc_ValueError);
    py::register_exception<InvalidParameter>(m, "InvalidParameter", PyExc_ValueError);
    py::register_exception<CapacityError>(m, "CapacityError", PyExc_RuntimeError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
    py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);

    m.def("exp_profile", [](int n, int max_count, double factor) { return exp_profile(n, max_count, factor).counts; },
          py::arg("n_classes"), py::arg("max_count"), py::arg("imbalance_factor"));
    m.def(
        "pareto_profile",
        [](int n, int max_count, int min_count, double alpha) {
            return pareto_profile(n, max_count, min_count, alpha).counts;
        },
        py::arg("n_classes"), py::arg("max_count"), py::arg("min_count"), py::arg("alpha"));
    m.def(
        "downsample_profile",
        [](const std::vector<int>& counts, int n_target) {
            return downsample_profile(ClassCountProfile{counts}, n_target).counts;
        },
        py::arg("counts"), py::arg("n_target"));
    m.def(
        "assign_groups",
        [](const std::vector<int>& counts, const std::string& scheme, int hi, int lo) {
            if (scheme != "thirds" && scheme != "thresholds") throw InvalidParameter("scheme: thirds or thresholds");
            const auto g = assign_groups(ClassCountProfile{counts},
                                         scheme == "thirds" ? GroupScheme::thirds : GroupScheme::thresholds, hi, lo);
            std::vector<std::string> out;
            for (Group x : g.group_of_rank) out.push_back(group_name(x));
            return out;
        },
        py::arg("counts"), py::arg("scheme") = "thirds", py::arg("hi") = 100, py::arg("lo") = 20,
        "Group name of each class rank.");

    m.def(
        "ntxent_loss",
        [](const F64& z, double tau) {
            if (z.ndim() != 2) throw InvalidParameter("embeddings must be 2-D (2B x d), pairs interleaved");
            const int rows = static_cast<int>(z.shape(0));
            const int dim = static_cast<int>(z.shape(1));
            const auto r = ntxent_loss(
                EmbeddingBatch::interleaved(rows, dim, std::vector<double>(z.data(), z.data() + z.size())),
                Temperature(tau));
            py::array_t<double> grad({rows, dim});
            std::copy(r.grad.begin(), r.grad.end(), grad.mutable_data());
            return py::make_tuple(r.loss, grad, r.per_anchor, r.degenerate);
        },
        py::arg("embeddings"), py::arg("tau") = 0.5,
        "Returns (loss, gradient, per-anchor losses, degenerate). Rows 2i and 2i+1 are positives.");

    m.def(
        "magnitude_mask",
        [](const std::map<std::string, F32>& weights, double ratio, const std::string& scope) {
            TensorMap t;
            for (const auto& [k, v] : weights) t.emplace(k, to_tensor(v));
            const auto mask = magnitude_mask(t, ratio, prune_scope_from_string(scope));
            std::map<std::string, py::array_t<bool>> out;
            for (const auto& [k, bits] : mask.keep) {
                const auto& shape = t.at(k).shape();
                py::array_t<bool> a(std::vector<py::ssize_t>(shape.begin(), shape.end()));
                std::copy(bits.begin(), bits.end(), a.mutable_data());
                out.emplace(k, std::move(a));
            }
            return out;
        },
        py::arg("weights"), py::arg("ratio"), py::arg("scope") = "global", "True marks kept weights.");

    m.def(
        "forgetting_scores",
        [](const F32& before, const F32& after) { return forgetting_scores(to_tensor(before), to_tensor(after)); },
        py::arg("before"), py::arg("after"));
    m.def("population_std", &population_std, py::arg("values"));
    m.def(
        "evaluate_predictions",
        [](const std::vector<int>& pred, const std::vector<int>& labels, int n_classes,
           const std::vector<std::string>& group_of_class) {
            return to_json(evaluate_predictions(pred, labels, n_classes, groups_from(group_of_class))).dump();
        },
        py::arg("predictions"), py::arg("labels"), py::arg("n_classes"), py::arg("group_of_class"),
        "EvalReport as a JSON string.");
    m.def("few_shot_indices", &few_shot_indices, py::arg("labels"), py::arg("n_classes"), py::arg("fraction"),
          py::arg("seed"));

    m.def(
        "normalize_config", [](const std::string& j) { return to_json(parse(j)).dump(); }, py::arg("config_json"),
        "Validated config with defaults filled in.");
    m.def(
        "experiment_hash", [](const std::string& j) { return experiment_hash(parse(j)); }, py::arg("config_json"));
    m.def(
        "make_data",
        [](const std::string& j, bool force) {
            const auto c = parse(j);
            py::gil_scoped_release release;
            return recorded(c, make_data(c, options(force, false)));
        },
        py::arg("config_json"), py::arg("force") = false);
    m.def(
        "pretrain",
        [](const std::string& j, const std::string& variant, bool force) {
            const auto c = parse(j);
            const auto v = variant_from_string(variant);
            py::gil_scoped_release release;
            return recorded(c, run_pretrain(c, v, options(force, false)));
        },
        py::arg("config_json"), py::arg("variant") = "sdclr", py::arg("force") = false);
    m.def(
        "evaluate",
        [](const std::string& j, const std::string& variant, const std::string& protocol, bool plots) {
            const auto c = parse(j);
            const auto v = variant_from_string(variant);
            const auto p = protocol_from_string(protocol);
            py::gil_scoped_release release;
            return recorded(c, run_eval(c, v, p, options(false, plots)));
        },
        py::arg("config_json"), py::arg("variant") = "sdclr", py::arg("protocol") = "linear", py::arg("plots") = false);
    m.def(
        "mine_pies",
        [](const std::string& j, const std::string& variant, bool plots) {
            const auto c = parse(j);
            const auto v = variant_from_string(variant);
            py::gil_scoped_release release;
            return recorded(c, run_mine_pies(c, v, options(false, plots)));
        },
        py::arg("config_json"), py::arg("variant") = "sdclr", py::arg("plots") = false);
    m.def(
        "report",
        [](const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out, bool force, bool plots) {
            py::gil_scoped_release release;
            return paths(run_report(runs, out, options(force, plots)));
        },
        py::arg("run_dirs"), py::arg("out"), py::arg("force") = false, py::arg("plots") = false);
}
