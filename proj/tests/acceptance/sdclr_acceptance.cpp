// Acceptance suite: one PASS/FAIL line per criterion.
//
//   sdclr_acceptance --toy CONFIG --cli SDCLR_BINARY --cli-config CONFIG --work DIR [--fresh] [--only 1,2,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdclr/contrastive.hpp"
#include "sdclr/errors.hpp"
#include "sdclr/evaluation.hpp"
#include "sdclr/experiment.hpp"
#include "sdclr/hashing.hpp"
#include "sdclr/io.hpp"
#include "sdclr/longtail.hpp"
#include "sdclr/pruning.hpp"
#include "sdclr/trainer.hpp"

using namespace sdclr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Args {
    fs::path toy;
    fs::path cli;
    fs::path cli_config;
    fs::path work = "acceptance_work";
    bool fresh = false;
    std::vector<int> only;
};

std::string fmt(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> unit_rows(std::vector<double> v, int rows, int dim) {
    for (int i = 0; i < rows; ++i) {
        double n = 0.0;
        for (int k = 0; k < dim; ++k) n += std::pow(v[static_cast<std::size_t>(i * dim + k)], 2);
        for (int k = 0; k < dim; ++k) v[static_cast<std::size_t>(i * dim + k)] /= std::sqrt(n);
    }
    return v;
}

// ---------------------------------------------------------------------------

Outcome profile_oracles() {
    const auto p = exp_profile(100, 500, 100);
    const auto g = assign_groups(p, GroupScheme::thirds);
    const std::size_t many = g.ranks_in(Group::many).size();
    const std::size_t medium = g.ranks_in(Group::medium).size();
    const std::size_t few = g.ranks_in(Group::few).size();
    const auto pareto = pareto_profile(1000, 1280, 5, 6);
    const double total = static_cast<double>(pareto.total());
    const bool ok = p.counts.front() == 500 && p.counts.back() == 5 && many == 34 && medium == 33 && few == 33 &&
                    std::abs(total - 115800.0) <= 1158.0;
    return {ok, "exp endpoints (" + std::to_string(p.counts.front()) + ", " + std::to_string(p.counts.back()) +
                    "), groups (" + std::to_string(many) + ", " + std::to_string(medium) + ", " +
                    std::to_string(few) + "), pareto total " + std::to_string(pareto.total())};
}

Outcome ntxent_correctness() {
    const std::vector<double> same{0.6, 0.8, 0.6, 0.8, 0.6, 0.8, 0.6, 0.8};
    double ln3_err = 0.0;
    for (double tau : {0.1, 0.5, 1.0}) {
        const auto r = ntxent_loss(EmbeddingBatch::interleaved(4, 2, same), Temperature(tau));
        ln3_err = std::max(ln3_err, std::abs(r.loss - std::log(3.0)));
    }
    Rng rng(20240601);
    double worst = 0.0;
    for (double tau : {0.1, 0.5, 1.0}) {
        for (int b = 0; b < 20; ++b) {
            const int rows = 2 * (2 + b % 7);
            const int dim = 4 + b % 5;
            std::vector<double> v(static_cast<std::size_t>(rows * dim));
            for (auto& x : v) x = rng.normal();
            v = unit_rows(std::move(v), rows, dim);
            const auto r = ntxent_loss(EmbeddingBatch::interleaved(rows, dim, v), Temperature(tau));
            double num = 0.0;
            double den = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) {
                const double h = 1e-6;
                const double saved = v[i];
                v[i] = saved + h;
                const double up = ntxent_loss(EmbeddingBatch::interleaved(rows, dim, v), Temperature(tau)).loss;
                v[i] = saved - h;
                const double down = ntxent_loss(EmbeddingBatch::interleaved(rows, dim, v), Temperature(tau)).loss;
                v[i] = saved;
                const double fd = (up - down) / (2 * h);
                num += (fd - r.grad[i]) * (fd - r.grad[i]);
                den += fd * fd;
            }
            worst = std::max(worst, std::sqrt(num / den));
        }
    }
    std::ostringstream d;
    d << "|loss - ln 3| = " << ln3_err << ", worst gradient rel. err " << worst << " over 60 batches";
    return {ln3_err < 1e-9 && worst < 1e-4, d.str()};
}

Outcome reduction_equivalence(const ExperimentConfig& toy) {
    TrainConfig c = toy.train;
    c.competitor = Competitor::none;
    c.shared_norm = true;
    c.batch_size = 32;
    c.seed = 11;
    auto state = init_state(c);
    refresh_mask(state, c);
    SimclrReference ref(c);
    const SourceDataset src = load_source(toy.data);
    Rng order(5);
    Rng aug(6);
    double worst = 0.0;
    for (int step = 0; step < 50; ++step) {
        std::vector<std::size_t> rows(static_cast<std::size_t>(c.batch_size));
        for (auto& r : rows) r = static_cast<std::size_t>(order.below(src.train.size()));
        const auto [v1, v2] = make_views(src.train.gather(rows), c.augmentation, aug);
        const double lr = learning_rate(c, step, 50 / c.epochs + 1);
        const double a = train_step(state, c, v1, v2, lr).loss;
        const double b = ref.step(v1, v2, lr);
        worst = std::max(worst, std::abs(a - b));
    }
    const bool same_weights = tensors_hash(state.model.shared_params) == tensors_hash(ref.params());
    std::ostringstream d;
    d << "max |loss difference| over 50 steps " << worst << (same_weights ? ", final weights identical"
                                                                              : ", final weights differ");
    return {worst <= 1e-6, d.str()};
}

Outcome mask_contracts() {
    Rng rng(777);
    int violations = 0;
    for (int trial = 0; trial < 100; ++trial) {
        TensorMap w;
        const int layers = 1 + static_cast<int>(rng.below(4));
        for (int l = 0; l < layers; ++l) {
            Tensor t({1 + static_cast<int>(rng.below(200))});
            for (auto& v : t.values()) {
                v = trial % 4 == 0 ? static_cast<float>(static_cast<int>(rng.below(7)) - 3)
                                   : static_cast<float>(rng.normal());
            }
            w.emplace("l" + std::to_string(l) + ".weight", std::move(t));
        }
        std::size_t n = 0;
        for (const auto& [name, t] : w) n += t.size();
        PruneMask prev;
        for (double r : {0.3, 0.5, 0.9}) {
            const auto m = magnitude_mask(w, r);
            if (m.dropped() != static_cast<std::size_t>(std::floor(r * static_cast<double>(n)))) ++violations;
            float kept_min = INFINITY;
            float dropped_max = -INFINITY;
            for (const auto& [name, bits] : m.keep) {
                for (std::size_t i = 0; i < bits.size(); ++i) {
                    const float a = std::abs(w.at(name)[i]);
                    if (bits[i]) kept_min = std::min(kept_min, a);
                    else dropped_max = std::max(dropped_max, a);
                }
            }
            if (kept_min < dropped_max) ++violations;
            if (!(magnitude_mask(w, r) == m)) ++violations;
            if (r > 0.3) {
                for (const auto& [name, bits] : prev.keep) {
                    for (std::size_t i = 0; i < bits.size(); ++i) {
                        if (!bits[i] && m.keep.at(name)[i]) ++violations;
                    }
                }
            }
            prev = m;
        }
    }
    TensorMap ties;
    ties.emplace("b.weight", Tensor({3}, {1.0f, 1.0f, 5.0f}));
    ties.emplace("a.weight", Tensor({3}, {1.0f, 2.0f, 1.0f}));
    const auto tm = magnitude_mask(ties, 0.5);
    const bool tie_ok = tm.keep.at("a.weight") == std::vector<std::uint8_t>{0, 1, 0} &&
                        tm.keep.at("b.weight") == std::vector<std::uint8_t>{0, 1, 1};
    return {violations == 0 && tie_ok, std::to_string(violations) + " violations over 100 weight sets x 3 ratios; " +
                                           "tie-break " + (tie_ok ? "ok" : "wrong")};
}

Outcome mask_schedule(const ExperimentConfig& toy) {
    TrainConfig c = run_train_config(toy, Variant::sdclr, 0);
    c.epochs = 3;
    const SourceDataset src = load_source(toy.data);
    const auto split = sample_longtail(src, make_profile(toy.longtail), run_seeds(0).sampling);
    std::map<int, std::set<std::string>> seen;
    std::map<int, std::string> expected;
    PretrainOptions o;
    o.on_step = [&](const StepRecord& r) { seen[r.epoch].insert(r.mask_hash); };
    o.on_epoch = [&](const TrainState& s) {
        TrainState next = s;
        refresh_mask(next, c);
        expected[s.epoch] = next.model.mask.hash();
    };
    TrainState init = init_state(c);
    refresh_mask(init, c);
    expected[0] = init.model.mask.hash();
    pretrain(c, src.train, split.train_indices, o);
    bool ok = seen.size() == 3;
    std::ostringstream d;
    for (int e = 0; e < 3 && ok; ++e) {
        ok = seen[e].size() == 1 && *seen[e].begin() == expected[e];
        if (e > 0) ok = ok && *seen[e].begin() != *seen[e - 1].begin();
        d << "epoch " << e << ": " << seen[e].size() << " hash" << (seen[e].size() == 1 ? "" : "es") << " "
          << seen[e].begin()->substr(0, 10) << (e < 2 ? "; " : "");
    }
    d << " (each equal to the mask of the weights at epoch start)";
    return {ok, d.str()};
}

// Criterion 6 to 8 share the toy experiment.
struct ToyResults {
    std::map<std::string, std::vector<nlohmann::json>> evals;  // "<variant>/<protocol>" -> one per seed
    std::vector<nlohmann::json> pies;                          // SDCLR, one per seed
    double seconds = 0.0;
};

ToyResults run_toy(const ExperimentConfig& toy, bool fresh) {
    ToyResults out;
    const auto t0 = std::chrono::steady_clock::now();
    StageOptions o;
    o.log = [](const std::string& m) { std::cerr << "  " << m << "\n"; };
    if (fresh) fs::remove_all(toy.out);
    const std::string hash = experiment_hash(toy);
    update_manifest(toy.out, hash, make_data(toy, o));
    for (auto v : {Variant::sdclr, Variant::simclr}) {
        update_manifest(toy.out, hash, run_pretrain(toy, v, o));
        for (auto p : {Protocol::linear, Protocol::few_shot}) {
            update_manifest(toy.out, hash, run_eval(toy, v, p, o));
            for (std::uint64_t seed : toy.seeds) {
                out.evals[to_string(v) + "/" + to_string(p)].push_back(
                    read_json(eval_dir(toy, v, seed) / (to_string(p) + ".json")));
            }
        }
    }
    update_manifest(toy.out, hash, run_mine_pies(toy, Variant::sdclr, o));
    for (std::uint64_t seed : toy.seeds) out.pies.push_back(read_json(pie_dir(toy, Variant::sdclr, seed) / "pie.json"));
    update_manifest(toy.out, hash, run_report({toy.out}, toy.out / "report", o));
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

double group_acc(const nlohmann::json& eval, const char* group) {
    const auto& g = eval.at("report").at("group_acc").at(group);
    return g.is_number() ? g.get<double>() : NAN;
}

Outcome balancedness(const ToyResults& r) {
    auto collect = [&](const std::string& key, const std::function<double(const nlohmann::json&)>& f) {
        std::vector<double> v;
        for (const auto& e : r.evals.at(key)) v.push_back(f(e));
        return v;
    };
    const auto few = [](const nlohmann::json& e) { return group_acc(e, "Few"); };
    const auto stdg = [](const nlohmann::json& e) { return e.at("report").at("std_groups").get<double>(); };
    const auto all = [](const nlohmann::json& e) { return e.at("report").at("all_acc").get<double>(); };
    const double sd_few = median(collect("sdclr/few_shot", few));
    const double sc_few = median(collect("simclr/few_shot", few));
    const double sd_std = median(collect("sdclr/few_shot", stdg));
    const double sc_std = median(collect("simclr/few_shot", stdg));
    std::ostringstream d;
    d << "few-shot medians over " << r.evals.at("sdclr/few_shot").size() << " seeds: Few " << fmt(sd_few) << " vs "
      << fmt(sc_few) << ", Std " << fmt(sd_std) << " vs " << fmt(sc_std) << " (SDCLR vs SimCLR); All "
      << fmt(median(collect("sdclr/few_shot", all))) << " vs " << fmt(median(collect("simclr/few_shot", all)))
      << "; linear Std " << fmt(median(collect("sdclr/linear", stdg))) << " vs "
      << fmt(median(collect("simclr/linear", stdg))) << "; toy run " << fmt(r.seconds / 60.0, 1) << " min";
    return {sd_few >= sc_few && sd_std <= sc_std, d.str()};
}

Outcome pie_direction(const ToyResults& r) {
    const auto& first = r.pies.front();
    const auto pct = [](const nlohmann::json& p, const char* g) { return p.at("group_pct").at(g).get<double>(); };
    const double many = pct(first, "Many");
    const double rest = pct(first, "Medium") + pct(first, "Few");
    std::ostringstream d;
    d << "top " << first.at("top_count") << " PIEs of the first seed: Many " << fmt(many, 1) << "%, Medium+Few "
      << fmt(rest, 1) << "% (test base rate Many " << fmt(first.at("base_pct").at("Many").get<double>(), 1)
      << "%); other seeds";
    for (std::size_t i = 1; i < r.pies.size(); ++i) {
        d << " " << fmt(pct(r.pies[i], "Many"), 1) << "/" << fmt(pct(r.pies[i], "Medium") + pct(r.pies[i], "Few"), 1);
    }
    return {rest > many, d.str()};
}

Outcome probe_hygiene(const ExperimentConfig& toy, const ToyResults& r) {
    bool ok = true;
    int checked = 0;
    for (const auto& [key, evals] : r.evals) {
        const Variant v = variant_from_string(key.substr(0, key.find('/')));
        for (std::size_t i = 0; i < evals.size(); ++i) {
            const auto ck = load_run(toy, v, toy.seeds[i]);
            ok = ok && evals[i].at("backbone_hash") == tensors_hash(ck.state.model.shared_params);
            ++checked;
        }
    }
    // Direct check on one checkpoint, both protocols, including the norm state.
    const auto ck = load_run(toy, Variant::sdclr, toy.seeds.front());
    const auto params_before = tensors_hash(ck.state.model.shared_params);
    const auto norm_before = tensors_hash(ck.state.model.norm_dense.tensors);
    const SourceDataset src = load_source(toy.data);
    for (auto pc : {toy.linear_probe, toy.few_shot_probe}) {
        pc.epochs = 1;
        run_probe(toy.train.encoder, ck.state.model.shared_params, ck.state.model.norm_dense, src.train, pc);
    }
    ok = ok && params_before == tensors_hash(ck.state.model.shared_params) &&
         norm_before == tensors_hash(ck.state.model.norm_dense.tensors);

    const auto& lin = toy.linear_probe;
    const auto& few = toy.few_shot_probe;
    const bool sched = lin.epochs == 30 && lin.lr_at(0) == 30.0 && std::abs(lin.lr_at(9) - 30.0) < 1e-12 &&
                       std::abs(lin.lr_at(10) - 3.0) < 1e-12 && std::abs(lin.lr_at(19) - 3.0) < 1e-12 &&
                       std::abs(lin.lr_at(20) - 0.3) < 1e-12 && few.epochs == 100 && few.lr_at(0) == 30.0 &&
                       std::abs(few.lr_at(39) - 30.0) < 1e-12 && std::abs(few.lr_at(40) - 3.0) < 1e-12 &&
                       std::abs(few.lr_at(59) - 3.0) < 1e-12 && std::abs(few.lr_at(60) - 0.3) < 1e-12 &&
                       std::abs(few.fraction - 0.01) < 1e-12;
    return {ok && sched, std::to_string(checked) + " eval records match their checkpoint hash; direct probe " +
                             (params_before == tensors_hash(ck.state.model.shared_params) ? "kept" : "changed") +
                             " the backbone; schedules " + (sched ? "30 ep @ 30, x0.1 at 10/20 and 100 ep @ 30, x0.1 at 40/60"
                                                                   : "do not match")};
}

std::map<std::string, std::string> hashes_under(const fs::path& root) {
    std::map<std::string, std::string> out;
    if (!fs::exists(root)) return out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
        out[fs::relative(e.path(), root).generic_string()] = sha256_file(e.path());
    }
    return out;
}

Outcome determinism(const Args& a) {
    const fs::path dir = a.work / "determinism";
    fs::remove_all(dir);
    const std::string base = "\"" + a.cli.string() + "\" ";
    const std::string config = " --config \"" + a.cli_config.string() + "\" -q";
    const std::vector<std::pair<std::string, std::string>> stages{
        {"make-data", ""},
        {"pretrain", " --variant sdclr --force"},
        {"eval", " --variant sdclr --protocol both"},
        {"mine-pies", " --variant sdclr --plots"},
        {"report", ""},
    };
    std::vector<std::string> differing;
    std::size_t compared = 0;
    for (int pass = 0; pass < 2; ++pass) {
        for (const auto& [stage, extra] : stages) {
            const auto before = hashes_under(dir);
            const fs::path out = stage == "report" ? dir / "report" : dir;
            std::string cmd = base + stage + config + " --out \"" + out.string() + "\"" + extra;
            if (stage == "report") cmd += " \"" + dir.string() + "\"";
            if (std::system(cmd.c_str()) != 0) return {false, "command failed: " + cmd};
            if (pass == 1) {
                const auto after = hashes_under(dir);
                for (const auto& [file, h] : after) {
                    if (before.count(file) == 0) continue;
                    ++compared;
                    if (before.at(file) != h) differing.push_back(file);
                }
            }
        }
    }
    std::set<std::string> kinds;
    for (const auto& [file, h] : hashes_under(dir)) kinds.insert(fs::path(file).extension().string());
    std::ostringstream d;
    d << "reran 5 subcommands; " << compared << " file comparisons across";
    for (const auto& k : kinds) d << " " << k;
    d << "; " << differing.size() << " differ";
    for (const auto& f : differing) d << " " << f;
    return {differing.empty() && compared > 0, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    Args a;
    app.add_option("--toy", a.toy, "Toy experiment config")->required()->check(CLI::ExistingFile);
    app.add_option("--cli", a.cli, "sdclr binary")->required()->check(CLI::ExistingFile);
    app.add_option("--cli-config", a.cli_config, "Small config for the determinism reruns")->required();
    app.add_option("--work", a.work, "Scratch directory");
    app.add_flag("--fresh", a.fresh, "Discard cached toy runs");
    app.add_option("--only", a.only, "Run only these criteria")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    ExperimentConfig toy = load_experiment_config(a.toy);
    toy.out = a.work / "toy";
    const auto selected = [&](int n) { return a.only.empty() || std::count(a.only.begin(), a.only.end(), n) > 0; };

    int failures = 0;
    auto report = [&](int n, const std::string& title, const std::function<Outcome()>& f) {
        if (!selected(n)) return;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.pass) ++failures;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << n << " (" << title << "): " << o.detail << " ["
                  << fmt(s, 1) << " s]" << std::endl;
    };

    report(1, "profile oracles", profile_oracles);
    report(2, "NT-Xent correctness", ntxent_correctness);
    report(3, "reduction equivalence", [&] { return reduction_equivalence(toy); });
    report(4, "mask contracts", mask_contracts);
    report(5, "mask schedule", [&] { return mask_schedule(toy); });

    std::optional<ToyResults> toy_results;
    auto need_toy = [&]() -> const ToyResults& {
        if (!toy_results) toy_results = run_toy(toy, a.fresh);
        return *toy_results;
    };
    report(6, "directional balancedness", [&] { return balancedness(need_toy()); });
    report(7, "PIE direction", [&] { return pie_direction(need_toy()); });
    report(8, "probe hygiene", [&] { return probe_hygiene(toy, need_toy()); });
    report(9, "determinism", [&] { return determinism(a); });

    std::cout << (failures == 0 ? "all selected criteria passed" : std::to_string(failures) + " criteria failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
