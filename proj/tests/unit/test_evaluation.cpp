#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "sdclr/errors.hpp"
#include "sdclr/evaluation.hpp"
#include "sdclr/io.hpp"

using namespace sdclr;

namespace {

const std::vector<Group> kTenGroups{Group::many,   Group::many,   Group::many, Group::many, Group::medium,
                                    Group::medium, Group::medium, Group::few,  Group::few,  Group::few};

// Gaussian clusters around one-hot centers.
std::pair<Tensor, std::vector<int>> clusters(int per_class, int n_classes, int dim, double spread, Rng& rng) {
    Tensor f({per_class * n_classes, dim});
    std::vector<int> labels;
    for (int c = 0; c < n_classes; ++c) {
        for (int i = 0; i < per_class; ++i) {
            const int row = static_cast<int>(labels.size());
            for (int k = 0; k < dim; ++k) {
                f[static_cast<std::size_t>(row * dim + k)] =
                    static_cast<float>((k == c ? 1.0 : 0.0) + spread * rng.normal());
            }
            labels.push_back(c);
        }
    }
    return {f, labels};
}

}  // namespace

TEST_CASE("group Std uses the population convention") {
    CHECK(population_std({78.18, 76.23, 71.37}) == doctest::Approx(2.863529290927544).epsilon(1e-12));
    CHECK(population_std({50.0, 50.0, 50.0}) == 0.0);
    CHECK(population_std({}) == 0.0);
}

TEST_CASE("perfect and known predictions") {
    std::vector<int> labels;
    for (int c = 0; c < 10; ++c) labels.insert(labels.end(), 10, c);
    const auto perfect = evaluate_predictions(labels, labels, 10, kTenGroups);
    CHECK(perfect.all_acc == 100.0);
    CHECK(perfect.std_groups == 0.0);
    for (const auto& g : perfect.group_acc) CHECK(*g == 100.0);

    // Class 9 always wrong, class 0 half wrong.
    auto pred = labels;
    for (int i = 0; i < 10; ++i) pred[static_cast<std::size_t>(90 + i)] = 0;
    for (int i = 0; i < 5; ++i) pred[static_cast<std::size_t>(i)] = 1;
    const auto r = evaluate_predictions(pred, labels, 10, kTenGroups);
    CHECK(r.all_acc == doctest::Approx(85.0));
    CHECK(r.per_class_acc[0] == doctest::Approx(50.0));
    CHECK(r.per_class_acc[9] == doctest::Approx(0.0));
    CHECK(*r.group_acc[0] == doctest::Approx(87.5));
    CHECK(*r.group_acc[1] == doctest::Approx(100.0));
    CHECK(*r.group_acc[2] == doctest::Approx(200.0 / 3.0));
    CHECK(r.std_groups == doctest::Approx(population_std({87.5, 100.0, 200.0 / 3.0})));
    CHECK(r.n_test == 100);
}

TEST_CASE("an empty group is N/A and Std covers the rest") {
    std::vector<int> labels{0, 0, 4, 4};
    std::vector<int> pred{0, 0, 4, 0};
    const auto r = evaluate_predictions(pred, labels, 10, kTenGroups);
    CHECK_FALSE(r.group_acc[2].has_value());
    CHECK(r.std_groups == doctest::Approx(25.0));
    const auto j = to_json(r);
    CHECK(j.at("group_acc").at("Few") == "N/A");
    const auto back = eval_report_from_json(j);
    CHECK_FALSE(back.group_acc[2].has_value());
    CHECK(*back.group_acc[0] == 100.0);
    CHECK(back.std_groups == r.std_groups);
    CHECK_THROWS(evaluate_predictions({0}, {0, 1}, 10, kTenGroups));
}

TEST_CASE("probe separates clusters and stays at chance on noise") {
    Rng rng(12);
    const auto [train_f, train_y] = clusters(40, 10, 16, 0.2, rng);
    const auto [test_f, test_y] = clusters(20, 10, 16, 0.2, rng);
    auto cfg = ProbeConfig::linear();
    cfg.epochs = 10;
    cfg.milestones = {5, 8};
    const auto res = fit_probe(train_f, train_y, 10, cfg);
    CHECK(res.warnings.empty());
    const auto good = evaluate(res.classifier, test_f, test_y, kTenGroups);
    CHECK(good.all_acc > 95.0);

    Tensor noise({400, 16});
    for (auto& v : noise.values()) v = static_cast<float>(rng.normal());
    std::vector<int> noise_y(400);
    for (auto& y : noise_y) y = static_cast<int>(rng.below(10));
    const auto res2 = fit_probe(noise, noise_y, 10, cfg);
    Tensor noise_test({2000, 16});
    for (auto& v : noise_test.values()) v = static_cast<float>(rng.normal());
    std::vector<int> noise_test_y(2000);
    for (auto& y : noise_test_y) y = static_cast<int>(rng.below(10));
    const auto chance = evaluate(res2.classifier, noise_test, noise_test_y, kTenGroups);
    CHECK(chance.all_acc > 5.0);
    CHECK(chance.all_acc < 16.0);
}

TEST_CASE("probe training is deterministic and warns on imbalance") {
    Rng rng(3);
    auto [f, y] = clusters(10, 3, 4, 0.3, rng);
    f = Tensor({25, 4}, std::vector<float>(f.values().begin(), f.values().begin() + 100));
    y.resize(25);
    auto cfg = ProbeConfig::few_shot(1.0);
    cfg.epochs = 5;
    const auto a = fit_probe(f, y, 3, cfg);
    const auto b = fit_probe(f, y, 3, cfg);
    CHECK(a.classifier.weight == b.classifier.weight);
    CHECK_FALSE(a.warnings.empty());
}

TEST_CASE("few-shot subsets") {
    std::vector<int> labels;
    for (int c = 0; c < 10; ++c) labels.insert(labels.end(), 500, c);
    const auto one_pct = few_shot_indices(labels, 10, 0.01, 7);
    CHECK(one_pct.size() == 50);
    std::vector<int> per(10, 0);
    for (auto i : one_pct) ++per[static_cast<std::size_t>(labels[i])];
    for (int n : per) CHECK(n == 5);
    CHECK(std::is_sorted(one_pct.begin(), one_pct.end()));
    CHECK(one_pct == few_shot_indices(labels, 10, 0.01, 7));
    CHECK(one_pct != few_shot_indices(labels, 10, 0.01, 8));
    CHECK(few_shot_indices(labels, 10, 1.0, 7).size() == 5000);
    CHECK(few_shot_indices({0, 0, 1}, 2, 0.01, 1).size() == 2);
    CHECK_THROWS(few_shot_indices(labels, 10, 0.0, 1));
}

TEST_CASE("probe schedule and config validation") {
    const auto lin = ProbeConfig::linear();
    CHECK(lin.lr_at(0) == doctest::Approx(30.0));
    CHECK(lin.lr_at(10) == doctest::Approx(3.0));
    CHECK(lin.lr_at(25) == doctest::Approx(0.3));
    const auto fs = ProbeConfig::few_shot();
    CHECK(fs.epochs == 100);
    CHECK(fs.fraction == doctest::Approx(0.01));
    CHECK(fs.lr_at(60) == doctest::Approx(0.3));
    CHECK(probe_config_from_json(to_json(fs)).epochs == 100);
    auto bad = lin;
    bad.fraction = 1.5;
    CHECK_THROWS_AS(bad.validate(), InvalidSpec);
}

TEST_CASE("probing leaves the backbone untouched") {
    EncoderSpec spec;
    spec.image_size = 8;
    spec.channels = {4, 8};
    Rng rng(5);
    const auto params = init_params(spec, rng);
    const auto norm = init_norm_state(spec);
    SyntheticConfig sc;
    sc.n_classes = 3;
    sc.train_per_class = 6;
    sc.test_per_class = 2;
    sc.image_size = 8;
    const auto src = make_synthetic_shapes(sc);
    const auto before = tensors_hash(params);
    const auto norm_before = tensors_hash(norm.tensors);
    auto cfg = ProbeConfig::linear();
    cfg.epochs = 2;
    const auto res = run_probe(spec, params, norm, src.train, cfg);
    CHECK(res.train_indices.size() == src.train.size());
    CHECK(tensors_hash(params) == before);
    CHECK(tensors_hash(norm.tensors) == norm_before);
    std::vector<std::size_t> idx(src.test.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto f = extract_features(spec, params, norm, src.test, idx, false, 4);
    CHECK(f == extract_features(spec, params, norm, src.test, idx, false, 256));
}

TEST_CASE("forgetting scores") {
    Tensor a({3, 2}, {1, 0, 0, 2, 1, 1});
    Tensor b({3, 2}, {-2, 0, 0, 5, 0, 0});
    std::size_t zeros = 0;
    const auto s = forgetting_scores(a, b, &zeros);
    CHECK(s[0] == doctest::Approx(2.0));
    CHECK(s[1] == doctest::Approx(0.0));
    CHECK(s[2] == 2.0);
    CHECK(zeros == 1);
    CHECK_THROWS(forgetting_scores(a, Tensor({2, 2})));
}

TEST_CASE("PIE ranking and group mix") {
    std::vector<int> labels(200);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
    std::vector<double> scores(200, 0.1);
    scores[9] = 1.5;    // few
    scores[19] = 1.5;   // few, same score, later position
    scores[4] = 1.2;    // medium
    const auto r = rank_pies(scores, labels, kTenGroups, 0.01);
    CHECK(r.top_count == 2);
    CHECK(r.ranked[0] == 9);
    CHECK(r.ranked[1] == 19);
    CHECK(r.ranked[2] == 4);
    CHECK(r.group_pct[2] == doctest::Approx(100.0));
    CHECK(r.base_pct[0] == doctest::Approx(40.0));
    const auto wide = rank_pies(scores, labels, kTenGroups, 0.015);
    CHECK(wide.top_count == 3);
    CHECK(wide.group_pct[0] + wide.group_pct[1] + wide.group_pct[2] == doctest::Approx(100.0));
    const auto j = to_json(r, 2);
    CHECK(j.at("top_positions").size() == 2);
}

TEST_CASE("an all-ones mask with identical norm states finds no PIEs") {
    EncoderSpec spec;
    spec.image_size = 8;
    spec.channels = {4, 8};
    Rng rng(6);
    auto params = init_params(spec, rng);
    const auto norm = init_norm_state(spec);
    SyntheticConfig sc;
    sc.n_classes = 10;
    sc.train_per_class = 3;
    sc.image_size = 8;
    const auto src = make_synthetic_shapes(sc);
    std::vector<std::size_t> idx(src.train.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    TensorMap prunable;
    for (const auto& n : prunable_names(spec, false)) prunable.emplace(n, params.at(n));
    const auto none = magnitude_mask(prunable, 0.0);
    const auto r = mine_pies(spec, params, none, norm, norm, src.train, idx, kTenGroups);
    for (double s : r.scores) CHECK(s == doctest::Approx(0.0).epsilon(1e-6));

    // Positive rescaling of every prunable tensor keeps the mask and the scores.
    const auto pruned = magnitude_mask(prunable, 0.9);
    const auto base = mine_pies(spec, params, pruned, norm, norm, src.train, idx, kTenGroups);
    for (const auto& n : prunable_names(spec, false)) {
        for (auto& v : params.at(n).values()) v *= 3.0f;
    }
    TensorMap scaled;
    for (const auto& n : prunable_names(spec, false)) scaled.emplace(n, params.at(n));
    CHECK(magnitude_mask(scaled, 0.9) == pruned);
    const auto again = mine_pies(spec, params, pruned, norm, norm, src.train, idx, kTenGroups);
    for (std::size_t i = 0; i < base.scores.size(); ++i) {
        CHECK(again.scores[i] == doctest::Approx(base.scores[i]).epsilon(1e-3));
    }
}

TEST_CASE("report table format") {
    CHECK(mean_pm_std({1.0, 3.0}) == "2.00 ± 1.00");
    CHECK(mean_pm_std({}) == "N/A");
    EvalReport r = evaluate_predictions({0, 4, 8}, {0, 4, 7}, 10, kTenGroups);
    ReportRow row{"Shapes10-LT", "SDCLR", {r, r}};
    const auto csv = report_csv({row});
    CHECK(csv.substr(0, csv.find('\n')) == kReportColumns);
    CHECK(csv.find("Shapes10-LT,SDCLR,100.00 ± 0.00,100.00 ± 0.00,0.00 ± 0.00,") != std::string::npos);
    const auto j = report_json({row});
    CHECK(j.at("rows").size() == 1);

    const auto stem = std::filesystem::temp_directory_path() / "sdclr_report_test";
    const auto files = emit_report({row}, stem, true);
    CHECK(files.size() == 3);
    CHECK(read_file(stem.string() + "_groups.svg").find("<svg") == 0);
    for (const auto& f : files) std::filesystem::remove(f);
}
