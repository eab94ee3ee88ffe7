#include "sdclr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "sdclr/errors.hpp"
#include "sdclr/hashing.hpp"
#include "sdclr/io.hpp"
#include "sdclr/rng.hpp"

namespace sdclr {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

RowMatrix prepared(const Tensor& features, bool normalize) {
    if (features.rank() != 2) throw ContractError("features must be N x F, got " + shape_string(features.shape()));
    RowMatrix x = ConstRowMap(features.data(), features.dim(0), features.dim(1));
    if (normalize) {
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const float n = x.row(i).norm();
            if (n > 0.0f) x.row(i) /= n;
        }
    }
    return x;
}

}  // namespace

std::string to_string(Protocol p) { return p == Protocol::linear ? "linear" : "few_shot"; }

Protocol protocol_from_string(const std::string& s) {
    if (s == "linear") return Protocol::linear;
    if (s == "few_shot" || s == "fewshot") return Protocol::few_shot;
    throw InvalidSpec("probe.protocol: unknown protocol '" + s + "'");
}

ProbeConfig ProbeConfig::linear() { return ProbeConfig{}; }

ProbeConfig ProbeConfig::few_shot(double fraction) {
    ProbeConfig c;
    c.protocol = Protocol::few_shot;
    c.epochs = 100;
    c.milestones = {40, 60};
    c.fraction = fraction;
    return c;
}

void ProbeConfig::validate() const {
    if (epochs < 0) throw InvalidSpec("probe.epochs must be >= 0");
    if (!(lr >= 0.0)) throw InvalidSpec("probe.lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidSpec("probe.momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw InvalidSpec("probe.weight_decay must be >= 0");
    if (batch_size < 1) throw InvalidSpec("probe.batch_size must be >= 1");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidSpec("probe.fraction must be in (0, 1]");
}

double ProbeConfig::lr_at(int epoch) const {
    double out = lr;
    for (int m : milestones) {
        if (epoch >= m) out *= gamma;
    }
    return out;
}

nlohmann::json to_json(const ProbeConfig& c) {
    return {{"protocol", to_string(c.protocol)},
            {"epochs", c.epochs},
            {"lr", c.lr},
            {"momentum", c.momentum},
            {"weight_decay", c.weight_decay},
            {"milestones", c.milestones},
            {"gamma", c.gamma},
            {"batch_size", c.batch_size},
            {"fraction", c.fraction},
            {"normalize_features", c.normalize_features},
            {"seed", c.seed}};
}

ProbeConfig probe_config_from_json(const nlohmann::json& j) {
    const Protocol p = protocol_from_string(j.value("protocol", std::string("linear")));
    ProbeConfig c = p == Protocol::linear ? ProbeConfig::linear() : ProbeConfig::few_shot();
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.milestones = j.value("milestones", c.milestones);
    c.gamma = j.value("gamma", c.gamma);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.fraction = j.value("fraction", c.fraction);
    c.normalize_features = j.value("normalize_features", c.normalize_features);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

std::string tensors_hash(const TensorMap& tensors) {
    std::string buf;
    for (const auto& [name, t] : tensors) {
        buf += name;
        buf += '\0';
        buf += shape_string(t.shape());
        buf += '\0';
        buf.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
    }
    return sha256_hex(buf);
}

Tensor extract_features(const EncoderSpec& spec, const TensorMap& params, const NormState& norm, const ImageSet& images,
                        const std::vector<std::size_t>& indices, bool projection, int batch_size) {
    Encoder enc(spec);
    NormState frozen = norm;
    const int dim = projection ? spec.proj_dim : spec.feature_dim();
    Tensor out({static_cast<int>(indices.size()), dim});
    for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
        const std::span<const std::size_t> rows(indices.data() + start, end - start);
        auto pass = enc.forward(params, frozen, images.gather(rows), Mode::eval, projection);
        const Tensor& src = projection ? pass.projections : pass.features;
        std::copy(src.data(), src.data() + src.size(), out.data() + start * static_cast<std::size_t>(dim));
    }
    return out;
}

std::vector<std::size_t> few_shot_indices(const std::vector<int>& labels, int n_classes, double fraction,
                                          std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidParameter("few-shot fraction must be in (0, 1]");
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(static_cast<std::size_t>(labels[i])).push_back(i);
    std::vector<std::size_t> out;
    for (int c = 0; c < n_classes; ++c) {
        auto& members = by_class[static_cast<std::size_t>(c)];
        if (members.empty()) throw InvalidSpec("few-shot pool has no samples of class " + std::to_string(c));
        const double want = std::ceil(fraction * static_cast<double>(members.size()) - 1e-9);
        const auto keep = std::clamp<std::size_t>(static_cast<std::size_t>(want), 1, members.size());
        Rng rng(derive_seed(seed, "few-shot", static_cast<std::uint64_t>(c)));
        shuffle(members, rng);
        out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(keep));
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> LinearClassifier::predict(const Tensor& features) const {
    const RowMatrix x = prepared(features, normalize_features);
    const ConstRowMap w(weight.data(), weight.dim(0), weight.dim(1));
    const Eigen::Map<const Eigen::RowVectorXf> b(bias.data(), bias.dim(0));
    const RowMatrix logits = (x * w.transpose()).rowwise() + b;
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    return out;
}

LinearClassifier train_linear_classifier(const Tensor& features, const std::vector<int>& labels, int n_classes,
                                         const ProbeConfig& config) {
    config.validate();
    const RowMatrix x = prepared(features, config.normalize_features);
    if (static_cast<std::size_t>(x.rows()) != labels.size()) throw ContractError("features and labels differ in count");
    const auto n = static_cast<std::size_t>(x.rows());
    const auto f = x.cols();

    LinearClassifier clf;
    clf.normalize_features = config.normalize_features;
    clf.weight = Tensor({n_classes, static_cast<int>(f)});
    clf.bias = Tensor({n_classes});
    RowMap w(clf.weight.data(), n_classes, f);
    Eigen::Map<Eigen::RowVectorXf> b(clf.bias.data(), n_classes);
    RowMatrix vw = RowMatrix::Zero(n_classes, f);
    Eigen::RowVectorXf vb = Eigen::RowVectorXf::Zero(n_classes);

    Rng rng(derive_seed(config.seed, "probe-order"));
    const auto mu = static_cast<float>(config.momentum);
    const auto wd = static_cast<float>(config.weight_decay);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto lr = static_cast<float>(config.lr_at(epoch));
        const auto order = permutation(n, rng);
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
            const auto rows = static_cast<Eigen::Index>(end - start);
            RowMatrix xb(rows, f);
            for (Eigen::Index r = 0; r < rows; ++r) xb.row(r) = x.row(static_cast<Eigen::Index>(order[start + r]));
            RowMatrix g = (xb * w.transpose()).rowwise() + b;
            for (Eigen::Index r = 0; r < rows; ++r) {
                const float m = g.row(r).maxCoeff();
                g.row(r) = (g.row(r).array() - m).exp();
                g.row(r) /= g.row(r).sum();
                g(r, labels[order[start + static_cast<std::size_t>(r)]]) -= 1.0f;
            }
            g /= static_cast<float>(rows);
            const RowMatrix gw = g.transpose() * xb;
            const Eigen::RowVectorXf gb = g.colwise().sum();
            vw = mu * vw + gw + wd * RowMatrix(w);
            vb = mu * vb + gb;
            w -= lr * vw;
            b -= lr * vb;
        }
    }
    return clf;
}

ProbeResult fit_probe(const Tensor& features, const std::vector<int>& labels, int n_classes,
                      const ProbeConfig& config) {
    ProbeResult result;
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
    for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    if (*lo != *hi) {
        result.warnings.push_back("probe training set is not class balanced (" + std::to_string(*lo) + " to " +
                                  std::to_string(*hi) + " samples per class)");
    }
    result.classifier = train_linear_classifier(features, labels, n_classes, config);
    return result;
}

ProbeResult run_probe(const EncoderSpec& spec, const TensorMap& params, const NormState& norm, const ImageSet& pool,
                      const ProbeConfig& config) {
    config.validate();
    std::vector<std::size_t> rows;
    if (config.protocol == Protocol::few_shot || config.fraction < 1.0) {
        rows = few_shot_indices(pool.labels, pool.n_classes, config.fraction, config.seed);
    } else {
        rows.resize(pool.size());
        std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    std::vector<int> labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = pool.labels[rows[i]];
    const Tensor features = extract_features(spec, params, norm, pool, rows);
    ProbeResult result = fit_probe(features, labels, pool.n_classes, config);
    result.train_indices = std::move(rows);
    return result;
}

double population_std(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(values.size()));
}

EvalReport evaluate_predictions(const std::vector<int>& predictions, const std::vector<int>& labels, int n_classes,
                                const std::vector<Group>& group_of_class, Protocol protocol) {
    if (predictions.size() != labels.size()) throw ContractError("predictions and labels differ in count");
    if (group_of_class.size() != static_cast<std::size_t>(n_classes)) {
        throw ContractError("group assignment must cover every class");
    }
    EvalReport r;
    r.protocol = protocol;
    r.n_test = labels.size();
    std::vector<std::size_t> hit(static_cast<std::size_t>(n_classes), 0);
    std::vector<std::size_t> seen(static_cast<std::size_t>(n_classes), 0);
    std::array<std::size_t, kGroupCount> ghit{};
    std::array<std::size_t, kGroupCount> gseen{};
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        const auto g = static_cast<std::size_t>(group_of_class.at(c));
        const bool ok = predictions[i] == labels[i];
        ++seen[c];
        ++gseen[g];
        if (ok) {
            ++hit[c];
            ++ghit[g];
            ++correct;
        }
    }
    r.per_class_acc.resize(static_cast<std::size_t>(n_classes));
    for (std::size_t c = 0; c < hit.size(); ++c) {
        r.per_class_acc[c] = seen[c] ? 100.0 * static_cast<double>(hit[c]) / static_cast<double>(seen[c]) : kNaN;
    }
    std::vector<double> present;
    for (std::size_t g = 0; g < kGroupCount; ++g) {
        if (gseen[g] == 0) continue;
        r.group_acc[g] = 100.0 * static_cast<double>(ghit[g]) / static_cast<double>(gseen[g]);
        present.push_back(*r.group_acc[g]);
    }
    r.std_groups = population_std(present);
    r.all_acc = labels.empty() ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
    return r;
}

EvalReport evaluate(const LinearClassifier& classifier, const Tensor& test_features, const std::vector<int>& labels,
                    const std::vector<Group>& group_of_class, Protocol protocol) {
    return evaluate_predictions(classifier.predict(test_features), labels, classifier.n_classes(), group_of_class,
                                protocol);
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json per_class = nlohmann::json::array();
    for (double v : r.per_class_acc) per_class.push_back(number_or_null(v));
    nlohmann::json groups = nlohmann::json::object();
    for (int g = 0; g < kGroupCount; ++g) {
        const auto& v = r.group_acc[static_cast<std::size_t>(g)];
        groups[group_name(static_cast<Group>(g))] = v ? nlohmann::json(*v) : nlohmann::json("N/A");
    }
    return {{"protocol", to_string(r.protocol)}, {"per_class_acc", per_class}, {"group_acc", groups},
            {"std_groups", r.std_groups},       {"all_acc", r.all_acc},       {"n_test", r.n_test},
            {"config_hash", r.config_hash},     {"warnings", r.warnings}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.protocol = protocol_from_string(j.at("protocol").get<std::string>());
    for (const auto& v : j.at("per_class_acc")) r.per_class_acc.push_back(v.is_null() ? kNaN : v.get<double>());
    for (int g = 0; g < kGroupCount; ++g) {
        const auto& v = j.at("group_acc").at(group_name(static_cast<Group>(g)));
        if (v.is_number()) r.group_acc[static_cast<std::size_t>(g)] = v.get<double>();
    }
    r.std_groups = j.at("std_groups").get<double>();
    r.all_acc = j.at("all_acc").get<double>();
    r.n_test = j.value("n_test", std::size_t{0});
    r.config_hash = j.value("config_hash", std::string());
    r.warnings = j.value("warnings", std::vector<std::string>{});
    return r;
}

// ---------------------------------------------------------------------------
// PIE
// ---------------------------------------------------------------------------

std::vector<double> forgetting_scores(const Tensor& before, const Tensor& after, std::size_t* zero_norm_count) {
    if (before.shape() != after.shape() || before.rank() != 2) {
        throw ContractError("forgetting_scores needs two N x F tensors of one shape");
    }
    const auto n = static_cast<std::size_t>(before.dim(0));
    const auto f = static_cast<std::size_t>(before.dim(1));
    std::vector<double> out(n);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        double na = 0.0;
        double nb = 0.0;
        for (std::size_t k = 0; k < f; ++k) {
            const double a = before[i * f + k];
            const double b = after[i * f + k];
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        if (na == 0.0 || nb == 0.0) {
            out[i] = 2.0;
            ++zeros;
            continue;
        }
        out[i] = std::clamp(1.0 - dot / std::sqrt(na * nb), 0.0, 2.0);
    }
    if (zero_norm_count) *zero_norm_count = zeros;
    return out;
}

PieReport rank_pies(std::vector<double> scores, const std::vector<int>& labels, const std::vector<Group>& group_of_class,
                    double top_fraction) {
    if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw InvalidParameter("PIE top fraction must be in (0, 1]");
    if (scores.size() != labels.size()) throw ContractError("scores and labels differ in count");
    if (scores.empty()) throw InvalidParameter("PIE mining needs at least one sample");
    PieReport r;
    r.top_fraction = top_fraction;
    r.ranked.resize(scores.size());
    std::iota(r.ranked.begin(), r.ranked.end(), std::size_t{0});
    std::stable_sort(r.ranked.begin(), r.ranked.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const double want = std::ceil(top_fraction * static_cast<double>(scores.size()) - 1e-9);
    r.top_count = std::clamp<std::size_t>(static_cast<std::size_t>(want), 1, scores.size());

    std::array<std::size_t, kGroupCount> top{};
    std::array<std::size_t, kGroupCount> all{};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ++all[static_cast<std::size_t>(group_of_class.at(static_cast<std::size_t>(labels[i])))];
    }
    for (std::size_t k = 0; k < r.top_count; ++k) {
        const int label = labels[r.ranked[k]];
        ++top[static_cast<std::size_t>(group_of_class.at(static_cast<std::size_t>(label)))];
    }
    for (std::size_t g = 0; g < kGroupCount; ++g) {
        r.group_pct[g] = 100.0 * static_cast<double>(top[g]) / static_cast<double>(r.top_count);
        r.base_pct[g] = 100.0 * static_cast<double>(all[g]) / static_cast<double>(labels.size());
    }
    r.scores = std::move(scores);
    return r;
}

PieReport mine_pies(const EncoderSpec& spec, const TensorMap& params, const PruneMask& mask, const NormState& norm_dense,
                    const NormState& norm_sparse, const ImageSet& images, const std::vector<std::size_t>& indices,
                    const std::vector<Group>& group_of_class, const PieOptions& options) {
    const bool projection = options.feature == PieFeature::projection;
    const Tensor before = extract_features(spec, params, norm_dense, images, indices, projection, options.batch_size);
    const Tensor after = extract_features(spec, apply_mask(params, mask), options.sparse_norm ? norm_sparse : norm_dense,
                                          images, indices, projection, options.batch_size);
    std::size_t zeros = 0;
    auto scores = forgetting_scores(before, after, &zeros);
    std::vector<int> labels(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) labels[i] = images.labels[indices[i]];
    PieReport r = rank_pies(std::move(scores), labels, group_of_class, options.top_fraction);
    r.zero_norm_count = zeros;
    return r;
}

nlohmann::json to_json(const PieReport& r, std::size_t top_list) {
    nlohmann::json pct = nlohmann::json::object();
    nlohmann::json base = nlohmann::json::object();
    for (int g = 0; g < kGroupCount; ++g) {
        pct[group_name(static_cast<Group>(g))] = r.group_pct[static_cast<std::size_t>(g)];
        base[group_name(static_cast<Group>(g))] = r.base_pct[static_cast<std::size_t>(g)];
    }
    const std::size_t listed = std::min(r.ranked.size(), top_list ? top_list : r.top_count);
    return {{"top_fraction", r.top_fraction},
            {"top_count", r.top_count},
            {"group_pct", pct},
            {"base_pct", base},
            {"zero_norm_count", r.zero_norm_count},
            {"top_positions", std::vector<std::size_t>(r.ranked.begin(), r.ranked.begin() + static_cast<std::ptrdiff_t>(listed))},
            {"scores", r.scores}};
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

std::string mean_pm_std(const std::vector<double>& values) {
    if (values.empty()) return "N/A";
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f \xC2\xB1 %.2f", mean, population_std(values));
    return buf;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<double> group_values(const ReportRow& row, std::size_t g) {
    std::vector<double> out;
    for (const auto& r : row.runs) {
        if (r.group_acc[g]) out.push_back(*r.group_acc[g]);
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    return v.empty() ? kNaN : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string report_csv(const std::vector<ReportRow>& rows) {
    std::string out = std::string(kReportColumns) + "\n";
    for (const auto& row : rows) {
        out += csv_field(row.dataset) + "," + csv_field(row.framework);
        for (std::size_t g = 0; g < kGroupCount; ++g) out += "," + mean_pm_std(group_values(row, g));
        std::vector<double> stds;
        std::vector<double> alls;
        for (const auto& r : row.runs) {
            stds.push_back(r.std_groups);
            alls.push_back(r.all_acc);
        }
        out += "," + mean_pm_std(stds) + "," + mean_pm_std(alls) + "\n";
    }
    return out;
}

nlohmann::json report_json(const std::vector<ReportRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& row : rows) {
        nlohmann::json runs = nlohmann::json::array();
        std::vector<double> stds;
        for (const auto& r : row.runs) {
            runs.push_back(to_json(r));
            stds.push_back(r.std_groups);
        }
        nlohmann::json mean_groups = nlohmann::json::object();
        std::vector<double> means;
        for (std::size_t g = 0; g < kGroupCount; ++g) {
            const double m = mean_of(group_values(row, g));
            mean_groups[group_name(static_cast<Group>(g))] = number_or_null(m);
            if (std::isfinite(m)) means.push_back(m);
        }
        out.push_back({{"dataset", row.dataset},
                       {"framework", row.framework},
                       {"runs", runs},
                       {"mean_group_acc", mean_groups},
                       {"std_per_run", {{"mean", number_or_null(mean_of(stds))}, {"std", population_std(stds)}}},
                       {"std_of_mean_groups", population_std(means)}});
    }
    return {{"columns", kReportColumns}, {"rows", out}};
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string group_bar_svg(const std::vector<ReportRow>& rows) {
    const char* colors[kGroupCount] = {"#4c72b0", "#dd8452", "#55a868"};
    const double bar = 18.0;
    const double gap = 30.0;
    const double height = 220.0;
    const double width = 60.0 + static_cast<double>(rows.size()) * (kGroupCount * bar + gap);
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"" << fmt(height + 60)
      << "\">\n";
    s << "<line x1=\"40\" y1=\"" << fmt(height) << "\" x2=\"" << fmt(width) << "\" y2=\"" << fmt(height)
      << "\" stroke=\"black\"/>\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double x0 = 50.0 + static_cast<double>(i) * (kGroupCount * bar + gap);
        for (std::size_t g = 0; g < kGroupCount; ++g) {
            const double m = mean_of(group_values(rows[i], g));
            if (!std::isfinite(m)) continue;
            const double h = (height - 20.0) * m / 100.0;
            s << "<rect x=\"" << fmt(x0 + static_cast<double>(g) * bar) << "\" y=\"" << fmt(height - h)
              << "\" width=\"" << fmt(bar - 2) << "\" height=\"" << fmt(h) << "\" fill=\"" << colors[g] << "\"/>\n";
        }
        s << "<text x=\"" << fmt(x0) << "\" y=\"" << fmt(height + 16) << "\" font-size=\"11\">"
          << xml_escape(rows[i].framework) << "</text>\n";
    }
    for (std::size_t g = 0; g < kGroupCount; ++g) {
        s << "<text x=\"" << fmt(50.0 + 70.0 * static_cast<double>(g)) << "\" y=\"" << fmt(height + 40)
          << "\" font-size=\"11\" fill=\"" << colors[g] << "\">" << group_name(static_cast<Group>(g)) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::string sparsity_svg(const SparsityReport& report) {
    const double bar = 30.0;
    const double height = 200.0;
    const double width = 60.0 + static_cast<double>(report.layers.size()) * (bar + 10.0);
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"" << fmt(height + 40)
      << "\">\n";
    for (std::size_t i = 0; i < report.layers.size(); ++i) {
        const double x = 50.0 + static_cast<double>(i) * (bar + 10.0);
        const double h = (height - 20.0) * report.layers[i].second;
        s << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(height - h) << "\" width=\"" << fmt(bar) << "\" height=\""
          << fmt(h) << "\" fill=\"#4c72b0\"/>\n";
        s << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(height + 16) << "\" font-size=\"9\">"
          << xml_escape(report.layers[i].first) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::vector<std::filesystem::path> emit_report(const std::vector<ReportRow>& rows, const std::filesystem::path& stem,
                                               bool plots) {
    if (rows.empty()) throw InvalidParameter("emit_report needs at least one row");
    std::vector<std::filesystem::path> written;
    auto with = [&](const std::string& suffix) {
        std::filesystem::path p = stem;
        p += suffix;
        return p;
    };
    written.push_back(with(".csv"));
    write_file_atomic(written.back(), report_csv(rows));
    written.push_back(with(".json"));
    write_json_atomic(written.back(), report_json(rows));
    if (plots) {
        written.push_back(with("_groups.svg"));
        write_file_atomic(written.back(), group_bar_svg(rows));
    }
    return written;
}

}  // namespace sdclr
