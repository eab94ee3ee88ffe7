#include "sdclr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sdclr/contrastive.hpp"
#include "sdclr/errors.hpp"
#include "sdclr/hashing.hpp"
#include "sdclr/io.hpp"

namespace sdclr {

namespace fs = std::filesystem;

std::string to_string(Competitor c) {
    switch (c) {
        case Competitor::magnitude: return "magnitude";
        case Competitor::dropout: return "dropout";
        case Competitor::none: return "none";
    }
    return "?";
}

Competitor competitor_from_string(const std::string& s) {
    if (s == "magnitude") return Competitor::magnitude;
    if (s == "dropout") return Competitor::dropout;
    if (s == "none") return Competitor::none;
    throw InvalidSpec("train.competitor: unknown kind '" + s + "'");
}

void TrainConfig::validate() const {
    if (epochs < 0) throw InvalidSpec("train.epochs must be >= 0");
    if (batch_size < 2) throw InvalidSpec("train.batch_size must be >= 2");
    if (!(lr >= 0.0)) throw InvalidSpec("train.lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidSpec("train.momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw InvalidSpec("train.weight_decay must be >= 0");
    if (!(tau > 0.0)) throw InvalidSpec("train.tau must be > 0");
    if (!(prune_ratio >= 0.0 && prune_ratio < 1.0)) throw InvalidSpec("train.prune_ratio must be in [0, 1)");
    if (mask_refresh_epochs < 1) throw InvalidSpec("train.mask_refresh_epochs must be >= 1");
    if (warmup_epochs < 0) throw InvalidSpec("train.warmup_epochs must be >= 0");
    encoder.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"momentum", c.momentum},
            {"weight_decay", c.weight_decay},
            {"schedule", c.schedule == LrSchedule::cosine ? "cosine" : "step"},
            {"milestones", c.milestones},
            {"step_gamma", c.step_gamma},
            {"warmup_epochs", c.warmup_epochs},
            {"tau", c.tau},
            {"prune_ratio", c.prune_ratio},
            {"prune_scope", to_string(c.prune_scope)},
            {"mask_refresh_epochs", c.mask_refresh_epochs},
            {"prune_head", c.prune_head},
            {"shared_norm", c.shared_norm},
            {"competitor", to_string(c.competitor)},
            {"seed", c.seed},
            {"encoder", to_json(c.encoder)},
            {"augmentation", to_json(c.augmentation)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    const std::string schedule = j.value("schedule", std::string("cosine"));
    if (schedule == "cosine") {
        c.schedule = LrSchedule::cosine;
    } else if (schedule == "step") {
        c.schedule = LrSchedule::step;
    } else {
        throw InvalidSpec("train.schedule must be cosine or step");
    }
    c.milestones = j.value("milestones", c.milestones);
    c.step_gamma = j.value("step_gamma", c.step_gamma);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.tau = j.value("tau", c.tau);
    c.prune_ratio = j.value("prune_ratio", c.prune_ratio);
    c.prune_scope = prune_scope_from_string(j.value("prune_scope", std::string("global")));
    c.mask_refresh_epochs = j.value("mask_refresh_epochs", c.mask_refresh_epochs);
    c.prune_head = j.value("prune_head", c.prune_head);
    c.shared_norm = j.value("shared_norm", c.shared_norm);
    c.competitor = competitor_from_string(j.value("competitor", std::string("magnitude")));
    c.seed = j.value("seed", c.seed);
    if (j.contains("encoder")) c.encoder = encoder_spec_from_json(j["encoder"]);
    if (j.contains("augmentation")) c.augmentation = chain_from_json(j["augmentation"]);
    c.validate();
    return c;
}

std::string config_hash(const TrainConfig& config) { return sha256_hex(to_json(config).dump()); }

// ---------------------------------------------------------------------------
// State and mask schedule
// ---------------------------------------------------------------------------

namespace {

TensorMap prunable_view(const TrainConfig& config, const TensorMap& params) {
    return select(params, prunable_names(config.encoder, config.prune_head));
}

TensorMap zeros_like(const TensorMap& m, const std::string& prefix, const std::vector<std::string>* only = nullptr) {
    TensorMap out;
    for (const auto& [name, t] : m) {
        if (only && std::find(only->begin(), only->end(), name) == only->end()) continue;
        out.emplace(prefix + name, Tensor(t.shape()));
    }
    return out;
}

}  // namespace

TrainState init_state(const TrainConfig& config) {
    config.validate();
    TrainState state;
    Rng init_rng(derive_seed(config.seed, "init"));
    state.model.shared_params = init_params(config.encoder, init_rng);
    state.model.norm_dense = init_norm_state(config.encoder);
    state.model.norm_sparse = init_norm_state(config.encoder);
    state.model.mask = all_ones_mask(prunable_view(config, state.model.shared_params));
    state.rng_state = Rng(derive_seed(config.seed, "epochs")).state();

    state.velocity = zeros_like(state.model.shared_params, "param/");
    const auto affine = state.model.norm_dense.affine_names();
    state.velocity.merge(zeros_like(state.model.norm_dense.tensors, "dense/", &affine));
    state.velocity.merge(zeros_like(state.model.norm_sparse.tensors, "sparse/", &affine));
    return state;
}

void refresh_mask(TrainState& state, const TrainConfig& config) {
    const TensorMap prunable = prunable_view(config, state.model.shared_params);
    switch (config.competitor) {
        case Competitor::magnitude:
            state.model.mask = magnitude_mask(prunable, config.prune_ratio, config.prune_scope);
            break;
        case Competitor::dropout: {
            Rng rng(derive_seed(config.seed, "dropout-mask", static_cast<std::uint64_t>(state.epoch)));
            state.model.mask = random_dropout_mask(prunable, config.prune_ratio, rng);
            break;
        }
        case Competitor::none:
            state.model.mask = all_ones_mask(prunable);
            break;
    }
    state.model.mask.epoch_created = state.epoch;
}

// ---------------------------------------------------------------------------
// Forward / step
// ---------------------------------------------------------------------------

DualOutput forward_dual(const DualBranchModel& model, const TrainConfig& config, const Tensor& view1,
                        const Tensor& view2, Mode mode) {
    if (view1.shape() != view2.shape()) throw ContractError("forward_dual: views differ in shape");
    Encoder enc(config.encoder);
    DualOutput out;
    out.norm_dense = model.norm_dense;
    out.norm_sparse = model.norm_sparse;
    auto dense = enc.forward(model.shared_params, out.norm_dense, view1, mode);
    NormState& sparse_norm = config.shared_norm ? out.norm_dense : out.norm_sparse;
    auto sparse = enc.forward(model.sparse_params(), sparse_norm, view2, mode);
    out.proj_dense = std::move(dense.projections);
    out.proj_sparse = std::move(sparse.projections);
    return out;
}

namespace {

double squared_norm(const TensorMap& m) {
    double s = 0.0;
    for (const auto& [name, t] : m) {
        for (float v : t.values()) s += static_cast<double>(v) * v;
    }
    return s;
}

void add_into(TensorMap& acc, const TensorMap& g) {
    for (const auto& [name, t] : g) {
        auto it = acc.find(name);
        if (it == acc.end()) {
            acc.emplace(name, t);
            continue;
        }
        auto dst = it->second.values();
        const auto src = t.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
}

void sgd_update(Tensor& weight, Tensor& velocity, const Tensor& grad, double lr, double momentum, double decay) {
    auto w = weight.values();
    auto v = velocity.values();
    const auto g = grad.values();
    const float mu = static_cast<float>(momentum);
    const float wd = static_cast<float>(decay);
    const float step = static_cast<float>(lr);
    for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = mu * v[i] + g[i] + wd * w[i];
        w[i] -= step * v[i];
    }
}

std::vector<double> interleave(const Tensor& a, const Tensor& b) {
    const int n = a.dim(0);
    const int d = a.dim(1);
    std::vector<double> out(static_cast<std::size_t>(2 * n) * d);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < d; ++k) {
            out[(2 * static_cast<std::size_t>(i)) * d + k] = a[static_cast<std::size_t>(i) * d + k];
            out[(2 * static_cast<std::size_t>(i) + 1) * d + k] = b[static_cast<std::size_t>(i) * d + k];
        }
    }
    return out;
}

std::pair<Tensor, Tensor> deinterleave(const std::vector<double>& g, int n, int d) {
    Tensor a({n, d});
    Tensor b({n, d});
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < d; ++k) {
            a[static_cast<std::size_t>(i) * d + k] = static_cast<float>(g[(2 * static_cast<std::size_t>(i)) * d + k]);
            b[static_cast<std::size_t>(i) * d + k] = static_cast<float>(g[(2 * static_cast<std::size_t>(i) + 1) * d + k]);
        }
    }
    return {std::move(a), std::move(b)};
}

}  // namespace

StepResult train_step(TrainState& state, const TrainConfig& config, const Tensor& view1, const Tensor& view2,
                      double lr, const StepHooks& hooks) {
    if (view1.shape() != view2.shape()) throw ContractError("train_step: views differ in shape");
    DualBranchModel& model = state.model;
    Encoder enc(config.encoder);
    const TensorMap sparse_params = model.sparse_params();
    NormState& sparse_norm = config.shared_norm ? model.norm_dense : model.norm_sparse;

    auto dense = enc.forward(model.shared_params, model.norm_dense, view1, Mode::train);
    auto sparse = enc.forward(sparse_params, sparse_norm, view2, Mode::train);

    const int n = view1.dim(0);
    const int d = config.encoder.proj_dim;
    const auto batch = EmbeddingBatch::interleaved(2 * n, d, interleave(dense.projections, sparse.projections));
    const auto loss = ntxent_loss(batch, Temperature(config.tau));

    Gradients g_dense = enc.backward(model.shared_params, model.norm_dense, dense,
                                     deinterleave(loss.grad, n, d).first);
    Gradients g_sparse = enc.backward(sparse_params, sparse_norm, sparse, deinterleave(loss.grad, n, d).second);

    // The sparse forward read 0 at dropped positions; their gradient is cut.
    apply_mask_inplace(g_sparse.params, model.mask);

    StepResult result;
    result.loss = loss.loss;
    result.lr = lr;
    result.mask_hash = model.mask.hash();
    result.grad_norm_dense = std::sqrt(squared_norm(g_dense.params));
    result.grad_norm_sparse = std::sqrt(squared_norm(g_sparse.params));
    if (!std::isfinite(loss.loss) || !std::isfinite(result.grad_norm_dense) ||
        !std::isfinite(result.grad_norm_sparse)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << state.epoch << " step " << state.step << ": loss=" << loss.loss
            << " grad_norm_dense=" << result.grad_norm_dense << " grad_norm_sparse=" << result.grad_norm_sparse;
        throw TrainingDiverged(msg.str());
    }

    TensorMap param_grad;
    if (!hooks.drop_dense_gradient) add_into(param_grad, g_dense.params);
    if (!hooks.drop_sparse_gradient) add_into(param_grad, g_sparse.params);
    TensorMap dense_norm_grad;
    TensorMap sparse_norm_grad;
    if (!hooks.drop_dense_gradient) add_into(dense_norm_grad, g_dense.norm);
    if (!hooks.drop_sparse_gradient) add_into(config.shared_norm ? dense_norm_grad : sparse_norm_grad, g_sparse.norm);

    for (auto& [name, w] : model.shared_params) {
        auto it = param_grad.find(name);
        if (it == param_grad.end()) continue;
        sgd_update(w, state.velocity.at("param/" + name), it->second, lr, config.momentum,
                   is_decayed(name) ? config.weight_decay : 0.0);
    }
    for (const auto& [name, grad] : dense_norm_grad) {
        sgd_update(model.norm_dense.tensors.at(name), state.velocity.at("dense/" + name), grad, lr, config.momentum, 0.0);
    }
    for (const auto& [name, grad] : sparse_norm_grad) {
        sgd_update(model.norm_sparse.tensors.at(name), state.velocity.at("sparse/" + name), grad, lr, config.momentum,
                   0.0);
    }

    state.loss_history.push_back(loss.loss);
    ++state.step;
    return result;
}

long long steps_per_epoch(const TrainConfig& config, std::size_t n_samples) {
    return static_cast<long long>(n_samples / static_cast<std::size_t>(config.batch_size));
}

double learning_rate(const TrainConfig& config, long long step, long long spe) {
    const long long total = static_cast<long long>(config.epochs) * spe;
    const long long warm = static_cast<long long>(config.warmup_epochs) * spe;
    if (step < warm) return config.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
    if (config.schedule == LrSchedule::cosine) {
        const long long span = std::max(1LL, total - warm);
        const double t = std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(span));
        return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    }
    const long long epoch = spe > 0 ? step / spe : 0;
    double lr = config.lr;
    for (int m : config.milestones) {
        if (epoch >= m) lr *= config.step_gamma;
    }
    return lr;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n_samples, int batch_size, std::uint64_t epoch_seed) {
    Rng rng(derive_seed(epoch_seed, "order"));
    const auto order = permutation(n_samples, rng);
    std::vector<std::vector<std::size_t>> batches;
    const auto b = static_cast<std::size_t>(batch_size);
    for (std::size_t start = 0; start + b <= n_samples; start += b) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(start + b));
    }
    return batches;
}

std::uint64_t next_epoch_seed(TrainState& state) {
    Rng root;
    root.set_state(state.rng_state);
    const std::uint64_t seed = root.next();
    state.rng_state = root.state();
    return seed;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

std::vector<std::pair<std::string, const Tensor*>> checkpoint_tensors(const TrainState& state) {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (const auto& [n, t] : state.model.shared_params) out.emplace_back("param/" + n, &t);
    for (const auto& [n, t] : state.model.norm_dense.tensors) out.emplace_back("dense/" + n, &t);
    for (const auto& [n, t] : state.model.norm_sparse.tensors) out.emplace_back("sparse/" + n, &t);
    for (const auto& [n, t] : state.velocity) out.emplace_back("velocity/" + n, &t);
    return out;
}

fs::path with_suffix(const fs::path& stem, const std::string& suffix) {
    fs::path p = stem;
    p += suffix;
    return p;
}

std::string float_bytes(const Tensor& t) {
    std::string out(t.size() * 4, '\0');
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, t.data() + i, 4);
        for (int b = 0; b < 4; ++b) out[4 * i + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    return out;
}

Tensor tensor_from_bytes(const std::string& blob, std::size_t offset, const std::vector<int>& shape) {
    Tensor t(shape);
    if (offset + 4 * t.size() > blob.size()) throw ContractError("checkpoint blob is truncated");
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + 4 * i + static_cast<std::size_t>(b)]))
                    << (8 * b);
        }
        std::memcpy(t.data() + i, &bits, 4);
    }
    return t;
}

}  // namespace

void save_checkpoint(const fs::path& stem, const TrainConfig& config, const TrainState& state) {
    const fs::path mask_path = with_suffix(stem, ".mask");
    const fs::path bin_path = with_suffix(stem, ".bin");
    const fs::path json_path = with_suffix(stem, ".json");
    write_mask(mask_path, state.model.mask);

    std::string blob;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& [key, t] : checkpoint_tensors(state)) {
        tensors.push_back({{"key", key}, {"shape", t->shape()}, {"offset", blob.size()}});
        blob += float_bytes(*t);
    }
    write_file_atomic(bin_path, blob);

    nlohmann::json j;
    j["format"] = "sdclr-checkpoint/1";
    j["config"] = to_json(config);
    j["config_hash"] = config_hash(config);
    j["epoch"] = state.epoch;
    j["step"] = state.step;
    j["loss_history"] = state.loss_history;
    j["epoch_losses"] = state.epoch_losses;
    j["rng_state"] = state.rng_state;
    j["tensors"] = tensors;
    j["blob"] = {{"file", bin_path.filename().string()}, {"sha256", sha256_hex(blob)}};
    j["mask"] = {{"file", mask_path.filename().string()}, {"hash", state.model.mask.hash()}};
    write_json_atomic(json_path, j);
}

Checkpoint load_checkpoint(const fs::path& path) {
    fs::path json_path = path;
    if (json_path.extension() != ".json") json_path = with_suffix(path, ".json");
    if (!fs::exists(json_path)) throw ContractError("checkpoint not found: " + json_path.string());
    const auto j = read_json(json_path);
    Checkpoint ck;
    ck.config = train_config_from_json(j.at("config"));
    TrainState& s = ck.state;
    s.epoch = j.at("epoch").get<int>();
    s.step = j.at("step").get<long long>();
    s.loss_history = j.at("loss_history").get<std::vector<double>>();
    s.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
    s.rng_state = j.at("rng_state").get<std::string>();

    const fs::path dir = json_path.parent_path();
    const std::string blob = read_file(dir / j.at("blob").at("file").get<std::string>());
    if (sha256_hex(blob) != j.at("blob").at("sha256").get<std::string>()) {
        throw ContractError("checkpoint blob hash mismatch for " + json_path.string());
    }
    for (const auto& t : j.at("tensors")) {
        const auto key = t.at("key").get<std::string>();
        Tensor value = tensor_from_bytes(blob, t.at("offset").get<std::size_t>(), t.at("shape").get<std::vector<int>>());
        const auto slash = key.find('/');
        const std::string group = key.substr(0, slash);
        const std::string name = key.substr(slash + 1);
        if (group == "param") {
            s.model.shared_params.emplace(name, std::move(value));
        } else if (group == "dense") {
            s.model.norm_dense.tensors.emplace(name, std::move(value));
        } else if (group == "sparse") {
            s.model.norm_sparse.tensors.emplace(name, std::move(value));
        } else if (group == "velocity") {
            s.velocity.emplace(name, std::move(value));
        } else {
            throw ContractError("unknown checkpoint tensor group '" + group + "'");
        }
    }
    s.model.mask = read_mask(dir / j.at("mask").at("file").get<std::string>());
    if (s.model.mask.hash() != j.at("mask").at("hash").get<std::string>()) {
        throw ContractError("checkpoint mask hash mismatch for " + json_path.string());
    }
    check_params(ck.config.encoder, s.model.shared_params);
    return ck;
}

// ---------------------------------------------------------------------------
// Pretraining loop
// ---------------------------------------------------------------------------

namespace {

std::string epoch_stem(int epoch) {
    std::ostringstream os;
    os << "epoch_";
    os.width(4);
    os.fill('0');
    os << epoch;
    return os.str();
}

void remove_checkpoint(const fs::path& stem) {
    for (const char* suffix : {".json", ".bin", ".mask"}) fs::remove(with_suffix(stem, suffix));
}

std::vector<int> saved_epochs(const fs::path& dir) {
    std::vector<int> epochs;
    if (!fs::exists(dir)) return epochs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.starts_with("epoch_") && name.ends_with(".json")) {
            epochs.push_back(std::stoi(name.substr(6, name.size() - 11)));
        }
    }
    std::sort(epochs.begin(), epochs.end());
    return epochs;
}

std::string csv_row(const StepRecord& r) {
    std::ostringstream os;
    os.precision(10);
    os << r.epoch << ',' << r.step << ',' << r.loss << ',' << r.lr << ',' << r.mask_hash << '\n';
    return os.str();
}

constexpr const char* kLogHeader = "epoch,step,loss,lr,mask_hash\n";

// Keeps only rows up to `step` so a resumed run does not duplicate lines.
std::string truncated_log(const fs::path& path, long long step) {
    std::string out = kLogHeader;
    if (!fs::exists(path)) return out;
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto first = line.find(',');
        const auto second = line.find(',', first + 1);
        const long long s = std::stoll(line.substr(first + 1, second - first - 1));
        if (s <= step) out += line + "\n";
    }
    return out;
}

}  // namespace

TrainState pretrain(const TrainConfig& config, const ImageSet& pool, const std::vector<std::size_t>& indices,
                    const PretrainOptions& options) {
    config.validate();
    const bool persist = !options.out_dir.empty();
    const fs::path ck_dir = options.out_dir / "checkpoints";
    const fs::path log_path = options.out_dir / "train_log.csv";

    TrainState state;
    bool resumed = false;
    if (persist && options.resume) {
        const auto epochs = saved_epochs(ck_dir);
        if (!epochs.empty()) {
            Checkpoint ck = load_checkpoint(ck_dir / epoch_stem(epochs.back()));
            if (config_hash(ck.config) != config_hash(config)) {
                throw ContractError("checkpoint in " + ck_dir.string() + " was written with a different config");
            }
            state = std::move(ck.state);
            resumed = true;
        }
    }
    if (!resumed) state = init_state(config);

    std::string log = persist ? truncated_log(log_path, resumed ? state.step : -1) : std::string();
    if (persist && !resumed) log = kLogHeader;

    const long long spe = steps_per_epoch(config, indices.size());
    if (config.epochs > 0 && spe == 0) {
        throw InvalidSpec("train.batch_size exceeds the number of training samples");
    }
    double best_loss = std::numeric_limits<double>::infinity();
    for (double l : state.epoch_losses) best_loss = std::min(best_loss, l);

    while (state.epoch < config.epochs) {
        if (options.max_steps >= 0 && state.step >= options.max_steps) break;
        if (state.epoch % config.mask_refresh_epochs == 0) refresh_mask(state, config);
        const std::uint64_t epoch_seed = next_epoch_seed(state);
        Rng aug_rng(derive_seed(epoch_seed, "augment"));
        double sum = 0.0;
        long long count = 0;
        for (const auto& batch : epoch_batches(indices.size(), config.batch_size, epoch_seed)) {
            if (options.max_steps >= 0 && state.step >= options.max_steps) break;
            std::vector<std::size_t> rows(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) rows[i] = indices[batch[i]];
            const Tensor images = pool.gather(rows);
            auto [v1, v2] = make_views(images, config.augmentation, aug_rng);
            const double lr = learning_rate(config, state.step, spe);
            const StepResult r = train_step(state, config, v1, v2, lr);
            sum += r.loss;
            ++count;
            const StepRecord rec{state.epoch, state.step, r.loss, lr, r.mask_hash};
            if (persist) log += csv_row(rec);
            if (options.on_step) options.on_step(rec);
        }
        if (count < spe) break;  // stopped by max_steps mid-epoch
        ++state.epoch;
        state.epoch_losses.push_back(count ? sum / static_cast<double>(count) : 0.0);
        if (options.on_epoch) options.on_epoch(state);
        if (persist) {
            write_file_atomic(log_path, log);
            save_checkpoint(ck_dir / epoch_stem(state.epoch), config, state);
            const auto epochs = saved_epochs(ck_dir);
            for (std::size_t i = 0; i + static_cast<std::size_t>(options.keep_last) < epochs.size(); ++i) {
                remove_checkpoint(ck_dir / epoch_stem(epochs[i]));
            }
            if (state.epoch_losses.back() < best_loss) {
                best_loss = state.epoch_losses.back();
                save_checkpoint(ck_dir / "best", config, state);
            }
        }
    }
    if (persist) {
        write_file_atomic(log_path, log);
        save_checkpoint(options.out_dir / "final", config, state);
    }
    return state;
}

// ---------------------------------------------------------------------------
// Reference SimCLR
// ---------------------------------------------------------------------------

SimclrReference::SimclrReference(const TrainConfig& config) : config_(config), encoder_(config.encoder) {
    Rng init_rng(derive_seed(config.seed, "init"));
    params_ = init_params(config.encoder, init_rng);
    norm_ = init_norm_state(config.encoder);
    for (const auto& [name, t] : params_) velocity_.emplace(name, Tensor(t.shape()));
    for (const auto& name : norm_.affine_names()) velocity_.emplace(name, Tensor(norm_.tensors.at(name).shape()));
}

double SimclrReference::step(const Tensor& view1, const Tensor& view2, double lr) {
    auto a = encoder_.forward(params_, norm_, view1, Mode::train);
    auto b = encoder_.forward(params_, norm_, view2, Mode::train);
    const int n = view1.dim(0);
    const int d = config_.encoder.proj_dim;

    std::vector<double> rows(static_cast<std::size_t>(2 * n) * d);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < d; ++k) {
            rows[(2 * static_cast<std::size_t>(i)) * d + k] = a.projections[static_cast<std::size_t>(i) * d + k];
            rows[(2 * static_cast<std::size_t>(i) + 1) * d + k] = b.projections[static_cast<std::size_t>(i) * d + k];
        }
    }
    const auto loss = ntxent_loss(EmbeddingBatch::interleaved(2 * n, d, std::move(rows)), Temperature(config_.tau));

    Tensor da({n, d});
    Tensor db({n, d});
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < d; ++k) {
            da[static_cast<std::size_t>(i) * d + k] = static_cast<float>(loss.grad[(2 * static_cast<std::size_t>(i)) * d + k]);
            db[static_cast<std::size_t>(i) * d + k] =
                static_cast<float>(loss.grad[(2 * static_cast<std::size_t>(i) + 1) * d + k]);
        }
    }
    const Gradients ga = encoder_.backward(params_, norm_, a, da);
    const Gradients gb = encoder_.backward(params_, norm_, b, db);

    const float mu = static_cast<float>(config_.momentum);
    auto update = [&](Tensor& w, Tensor& v, const Tensor& g1, const Tensor& g2, double decay) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = mu * v[i] + (g1[i] + g2[i]) + static_cast<float>(decay) * w[i];
            w[i] -= static_cast<float>(lr) * v[i];
        }
    };
    for (auto& [name, w] : params_) {
        update(w, velocity_.at(name), ga.params.at(name), gb.params.at(name),
               is_decayed(name) ? config_.weight_decay : 0.0);
    }
    for (const auto& name : norm_.affine_names()) {
        update(norm_.tensors.at(name), velocity_.at(name), ga.norm.at(name), gb.norm.at(name), 0.0);
    }
    return loss.loss;
}

}  // namespace sdclr
