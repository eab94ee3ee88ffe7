#include "sdclr/encoder.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "sdclr/errors.hpp"

namespace sdclr {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

// Activations inside the backbone are laid out channel-major, C x N x H x W,
// so every channel is one contiguous row for the GEMMs and batch norm.
struct BlockCache {
    int cin = 0;
    int cout = 0;
    int height = 0;
    int width = 0;
    bool pooled = false;
    std::vector<float> cols;      // (cin * 9) x (N * H * W)
    std::vector<float> xhat;      // cout x (N * H * W)
    std::vector<float> inv_std;   // cout
    std::vector<float> relu_out;  // cout x (N * H * W)
    std::vector<int> argmax;      // cout x N x H/2 x W/2, offsets into relu_out
};

ForwardCache::ForwardCache() = default;
ForwardCache::~ForwardCache() = default;
ForwardCache::ForwardCache(ForwardCache&&) noexcept = default;
ForwardCache& ForwardCache::operator=(ForwardCache&&) noexcept = default;

namespace {

std::string conv_name(int b) { return "conv" + std::to_string(b) + ".weight"; }
std::string bn_prefix(int b) { return "bn" + std::to_string(b); }

const Tensor& get(const TensorMap& m, const std::string& name) {
    auto it = m.find(name);
    if (it == m.end()) throw ContractError("missing tensor '" + name + "'");
    return it->second;
}

Tensor& get(TensorMap& m, const std::string& name) {
    auto it = m.find(name);
    if (it == m.end()) throw ContractError("missing tensor '" + name + "'");
    return it->second;
}

void im2col(const std::vector<float>& in, int cin, int n, int h, int w, std::vector<float>& cols) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t m = static_cast<std::size_t>(n) * plane;
    cols.assign(static_cast<std::size_t>(cin) * 9 * m, 0.0f);
    for (int c = 0; c < cin; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                float* row = cols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * m;
                for (int b = 0; b < n; ++b) {
                    const float* src = in.data() + (static_cast<std::size_t>(c) * n + b) * plane;
                    float* dst = row + static_cast<std::size_t>(b) * plane;
                    for (int y = 0; y < h; ++y) {
                        const int sy = y + ky - 1;
                        if (sy < 0 || sy >= h) continue;
                        const int x0 = std::max(0, 1 - kx);
                        const int x1 = std::min(w, w + 1 - kx);
                        const float* s = src + static_cast<std::size_t>(sy) * w + (kx - 1);
                        float* d = dst + static_cast<std::size_t>(y) * w;
                        for (int x = x0; x < x1; ++x) d[x] = s[x];
                    }
                }
            }
        }
    }
}

void col2im(const std::vector<float>& cols, int cin, int n, int h, int w, std::vector<float>& out) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t m = static_cast<std::size_t>(n) * plane;
    out.assign(static_cast<std::size_t>(cin) * m, 0.0f);
    for (int c = 0; c < cin; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const float* row = cols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * m;
                for (int b = 0; b < n; ++b) {
                    float* dst = out.data() + (static_cast<std::size_t>(c) * n + b) * plane;
                    const float* src = row + static_cast<std::size_t>(b) * plane;
                    for (int y = 0; y < h; ++y) {
                        const int sy = y + ky - 1;
                        if (sy < 0 || sy >= h) continue;
                        const int x0 = std::max(0, 1 - kx);
                        const int x1 = std::min(w, w + 1 - kx);
                        float* d = dst + static_cast<std::size_t>(sy) * w + (kx - 1);
                        const float* s = src + static_cast<std::size_t>(y) * w;
                        for (int x = x0; x < x1; ++x) d[x] += s[x];
                    }
                }
            }
        }
    }
}

}  // namespace

void EncoderSpec::validate() const {
    if (in_channels < 1) throw InvalidSpec("model.in_channels must be >= 1");
    if (channels.empty()) throw InvalidSpec("model.channels must name at least one block");
    for (int c : channels) {
        if (c < 1) throw InvalidSpec("model.channels entries must be >= 1");
    }
    if (proj_hidden < 1 || proj_dim < 1) throw InvalidSpec("model projection dims must be >= 1");
    const int shrink = 1 << (block_count() - 1);
    if (image_size < shrink || image_size % shrink != 0) {
        throw InvalidSpec("model.image_size must be divisible by 2^(blocks - 1)");
    }
}

nlohmann::json to_json(const EncoderSpec& spec) {
    return {{"in_channels", spec.in_channels},
            {"image_size", spec.image_size},
            {"channels", spec.channels},
            {"proj_hidden", spec.proj_hidden},
            {"proj_dim", spec.proj_dim}};
}

EncoderSpec encoder_spec_from_json(const nlohmann::json& j) {
    EncoderSpec s;
    s.in_channels = j.value("in_channels", s.in_channels);
    s.image_size = j.value("image_size", s.image_size);
    s.channels = j.value("channels", s.channels);
    s.proj_hidden = j.value("proj_hidden", s.proj_hidden);
    s.proj_dim = j.value("proj_dim", s.proj_dim);
    s.validate();
    return s;
}

std::vector<std::string> NormState::affine_names() const {
    std::vector<std::string> out;
    for (const auto& [name, t] : tensors) {
        if (name.ends_with(".weight") || name.ends_with(".bias")) out.push_back(name);
    }
    return out;
}

TensorMap init_params(const EncoderSpec& spec, Rng& rng) {
    spec.validate();
    TensorMap params;
    int cin = spec.in_channels;
    for (int b = 1; b <= spec.block_count(); ++b) {
        const int cout = spec.channels[static_cast<std::size_t>(b - 1)];
        Tensor w({cout, cin, 3, 3});
        const double std_dev = std::sqrt(2.0 / (cin * 9.0));
        for (auto& v : w.values()) v = static_cast<float>(std_dev * rng.normal());
        params.emplace(conv_name(b), std::move(w));
        cin = cout;
    }
    auto linear = [&](const std::string& prefix, int out, int in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        Tensor w({out, in});
        for (auto& v : w.values()) v = static_cast<float>(rng.uniform(-bound, bound));
        Tensor b({out});
        for (auto& v : b.values()) v = static_cast<float>(rng.uniform(-bound, bound));
        params.emplace(prefix + ".weight", std::move(w));
        params.emplace(prefix + ".bias", std::move(b));
    };
    linear("head.fc1", spec.proj_hidden, spec.feature_dim());
    linear("head.fc2", spec.proj_dim, spec.proj_hidden);
    return params;
}

NormState init_norm_state(const EncoderSpec& spec) {
    NormState ns;
    for (int b = 1; b <= spec.block_count(); ++b) {
        const int c = spec.channels[static_cast<std::size_t>(b - 1)];
        ns.tensors.emplace(bn_prefix(b) + ".weight", Tensor({c}, 1.0f));
        ns.tensors.emplace(bn_prefix(b) + ".bias", Tensor({c}, 0.0f));
        ns.tensors.emplace(bn_prefix(b) + ".running_mean", Tensor({c}, 0.0f));
        ns.tensors.emplace(bn_prefix(b) + ".running_var", Tensor({c}, 1.0f));
    }
    return ns;
}

std::vector<std::string> weight_names_in_order(const EncoderSpec& spec, bool include_head) {
    std::vector<std::string> out;
    for (int b = 1; b <= spec.block_count(); ++b) out.push_back(conv_name(b));
    if (include_head) {
        out.emplace_back("head.fc1.weight");
        out.emplace_back("head.fc2.weight");
    }
    return out;
}

std::vector<std::string> prunable_names(const EncoderSpec& spec, bool include_head) {
    return weight_names_in_order(spec, include_head);
}

bool is_decayed(const std::string& name) {
    return name.ends_with(".weight") && !name.starts_with("bn");
}

void check_params(const EncoderSpec& spec, const TensorMap& params) {
    int cin = spec.in_channels;
    for (int b = 1; b <= spec.block_count(); ++b) {
        const int cout = spec.channels[static_cast<std::size_t>(b - 1)];
        const std::vector<int> want{cout, cin, 3, 3};
        if (get(params, conv_name(b)).shape() != want) {
            throw ContractError(conv_name(b) + " has shape " + shape_string(get(params, conv_name(b)).shape()) +
                                ", expected " + shape_string(want));
        }
        cin = cout;
    }
    auto expect = [&](const std::string& name, std::vector<int> shape) {
        if (get(params, name).shape() != shape) {
            throw ContractError(name + " has shape " + shape_string(get(params, name).shape()) +
                                ", expected " + shape_string(shape));
        }
    };
    expect("head.fc1.weight", {spec.proj_hidden, spec.feature_dim()});
    expect("head.fc1.bias", {spec.proj_hidden});
    expect("head.fc2.weight", {spec.proj_dim, spec.proj_hidden});
    expect("head.fc2.bias", {spec.proj_dim});
}

Encoder::Encoder(EncoderSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

ForwardPass Encoder::forward(const TensorMap& params, NormState& norm, const Tensor& images, Mode mode,
                             bool with_head) const {
    if (images.rank() != 4 || images.dim(1) != spec_.in_channels || images.dim(2) != spec_.image_size ||
        images.dim(3) != spec_.image_size) {
        throw ContractError("encoder expects N x " + std::to_string(spec_.in_channels) + " x " +
                            std::to_string(spec_.image_size) + " x " + std::to_string(spec_.image_size) +
                            " images, got " + shape_string(images.shape()));
    }
    const int n = images.dim(0);
    if (n < 1) throw ContractError("encoder needs a non-empty batch");
    if (mode == Mode::train && n < 2) throw ContractError("train-mode batch norm needs at least 2 images");

    ForwardPass pass;
    ForwardCache& cache = pass.cache;
    cache.mode = mode;
    cache.batch = n;
    cache.blocks.resize(static_cast<std::size_t>(spec_.block_count()));

    // NCHW -> CNHW
    int h = spec_.image_size;
    int w = spec_.image_size;
    int cin = spec_.in_channels;
    std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<float> act(images.size());
    for (int b = 0; b < n; ++b) {
        for (int c = 0; c < cin; ++c) {
            std::copy_n(images.data() + (static_cast<std::size_t>(b) * cin + c) * plane, plane,
                        act.data() + (static_cast<std::size_t>(c) * n + b) * plane);
        }
    }

    for (int blk = 1; blk <= spec_.block_count(); ++blk) {
        BlockCache& bc = cache.blocks[static_cast<std::size_t>(blk - 1)];
        const int cout = spec_.channels[static_cast<std::size_t>(blk - 1)];
        bc.cin = cin;
        bc.cout = cout;
        bc.height = h;
        bc.width = w;
        bc.pooled = blk < spec_.block_count();
        plane = static_cast<std::size_t>(h) * w;
        const std::size_t m = static_cast<std::size_t>(n) * plane;
        const int k = cin * 9;

        im2col(act, cin, n, h, w, bc.cols);
        const Tensor& weight = get(params, conv_name(blk));
        if (weight.shape() != std::vector<int>{cout, cin, 3, 3}) {
            throw ContractError(conv_name(blk) + " shape mismatch");
        }
        std::vector<float> conv(static_cast<std::size_t>(cout) * m);
        MatMap(conv.data(), cout, static_cast<Eigen::Index>(m)).noalias() =
            ConstMatMap(weight.data(), cout, k) * ConstMatMap(bc.cols.data(), k, static_cast<Eigen::Index>(m));

        // Batch norm + ReLU.
        const std::string pre = bn_prefix(blk);
        const Tensor& gamma = get(norm.tensors, pre + ".weight");
        const Tensor& beta = get(norm.tensors, pre + ".bias");
        Tensor& run_mean = get(norm.tensors, pre + ".running_mean");
        Tensor& run_var = get(norm.tensors, pre + ".running_var");
        bc.xhat.resize(conv.size());
        bc.inv_std.resize(static_cast<std::size_t>(cout));
        bc.relu_out.resize(conv.size());
        for (int c = 0; c < cout; ++c) {
            const float* x = conv.data() + static_cast<std::size_t>(c) * m;
            double mean;
            double var;
            if (mode == Mode::train) {
                double s = 0.0;
                for (std::size_t i = 0; i < m; ++i) s += x[i];
                mean = s / static_cast<double>(m);
                double ss = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double d = x[i] - mean;
                    ss += d * d;
                }
                var = ss / static_cast<double>(m);
                const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
                run_mean[static_cast<std::size_t>(c)] = static_cast<float>(
                    (1.0 - kBatchNormMomentum) * run_mean[static_cast<std::size_t>(c)] + kBatchNormMomentum * mean);
                run_var[static_cast<std::size_t>(c)] = static_cast<float>(
                    (1.0 - kBatchNormMomentum) * run_var[static_cast<std::size_t>(c)] + kBatchNormMomentum * unbiased);
            } else {
                mean = run_mean[static_cast<std::size_t>(c)];
                var = run_var[static_cast<std::size_t>(c)];
            }
            const float inv_std = static_cast<float>(1.0 / std::sqrt(var + kBatchNormEps));
            bc.inv_std[static_cast<std::size_t>(c)] = inv_std;
            const float g = gamma[static_cast<std::size_t>(c)];
            const float bt = beta[static_cast<std::size_t>(c)];
            const float mu = static_cast<float>(mean);
            float* xh = bc.xhat.data() + static_cast<std::size_t>(c) * m;
            float* y = bc.relu_out.data() + static_cast<std::size_t>(c) * m;
            for (std::size_t i = 0; i < m; ++i) {
                xh[i] = (x[i] - mu) * inv_std;
                y[i] = std::max(0.0f, g * xh[i] + bt);
            }
        }

        if (bc.pooled) {
            const int ho = h / 2;
            const int wo = w / 2;
            const std::size_t oplane = static_cast<std::size_t>(ho) * wo;
            act.assign(static_cast<std::size_t>(cout) * n * oplane, 0.0f);
            bc.argmax.resize(act.size());
            for (int c = 0; c < cout; ++c) {
                for (int b = 0; b < n; ++b) {
                    const std::size_t in_base = (static_cast<std::size_t>(c) * n + b) * plane;
                    const std::size_t out_base = (static_cast<std::size_t>(c) * n + b) * oplane;
                    for (int y = 0; y < ho; ++y) {
                        for (int x = 0; x < wo; ++x) {
                            std::size_t best = in_base + static_cast<std::size_t>(2 * y) * w + 2 * x;
                            float bv = bc.relu_out[best];
                            for (int dy = 0; dy < 2; ++dy) {
                                for (int dx = 0; dx < 2; ++dx) {
                                    const std::size_t idx =
                                        in_base + static_cast<std::size_t>(2 * y + dy) * w + 2 * x + dx;
                                    if (bc.relu_out[idx] > bv) {
                                        bv = bc.relu_out[idx];
                                        best = idx;
                                    }
                                }
                            }
                            const std::size_t o = out_base + static_cast<std::size_t>(y) * wo + x;
                            act[o] = bv;
                            bc.argmax[o] = static_cast<int>(best);
                        }
                    }
                }
            }
            h = ho;
            w = wo;
        } else {
            cache.pooled.assign(static_cast<std::size_t>(n) * cout, 0.0f);
            for (int c = 0; c < cout; ++c) {
                for (int b = 0; b < n; ++b) {
                    const float* y = bc.relu_out.data() + (static_cast<std::size_t>(c) * n + b) * plane;
                    double s = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) s += y[i];
                    cache.pooled[static_cast<std::size_t>(b) * cout + c] = static_cast<float>(s / plane);
                }
            }
        }
        cin = cout;
    }

    const int f = spec_.feature_dim();
    pass.features = Tensor({n, f}, cache.pooled);
    if (!with_head) return pass;

    const Tensor& w1 = get(params, "head.fc1.weight");
    const Tensor& b1 = get(params, "head.fc1.bias");
    const Tensor& w2 = get(params, "head.fc2.weight");
    const Tensor& b2 = get(params, "head.fc2.bias");
    const int hid = spec_.proj_hidden;
    const int pd = spec_.proj_dim;
    if (w1.shape() != std::vector<int>{hid, f} || w2.shape() != std::vector<int>{pd, hid}) {
        throw ContractError("projection head shape mismatch");
    }
    cache.hidden.resize(static_cast<std::size_t>(n) * hid);
    MatMap hidden(cache.hidden.data(), n, hid);
    hidden.noalias() = ConstMatMap(cache.pooled.data(), n, f) * ConstMatMap(w1.data(), hid, f).transpose();
    for (int b = 0; b < n; ++b) {
        for (int j = 0; j < hid; ++j) hidden(b, j) = std::max(0.0f, hidden(b, j) + b1[static_cast<std::size_t>(j)]);
    }
    cache.raw.resize(static_cast<std::size_t>(n) * pd);
    MatMap raw(cache.raw.data(), n, pd);
    raw.noalias() = hidden * ConstMatMap(w2.data(), pd, hid).transpose();
    Tensor proj({n, pd});
    for (int b = 0; b < n; ++b) {
        double ss = 0.0;
        for (int j = 0; j < pd; ++j) {
            raw(b, j) += b2[static_cast<std::size_t>(j)];
            ss += static_cast<double>(raw(b, j)) * raw(b, j);
        }
        const double inv = 1.0 / std::max(std::sqrt(ss), 1e-12);
        for (int j = 0; j < pd; ++j) {
            proj[static_cast<std::size_t>(b) * pd + j] = static_cast<float>(raw(b, j) * inv);
        }
    }
    pass.projections = std::move(proj);
    return pass;
}

Gradients Encoder::backward(const TensorMap& params, const NormState& norm, const ForwardPass& pass,
                            const Tensor& d_projections) const {
    const ForwardCache& cache = pass.cache;
    const int n = cache.batch;
    const int f = spec_.feature_dim();
    const int hid = spec_.proj_hidden;
    const int pd = spec_.proj_dim;
    if (cache.raw.empty()) throw ContractError("backward needs a forward pass that ran the head");
    if (d_projections.shape() != std::vector<int>{n, pd}) {
        throw ContractError("d_projections has shape " + shape_string(d_projections.shape()));
    }
    Gradients grads;

    // L2 normalization: dz = (dp - p (p . dp)) / |z|
    RowMatrix d_raw(n, pd);
    for (int b = 0; b < n; ++b) {
        const float* z = cache.raw.data() + static_cast<std::size_t>(b) * pd;
        const float* p = pass.projections.data() + static_cast<std::size_t>(b) * pd;
        const float* dp = d_projections.data() + static_cast<std::size_t>(b) * pd;
        double ss = 0.0;
        double pdp = 0.0;
        for (int j = 0; j < pd; ++j) {
            ss += static_cast<double>(z[j]) * z[j];
            pdp += static_cast<double>(p[j]) * dp[j];
        }
        const double inv = 1.0 / std::max(std::sqrt(ss), 1e-12);
        for (int j = 0; j < pd; ++j) d_raw(b, j) = static_cast<float>((dp[j] - p[j] * pdp) * inv);
    }

    const Tensor& w1 = get(params, "head.fc1.weight");
    const Tensor& w2 = get(params, "head.fc2.weight");
    ConstMatMap hidden(cache.hidden.data(), n, hid);
    ConstMatMap pooled(cache.pooled.data(), n, f);

    Tensor dw2({pd, hid});
    MatMap(dw2.data(), pd, hid).noalias() = d_raw.transpose() * hidden;
    Tensor db2({pd});
    for (int j = 0; j < pd; ++j) db2[static_cast<std::size_t>(j)] = d_raw.col(j).sum();

    RowMatrix d_hidden = d_raw * ConstMatMap(w2.data(), pd, hid);
    for (int b = 0; b < n; ++b) {
        for (int j = 0; j < hid; ++j) {
            if (hidden(b, j) <= 0.0f) d_hidden(b, j) = 0.0f;
        }
    }
    Tensor dw1({hid, f});
    MatMap(dw1.data(), hid, f).noalias() = d_hidden.transpose() * pooled;
    Tensor db1({hid});
    for (int j = 0; j < hid; ++j) db1[static_cast<std::size_t>(j)] = d_hidden.col(j).sum();
    RowMatrix d_pooled = d_hidden * ConstMatMap(w1.data(), hid, f);

    grads.params.emplace("head.fc1.weight", std::move(dw1));
    grads.params.emplace("head.fc1.bias", std::move(db1));
    grads.params.emplace("head.fc2.weight", std::move(dw2));
    grads.params.emplace("head.fc2.bias", std::move(db2));

    // Gradient w.r.t. the current block's (pooled) output, CNHW layout.
    std::vector<float> d_act;
    for (int blk = spec_.block_count(); blk >= 1; --blk) {
        const BlockCache& bc = cache.blocks[static_cast<std::size_t>(blk - 1)];
        const int cout = bc.cout;
        const std::size_t plane = static_cast<std::size_t>(bc.height) * bc.width;
        const std::size_t m = static_cast<std::size_t>(n) * plane;

        std::vector<float> d_y(static_cast<std::size_t>(cout) * m, 0.0f);
        if (!bc.pooled) {
            const float scale = 1.0f / static_cast<float>(plane);
            for (int c = 0; c < cout; ++c) {
                for (int b = 0; b < n; ++b) {
                    const float g = d_pooled(b, c) * scale;
                    float* dst = d_y.data() + (static_cast<std::size_t>(c) * n + b) * plane;
                    for (std::size_t i = 0; i < plane; ++i) dst[i] = g;
                }
            }
        } else {
            for (std::size_t o = 0; o < d_act.size(); ++o) d_y[static_cast<std::size_t>(bc.argmax[o])] += d_act[o];
        }

        const std::string pre = bn_prefix(blk);
        const Tensor& gamma = get(norm.tensors, pre + ".weight");
        Tensor d_gamma({cout});
        Tensor d_beta({cout});
        std::vector<float> d_conv(d_y.size());
        for (int c = 0; c < cout; ++c) {
            const std::size_t base = static_cast<std::size_t>(c) * m;
            const float* y = bc.relu_out.data() + base;
            const float* xh = bc.xhat.data() + base;
            float* dy = d_y.data() + base;
            double sum_dy = 0.0;
            double sum_dy_xh = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                if (y[i] <= 0.0f) dy[i] = 0.0f;
                sum_dy += dy[i];
                sum_dy_xh += static_cast<double>(dy[i]) * xh[i];
            }
            d_gamma[static_cast<std::size_t>(c)] = static_cast<float>(sum_dy_xh);
            d_beta[static_cast<std::size_t>(c)] = static_cast<float>(sum_dy);
            const float g = gamma[static_cast<std::size_t>(c)];
            const float is = bc.inv_std[static_cast<std::size_t>(c)];
            float* dx = d_conv.data() + base;
            if (cache.mode == Mode::train) {
                const float mean_dy = static_cast<float>(sum_dy / static_cast<double>(m));
                const float mean_dy_xh = static_cast<float>(sum_dy_xh / static_cast<double>(m));
                for (std::size_t i = 0; i < m; ++i) dx[i] = g * is * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
            } else {
                for (std::size_t i = 0; i < m; ++i) dx[i] = g * is * dy[i];
            }
        }
        grads.norm.emplace(pre + ".weight", std::move(d_gamma));
        grads.norm.emplace(pre + ".bias", std::move(d_beta));

        const int k = bc.cin * 9;
        ConstMatMap dconv(d_conv.data(), cout, static_cast<Eigen::Index>(m));
        Tensor dw({cout, bc.cin, 3, 3});
        MatMap(dw.data(), cout, k).noalias() =
            dconv * ConstMatMap(bc.cols.data(), k, static_cast<Eigen::Index>(m)).transpose();
        grads.params.emplace(conv_name(blk), std::move(dw));

        if (blk > 1) {
            const Tensor& weight = get(params, conv_name(blk));
            std::vector<float> d_cols(static_cast<std::size_t>(k) * m);
            MatMap(d_cols.data(), k, static_cast<Eigen::Index>(m)).noalias() =
                ConstMatMap(weight.data(), cout, k).transpose() * dconv;
            col2im(d_cols, bc.cin, n, bc.height, bc.width, d_act);
            // d_act now matches the previous block's pooled output.
        }
    }
    return grads;
}

EncodeOutput encode(const EncoderSpec& spec, const TensorMap& params, NormState norm_state,
                    const Tensor& images, Mode mode) {
    Encoder enc(spec);
    check_params(spec, params);
    auto pass = enc.forward(params, norm_state, images, mode);
    return {std::move(pass.features), std::move(pass.projections), std::move(norm_state)};
}

}  // namespace sdclr
