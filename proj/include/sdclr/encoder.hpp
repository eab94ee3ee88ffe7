#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdclr/rng.hpp"
#include "sdclr/tensor.hpp"

namespace sdclr {

/// Small convolutional backbone plus a two-layer projection head.
///
/// Block b (1-based) is conv{b} (3x3, pad 1, no bias) -> bn{b} -> ReLU, then
/// a 2x2 max pool for every block but the last, which is globally average
/// pooled into the feature vector. The head is
/// head.fc1 -> ReLU -> head.fc2 -> L2 normalization.
struct EncoderSpec {
    int in_channels = 3;
    int image_size = 32;
    std::vector<int> channels{16, 32, 64, 128};
    int proj_hidden = 128;
    int proj_dim = 64;

    int feature_dim() const { return channels.back(); }
    int block_count() const { return static_cast<int>(channels.size()); }
    void validate() const;
};

nlohmann::json to_json(const EncoderSpec& spec);
EncoderSpec encoder_spec_from_json(const nlohmann::json& j);

/// Batch-norm affine parameters and running statistics of every block,
/// keyed "bn{b}.weight", "bn{b}.bias", "bn{b}.running_mean", "bn{b}.running_var".
struct NormState {
    TensorMap tensors;

    bool operator==(const NormState&) const = default;
    /// Names of the learnable entries (weight and bias).
    std::vector<std::string> affine_names() const;
};

enum class Mode { train, eval };

constexpr float kBatchNormEps = 1e-5f;
constexpr float kBatchNormMomentum = 0.1f;

TensorMap init_params(const EncoderSpec& spec, Rng& rng);
NormState init_norm_state(const EncoderSpec& spec);

/// Weight tensors in feed-forward order (conv1 ... convL, head.fc1, head.fc2).
std::vector<std::string> weight_names_in_order(const EncoderSpec& spec, bool include_head);
/// The tensors a pruning mask may cover: backbone conv weights, plus the head
/// weight matrices when `include_head` is set. Biases are never included.
std::vector<std::string> prunable_names(const EncoderSpec& spec, bool include_head);
bool is_decayed(const std::string& name);

struct Gradients {
    TensorMap params;
    /// Gradients of the norm-state affine entries only.
    TensorMap norm;
};

struct BlockCache;

/// Activations retained by a forward pass for the backward pass.
struct ForwardCache {
    std::vector<BlockCache> blocks;
    std::vector<float> pooled;  // N x F backbone features
    std::vector<float> hidden;  // N x H after ReLU
    std::vector<float> raw;     // N x P before normalization
    Mode mode = Mode::train;
    int batch = 0;

    ForwardCache();
    ~ForwardCache();
    ForwardCache(ForwardCache&&) noexcept;
    ForwardCache& operator=(ForwardCache&&) noexcept;
};

struct ForwardPass {
    Tensor features;     // N x feature_dim
    Tensor projections;  // N x proj_dim, unit rows
    ForwardCache cache;
};

class Encoder {
public:
    explicit Encoder(EncoderSpec spec);

    const EncoderSpec& spec() const { return spec_; }

    /// Runs the network. Train mode normalizes with batch statistics and
    /// updates the running statistics in `norm`; eval mode leaves it intact.
    ForwardPass forward(const TensorMap& params, NormState& norm, const Tensor& images, Mode mode,
                        bool with_head = true) const;

    /// Back-propagates d loss / d projections through a pass produced by
    /// forward() with the same params and norm affine values.
    Gradients backward(const TensorMap& params, const NormState& norm, const ForwardPass& pass,
                       const Tensor& d_projections) const;

private:
    EncoderSpec spec_;
};

struct EncodeOutput {
    Tensor features;
    Tensor projections;
    NormState norm_state;
};

/// Functional form: returns the (possibly updated) normalization state
/// instead of mutating the caller's.
EncodeOutput encode(const EncoderSpec& spec, const TensorMap& params, NormState norm_state,
                    const Tensor& images, Mode mode);

void check_params(const EncoderSpec& spec, const TensorMap& params);

}  // namespace sdclr
