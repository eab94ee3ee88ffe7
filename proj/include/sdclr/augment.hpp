#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdclr/rng.hpp"
#include "sdclr/tensor.hpp"

namespace sdclr {

enum class TransformKind { random_resized_crop, horizontal_flip, color_jitter, grayscale };

/// One stochastic step of an augmentation chain, applied with `probability`.
struct Transform {
    TransformKind kind = TransformKind::horizontal_flip;
    double probability = 1.0;
    // random_resized_crop
    double scale_min = 0.08;
    double scale_max = 1.0;
    double ratio_min = 3.0 / 4.0;
    double ratio_max = 4.0 / 3.0;
    // color_jitter
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.4;
    double hue = 0.1;
};

struct AugmentationChain {
    std::vector<Transform> steps;

    static AugmentationChain identity() { return {}; }
    /// Crop, flip, color jitter (p 0.8), grayscale (p 0.2).
    static AugmentationChain simclr(double crop_scale_min = 0.08, double jitter_strength = 0.5);
};

nlohmann::json to_json(const AugmentationChain& chain);
AugmentationChain chain_from_json(const nlohmann::json& j);

/// Single C x H x W image with values in [0, 1].
struct ImageView {
    int channels;
    int height;
    int width;
    std::span<const float> pixels;
};

/// Apply the chain; the result has the input's shape and stays in [0, 1].
std::vector<float> augment(const ImageView& image, const AugmentationChain& chain, Rng& rng);

/// Two independently augmented views of every image in an N x C x H x W batch.
/// For each image the first view is drawn before the second from `rng`.
std::pair<Tensor, Tensor> make_views(const Tensor& images, const AugmentationChain& chain, Rng& rng);

}  // namespace sdclr
