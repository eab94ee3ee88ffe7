#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sdclr/tensor.hpp"

namespace sdclr {

/// Labeled images in [0, 1], stored contiguously as N x C x H x W.
struct ImageSet {
    int channels = 3;
    int height = 32;
    int width = 32;
    int n_classes = 0;
    std::vector<float> pixels;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t image_size() const {
        return static_cast<std::size_t>(channels) * height * width;
    }
    std::span<const float> image(std::size_t i) const {
        return {pixels.data() + i * image_size(), image_size()};
    }
    /// Source indices of every class, ascending.
    std::vector<std::vector<std::size_t>> indices_by_class() const;
    /// Stack the selected images into an N x C x H x W tensor.
    Tensor gather(std::span<const std::size_t> indices) const;
    /// Copy of the selected images and labels.
    ImageSet subset(std::span<const std::size_t> indices) const;
    std::vector<std::size_t> class_counts() const;
};

/// The official train pool plus the official test pool of a dataset.
struct SourceDataset {
    std::string name;
    ImageSet train;
    ImageSet test;
};

/// Colored-shape toy classes: each class is one geometric pattern rendered
/// with random colors, pose, and background, so class identity survives
/// color jitter and grayscale augmentation.
struct SyntheticConfig {
    int n_classes = 10;
    int train_per_class = 1000;
    int test_per_class = 200;
    int image_size = 32;
    double noise = 0.04;
    std::uint64_t seed = 0;
};

constexpr int kSyntheticShapeCount = 10;

SourceDataset make_synthetic_shapes(const SyntheticConfig& config);

/// CIFAR-10 (data_batch_{1..5}.bin, test_batch.bin) or CIFAR-100
/// (train.bin, test.bin, fine labels) binary archives.
SourceDataset load_cifar_binary(const std::filesystem::path& dir, int n_classes);

/// Directory holding meta.json plus raw uint8 image and int32 label files.
SourceDataset load_array_dir(const std::filesystem::path& dir);

}  // namespace sdclr
