#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sdclr/rng.hpp"
#include "sdclr/tensor.hpp"

namespace sdclr {

enum class PruneScope { global, per_layer };

std::string to_string(PruneScope scope);
PruneScope prune_scope_from_string(const std::string& s);

/// Binary keep (1) / drop (0) masks keyed by parameter name.
struct PruneMask {
    std::map<std::string, std::vector<std::uint8_t>> keep;
    std::map<std::string, std::vector<int>> shapes;
    double target_ratio = 0.0;
    PruneScope scope = PruneScope::global;
    int epoch_created = 0;

    std::size_t total() const;
    std::size_t dropped() const;
    double zero_fraction() const;
    /// SHA-256 over names, shapes and bits (not the bookkeeping fields).
    std::string hash() const;

    bool operator==(const PruneMask&) const = default;
};

/// Mask that keeps everything in `params`.
PruneMask all_ones_mask(const TensorMap& params);

/// Drops the floor(ratio * n) smallest-magnitude weights, pooled across all
/// tensors (global) or within each tensor (per_layer). Equal magnitudes are
/// dropped in ascending (tensor name, flat index) order. Every tensor in
/// `params` is treated as prunable.
PruneMask magnitude_mask(const TensorMap& params, double ratio, PruneScope scope = PruneScope::global);

/// Drops each weight independently with probability `ratio`.
PruneMask random_dropout_mask(const TensorMap& params, double ratio, Rng& rng);

/// Zeroes masked entries of the named tensors; others pass through untouched.
TensorMap apply_mask(const TensorMap& params, const PruneMask& mask);
void apply_mask_inplace(TensorMap& params, const PruneMask& mask);

struct SparsityReport {
    std::vector<std::pair<std::string, double>> layers;  // (name, zero fraction)
    std::vector<std::size_t> layer_sizes;
    double overall = 0.0;
};

/// Per-layer zero fractions in `order` (feed-forward), then any remaining
/// mask entries in name order.
SparsityReport layerwise_sparsity(const PruneMask& mask, const std::vector<std::string>& order = {});

/// Binary mask file: magic "SDCLRMSK", uint32 LE header length, JSON header
/// (names, shapes, ratio, scope, epoch, byte offsets), then each tensor's
/// bits packed LSB-first and padded to a whole byte.
void write_mask(const std::filesystem::path& path, const PruneMask& mask);
PruneMask read_mask(const std::filesystem::path& path);
std::string serialize_mask(const PruneMask& mask);
PruneMask deserialize_mask(const std::string& bytes);

}  // namespace sdclr
