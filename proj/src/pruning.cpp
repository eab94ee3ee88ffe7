#include "sdclr/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <tuple>

#include <nlohmann/json.hpp>

#include "sdclr/errors.hpp"
#include "sdclr/hashing.hpp"
#include "sdclr/io.hpp"

namespace sdclr {

std::string to_string(PruneScope scope) {
    return scope == PruneScope::global ? "global" : "per_layer";
}

PruneScope prune_scope_from_string(const std::string& s) {
    if (s == "global") return PruneScope::global;
    if (s == "per_layer") return PruneScope::per_layer;
    throw InvalidSpec("unknown prune scope '" + s + "'");
}

std::size_t PruneMask::total() const {
    std::size_t n = 0;
    for (const auto& [name, bits] : keep) n += bits.size();
    return n;
}

std::size_t PruneMask::dropped() const {
    std::size_t n = 0;
    for (const auto& [name, bits] : keep) n += static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 0));
    return n;
}

double PruneMask::zero_fraction() const {
    const std::size_t n = total();
    return n == 0 ? 0.0 : static_cast<double>(dropped()) / static_cast<double>(n);
}

std::string PruneMask::hash() const {
    std::string buf;
    for (const auto& [name, bits] : keep) {
        buf += name;
        buf += '\0';
        buf += shape_string(shapes.at(name));
        buf += '\0';
        buf.append(reinterpret_cast<const char*>(bits.data()), bits.size());
    }
    return sha256_hex(buf);
}

namespace {

void check_ratio(double ratio) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw InvalidParameter("prune ratio must be in [0, 1), got " + std::to_string(ratio));
    }
}

PruneMask skeleton(const TensorMap& params, double ratio, PruneScope scope) {
    if (params.empty()) throw InvalidParameter("pruning needs at least one prunable tensor");
    PruneMask mask;
    mask.target_ratio = ratio;
    mask.scope = scope;
    for (const auto& [name, t] : params) {
        mask.keep.emplace(name, std::vector<std::uint8_t>(t.size(), 1));
        mask.shapes.emplace(name, t.shape());
    }
    return mask;
}

struct Entry {
    float magnitude;
    std::uint32_t tensor;  // position in name order
    std::uint32_t index;
};

bool entry_less(const Entry& a, const Entry& b) {
    return std::tie(a.magnitude, a.tensor, a.index) < std::tie(b.magnitude, b.tensor, b.index);
}

}  // namespace

PruneMask all_ones_mask(const TensorMap& params) {
    return skeleton(params, 0.0, PruneScope::global);
}

PruneMask magnitude_mask(const TensorMap& params, double ratio, PruneScope scope) {
    check_ratio(ratio);
    PruneMask mask = skeleton(params, ratio, scope);

    std::vector<std::vector<std::uint8_t>*> bits;
    std::vector<const Tensor*> tensors;
    for (auto& [name, b] : mask.keep) {
        bits.push_back(&b);
        tensors.push_back(&params.at(name));
    }

    auto drop_smallest = [&](std::vector<Entry>& entries) {
        const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(entries.size())));
        if (k == 0) return;
        std::nth_element(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(k - 1), entries.end(),
                         entry_less);
        for (std::size_t i = 0; i < k; ++i) (*bits[entries[i].tensor])[entries[i].index] = 0;
    };

    auto collect = [&](std::size_t t, std::vector<Entry>& out) {
        const auto values = tensors[t]->values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            out.push_back({std::abs(values[i]), static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(i)});
        }
    };

    if (scope == PruneScope::global) {
        std::vector<Entry> entries;
        entries.reserve(mask.total());
        for (std::size_t t = 0; t < tensors.size(); ++t) collect(t, entries);
        drop_smallest(entries);
    } else {
        for (std::size_t t = 0; t < tensors.size(); ++t) {
            std::vector<Entry> entries;
            entries.reserve(tensors[t]->size());
            collect(t, entries);
            drop_smallest(entries);
        }
    }
    return mask;
}

PruneMask random_dropout_mask(const TensorMap& params, double ratio, Rng& rng) {
    check_ratio(ratio);
    PruneMask mask = skeleton(params, ratio, PruneScope::global);
    for (auto& [name, bits] : mask.keep) {
        for (auto& b : bits) b = rng.uniform() < ratio ? 0 : 1;
    }
    return mask;
}

void apply_mask_inplace(TensorMap& params, const PruneMask& mask) {
    for (const auto& [name, bits] : mask.keep) {
        auto it = params.find(name);
        if (it == params.end()) throw ContractError("mask names tensor '" + name + "' absent from params");
        if (it->second.shape() != mask.shapes.at(name) || it->second.size() != bits.size()) {
            throw ContractError("mask shape " + shape_string(mask.shapes.at(name)) + " does not match '" + name +
                                "' " + shape_string(it->second.shape()));
        }
        auto values = it->second.values();
        for (std::size_t i = 0; i < bits.size(); ++i) {
            if (!bits[i]) values[i] = 0.0f;
        }
    }
}

TensorMap apply_mask(const TensorMap& params, const PruneMask& mask) {
    TensorMap out = params;
    apply_mask_inplace(out, mask);
    return out;
}

SparsityReport layerwise_sparsity(const PruneMask& mask, const std::vector<std::string>& order) {
    SparsityReport report;
    std::vector<std::string> names;
    for (const auto& name : order) {
        if (mask.keep.count(name)) names.push_back(name);
    }
    for (const auto& [name, bits] : mask.keep) {
        if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
    }
    std::size_t zeros = 0;
    std::size_t total = 0;
    for (const auto& name : names) {
        const auto& bits = mask.keep.at(name);
        const auto z = static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 0));
        report.layers.emplace_back(name, bits.empty() ? 0.0 : static_cast<double>(z) / bits.size());
        report.layer_sizes.push_back(bits.size());
        zeros += z;
        total += bits.size();
    }
    report.overall = total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
    return report;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'D', 'C', 'L', 'R', 'M', 'S', 'K'};

}  // namespace

std::string serialize_mask(const PruneMask& mask) {
    nlohmann::json header;
    header["ratio"] = mask.target_ratio;
    header["scope"] = to_string(mask.scope);
    header["epoch"] = mask.epoch_created;
    header["tensors"] = nlohmann::json::array();
    std::string payload;
    for (const auto& [name, bits] : mask.keep) {
        header["tensors"].push_back({{"name", name},
                                     {"shape", mask.shapes.at(name)},
                                     {"offset", payload.size()},
                                     {"count", bits.size()}});
        std::string packed((bits.size() + 7) / 8, '\0');
        for (std::size_t i = 0; i < bits.size(); ++i) {
            if (bits[i]) packed[i / 8] = static_cast<char>(packed[i / 8] | (1 << (i % 8)));
        }
        payload += packed;
    }
    const std::string h = header.dump();
    std::string out(kMagic, sizeof(kMagic));
    const auto len = static_cast<std::uint32_t>(h.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
    out += h;
    out += payload;
    return out;
}

PruneMask deserialize_mask(const std::string& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw ContractError("not a mask file");
    }
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) {
        len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + static_cast<std::size_t>(i)])) << (8 * i);
    }
    if (bytes.size() < 12 + static_cast<std::size_t>(len)) throw ContractError("truncated mask header");
    const auto header = nlohmann::json::parse(bytes.substr(12, len));
    const std::size_t payload = 12 + static_cast<std::size_t>(len);
    PruneMask mask;
    mask.target_ratio = header.at("ratio").get<double>();
    mask.scope = prune_scope_from_string(header.at("scope").get<std::string>());
    mask.epoch_created = header.at("epoch").get<int>();
    for (const auto& t : header.at("tensors")) {
        const auto name = t.at("name").get<std::string>();
        const auto shape = t.at("shape").get<std::vector<int>>();
        const auto offset = t.at("offset").get<std::size_t>();
        const auto count = t.at("count").get<std::size_t>();
        if (count != element_count(shape)) throw ContractError("mask count does not match shape for " + name);
        if (payload + offset + (count + 7) / 8 > bytes.size()) throw ContractError("truncated mask payload");
        std::vector<std::uint8_t> bits(count);
        for (std::size_t i = 0; i < count; ++i) {
            bits[i] = (static_cast<unsigned char>(bytes[payload + offset + i / 8]) >> (i % 8)) & 1;
        }
        mask.keep.emplace(name, std::move(bits));
        mask.shapes.emplace(name, shape);
    }
    return mask;
}

void write_mask(const std::filesystem::path& path, const PruneMask& mask) {
    write_file_atomic(path, serialize_mask(mask));
}

PruneMask read_mask(const std::filesystem::path& path) { return deserialize_mask(read_file(path)); }

}  // namespace sdclr
