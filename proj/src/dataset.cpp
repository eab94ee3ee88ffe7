#include "sdclr/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include "sdclr/errors.hpp"
#include "sdclr/io.hpp"
#include "sdclr/rng.hpp"

namespace sdclr {

namespace fs = std::filesystem;

std::vector<std::vector<std::size_t>> ImageSet::indices_by_class() const {
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int c = labels[i];
        if (c < 0 || c >= n_classes) throw ContractError("label out of range");
        out[static_cast<std::size_t>(c)].push_back(i);
    }
    return out;
}

Tensor ImageSet::gather(std::span<const std::size_t> indices) const {
    Tensor out({static_cast<int>(indices.size()), channels, height, width});
    const std::size_t stride = image_size();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= size()) throw ContractError("image index out of range");
        std::copy_n(pixels.data() + indices[k] * stride, stride, out.data() + k * stride);
    }
    return out;
}

ImageSet ImageSet::subset(std::span<const std::size_t> indices) const {
    ImageSet out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.n_classes = n_classes;
    const Tensor stacked = gather(indices);
    out.pixels.assign(stacked.values().begin(), stacked.values().end());
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels[i]);
    return out;
}

std::vector<std::size_t> ImageSet::class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
    for (int c : labels) ++counts.at(static_cast<std::size_t>(c));
    return counts;
}

// ---------------------------------------------------------------------------
// Synthetic shapes
// ---------------------------------------------------------------------------

namespace {

// Membership of a point in shape-local coordinates (radius ~1).
bool inside_shape(int shape, double u, double v) {
    const double r = std::hypot(u, v);
    const double box = std::max(std::abs(u), std::abs(v));
    switch (shape) {
        case 0:  // disk
            return r <= 1.0;
        case 1:  // ring
            return r >= 0.55 && r <= 1.0;
        case 2:  // square
            return box <= 0.85;
        case 3:  // hollow square
            return box >= 0.5 && box <= 0.9;
        case 4:  // triangle, apex up
            return v >= -0.5 && v <= 1.0 - std::sqrt(3.0) * std::abs(u);
        case 5:  // plus
            return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) ||
                   (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
        case 6:  // horizontal stripes
            return box <= 1.0 && static_cast<int>(std::floor((v + 1.0) * 2.5)) % 2 == 0;
        case 7:  // checkerboard
            return box <= 1.0 && (static_cast<int>(std::floor((u + 1.0) * 2.0)) +
                                  static_cast<int>(std::floor((v + 1.0) * 2.0))) % 2 == 0;
        case 8: {  // diagonal cross
            const double a = (u + v) / std::numbers::sqrt2;
            const double b = (u - v) / std::numbers::sqrt2;
            return (std::abs(a) <= 0.28 && std::abs(b) <= 1.1) ||
                   (std::abs(b) <= 0.28 && std::abs(a) <= 1.1);
        }
        case 9:  // vertical stripes
            return box <= 1.0 && static_cast<int>(std::floor((u + 1.0) * 2.5)) % 2 == 0;
        default:
            throw InvalidSpec("unknown synthetic shape");
    }
}

std::array<double, 3> random_color(Rng& rng) {
    return {rng.uniform(), rng.uniform(), rng.uniform()};
}

double luminance(const std::array<double, 3>& c) {
    return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
}

void render_shape(int shape, int size, double noise, Rng& rng, float* out) {
    std::array<double, 3> fg = random_color(rng);
    std::array<double, 3> bg = random_color(rng);
    // Keep the pattern visible after grayscale conversion.
    while (std::abs(luminance(fg) - luminance(bg)) < 0.25) {
        fg = random_color(rng);
        bg = random_color(rng);
    }
    const double radius = rng.uniform(0.26, 0.42) * size;
    const double cx = size * 0.5 + rng.uniform(-0.12, 0.12) * size;
    const double cy = size * 0.5 + rng.uniform(-0.12, 0.12) * size;
    const double angle = rng.uniform(-0.3, 0.3);
    const double ca = std::cos(angle);
    const double sa = std::sin(angle);
    const double grad_x = rng.uniform(-0.15, 0.15);
    const double grad_y = rng.uniform(-0.15, 0.15);

    const std::size_t plane = static_cast<std::size_t>(size) * size;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            // 2x2 supersampling for soft edges.
            double coverage = 0.0;
            for (int sy = 0; sy < 2; ++sy) {
                for (int sx = 0; sx < 2; ++sx) {
                    const double px = x + 0.25 + 0.5 * sx - cx;
                    const double py = y + 0.25 + 0.5 * sy - cy;
                    const double u = (ca * px + sa * py) / radius;
                    const double v = (-sa * px + ca * py) / radius;
                    // Image rows grow downward; flip so "up" is up.
                    if (inside_shape(shape, u, -v)) coverage += 0.25;
                }
            }
            const double shade = (x - size * 0.5) / size * grad_x + (y - size * 0.5) / size * grad_y;
            for (int c = 0; c < 3; ++c) {
                double value = coverage * fg[c] + (1.0 - coverage) * (bg[c] + shade);
                value += noise * rng.normal();
                out[c * plane + static_cast<std::size_t>(y) * size + x] =
                    static_cast<float>(std::clamp(value, 0.0, 1.0));
            }
        }
    }
}

ImageSet render_pool(const SyntheticConfig& config, int per_class, std::string_view tag) {
    ImageSet set;
    set.channels = 3;
    set.height = config.image_size;
    set.width = config.image_size;
    set.n_classes = config.n_classes;
    const std::size_t n = static_cast<std::size_t>(per_class) * config.n_classes;
    set.pixels.resize(n * set.image_size());
    set.labels.resize(n);
    // Interleave classes so the pool is not sorted by label.
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % static_cast<std::size_t>(config.n_classes));
        Rng rng(derive_seed(config.seed, tag, i));
        render_shape(label, config.image_size, config.noise, rng,
                     set.pixels.data() + i * set.image_size());
        set.labels[i] = label;
    }
    return set;
}

}  // namespace

SourceDataset make_synthetic_shapes(const SyntheticConfig& config) {
    if (config.n_classes < 2 || config.n_classes > kSyntheticShapeCount) {
        throw InvalidSpec("synthetic.n_classes must be in [2, " +
                          std::to_string(kSyntheticShapeCount) + "]");
    }
    if (config.train_per_class < 1 || config.test_per_class < 1 || config.image_size < 8) {
        throw InvalidSpec("synthetic pool sizes must be positive and image_size >= 8");
    }
    SourceDataset ds;
    ds.name = "shapes" + std::to_string(config.n_classes);
    ds.train = render_pool(config, config.train_per_class, "synthetic/train");
    ds.test = render_pool(config, config.test_per_class, "synthetic/test");
    return ds;
}

// ---------------------------------------------------------------------------
// CIFAR binary archives
// ---------------------------------------------------------------------------

namespace {

constexpr int kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;

void append_cifar_file(const fs::path& file, int label_bytes, int n_classes, ImageSet& set) {
    const std::string bytes = read_file(file);
    const std::size_t record = static_cast<std::size_t>(label_bytes) + kCifarPixels;
    if (bytes.size() % record != 0) {
        throw ContractError(file.string() + ": size is not a multiple of the record length");
    }
    const std::size_t n = bytes.size() / record;
    for (std::size_t r = 0; r < n; ++r) {
        const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data() + r * record);
        // CIFAR-100 records carry (coarse, fine); the fine label is last.
        const int label = rec[label_bytes - 1];
        if (label >= n_classes) throw ContractError(file.string() + ": label out of range");
        set.labels.push_back(label);
        for (std::size_t p = 0; p < kCifarPixels; ++p) {
            set.pixels.push_back(static_cast<float>(rec[label_bytes + p]) / 255.0f);
        }
    }
}

ImageSet empty_cifar_set(int n_classes) {
    ImageSet set;
    set.channels = 3;
    set.height = kCifarSide;
    set.width = kCifarSide;
    set.n_classes = n_classes;
    return set;
}

void require_file(const fs::path& file) {
    if (!fs::exists(file)) {
        throw CapacityError("missing dataset file " + file.string() +
                            " (download the CIFAR binary version from "
                            "https://www.cs.toronto.edu/~kriz/cifar.html and extract it, "
                            "or set SDCLR_DATA_ROOT)");
    }
}

}  // namespace

SourceDataset load_cifar_binary(const fs::path& dir, int n_classes) {
    SourceDataset ds;
    ds.train = empty_cifar_set(n_classes);
    ds.test = empty_cifar_set(n_classes);
    if (n_classes == 10) {
        ds.name = "cifar10";
        for (int b = 1; b <= 5; ++b) {
            const fs::path file = dir / ("data_batch_" + std::to_string(b) + ".bin");
            require_file(file);
            append_cifar_file(file, 1, n_classes, ds.train);
        }
        require_file(dir / "test_batch.bin");
        append_cifar_file(dir / "test_batch.bin", 1, n_classes, ds.test);
    } else if (n_classes == 100) {
        ds.name = "cifar100";
        require_file(dir / "train.bin");
        require_file(dir / "test.bin");
        append_cifar_file(dir / "train.bin", 2, n_classes, ds.train);
        append_cifar_file(dir / "test.bin", 2, n_classes, ds.test);
    } else {
        throw InvalidSpec("CIFAR archives have 10 or 100 classes");
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Array directory
// ---------------------------------------------------------------------------

namespace {

ImageSet load_array_pool(const fs::path& dir, const nlohmann::json& meta, const nlohmann::json& pool) {
    ImageSet set;
    set.channels = meta.at("channels").get<int>();
    set.height = meta.at("height").get<int>();
    set.width = meta.at("width").get<int>();
    set.n_classes = meta.at("n_classes").get<int>();
    const fs::path image_file = dir / pool.at("images").get<std::string>();
    const fs::path label_file = dir / pool.at("labels").get<std::string>();
    require_file(image_file);
    require_file(label_file);
    const std::string images = read_file(image_file);
    const std::string labels = read_file(label_file);
    if (labels.size() % 4 != 0) throw ContractError(label_file.string() + ": expected int32 labels");
    const std::size_t n = labels.size() / 4;
    if (images.size() != n * set.image_size()) {
        throw ContractError(image_file.string() + ": image bytes do not match label count");
    }
    set.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto* p = reinterpret_cast<const unsigned char*>(labels.data() + 4 * i);
        set.labels[i] = static_cast<int>(static_cast<std::uint32_t>(p[0]) |
                                         (static_cast<std::uint32_t>(p[1]) << 8) |
                                         (static_cast<std::uint32_t>(p[2]) << 16) |
                                         (static_cast<std::uint32_t>(p[3]) << 24));
        if (set.labels[i] < 0 || set.labels[i] >= set.n_classes) {
            throw ContractError(label_file.string() + ": label out of range");
        }
    }
    set.pixels.resize(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        set.pixels[i] = static_cast<float>(static_cast<unsigned char>(images[i])) / 255.0f;
    }
    return set;
}

}  // namespace

SourceDataset load_array_dir(const fs::path& dir) {
    require_file(dir / "meta.json");
    const nlohmann::json meta = read_json(dir / "meta.json");
    SourceDataset ds;
    ds.name = meta.value("name", dir.filename().string());
    ds.train = load_array_pool(dir, meta, meta.at("train"));
    ds.test = load_array_pool(dir, meta, meta.at("test"));
    return ds;
}

}  // namespace sdclr
