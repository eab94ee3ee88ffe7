#include "sdclr/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "sdclr/errors.hpp"

namespace sdclr {

AugmentationChain AugmentationChain::simclr(double crop_scale_min, double jitter_strength) {
    AugmentationChain chain;
    Transform crop;
    crop.kind = TransformKind::random_resized_crop;
    crop.scale_min = crop_scale_min;
    chain.steps.push_back(crop);

    Transform flip;
    flip.kind = TransformKind::horizontal_flip;
    flip.probability = 0.5;
    chain.steps.push_back(flip);

    Transform jitter;
    jitter.kind = TransformKind::color_jitter;
    jitter.probability = 0.8;
    jitter.brightness = 0.8 * jitter_strength;
    jitter.contrast = 0.8 * jitter_strength;
    jitter.saturation = 0.8 * jitter_strength;
    jitter.hue = 0.2 * jitter_strength;
    chain.steps.push_back(jitter);

    Transform gray;
    gray.kind = TransformKind::grayscale;
    gray.probability = 0.2;
    chain.steps.push_back(gray);
    return chain;
}

namespace {

const char* kind_name(TransformKind k) {
    switch (k) {
        case TransformKind::random_resized_crop: return "random_resized_crop";
        case TransformKind::horizontal_flip: return "horizontal_flip";
        case TransformKind::color_jitter: return "color_jitter";
        case TransformKind::grayscale: return "grayscale";
    }
    return "?";
}

TransformKind kind_from(const std::string& s) {
    if (s == "random_resized_crop") return TransformKind::random_resized_crop;
    if (s == "horizontal_flip") return TransformKind::horizontal_flip;
    if (s == "color_jitter") return TransformKind::color_jitter;
    if (s == "grayscale") return TransformKind::grayscale;
    throw InvalidSpec("augmentation: unknown transform '" + s + "'");
}

using Planes = std::vector<float>;

struct Img {
    int c, h, w;
    Planes px;
    float& at(int ch, int y, int x) { return px[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
    float at(int ch, int y, int x) const { return px[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
};

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// Bilinear resample of the window [top, top+ch) x [left, left+cw) to h x w.
Img resized_crop(const Img& src, int top, int left, int crop_h, int crop_w) {
    Img out{src.c, src.h, src.w, Planes(src.px.size())};
    const double sy = static_cast<double>(crop_h) / src.h;
    const double sx = static_cast<double>(crop_w) / src.w;
    for (int y = 0; y < src.h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, crop_h - 1.0) + top;
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, src.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < src.w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, crop_w - 1.0) + left;
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, src.w - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < src.c; ++ch) {
                const double v = (1 - wy) * ((1 - wx) * src.at(ch, y0, x0) + wx * src.at(ch, y0, x1)) +
                                 wy * ((1 - wx) * src.at(ch, y1, x0) + wx * src.at(ch, y1, x1));
                out.at(ch, y, x) = clamp01(v);
            }
        }
    }
    return out;
}

Img random_resized_crop(const Img& img, const Transform& t, Rng& rng) {
    const double area = static_cast<double>(img.h) * img.w;
    const double log_lo = std::log(t.ratio_min);
    const double log_hi = std::log(t.ratio_max);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * rng.uniform(t.scale_min, t.scale_max);
        const double aspect = std::exp(rng.uniform(log_lo, log_hi));
        const int w = static_cast<int>(std::lround(std::sqrt(target * aspect)));
        const int h = static_cast<int>(std::lround(std::sqrt(target / aspect)));
        if (w > 0 && h > 0 && w <= img.w && h <= img.h) {
            const int top = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.h - h + 1)));
            const int left = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.w - w + 1)));
            return resized_crop(img, top, left, h, w);
        }
    }
    // Fallback: central crop clipped to the ratio bounds.
    const double in_ratio = static_cast<double>(img.w) / img.h;
    int w = img.w;
    int h = img.h;
    if (in_ratio < t.ratio_min) {
        h = static_cast<int>(std::lround(w / t.ratio_min));
    } else if (in_ratio > t.ratio_max) {
        w = static_cast<int>(std::lround(h * t.ratio_max));
    }
    return resized_crop(img, (img.h - h) / 2, (img.w - w) / 2, h, w);
}

void flip(Img& img) {
    for (int ch = 0; ch < img.c; ++ch) {
        for (int y = 0; y < img.h; ++y) {
            for (int x = 0; x < img.w / 2; ++x) std::swap(img.at(ch, y, x), img.at(ch, y, img.w - 1 - x));
        }
    }
}

float gray_at(const Img& img, int y, int x) {
    if (img.c < 3) return img.at(0, y, x);
    return static_cast<float>(0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x));
}

void to_grayscale(Img& img) {
    if (img.c < 3) return;
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const float g = gray_at(img, y, x);
            for (int ch = 0; ch < img.c; ++ch) img.at(ch, y, x) = g;
        }
    }
}

void adjust_brightness(Img& img, double f) {
    for (auto& v : img.px) v = clamp01(v * f);
}

void adjust_contrast(Img& img, double f) {
    double mean = 0.0;
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) mean += gray_at(img, y, x);
    }
    mean /= static_cast<double>(img.h) * img.w;
    for (auto& v : img.px) v = clamp01((v - mean) * f + mean);
}

void adjust_saturation(Img& img, double f) {
    if (img.c < 3) return;
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const double g = gray_at(img, y, x);
            for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = clamp01((img.at(ch, y, x) - g) * f + g);
        }
    }
}

// Hue rotation through HSV; `shift` is a fraction of the hue circle.
void adjust_hue(Img& img, double shift) {
    if (img.c < 3) return;
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const double r = img.at(0, y, x);
            const double g = img.at(1, y, x);
            const double b = img.at(2, y, x);
            const double mx = std::max({r, g, b});
            const double mn = std::min({r, g, b});
            const double delta = mx - mn;
            if (delta <= 0.0) continue;
            double h;
            if (mx == r) {
                h = std::fmod((g - b) / delta, 6.0);
            } else if (mx == g) {
                h = (b - r) / delta + 2.0;
            } else {
                h = (r - g) / delta + 4.0;
            }
            h = h / 6.0 + shift;
            h -= std::floor(h);
            const double s = delta / mx;
            const double v = mx;
            const double hh = h * 6.0;
            const int sector = static_cast<int>(std::floor(hh)) % 6;
            const double frac = hh - std::floor(hh);
            const double p = v * (1 - s);
            const double q = v * (1 - s * frac);
            const double t = v * (1 - s * (1 - frac));
            std::array<double, 3> rgb{};
            switch (sector) {
                case 0: rgb = {v, t, p}; break;
                case 1: rgb = {q, v, p}; break;
                case 2: rgb = {p, v, t}; break;
                case 3: rgb = {p, q, v}; break;
                case 4: rgb = {t, p, v}; break;
                default: rgb = {v, p, q}; break;
            }
            for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = clamp01(rgb[static_cast<std::size_t>(ch)]);
        }
    }
}

void color_jitter(Img& img, const Transform& t, Rng& rng) {
    std::array<int, 4> order{0, 1, 2, 3};
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
    }
    for (int op : order) {
        switch (op) {
            case 0:
                if (t.brightness > 0) adjust_brightness(img, rng.uniform(std::max(0.0, 1 - t.brightness), 1 + t.brightness));
                break;
            case 1:
                if (t.contrast > 0) adjust_contrast(img, rng.uniform(std::max(0.0, 1 - t.contrast), 1 + t.contrast));
                break;
            case 2:
                if (t.saturation > 0) adjust_saturation(img, rng.uniform(std::max(0.0, 1 - t.saturation), 1 + t.saturation));
                break;
            default:
                if (t.hue > 0) adjust_hue(img, rng.uniform(-t.hue, t.hue));
                break;
        }
    }
}

}  // namespace

std::vector<float> augment(const ImageView& image, const AugmentationChain& chain, Rng& rng) {
    const std::size_t expected = static_cast<std::size_t>(image.channels) * image.height * image.width;
    if (image.pixels.size() != expected) throw ContractError("augment: pixel count does not match shape");
    Img img{image.channels, image.height, image.width, Planes(image.pixels.begin(), image.pixels.end())};
    for (const auto& step : chain.steps) {
        // Steps with probability below 1 draw a coin first.
        const bool apply = step.probability >= 1.0 || rng.uniform() < step.probability;
        if (!apply) continue;
        switch (step.kind) {
            case TransformKind::random_resized_crop: img = random_resized_crop(img, step, rng); break;
            case TransformKind::horizontal_flip: flip(img); break;
            case TransformKind::color_jitter: color_jitter(img, step, rng); break;
            case TransformKind::grayscale: to_grayscale(img); break;
        }
    }
    for (auto& v : img.px) v = clamp01(v);
    return std::move(img.px);
}

std::pair<Tensor, Tensor> make_views(const Tensor& images, const AugmentationChain& chain, Rng& rng) {
    if (images.rank() != 4) throw ContractError("make_views expects N x C x H x W");
    const int n = images.dim(0);
    const int c = images.dim(1);
    const int h = images.dim(2);
    const int w = images.dim(3);
    const std::size_t stride = static_cast<std::size_t>(c) * h * w;
    Tensor v1(images.shape());
    Tensor v2(images.shape());
    for (int i = 0; i < n; ++i) {
        const ImageView view{c, h, w, images.values().subspan(static_cast<std::size_t>(i) * stride, stride)};
        const auto a = augment(view, chain, rng);
        const auto b = augment(view, chain, rng);
        std::copy(a.begin(), a.end(), v1.data() + static_cast<std::size_t>(i) * stride);
        std::copy(b.begin(), b.end(), v2.data() + static_cast<std::size_t>(i) * stride);
    }
    return {std::move(v1), std::move(v2)};
}

nlohmann::json to_json(const AugmentationChain& chain) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : chain.steps) {
        nlohmann::json j{{"kind", kind_name(s.kind)}, {"probability", s.probability}};
        if (s.kind == TransformKind::random_resized_crop) {
            j["scale"] = {s.scale_min, s.scale_max};
            j["ratio"] = {s.ratio_min, s.ratio_max};
        } else if (s.kind == TransformKind::color_jitter) {
            j["brightness"] = s.brightness;
            j["contrast"] = s.contrast;
            j["saturation"] = s.saturation;
            j["hue"] = s.hue;
        }
        steps.push_back(j);
    }
    return steps;
}

AugmentationChain chain_from_json(const nlohmann::json& j) {
    AugmentationChain chain;
    for (const auto& js : j) {
        Transform s;
        s.kind = kind_from(js.at("kind").get<std::string>());
        s.probability = js.value("probability", 1.0);
        if (!(s.probability >= 0.0 && s.probability <= 1.0)) {
            throw InvalidSpec("augmentation: probability must be in [0, 1]");
        }
        if (js.contains("scale")) {
            s.scale_min = js["scale"].at(0).get<double>();
            s.scale_max = js["scale"].at(1).get<double>();
        }
        if (js.contains("ratio")) {
            s.ratio_min = js["ratio"].at(0).get<double>();
            s.ratio_max = js["ratio"].at(1).get<double>();
        }
        s.brightness = js.value("brightness", s.brightness);
        s.contrast = js.value("contrast", s.contrast);
        s.saturation = js.value("saturation", s.saturation);
        s.hue = js.value("hue", s.hue);
        chain.steps.push_back(s);
    }
    return chain;
}

}  // namespace sdclr
