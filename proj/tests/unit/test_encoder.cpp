#include <doctest.h>

#include <cmath>

#include "sdclr/encoder.hpp"
#include "sdclr/errors.hpp"
#include "sdclr/pruning.hpp"

using namespace sdclr;

namespace {

EncoderSpec tiny_spec() {
    EncoderSpec s;
    s.in_channels = 3;
    s.image_size = 8;
    s.channels = {4, 6};
    s.proj_hidden = 5;
    s.proj_dim = 4;
    return s;
}

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<float>(scale * rng.normal());
    return t;
}

// L = sum(projections * R), evaluated in double from a fresh norm state.
double probe_loss(const Encoder& enc, const TensorMap& params, const NormState& norm, const Tensor& images,
                  const Tensor& r) {
    NormState local = norm;
    auto pass = enc.forward(params, local, images, Mode::train);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += static_cast<double>(pass.projections[i]) * r[i];
    return s;
}

}  // namespace

TEST_CASE("encoder shapes and unit projections") {
    const EncoderSpec spec;
    Rng rng(1);
    const auto params = init_params(spec, rng);
    NormState norm = init_norm_state(spec);
    const Tensor images = random_tensor({3, 3, 32, 32}, rng, 0.3);
    Encoder enc(spec);
    auto pass = enc.forward(params, norm, images, Mode::train);
    CHECK(pass.features.shape() == std::vector<int>{3, 128});
    CHECK(pass.projections.shape() == std::vector<int>{3, 64});
    for (int i = 0; i < 3; ++i) {
        double n = 0.0;
        for (int k = 0; k < 64; ++k) n += std::pow(pass.projections[static_cast<std::size_t>(i * 64 + k)], 2);
        CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("eval mode leaves the norm state untouched; train mode updates running stats") {
    const EncoderSpec spec = tiny_spec();
    Rng rng(2);
    const auto params = init_params(spec, rng);
    const Tensor images = random_tensor({4, 3, 8, 8}, rng);
    Encoder enc(spec);
    NormState norm = init_norm_state(spec);
    const NormState before = norm;
    enc.forward(params, norm, images, Mode::eval);
    CHECK(norm == before);
    enc.forward(params, norm, images, Mode::train);
    CHECK_FALSE(norm == before);
    CHECK(norm.tensors.at("bn1.weight") == before.tensors.at("bn1.weight"));
}

TEST_CASE("encoder backward matches central finite differences") {
    const EncoderSpec spec = tiny_spec();
    Encoder enc(spec);
    for (std::uint64_t trial = 0; trial < 3; ++trial) {
        Rng rng(100 + trial);
        TensorMap params = init_params(spec, rng);
        NormState norm = init_norm_state(spec);
        // Non-trivial affine values so their gradients are exercised.
        for (const auto& name : norm.affine_names()) {
            for (auto& v : norm.tensors.at(name).values()) v += static_cast<float>(0.3 * rng.normal());
        }
        const Tensor images = random_tensor({4, 3, 8, 8}, rng);
        const Tensor r = random_tensor({4, spec.proj_dim}, rng);

        NormState run = norm;
        auto pass = enc.forward(params, run, images, Mode::train);
        const Gradients g = enc.backward(params, norm, pass, r);

        auto check_entry = [&](TensorMap& store, const std::string& name, const Tensor& grad, std::size_t i,
                               bool is_norm) {
            const double eps = 1e-3;
            float& w = store.at(name)[i];
            const float saved = w;
            w = saved + static_cast<float>(eps);
            const double up = is_norm ? probe_loss(enc, params, NormState{store}, images, r)
                                      : probe_loss(enc, store, norm, images, r);
            w = saved - static_cast<float>(eps);
            const double down = is_norm ? probe_loss(enc, params, NormState{store}, images, r)
                                        : probe_loss(enc, store, norm, images, r);
            w = saved;
            const double fd = (up - down) / (2 * eps);
            const double an = grad[i];
            CHECK_MESSAGE(std::abs(fd - an) <= 5e-4 + 1e-2 * std::abs(fd), name << "[" << i << "] fd=" << fd
                                                                                << " analytic=" << an);
        };
        for (const auto& [name, grad] : g.params) {
            for (std::size_t i = 0; i < grad.size(); i += std::max<std::size_t>(1, grad.size() / 7)) {
                check_entry(params, name, grad, i, false);
            }
        }
        for (const auto& [name, grad] : g.norm) {
            for (std::size_t i = 0; i < grad.size(); ++i) check_entry(norm.tensors, name, grad, i, true);
        }
    }
}

TEST_CASE("prunable set is conv weights, head only on request, never biases or norm entries") {
    const EncoderSpec spec;
    const auto names = prunable_names(spec, false);
    CHECK(names == std::vector<std::string>{"conv1.weight", "conv2.weight", "conv3.weight", "conv4.weight"});
    const auto with_head = prunable_names(spec, true);
    CHECK(with_head.size() == 6);
    for (const auto& n : with_head) CHECK(n.find("bias") == std::string::npos);
    CHECK(is_decayed("conv1.weight"));
    CHECK(is_decayed("head.fc1.weight"));
    CHECK_FALSE(is_decayed("head.fc1.bias"));
    CHECK_FALSE(is_decayed("bn1.weight"));
}

TEST_CASE("encoder spec validation names the field") {
    EncoderSpec s;
    s.image_size = 30;
    CHECK_THROWS_AS(s.validate(), InvalidSpec);
    s = EncoderSpec{};
    s.channels.clear();
    CHECK_THROWS_AS(s.validate(), InvalidSpec);
}
