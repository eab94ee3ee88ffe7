#include "sdclr/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "sdclr/errors.hpp"

namespace sdclr {

std::size_t element_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ContractError("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<int> shape, float fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != element_count(shape_)) {
        throw ContractError("tensor data size " + std::to_string(data_.size()) +
                            " does not match shape " + shape_string(shape_));
    }
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

TensorMap select(const TensorMap& tensors, const std::vector<std::string>& names) {
    TensorMap out;
    for (const auto& name : names) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ContractError("missing tensor '" + name + "'");
        out.emplace(name, it->second);
    }
    return out;
}

}  // namespace sdclr
