#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace sdclr {

/// Dense row-major float tensor. Images are stored NCHW.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, float fill = 0.0f);
    Tensor(std::vector<int> shape, std::vector<float> values);

    const std::vector<int>& shape() const { return shape_; }
    int dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    void fill(float v);

    bool operator==(const Tensor&) const = default;

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

std::size_t element_count(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

/// Named tensors, iterated in ascending name order.
using TensorMap = std::map<std::string, Tensor>;

/// Sub-map restricted to `names`; throws ContractError on a missing key.
TensorMap select(const TensorMap& tensors, const std::vector<std::string>& names);

}  // namespace sdclr
