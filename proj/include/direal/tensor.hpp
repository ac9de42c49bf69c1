#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "direal/errors.hpp"

namespace direal {

// Dense row-major tensor of doubles. Rank and sizes are dynamic; all layer
// parameters, activations and datasets use this one type.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_))
            throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                             " does not match shape (" + shape_str() + ")");
    }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    // Reinterprets the same flat data under a new shape of equal size.
    Tensor reshaped(std::vector<std::size_t> new_shape) const {
        if (count(new_shape) != data_.size())
            throw ShapeError("reshape size mismatch");
        return Tensor(std::move(new_shape), data_);
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::string shape_str() const {
        std::string s;
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s;
    }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

}  // namespace direal
