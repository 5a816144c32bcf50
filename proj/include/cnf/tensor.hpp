#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cnf/errors.hpp"

namespace cnf {

/// Dense row-major tensor of 64-bit floats. Carries images, feature maps,
/// parameters and gradients; product(shape) == data.size() always holds.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(checked_volume(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_volume(shape_) != data_.size()) {
            throw shape_error("tensor data length " + std::to_string(data_.size()) +
                              " does not match shape volume " +
                              std::to_string(checked_volume(shape_)));
        }
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, double value) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = value;
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    /// 2-d access (rank must be 2).
    double operator()(std::size_t r, std::size_t c) const {
        return data_[r * shape_[1] + c];
    }
    double& operator()(std::size_t r, std::size_t c) {
        return data_[r * shape_[1] + c];
    }

    /// 3-d access (rank must be 3).
    double operator()(std::size_t ch, std::size_t r, std::size_t c) const {
        return data_[(ch * shape_[1] + r) * shape_[2] + c];
    }
    double& operator()(std::size_t ch, std::size_t r, std::size_t c) {
        return data_[(ch * shape_[1] + r) * shape_[2] + c];
    }

    Tensor reshaped(std::vector<std::size_t> new_shape) const {
        if (checked_volume(new_shape) != data_.size()) {
            throw shape_error("reshape volume mismatch: " + shape_string(new_shape) +
                              " vs " + std::to_string(data_.size()) + " elements");
        }
        return Tensor(std::move(new_shape), data_);
    }

    void fill(double value) {
        for (auto& x : data_) x = value;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const { return shape_string(shape_); }

    static std::string shape_string(const std::vector<std::size_t>& s) {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) os << 'x';
            os << s[i];
        }
        os << ']';
        return os.str();
    }

private:
    static std::size_t checked_volume(const std::vector<std::size_t>& shape) {
        std::size_t vol = 1;
        for (std::size_t e : shape) {
            if (e == 0) throw shape_error("tensor extents must be positive");
            vol *= e;
        }
        return vol;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw shape_error(std::string(what) + ": shape mismatch " + a.shape_str() +
                          " vs " + b.shape_str());
    }
}

} // namespace cnf
