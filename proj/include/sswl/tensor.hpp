#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sswl/error.hpp"

namespace sswl {

/// Dense NCHW array. Batches of single-channel images are (N, 1, H, W).
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    Tensor(int n, int c, int h, int w, T fill = T(0))
        : shape_{n, c, h, w}, data_(checked_size(n, c, h, w), fill) {}

    Tensor(std::array<int, 4> shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != checked_size(shape[0], shape[1], shape[2], shape[3]))
            throw ValidationError("tensor data size does not match shape " + shape_string());
    }

    int n() const noexcept { return shape_[0]; }
    int c() const noexcept { return shape_[1]; }
    int h() const noexcept { return shape_[2]; }
    int w() const noexcept { return shape_[3]; }
    const std::array<int, 4>& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t plane() const noexcept { return std::size_t(shape_[2]) * shape_[3]; }
    std::size_t item() const noexcept { return std::size_t(shape_[1]) * plane(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::vector<T>& values() noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    T& operator()(int n, int c, int y, int x) noexcept {
        return data_[((std::size_t(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    const T& operator()(int n, int c, int y, int x) const noexcept {
        return data_[((std::size_t(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    std::span<T> sample(int n) noexcept { return {data_.data() + n * item(), item()}; }
    std::span<const T> sample(int n) const noexcept { return {data_.data() + n * item(), item()}; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

    std::string shape_string() const {
        std::ostringstream os;
        os << '(' << shape_[0] << ", " << shape_[1] << ", " << shape_[2] << ", " << shape_[3] << ')';
        return os.str();
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <class U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    static std::size_t checked_size(int n, int c, int h, int w) {
        if (n < 0 || c < 0 || h < 0 || w < 0) throw ValidationError("negative tensor dimension");
        return std::size_t(n) * c * h * w;
    }

    std::array<int, 4> shape_{0, 0, 0, 0};
    std::vector<T> data_;
};

inline void require_same_shape(const auto& a, const auto& b, const char* what) {
    if (a.shape() != b.shape())
        throw ValidationError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                              b.shape_string());
}

}  // namespace sswl
