#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sswl/error.hpp"

namespace sswl::nn {

template <class T>
struct ParamArray {
    std::string name;
    std::vector<int> shape;
    std::vector<T> values;

    std::size_t count() const {
        return std::accumulate(shape.begin(), shape.end(), std::size_t(1),
                               [](std::size_t a, int b) { return a * std::size_t(b); });
    }

    friend bool operator==(const ParamArray&, const ParamArray&) = default;
};

/// Ordered collection of named weight arrays. Gradients and optimizer
/// moments reuse the same type.
template <class T>
class ParameterSet {
public:
    ParamArray<T>& add(std::string name, std::vector<int> shape) {
        if (contains(name)) throw ValidationError("duplicate parameter '" + name + "'");
        ParamArray<T> p{std::move(name), std::move(shape), {}};
        p.values.assign(p.count(), T(0));
        arrays_.push_back(std::move(p));
        return arrays_.back();
    }

    bool contains(const std::string& name) const {
        return std::any_of(arrays_.begin(), arrays_.end(), [&](const auto& p) { return p.name == name; });
    }

    ParamArray<T>& at(const std::string& name) {
        for (auto& p : arrays_)
            if (p.name == name) return p;
        throw ValidationError("no parameter named '" + name + "'");
    }
    const ParamArray<T>& at(const std::string& name) const { return const_cast<ParameterSet*>(this)->at(name); }

    std::span<const T> view(const std::string& name) const { return at(name).values; }
    std::span<T> span(const std::string& name) { return at(name).values; }

    std::vector<ParamArray<T>>& arrays() noexcept { return arrays_; }
    const std::vector<ParamArray<T>>& arrays() const noexcept { return arrays_; }

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& p : arrays_) n += p.values.size();
        return n;
    }

    /// Same names and shapes, all zeros.
    ParameterSet zeros_like() const {
        ParameterSet out;
        for (const auto& p : arrays_) out.add(p.name, p.shape);
        return out;
    }

    bool same_layout(const ParameterSet& o) const {
        if (arrays_.size() != o.arrays_.size()) return false;
        for (std::size_t i = 0; i < arrays_.size(); ++i)
            if (arrays_[i].name != o.arrays_[i].name || arrays_[i].shape != o.arrays_[i].shape) return false;
        return true;
    }

    bool all_finite() const {
        for (const auto& p : arrays_)
            for (T v : p.values)
                if (!std::isfinite(v)) return false;
        return true;
    }

    void scale(T factor) {
        for (auto& p : arrays_)
            for (auto& v : p.values) v *= factor;
    }

    template <class U>
    ParameterSet<U> cast() const {
        ParameterSet<U> out;
        for (const auto& p : arrays_) {
            auto& q = out.add(p.name, p.shape);
            std::copy(p.values.begin(), p.values.end(), q.values.begin());
        }
        return out;
    }

    friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

private:
    std::vector<ParamArray<T>> arrays_;
};

}  // namespace sswl::nn
