#pragma once

#include <algorithm>
#include <string>

#include "sswl/ct_dataio.hpp"

namespace sswl {

/// Display window in HU. The lower edge sits at center - width / 2.
struct WindowSpec {
    double center = 40.0;
    double width = 300.0;
    double out_lo = 0.0;
    double out_hi = 1.0;

    void validate() const {
        if (!(width > 0.0)) throw ValidationError("window width must be positive");
        if (!(out_lo < out_hi)) throw ValidationError("window output range requires out_lo < out_hi");
    }

    /// Named presets; only the abdomen soft-tissue window is defined.
    static WindowSpec preset(const std::string& name) {
        if (name == "abdomen") return {40.0, 300.0};
        throw ValidationError("unknown window preset '" + name + "'");
    }
};

/// Z = a * X + b, valid inside the window.
struct AffineWindow {
    double a = 1.0;
    double b = 0.0;

    double operator()(double hu) const noexcept { return a * hu + b; }
};

inline AffineWindow window_to_affine(const WindowSpec& spec) {
    spec.validate();
    const double a = (spec.out_hi - spec.out_lo) / spec.width;
    return {a, spec.out_lo - a * (spec.center - spec.width / 2.0)};
}

inline double window_level(double hu, const AffineWindow& aff, const WindowSpec& spec) noexcept {
    return std::clamp(aff(hu), spec.out_lo, spec.out_hi);
}

inline double window_level(double hu, const WindowSpec& spec) {
    return window_level(hu, window_to_affine(spec), spec);
}

/// Elementwise clamped window-leveling of a HU slice; metadata is kept.
inline CTSlice apply_window_level(const CTSlice& slice, const WindowSpec& spec) {
    const auto aff = window_to_affine(spec);
    std::vector<float> out(slice.pixels.size());
    std::transform(slice.pixels.begin(), slice.pixels.end(), out.begin(),
                   [&](float v) { return static_cast<float>(window_level(v, aff, spec)); });
    return slice.with_pixels(slice.height, slice.width, std::move(out));
}

}  // namespace sswl
