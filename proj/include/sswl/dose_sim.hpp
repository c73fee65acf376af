#pragma once

/// Low-dose synthesis by rescaling the zero-mean noise of a (low, full) pair,
/// and a procedural ellipse phantom standing in for scanner data.

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "sswl/ct_dataio.hpp"
#include "sswl/random.hpp"

namespace sswl {

/// Difference between a low-dose slice and its full-dose reference, in HU.
struct NoiseField {
    int height = 0;
    int width = 0;
    std::vector<double> values;
    DoseLevel source_dose;
};

/// How noise variance depends on dose.
///   inverse_dose:  var ~ 1 / d
///   excess_quanta: var ~ (1 - d) / d   (vanishes at full dose)
enum class NoiseScaleModel { inverse_dose, excess_quanta };

inline std::string to_string(NoiseScaleModel m) {
    return m == NoiseScaleModel::inverse_dose ? "inverse_dose" : "excess_quanta";
}

inline NoiseScaleModel noise_model_from_string(const std::string& s) {
    if (s == "inverse_dose") return NoiseScaleModel::inverse_dose;
    if (s == "excess_quanta") return NoiseScaleModel::excess_quanta;
    throw ValidationError("unknown noise model '" + s + "'");
}

inline NoiseField extract_noise(const CTSlice& low, const CTSlice& full) {
    if (low.height != full.height || low.width != full.width)
        throw ValidationError("extract_noise: slice shapes differ");
    if (low.scan_id != full.scan_id || low.slice_index != full.slice_index)
        throw ValidationError("extract_noise: slices come from different scan positions");
    if (low.dose.is_full()) throw ValidationError("extract_noise: low-dose slice is at full dose");
    NoiseField n{low.height, low.width, std::vector<double>(low.pixels.size()), low.dose};
    for (std::size_t i = 0; i < n.values.size(); ++i)
        n.values[i] = double(low.pixels[i]) - double(full.pixels[i]);
    return n;
}

/// Standard-deviation multiplier taking noise at d_src to noise at d_tgt.
inline double noise_scale_factor(NoiseScaleModel model, DoseLevel d_src, DoseLevel d_tgt) {
    const double s = d_src.fraction();
    const double t = d_tgt.fraction();
    if (t > s) throw ValidationError("target dose exceeds source dose; dose upscaling is not supported");
    if (t == s) return 1.0;
    if (model == NoiseScaleModel::inverse_dose) return std::sqrt(s / t);
    // s < 1 here because t < s <= 1
    return std::sqrt(((1.0 - t) / t) / ((1.0 - s) / s));
}

inline CTSlice synthesize_dose(const CTSlice& full, const NoiseField& noise, DoseLevel d_tgt, NoiseScaleModel model) {
    if (noise.height != full.height || noise.width != full.width)
        throw ValidationError("synthesize_dose: noise field shape differs from slice");
    const double k = noise_scale_factor(model, noise.source_dose, d_tgt);
    std::vector<float> px(full.pixels.size());
    for (std::size_t i = 0; i < px.size(); ++i)
        px[i] = static_cast<float>(double(full.pixels[i]) + k * noise.values[i]);
    CTSlice out = full.with_pixels(full.height, full.width, std::move(px));
    out.dose = d_tgt;
    return out;
}

// ---------------------------------------------------------------------------
// Phantoms

/// HU palette and anatomy label of a phantom family.
struct PhantomFamily {
    std::string name;
    BodyRegion region = BodyRegion::phantom;
    std::vector<double> palette;
    double background = -1000.0;

    static PhantomFamily abdomen() {
        return {"abdomen", BodyRegion::phantom, {-900.0, -100.0, 0.0, 40.0, 60.0, 300.0}, -1000.0};
    }
    /// Lung-dominated palette for cross-domain evaluation.
    static PhantomFamily chest() {
        return {"chest", BodyRegion::chest, {-850.0, -700.0, -500.0, -50.0, 30.0, 700.0}, -1000.0};
    }
    static PhantomFamily by_name(const std::string& name) {
        if (name == "abdomen") return abdomen();
        if (name == "chest") return chest();
        throw ValidationError("unknown phantom family '" + name + "'");
    }
};

inline constexpr double phantom_sigma0_hu = 10.0;

/// Noise standard deviation of a phantom at dose d.
inline double phantom_noise_sigma(DoseLevel d) { return phantom_sigma0_hu * std::sqrt(1.0 / d.fraction() - 1.0); }

/// Noise-free ellipse composite, fully determined by seed.
inline CTSlice generate_phantom(std::uint64_t seed, int h, int w, const PhantomFamily& family) {
    if (h < 16 || w < 16) throw ValidationError("phantoms need at least 16x16 pixels");
    if (family.palette.size() < 2) throw ValidationError("phantom palette needs at least two values");
    auto rng = make_rng(seed, {stream::phantom, 0});
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const auto pick = [&](std::size_t n) { return std::min<std::size_t>(n - 1, std::size_t(u01(rng) * n)); };

    struct Ellipse {
        double cy, cx, ay, ax, theta, hu;
    };
    std::vector<Ellipse> ellipses;
    const int count = 3 + static_cast<int>(pick(6));
    // Body outline first, soft tissue drawn from the upper half of the palette.
    const std::size_t soft = family.palette.size() / 2;
    ellipses.push_back({h * (0.5 + 0.04 * (u01(rng) - 0.5)), w * (0.5 + 0.04 * (u01(rng) - 0.5)),
                        h * (0.36 + 0.08 * u01(rng)), w * (0.38 + 0.08 * u01(rng)), 0.3 * (u01(rng) - 0.5),
                        family.palette[soft + pick(family.palette.size() - soft)]});
    const Ellipse body = ellipses.front();
    for (int i = 1; i < count; ++i) {
        const double r = 0.55 * std::sqrt(u01(rng));
        const double phi = 2.0 * std::numbers::pi * u01(rng);
        ellipses.push_back({body.cy + r * body.ay * std::sin(phi), body.cx + r * body.ax * std::cos(phi),
                            body.ay * (0.12 + 0.28 * u01(rng)), body.ax * (0.12 + 0.28 * u01(rng)),
                            std::numbers::pi * u01(rng), family.palette[pick(family.palette.size())]});
    }

    CTSlice s(h, w, static_cast<float>(family.background));
    constexpr double edge_px = 0.75;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = family.background;
            for (const auto& e : ellipses) {
                const double dy = y + 0.5 - e.cy, dx = x + 0.5 - e.cx;
                const double c = std::cos(e.theta), sn = std::sin(e.theta);
                const double u = (c * dx + sn * dy) / e.ax, t = (-sn * dx + c * dy) / e.ay;
                const double dist = (std::sqrt(u * u + t * t) - 1.0) * std::min(e.ax, e.ay);
                const double weight = 1.0 / (1.0 + std::exp(dist / edge_px));
                v = v * (1.0 - weight) + e.hu * weight;
            }
            s.at(y, x) = static_cast<float>(v);
        }
    }
    s.body_region = family.region;
    s.scan_id = "phantom-" + std::to_string(seed);
    return s;
}

/// Adds zero-mean Gaussian noise of the phantom dose model to a full-dose slice.
inline CTSlice add_phantom_noise(const CTSlice& full, DoseLevel d_tgt, std::uint64_t seed) {
    CTSlice low = full;
    low.dose = d_tgt;
    const double sigma = phantom_noise_sigma(d_tgt);
    if (sigma == 0.0) return low;
    auto rng = make_rng(seed, {stream::phantom, 1});
    std::normal_distribution<double> noise(0.0, sigma);
    for (auto& v : low.pixels) v = static_cast<float>(v + noise(rng));
    return low;
}

/// (full, low) pair: ellipse phantom plus white noise at dose d_tgt.
inline std::pair<CTSlice, CTSlice> generate_phantom_pair(std::uint64_t seed, int h, int w, DoseLevel d_tgt,
                                                         const PhantomFamily& family = PhantomFamily::abdomen()) {
    CTSlice full = generate_phantom(seed, h, w, family);
    full.dose = DoseLevel::full();
    CTSlice low = add_phantom_noise(full, d_tgt, seed);
    return {std::move(full), std::move(low)};
}

}  // namespace sswl
