#pragma once

/// Frozen feature extractor for the perceptual loss.
///
/// fixed_random: four 3x3 stride-2 rectified convolutions with He-uniform
/// weights drawn from a seed; each stage halves the spatial size.
///
/// external_weights: a raw little-endian f32 file plus a JSON sidecar at
/// `<file>.json`:
///
///     { "format": "sswl-features/1",
///       "input_channels": 3,            // gray input is replicated
///       "input_mean": 0.449, "input_std": 0.226,
///       "stages": [ {"out": 64, "kernel": 3, "stride": 1, "pad": 1}, ... ],
///       "layers": [1, 3] }
///
/// The weight file holds, per stage in order, weight (out, in, k, k) then
/// bias (out). Layer index -1 selects the (prepared) input itself.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "sswl/ct_dataio.hpp"
#include "sswl/nn/conv.hpp"
#include "sswl/random.hpp"

namespace sswl {

struct FeatureDescriptor {
    enum class Kind { fixed_random, external_weights } kind = Kind::fixed_random;
    std::uint64_t seed = 0;
    std::filesystem::path weights;
    std::vector<int> layers{0, 1, 2, 3};
    std::vector<int> channels{8, 16, 16, 32};  // fixed_random only
};

template <class T>
class FeatureExtractor {
public:
    struct Stage {
        int cin = 1, cout = 1, kernel = 3, stride = 1, pad = 0;
        std::vector<T> weight, bias;
    };

    /// Activations of one pass: acts[0] is the prepared input, acts[s + 1]
    /// the rectified output of stage s.
    struct Trace {
        std::vector<Tensor<T>> acts;
    };

    /// Single layer returning the raw pixels.
    static FeatureExtractor identity() {
        FeatureExtractor f;
        f.layers_ = {-1};
        return f;
    }

    static FeatureExtractor fixed_random(std::uint64_t seed, std::vector<int> channels = {8, 16, 16, 32},
                                         std::vector<int> layers = {0, 1, 2, 3}) {
        FeatureExtractor f;
        auto rng = make_rng(seed, {stream::extractor});
        int cin = 1;
        for (int cout : channels) {
            Stage s{cin, cout, 3, 2, 1, std::vector<T>(std::size_t(cout) * cin * 9), std::vector<T>(cout, T(0))};
            const double bound = std::sqrt(6.0 / (cin * 9.0));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (auto& v : s.weight) v = static_cast<T>(u(rng));
            f.stages_.push_back(std::move(s));
            cin = cout;
        }
        f.layers_ = std::move(layers);
        f.validate_layers();
        return f;
    }

    static FeatureExtractor load(const std::filesystem::path& weights) {
        auto sidecar = weights;
        sidecar += ".json";
        std::ifstream js(sidecar);
        if (!js) throw IoError(sidecar.string(), "feature weight sidecar missing");
        nlohmann::json j;
        FeatureExtractor f;
        int cin = 1;
        try {
            js >> j;
            if (j.at("format").get<std::string>() != "sswl-features/1")
                throw FormatError(FormatError::Kind::version_mismatch, sidecar.string(), "unsupported format");
            f.replicate_ = cin = j.value("input_channels", 1);
            f.mean_ = j.value("input_mean", 0.0);
            f.std_ = j.value("input_std", 1.0);
            for (const auto& js_stage : j.at("stages")) {
                Stage s;
                s.cin = cin;
                s.cout = js_stage.at("out").get<int>();
                s.kernel = js_stage.value("kernel", 3);
                s.stride = js_stage.value("stride", 1);
                s.pad = js_stage.value("pad", s.kernel / 2);
                f.stages_.push_back(std::move(s));
                cin = f.stages_.back().cout;
            }
            f.layers_ = j.at("layers").get<std::vector<int>>();
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError(FormatError::Kind::bad_header, sidecar.string(), ex.what());
        }
        if (f.std_ <= 0.0) throw FormatError(FormatError::Kind::bad_header, sidecar.string(), "input_std must be > 0");
        const auto bytes = detail::read_file_bytes(weights);
        std::size_t need = 0;
        for (const auto& s : f.stages_) need += 4 * (std::size_t(s.cout) * s.cin * s.kernel * s.kernel + s.cout);
        if (bytes.size() != need)
            throw FormatError(FormatError::Kind::truncated, weights.string(),
                              "expected " + std::to_string(need) + " bytes, found " + std::to_string(bytes.size()));
        std::size_t off = 0;
        const auto take = [&](std::vector<T>& dst, std::size_t count) {
            dst.resize(count);
            for (auto& v : dst) {
                v = static_cast<T>(std::bit_cast<float>(detail::get_le<std::uint32_t>(&bytes[off])));
                off += 4;
            }
        };
        for (auto& s : f.stages_) {
            take(s.weight, std::size_t(s.cout) * s.cin * s.kernel * s.kernel);
            take(s.bias, s.cout);
        }
        f.validate_layers();
        return f;
    }

    static FeatureExtractor make(const FeatureDescriptor& d) {
        if (d.kind == FeatureDescriptor::Kind::fixed_random) return fixed_random(d.seed, d.channels, d.layers);
        return load(d.weights);
    }

    /// Same network with weights converted to U.
    template <class U>
    FeatureExtractor<U> cast() const {
        FeatureExtractor<U> f;
        for (const auto& s : stages_)
            f.stages_.push_back({s.cin, s.cout, s.kernel, s.stride, s.pad, std::vector<U>(s.weight.begin(), s.weight.end()),
                                 std::vector<U>(s.bias.begin(), s.bias.end())});
        f.layers_ = layers_;
        f.replicate_ = replicate_;
        f.mean_ = mean_;
        f.std_ = std_;
        return f;
    }

    const std::vector<int>& layers() const noexcept { return layers_; }
    const std::vector<Stage>& stages() const noexcept { return stages_; }

    Trace run(const Tensor<T>& x) const {
        if (x.c() != 1) throw ValidationError("feature extractor expects single-channel images");
        Trace t;
        Tensor<T> in(x.n(), replicate_, x.h(), x.w());
        const T shift = static_cast<T>(mean_), inv = static_cast<T>(1.0 / std_);
        for (int n = 0; n < x.n(); ++n)
            for (int c = 0; c < replicate_; ++c)
                for (int y = 0; y < x.h(); ++y)
                    for (int xx = 0; xx < x.w(); ++xx) in(n, c, y, xx) = (x(n, 0, y, xx) - shift) * inv;
        t.acts.push_back(std::move(in));
        for (const auto& s : stages_) {
            Tensor<T> out = nn::conv2d<T>(t.acts.back(), s.weight, s.bias, s.cout,
                                          nn::ConvGeom{s.cin, s.kernel, s.stride, s.pad});
            nn::relu_inplace(out);
            t.acts.push_back(std::move(out));
        }
        return t;
    }

    const Tensor<T>& feature(const Trace& t, int layer) const { return t.acts[std::size_t(layer + 1)]; }

    std::vector<Tensor<T>> features(const Tensor<T>& x) const {
        const Trace t = run(x);
        std::vector<Tensor<T>> out;
        for (int l : layers_) out.push_back(feature(t, l));
        return out;
    }

    /// dL/dx given dL/d(feature) for each declared layer (same order as layers()).
    Tensor<T> backward(const Trace& t, const std::vector<Tensor<T>>& dfeat) const {
        const int deepest = *std::max_element(layers_.begin(), layers_.end());
        Tensor<T> grad;
        const auto add_feature_grads = [&](int layer) {
            for (std::size_t i = 0; i < layers_.size(); ++i) {
                if (layers_[i] != layer) continue;
                if (grad.size() == 0) grad = dfeat[i];
                else
                    for (std::size_t q = 0; q < grad.size(); ++q) grad.values()[q] += dfeat[i].values()[q];
            }
        };
        for (int s = deepest; s >= 0; --s) {
            add_feature_grads(s);
            if (grad.size() == 0) continue;
            const auto& st = stages_[std::size_t(s)];
            nn::relu_backward_inplace(grad, t.acts[std::size_t(s) + 1]);
            std::vector<T> dw(st.weight.size()), db(st.bias.size());
            grad = nn::conv2d_backward<T>(t.acts[std::size_t(s)], grad, st.weight, st.cout,
                                          nn::ConvGeom{st.cin, st.kernel, st.stride, st.pad}, dw, db);
        }
        add_feature_grads(-1);
        const auto& x0 = t.acts.front();
        Tensor<T> dx(x0.n(), 1, x0.h(), x0.w());
        if (grad.size() == 0) return dx;
        const T inv = static_cast<T>(1.0 / std_);
        for (int n = 0; n < x0.n(); ++n)
            for (int c = 0; c < replicate_; ++c)
                for (int y = 0; y < x0.h(); ++y)
                    for (int xx = 0; xx < x0.w(); ++xx) dx(n, 0, y, xx) += grad(n, c, y, xx) * inv;
        return dx;
    }

private:
    template <class U>
    friend class FeatureExtractor;

    void validate_layers() const {
        if (layers_.empty()) throw ValidationError("feature extractor needs at least one layer");
        for (int l : layers_)
            if (l < -1 || l >= static_cast<int>(stages_.size()))
                throw ValidationError("feature layer index " + std::to_string(l) + " out of range");
    }

    std::vector<Stage> stages_;
    std::vector<int> layers_;
    int replicate_ = 1;
    double mean_ = 0.0;
    double std_ = 1.0;
};

}  // namespace sswl
