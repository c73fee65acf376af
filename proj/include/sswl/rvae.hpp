#pragma once

/// Residual variational autoencoder for slice denoising.
///
/// Encoder: n valid (unpadded, stride 1) convolutions, each rectified; E_0 is
/// the input and E_i the output of encoder stage i. Decoder: n transposed
/// convolutions, each growing the map back by k - 1; stage j's pre-activation
/// receives E_(n-j) when (n-j, j) is a skip pair; all decoder stages but the
/// last are rectified. The bottleneck pools E_n, maps it through a hidden
/// layer to (mu, log var), samples z = mu + exp(log var / 2) * eps and adds a
/// linear image of z to every pixel of E_n as a per-channel bias. With the
/// bottleneck disabled the network is a plain residual encoder-decoder.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sswl/nn/conv.hpp"
#include "sswl/nn/parameters.hpp"
#include "sswl/random.hpp"
#include "sswl/tensor.hpp"

namespace sswl {

using nn::ParameterSet;

struct RVAEConfig {
    int n_enc_layers = 5;
    int n_dec_layers = 5;
    int filters = 96;
    int kernel = 5;
    int latent_dim = 96;
    int bottleneck_hidden = 96;
    bool bottleneck_enabled = true;
    /// (encoder map index, decoder stage index); encoder index 0 is the input.
    std::vector<std::pair<int, int>> skip_pairs = default_skip_pairs(5);
    int input_h = 256;
    int input_w = 256;

    /// Every other encoder map counting back from the deepest stage, plus the
    /// input: {(n-1, 1), (n-3, 3), ..., (0, n)}.
    static std::vector<std::pair<int, int>> default_skip_pairs(int n) {
        std::vector<std::pair<int, int>> out;
        for (int i = n - 1; i >= 0; i -= 2) out.emplace_back(i, n - i);
        if (out.empty() || out.back().first != 0) out.emplace_back(0, n);
        return out;
    }

    /// Two stages, four filters: small enough for exhaustive gradient checks.
    static RVAEConfig tiny(int size = 16) {
        RVAEConfig c;
        c.n_enc_layers = c.n_dec_layers = 2;
        c.filters = 4;
        c.kernel = 5;
        c.latent_dim = 4;
        c.bottleneck_hidden = 4;
        c.skip_pairs = default_skip_pairs(2);
        c.input_h = c.input_w = size;
        return c;
    }

    int layers() const noexcept { return n_enc_layers; }

    bool has_skip(int enc, int dec) const {
        for (const auto& [e, d] : skip_pairs)
            if (e == enc && d == dec) return true;
        return false;
    }

    void validate() const {
        if (n_enc_layers < 1) throw ValidationError("model needs at least one encoder stage");
        if (n_enc_layers != n_dec_layers) throw ValidationError("encoder and decoder depths must match");
        if (filters < 1 || kernel < 1 || latent_dim < 1 || bottleneck_hidden < 1)
            throw ValidationError("filters, kernel, latent_dim and bottleneck_hidden must be positive");
        const int shrink = n_enc_layers * (kernel - 1);
        if (input_h <= shrink || input_w <= shrink)
            throw ValidationError("input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                                  " is too small for " + std::to_string(n_enc_layers) + " stages of kernel " +
                                  std::to_string(kernel));
        for (const auto& [e, d] : skip_pairs)
            if (e < 0 || e >= n_enc_layers || d != n_dec_layers - e)
                throw ValidationError("skip pair (" + std::to_string(e) + ", " + std::to_string(d) +
                                      ") is not a symmetric encoder/decoder pair");
    }

    friend bool operator==(const RVAEConfig&, const RVAEConfig&) = default;
};

/// Closed-form parameter count of a configuration.
inline std::size_t parameter_count(const RVAEConfig& c) {
    const std::size_t F = c.filters, k2 = std::size_t(c.kernel) * c.kernel, n = c.n_enc_layers;
    const std::size_t inner = F * F * k2 + F;
    std::size_t total = (F * k2 + F) + (n - 1) * inner   // encoder
                        + (n - 1) * inner + (F * k2 + 1);  // decoder
    if (c.bottleneck_enabled) {
        const std::size_t H = c.bottleneck_hidden, L = c.latent_dim;
        total += H * F + H + 2 * (L * H + L) + F * L + F;
    }
    return total;
}

inline std::string enc_name(int i, const char* what) { return "enc" + std::to_string(i) + "." + what; }
inline std::string dec_name(int j, const char* what) { return "dec" + std::to_string(j) + "." + what; }

/// Fan-in scaled uniform initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// except the latent injection weights, which start at zero.
template <class T>
ParameterSet<T> init_params(const RVAEConfig& c, std::uint64_t seed) {
    c.validate();
    ParameterSet<T> p;
    const int F = c.filters, k = c.kernel, n = c.n_enc_layers;
    auto rng = make_rng(seed, {stream::init});
    const auto fill = [&](nn::ParamArray<T>& w, nn::ParamArray<T>& b, double fan_in) {
        std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
        for (auto& v : w.values) v = static_cast<T>(u(rng));
        for (auto& v : b.values) v = static_cast<T>(u(rng));
    };
    for (int i = 1; i <= n; ++i) {
        const int cin = i == 1 ? 1 : F;
        auto& w = p.add(enc_name(i, "weight"), {F, cin, k, k});
        auto& b = p.add(enc_name(i, "bias"), {F});
        fill(w, b, double(cin) * k * k);
    }
    if (c.bottleneck_enabled) {
        const int H = c.bottleneck_hidden, L = c.latent_dim;
        const auto linear = [&](const std::string& name, int out, int in) {
            auto& w = p.add("bn." + name + ".weight", {out, in});
            auto& b = p.add("bn." + name + ".bias", {out});
            fill(w, b, in);
        };
        linear("hidden", H, F);
        linear("mu", L, H);
        linear("logvar", L, H);
        linear("inject", F, L);
        // The sampled latent starts out not perturbing the bottom feature maps.
        for (auto& v : p.at("bn.inject.weight").values) v = T(0);
    }
    for (int j = 1; j <= n; ++j) {
        const int cout = j == n ? 1 : F;
        auto& w = p.add(dec_name(j, "weight"), {F, cout, k, k});
        auto& b = p.add(dec_name(j, "bias"), {cout});
        fill(w, b, double(F) * k * k);
    }
    return p;
}

/// Batch of latent draws; each member is (N, latent_dim, 1, 1).
template <class T>
struct LatentSample {
    Tensor<T> mu, log_var, eps, z;
};

struct EpsSource {
    enum class Kind { sample, zeros } kind = Kind::zeros;
    std::uint64_t seed = 0;

    static EpsSource zeros() { return {Kind::zeros, 0}; }
    static EpsSource sample(std::uint64_t seed) { return {Kind::sample, seed}; }
};

template <class T>
struct ForwardCache {
    std::vector<Tensor<T>> enc;  // E_0 .. E_n (rectified; E_0 is the input)
    Tensor<T> bottom;            // E_n plus the injected latent bias
    std::vector<Tensor<T>> dec;  // D_1 .. D_n (D_n is the output)
    Tensor<T> pooled;            // (N, F, 1, 1)
    Tensor<T> hidden;            // (N, H, 1, 1), rectified
};

template <class T>
struct ForwardResult {
    Tensor<T> y;
    std::optional<LatentSample<T>> latent;
    ForwardCache<T> cache;
};

namespace detail {

template <class T>
void check_finite(const Tensor<T>& t, const std::string& layer) {
    if (!t.all_finite()) throw NumericError(layer, "activation " + t.shape_string());
}

/// Y (N, out) = X (N, in) * W^T + b.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const nn::ParamArray<T>& w, const nn::ParamArray<T>& b) {
    const int N = x.n(), in = w.shape[1], out = w.shape[0];
    Tensor<T> y(N, out, 1, 1);
    nn::ConstMatMap<T> X(x.data(), N, in);
    nn::ConstMatMap<T> W(w.values.data(), out, in);
    nn::MatMap<T> Y(y.data(), N, out);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += nn::ConstVecMap<T>(b.values.data(), out).transpose();
    return y;
}

template <class T>
Tensor<T> linear_backward(const Tensor<T>& x, const Tensor<T>& dy, const nn::ParamArray<T>& w, nn::ParamArray<T>& dw,
                          nn::ParamArray<T>& db) {
    const int N = x.n(), in = w.shape[1], out = w.shape[0];
    nn::ConstMatMap<T> X(x.data(), N, in);
    nn::ConstMatMap<T> dY(dy.data(), N, out);
    nn::MatMap<T>(dw.values.data(), out, in).noalias() += dY.transpose() * X;
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < out; ++o) db.values[o] += dY(n, o);
    Tensor<T> dx(N, in, 1, 1);
    nn::MatMap<T>(dx.data(), N, in).noalias() = dY * nn::ConstMatMap<T>(w.values.data(), out, in);
    return dx;
}

}  // namespace detail

template <class T>
ForwardResult<T> forward(const ParameterSet<T>& p, const RVAEConfig& c, const Tensor<T>& x, EpsSource eps_source) {
    if (x.c() != 1 || x.h() != c.input_h || x.w() != c.input_w)
        throw ValidationError("forward: input " + x.shape_string() + " does not match configured (N, 1, " +
                              std::to_string(c.input_h) + ", " + std::to_string(c.input_w) + ")");
    detail::check_finite(x, "input");
    const int n = c.n_enc_layers, F = c.filters, k = c.kernel;
    ForwardResult<T> r;
    auto& cache = r.cache;
    cache.enc.reserve(n + 1);
    cache.enc.push_back(x);
    for (int i = 1; i <= n; ++i) {
        const auto& in = cache.enc.back();
        Tensor<T> e = nn::conv2d<T>(in, p.view(enc_name(i, "weight")), p.view(enc_name(i, "bias")), F,
                                    nn::ConvGeom{in.c(), k, 1, 0});
        nn::relu_inplace(e);
        detail::check_finite(e, enc_name(i, "out"));
        cache.enc.push_back(std::move(e));
    }

    cache.bottom = cache.enc.back();
    if (c.bottleneck_enabled) {
        const auto& top = cache.enc.back();
        const int N = top.n();
        const std::size_t plane = top.plane();
        cache.pooled = Tensor<T>(N, F, 1, 1);
        for (int b = 0; b < N; ++b)
            for (int ch = 0; ch < F; ++ch) {
                const T* src = top.sample(b).data() + ch * plane;
                T s = 0;
                for (std::size_t i = 0; i < plane; ++i) s += src[i];
                cache.pooled(b, ch, 0, 0) = s / T(plane);
            }
        cache.hidden = detail::linear(cache.pooled, p.at("bn.hidden.weight"), p.at("bn.hidden.bias"));
        nn::relu_inplace(cache.hidden);
        LatentSample<T> lat;
        lat.mu = detail::linear(cache.hidden, p.at("bn.mu.weight"), p.at("bn.mu.bias"));
        lat.log_var = detail::linear(cache.hidden, p.at("bn.logvar.weight"), p.at("bn.logvar.bias"));
        lat.eps = Tensor<T>(N, c.latent_dim, 1, 1);
        if (eps_source.kind == EpsSource::Kind::sample) {
            auto rng = make_rng(eps_source.seed, {stream::eps});
            std::normal_distribution<double> normal(0.0, 1.0);
            for (auto& v : lat.eps.values()) v = static_cast<T>(normal(rng));
        }
        lat.z = Tensor<T>(N, c.latent_dim, 1, 1);
        for (std::size_t i = 0; i < lat.z.size(); ++i)
            lat.z.values()[i] = lat.mu.values()[i] + std::exp(T(0.5) * lat.log_var.values()[i]) * lat.eps.values()[i];
        detail::check_finite(lat.z, "bn.z");
        const Tensor<T> inject = detail::linear(lat.z, p.at("bn.inject.weight"), p.at("bn.inject.bias"));
        for (int b = 0; b < N; ++b)
            for (int ch = 0; ch < F; ++ch) {
                T* dst = cache.bottom.sample(b).data() + ch * plane;
                const T v = inject(b, ch, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) dst[i] += v;
            }
        r.latent = std::move(lat);
    }

    cache.dec.reserve(n);
    for (int j = 1; j <= n; ++j) {
        const auto& in = j == 1 ? cache.bottom : cache.dec.back();
        const int cout = j == n ? 1 : F;
        Tensor<T> d = nn::conv_transpose2d<T>(in, p.view(dec_name(j, "weight")), p.view(dec_name(j, "bias")), cout, k);
        if (c.has_skip(n - j, j)) {
            const auto& skip = cache.enc[n - j];
            for (std::size_t i = 0; i < d.size(); ++i) d.values()[i] += skip.values()[i];
        }
        if (j < n) nn::relu_inplace(d);
        detail::check_finite(d, dec_name(j, "out"));
        cache.dec.push_back(std::move(d));
    }
    r.y = cache.dec.back();
    return r;
}

/// Upstream gradients entering the network: dL/dy and, when the bottleneck
/// is on, the direct dL/dmu and dL/dlog_var of the latent regularizer.
template <class T>
struct OutputGrad {
    Tensor<T> dy;
    Tensor<T> dmu;
    Tensor<T> dlog_var;
};

template <class T>
ParameterSet<T> backward(const ParameterSet<T>& p, const RVAEConfig& c, const ForwardResult<T>& fwd,
                         const OutputGrad<T>& g) {
    const int n = c.n_enc_layers, F = c.filters, k = c.kernel;
    const auto& cache = fwd.cache;
    ParameterSet<T> grads = p.zeros_like();
    require_same_shape(g.dy, fwd.y, "backward");

    std::vector<Tensor<T>> d_enc(n + 1);  // accumulated gradients of E_i
    Tensor<T> grad = g.dy;
    for (int j = n; j >= 1; --j) {
        if (j < n) nn::relu_backward_inplace(grad, cache.dec[j - 1]);
        if (c.has_skip(n - j, j) && n - j > 0) {
            auto& acc = d_enc[n - j];
            if (acc.size() == 0) acc = grad;
            else
                for (std::size_t i = 0; i < acc.size(); ++i) acc.values()[i] += grad.values()[i];
        }
        const auto& in = j == 1 ? cache.bottom : cache.dec[j - 2];
        grad = nn::conv_transpose2d_backward<T>(in, grad, p.view(dec_name(j, "weight")), k,
                                                grads.span(dec_name(j, "weight")), grads.span(dec_name(j, "bias")));
    }
    // grad now holds dL/d(bottom); the injected bias passes it through to E_n.
    Tensor<T> d_top = std::move(grad);

    if (c.bottleneck_enabled) {
        const auto& lat = *fwd.latent;
        const int N = d_top.n();
        const std::size_t plane = d_top.plane();
        Tensor<T> d_inject(N, F, 1, 1);
        for (int b = 0; b < N; ++b)
            for (int ch = 0; ch < F; ++ch) {
                const T* src = d_top.sample(b).data() + ch * plane;
                T s = 0;
                for (std::size_t i = 0; i < plane; ++i) s += src[i];
                d_inject(b, ch, 0, 0) = s;
            }
        Tensor<T> dz = detail::linear_backward(lat.z, d_inject, p.at("bn.inject.weight"),
                                               grads.at("bn.inject.weight"), grads.at("bn.inject.bias"));
        Tensor<T> dmu = dz, dlv = dz;
        for (std::size_t i = 0; i < dz.size(); ++i) {
            const T sigma = std::exp(T(0.5) * lat.log_var.values()[i]);
            dlv.values()[i] = dz.values()[i] * lat.eps.values()[i] * T(0.5) * sigma;
            if (g.dmu.size()) dmu.values()[i] += g.dmu.values()[i];
            if (g.dlog_var.size()) dlv.values()[i] += g.dlog_var.values()[i];
        }
        Tensor<T> dh = detail::linear_backward(cache.hidden, dmu, p.at("bn.mu.weight"), grads.at("bn.mu.weight"),
                                               grads.at("bn.mu.bias"));
        const Tensor<T> dh2 = detail::linear_backward(cache.hidden, dlv, p.at("bn.logvar.weight"),
                                                      grads.at("bn.logvar.weight"), grads.at("bn.logvar.bias"));
        for (std::size_t i = 0; i < dh.size(); ++i) dh.values()[i] += dh2.values()[i];
        nn::relu_backward_inplace(dh, cache.hidden);
        const Tensor<T> dpool = detail::linear_backward(cache.pooled, dh, p.at("bn.hidden.weight"),
                                                        grads.at("bn.hidden.weight"), grads.at("bn.hidden.bias"));
        for (int b = 0; b < N; ++b)
            for (int ch = 0; ch < F; ++ch) {
                T* dst = d_top.sample(b).data() + ch * plane;
                const T v = dpool(b, ch, 0, 0) / T(plane);
                for (std::size_t i = 0; i < plane; ++i) dst[i] += v;
            }
    }

    grad = std::move(d_top);
    for (int i = n; i >= 1; --i) {
        if (i < n && d_enc[i].size())
            for (std::size_t q = 0; q < grad.size(); ++q) grad.values()[q] += d_enc[i].values()[q];
        nn::relu_backward_inplace(grad, cache.enc[i]);
        const auto& in = cache.enc[i - 1];
        grad = nn::conv2d_backward<T>(in, grad, p.view(enc_name(i, "weight")), F, nn::ConvGeom{in.c(), k, 1, 0},
                                      grads.span(enc_name(i, "weight")), grads.span(enc_name(i, "bias")), i > 1);
    }
    return grads;
}

}  // namespace sswl
