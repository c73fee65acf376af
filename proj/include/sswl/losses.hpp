#pragma once

/// Hybrid objective: MSE + beta * perceptual + alpha * KL.

#include <cmath>

#include "sswl/feature_extractor.hpp"
#include "sswl/rvae.hpp"

namespace sswl {

struct LossWeights {
    double beta = 0.6;
    double alpha = 1.0;

    void validate() const {
        if (!(beta >= 0.0 && std::isfinite(beta)) || !(alpha >= 0.0 && std::isfinite(alpha)))
            throw ValidationError("loss weights must be finite and non-negative");
    }
};

struct LossBreakdown {
    double total = 0.0;
    double mse_term = 0.0;
    double perceptual_term = 0.0;
    double kl_term = 0.0;
};

/// Mean squared error over every element of the batch.
template <class T>
double mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    require_same_shape(pred, target, "mse_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = double(pred.values()[i]) - double(target.values()[i]);
        acc += d * d;
    }
    return acc / double(pred.size());
}

template <class T>
Tensor<T> mse_loss_grad(const Tensor<T>& pred, const Tensor<T>& target, double scale = 1.0) {
    require_same_shape(pred, target, "mse_loss");
    Tensor<T> g(pred.n(), pred.c(), pred.h(), pred.w());
    const T f = static_cast<T>(2.0 * scale / double(pred.size()));
    for (std::size_t i = 0; i < g.size(); ++i) g.values()[i] = f * (pred.values()[i] - target.values()[i]);
    return g;
}

namespace detail {

/// Per-layer squared distances, each divided by the per-image element count
/// of its feature map, summed over layers and averaged over the batch.
/// Fills dpred (scaled by `scale`) when non-null.
template <class T>
double perceptual(const Tensor<T>& pred, const Tensor<T>& target, const FeatureExtractor<T>& F, double scale,
                  Tensor<T>* dpred) {
    require_same_shape(pred, target, "perceptual_loss");
    const auto tp = F.run(pred);
    const auto tt = F.run(target);
    const double M = pred.n();
    double total = 0.0;
    std::vector<Tensor<T>> dfeat;
    for (int layer : F.layers()) {
        const auto& a = F.feature(tp, layer);
        const auto& b = F.feature(tt, layer);
        const double per_image = double(a.item());
        double acc = 0.0;
        Tensor<T> d(a.n(), a.c(), a.h(), a.w());
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double diff = double(a.values()[i]) - double(b.values()[i]);
            acc += diff * diff;
            d.values()[i] = static_cast<T>(2.0 * scale * diff / (per_image * M));
        }
        total += acc / per_image;
        if (dpred) dfeat.push_back(std::move(d));
    }
    if (dpred) *dpred = F.backward(tp, dfeat);
    return total / M;
}

}  // namespace detail

template <class T>
double perceptual_loss(const Tensor<T>& pred, const Tensor<T>& target, const FeatureExtractor<T>& F) {
    return detail::perceptual<T>(pred, target, F, 1.0, nullptr);
}

/// Batch mean of -1/2 * sum_j (1 + log_var_j - mu_j^2 - exp(log_var_j)).
template <class T>
double kl_loss(const Tensor<T>& mu, const Tensor<T>& log_var) {
    require_same_shape(mu, log_var, "kl_loss");
    if (!mu.all_finite() || !log_var.all_finite()) throw ValidationError("kl_loss: non-finite latent statistics");
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double m = mu.values()[i], lv = log_var.values()[i];
        acc += -0.5 * (1.0 + lv - m * m - std::exp(lv));
    }
    return acc / double(mu.n());
}

template <class T>
LossBreakdown assemble(double mse_term, double perceptual_term, double kl_term, const LossWeights& w) {
    return {mse_term + w.beta * perceptual_term + w.alpha * kl_term, mse_term, perceptual_term, kl_term};
}

/// Loss value only. latent may be null (bottleneck off); F may be null when beta = 0.
template <class T>
LossBreakdown hybrid_loss(const Tensor<T>& pred, const Tensor<T>& target, const LatentSample<T>* latent,
                          const FeatureExtractor<T>* F, const LossWeights& w) {
    w.validate();
    const double m = mse_loss(pred, target);
    double perc = 0.0;
    if (w.beta != 0.0) {
        if (!F) throw ValidationError("hybrid_loss: perceptual weight set but no feature extractor");
        perc = perceptual_loss(pred, target, *F);
    }
    const double kl = latent ? kl_loss(latent->mu, latent->log_var) : 0.0;
    return assemble<T>(m, perc, kl, w);
}

template <class T>
struct LossAndGrad {
    LossBreakdown loss;
    OutputGrad<T> grad;
};

/// Loss value plus its gradients with respect to the network output and
/// the latent statistics, ready for backward().
template <class T>
LossAndGrad<T> hybrid_loss_grad(const Tensor<T>& pred, const Tensor<T>& target, const LatentSample<T>* latent,
                                const FeatureExtractor<T>* F, const LossWeights& w) {
    w.validate();
    LossAndGrad<T> out;
    const double m = mse_loss(pred, target);
    out.grad.dy = mse_loss_grad(pred, target);
    double perc = 0.0;
    if (w.beta != 0.0) {
        if (!F) throw ValidationError("hybrid_loss: perceptual weight set but no feature extractor");
        Tensor<T> dperc;
        perc = detail::perceptual<T>(pred, target, *F, w.beta, &dperc);
        for (std::size_t i = 0; i < dperc.size(); ++i) out.grad.dy.values()[i] += dperc.values()[i];
    }
    double kl = 0.0;
    if (latent) {
        kl = kl_loss(latent->mu, latent->log_var);
        const Tensor<T>& mu = latent->mu;
        out.grad.dmu = Tensor<T>(mu.n(), mu.c(), 1, 1);
        out.grad.dlog_var = Tensor<T>(mu.n(), mu.c(), 1, 1);
        const double f = w.alpha / double(mu.n());
        for (std::size_t i = 0; i < mu.size(); ++i) {
            out.grad.dmu.values()[i] = static_cast<T>(f * double(mu.values()[i]));
            out.grad.dlog_var.values()[i] =
                static_cast<T>(f * 0.5 * (std::exp(double(latent->log_var.values()[i])) - 1.0));
        }
    }
    out.loss = assemble<T>(m, perc, kl, w);
    return out;
}

/// Parameter gradients of the hybrid loss on one batch.
template <class T>
struct GradientResult {
    LossBreakdown loss;
    ParameterSet<T> grads;
};

template <class T>
GradientResult<T> gradients(const ParameterSet<T>& p, const RVAEConfig& c, const Tensor<T>& input,
                            const Tensor<T>& target, EpsSource eps, const FeatureExtractor<T>* F,
                            const LossWeights& w) {
    const auto fwd = forward(p, c, input, eps);
    auto lg = hybrid_loss_grad(fwd.y, target, fwd.latent ? &*fwd.latent : nullptr, F, w);
    return {lg.loss, backward(p, c, fwd, lg.grad)};
}

}  // namespace sswl
