#pragma once

/// Two-phase training: optional pretext pretraining over labeled and
/// unlabeled LDCT, then fine-tuning on labeled (LDCT, FDCT) pairs with the
/// same model and loss.

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sswl/checkpoint.hpp"
#include "sswl/ct_dataio.hpp"
#include "sswl/losses.hpp"
#include "sswl/metrics.hpp"
#include "sswl/windowing.hpp"

namespace sswl {

// ---------------------------------------------------------------------------
// Configuration

enum class PretextKind { none, sswl, reconstruction, noisy_as_clean };

inline std::string to_string(PretextKind k) {
    switch (k) {
        case PretextKind::none: return "none";
        case PretextKind::sswl: return "sswl";
        case PretextKind::reconstruction: return "reconstruction";
        case PretextKind::noisy_as_clean: return "noisy_as_clean";
    }
    return "?";
}

inline PretextKind pretext_from_string(const std::string& s) {
    if (s == "none") return PretextKind::none;
    if (s == "sswl") return PretextKind::sswl;
    if (s == "reconstruction" || s == "rec") return PretextKind::reconstruction;
    if (s == "noisy_as_clean" || s == "nac") return PretextKind::noisy_as_clean;
    throw ValidationError("unknown pretext '" + s + "'");
}

struct PretextTask {
    PretextKind kind = PretextKind::none;
    std::optional<WindowSpec> window;  // sswl only
    double nac_sigma = 0.0;            // noisy_as_clean only, normalized units

    static PretextTask none() { return {}; }
    static PretextTask sswl(WindowSpec w = WindowSpec::preset("abdomen")) { return {PretextKind::sswl, w, 0.0}; }
    static PretextTask reconstruction() { return {PretextKind::reconstruction, std::nullopt, 0.0}; }
    static PretextTask noisy_as_clean(double sigma = 0.05) { return {PretextKind::noisy_as_clean, std::nullopt, sigma}; }

    void validate() const {
        if (window.has_value() != (kind == PretextKind::sswl))
            throw ValidationError("a window is required exactly when the pretext is sswl");
        if ((nac_sigma > 0.0) != (kind == PretextKind::noisy_as_clean))
            throw ValidationError("nac_sigma must be positive exactly when the pretext is noisy_as_clean");
        if (window) window->validate();
    }
};

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    int batch_size = 10;
    double learning_rate = 1e-5;
    double lr_decay_factor = 0.1;
    int lr_decay_every_epochs = 8;
    AdamParams adam;
    int pretext_epochs = 0;
    int finetune_epochs = 10;
    std::uint64_t seed = 0;
    Precision precision = Precision::f32;
    /// Pretext phase trains on MSE alone instead of the downstream loss.
    bool pretext_mse_only = false;

    void validate() const {
        if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
        if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
        if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
            throw ValidationError("lr_decay_factor must lie in (0, 1]");
        if (lr_decay_every_epochs < 1) throw ValidationError("lr_decay_every_epochs must be at least 1");
        if (pretext_epochs < 0 || finetune_epochs < 0) throw ValidationError("epoch counts must be non-negative");
    }

    /// Step-decayed rate for a zero-based epoch.
    double lr_at(int epoch) const {
        return learning_rate * std::pow(lr_decay_factor, double(epoch / lr_decay_every_epochs));
    }
};

// ---------------------------------------------------------------------------
// Data

/// Inputs and targets as (N, 1, H, W) batches.
template <class T>
struct PairSet {
    Tensor<T> inputs;
    Tensor<T> targets;
    std::vector<std::string> ids;

    int size() const noexcept { return inputs.n(); }
    bool empty() const noexcept { return inputs.n() == 0; }

    Tensor<T> gather(const Tensor<T>& src, std::span<const int> idx) const {
        Tensor<T> out(int(idx.size()), 1, src.h(), src.w());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto s = src.sample(idx[i]);
            std::copy(s.begin(), s.end(), out.sample(int(i)).begin());
        }
        return out;
    }
};

/// Images in normalized units, resized to the model input grid.
struct Preprocess {
    NormalizationSpec norm;
    int height = 256;
    int width = 256;
    /// When set, denoising targets are window-leveled FDCT; inputs stay normalized.
    std::optional<WindowSpec> target_window;
};

/// Loads and caches the slices of one dataset root.
class SliceStore {
public:
    explicit SliceStore(ScanManifest manifest) : manifest_(std::move(manifest)) {
        for (std::size_t i = 0; i < manifest_.entries.size(); ++i) index_[manifest_.entries[i].path] = i;
    }

    const ScanManifest& manifest() const noexcept { return manifest_; }

    /// HU slice resized to (h, w).
    const CTSlice& hu(const std::string& rel_path, int h, int w) {
        const auto key = rel_path + "@" + std::to_string(h) + "x" + std::to_string(w);
        if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        auto it = index_.find(rel_path);
        if (it == index_.end()) throw ValidationError("slice '" + rel_path + "' is not in the manifest");
        CTSlice s = read_slice(manifest_, manifest_.entries[it->second]);
        return cache_.emplace(key, resize_bilinear(s, h, w)).first->second;
    }

private:
    ScanManifest manifest_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, CTSlice> cache_;
};

namespace detail {

template <class T>
void put_image(Tensor<T>& dst, int n, const CTSlice& s) {
    auto out = dst.sample(n);
    std::transform(s.pixels.begin(), s.pixels.end(), out.begin(), [](float v) { return static_cast<T>(v); });
}

}  // namespace detail

/// (normalized LDCT, FDCT) pairs; FDCT is normalized or window-leveled per pre.target_window.
template <class T>
PairSet<T> build_denoising_pairs(std::span<const SlicePair> pairs, SliceStore& store, const Preprocess& pre) {
    PairSet<T> out{Tensor<T>(int(pairs.size()), 1, pre.height, pre.width),
                   Tensor<T>(int(pairs.size()), 1, pre.height, pre.width),
                   {}};
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        detail::put_image(out.inputs, int(i), normalize_hu(store.hu(pairs[i].ldct, pre.height, pre.width), pre.norm));
        const CTSlice& fdct = store.hu(pairs[i].fdct, pre.height, pre.width);
        detail::put_image(out.targets, int(i),
                          pre.target_window ? apply_window_level(fdct, *pre.target_window) : normalize_hu(fdct, pre.norm));
        out.ids.push_back(pairs[i].ldct);
    }
    return out;
}

/// Pretext pairs over the given LDCT slices.
///   sswl:           normalized LDCT -> window-leveled LDCT
///   reconstruction: normalized LDCT -> itself
///   noisy_as_clean: normalized LDCT + N(0, nac_sigma) -> normalized LDCT
template <class T>
PairSet<T> build_pretext_pairs(std::span<const std::string> ldct, const PretextTask& task, SliceStore& store,
                               const Preprocess& pre, std::uint64_t seed) {
    task.validate();
    if (task.kind == PretextKind::none) return {};
    const int n = int(ldct.size());
    PairSet<T> out{Tensor<T>(n, 1, pre.height, pre.width), Tensor<T>(n, 1, pre.height, pre.width), {}};
    for (int i = 0; i < n; ++i) {
        const CTSlice& hu = store.hu(ldct[std::size_t(i)], pre.height, pre.width);
        const CTSlice norm = normalize_hu(hu, pre.norm);
        detail::put_image(out.inputs, i, norm);
        switch (task.kind) {
            case PretextKind::sswl: detail::put_image(out.targets, i, apply_window_level(hu, *task.window)); break;
            case PretextKind::reconstruction: detail::put_image(out.targets, i, norm); break;
            case PretextKind::noisy_as_clean: {
                detail::put_image(out.targets, i, norm);
                auto rng = make_rng(seed, {stream::nac, std::uint64_t(i)});
                std::normal_distribution<double> noise(0.0, task.nac_sigma);
                for (auto& v : out.inputs.sample(i)) v = static_cast<T>(double(v) + noise(rng));
                break;
            }
            case PretextKind::none: break;
        }
        out.ids.push_back(ldct[std::size_t(i)]);
    }
    return out;
}

/// Pretext sources for a split: LDCT of the labeled pairs followed by the unlabeled LDCT.
inline std::vector<std::string> pretext_sources(const DatasetSplit& split) {
    std::vector<std::string> out;
    for (const auto& p : split.labeled) out.push_back(p.ldct);
    out.insert(out.end(), split.unlabeled.begin(), split.unlabeled.end());
    return out;
}

template <class T>
PairSet<T> build_pretext_pairs(const DatasetSplit& split, const PretextTask& task, SliceStore& store,
                               const Preprocess& pre, std::uint64_t seed) {
    const auto src = pretext_sources(split);
    return build_pretext_pairs<T>(std::span<const std::string>(src), task, store, pre, seed);
}

// ---------------------------------------------------------------------------
// Optimization

template <class T>
void adam_step(TrainState<T>& s, const ParameterSet<T>& grads, double lr, const AdamParams& a) {
    ++s.step;
    const double c1 = 1.0 - std::pow(a.beta1, double(s.step));
    const double c2 = 1.0 - std::pow(a.beta2, double(s.step));
    const T b1 = T(a.beta1), b2 = T(a.beta2);
    for (std::size_t k = 0; k < s.params.arrays().size(); ++k) {
        auto& w = s.params.arrays()[k].values;
        auto& m = s.adam_m.arrays()[k].values;
        auto& v = s.adam_v.arrays()[k].values;
        const auto& g = grads.arrays()[k].values;
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const double mhat = double(m[i]) / c1, vhat = double(v[i]) / c2;
            w[i] = static_cast<T>(double(w[i]) - lr * mhat / (std::sqrt(vhat) + a.eps));
        }
    }
}

/// Mean per-image MSE of the deterministic (eps = 0) prediction.
template <class T>
double validation_mse(const ParameterSet<T>& p, const RVAEConfig& c, const PairSet<T>& val, int batch_size) {
    if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (int start = 0; start < val.size(); start += batch_size) {
        std::vector<int> idx(static_cast<std::size_t>(std::min(batch_size, val.size() - start)));
        std::iota(idx.begin(), idx.end(), start);
        const auto fwd = forward(p, c, val.gather(val.inputs, idx), EpsSource::zeros());
        const auto tgt = val.gather(val.targets, idx);
        for (int i = 0; i < fwd.y.n(); ++i) acc += mse(image_of(fwd.y, i), image_of(tgt, i));
    }
    return acc / double(val.size());
}

/// Non-finite training loss; carries the state as of the last completed epoch.
template <class T>
class DivergenceError : public Error {
public:
    DivergenceError(TrainState<T> last_good, const std::string& what) : Error(what), last_good_(std::move(last_good)) {}
    const TrainState<T>& last_good() const noexcept { return last_good_; }

private:
    TrainState<T> last_good_;
};

inline std::uint64_t phase_tag(const std::string& phase) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char ch : phase) h = (h ^ ch) * 1099511628211ull;
    return h;
}

template <class T>
struct PhaseHooks {
    /// Called after every epoch with the updated state and that epoch's wall time.
    std::function<void(const TrainState<T>&, double wall_seconds)> on_epoch;
};

/// Runs epochs state.epoch .. epochs-1 of shuffled minibatch Adam on the
/// hybrid loss, keeping the parameters with the lowest validation MSE.
template <class T>
TrainState<T> train_phase(TrainState<T> state, const PairSet<T>& pairs, const TrainConfig& cfg, int epochs,
                          const RVAEConfig& model, const LossWeights& weights, const FeatureExtractor<T>* F,
                          const PairSet<T>& val, const PhaseHooks<T>& hooks = {}) {
    cfg.validate();
    if (state.epoch >= epochs) return state;
    if (pairs.empty()) throw ValidationError("train_phase: no training pairs");
    const std::uint64_t tag = phase_tag(state.phase);
    const int N = pairs.size();
    while (state.epoch < epochs) {
        const auto t0 = std::chrono::steady_clock::now();
        const TrainState<T> epoch_start = state;
        const double lr = cfg.lr_at(state.epoch);
        std::vector<int> order(static_cast<std::size_t>(N));
        std::iota(order.begin(), order.end(), 0);
        auto rng = make_rng(state.seed, {stream::shuffle, tag, std::uint64_t(state.epoch)});
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        int batch = 0;
        for (int start = 0; start < N; start += cfg.batch_size, ++batch) {
            const std::span<const int> idx(order.data() + start, std::size_t(std::min(cfg.batch_size, N - start)));
            const auto x = pairs.gather(pairs.inputs, idx);
            const auto y = pairs.gather(pairs.targets, idx);
            const auto eps = EpsSource::sample(
                derive_seed(state.seed, {stream::eps, tag, std::uint64_t(state.epoch), std::uint64_t(batch)}));
            const std::string where = "phase '" + state.phase + "' epoch " + std::to_string(state.epoch);
            GradientResult<T> g;
            try {
                g = gradients(state.params, model, x, y, eps, F, weights);
            } catch (const NumericError& e) {
                throw DivergenceError<T>(epoch_start, std::string(e.what()) + " in " + where);
            }
            if (!std::isfinite(g.loss.total) || !g.grads.all_finite())
                throw DivergenceError<T>(epoch_start, "non-finite loss in " + where);
            loss_sum += g.loss.total * double(idx.size());
            adam_step(state, g.grads, lr, cfg.adam);
        }
        double val_mse = 0.0;
        try {
            val_mse = validation_mse(state.params, model, val, cfg.batch_size);
        } catch (const NumericError& e) {
            throw DivergenceError<T>(epoch_start, std::string(e.what()) + " validating phase '" + state.phase +
                                                      "' epoch " + std::to_string(state.epoch));
        }
        state.log.push_back({state.epoch, state.phase, lr, loss_sum / N, val_mse});
        ++state.epoch;
        if (std::isnan(val_mse) || val_mse < state.best_val) {
            state.best_val = std::isnan(val_mse) ? state.best_val : val_mse;
            state.best_epoch = state.epoch - 1;
            state.best_params = state.params;
        }
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (hooks.on_epoch) hooks.on_epoch(state, wall);
    }
    return state;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Space in which metrics are computed: the normalized model range, or a
/// display window applied after mapping predictions back to HU.
struct EvalSpace {
    std::optional<WindowSpec> window;
};

template <class T>
struct Evaluation {
    std::vector<MetricReport> per_slice;
    std::vector<std::string> ids;
    MetricReport mean;
    Tensor<T> predictions;
};

template <class T>
Tensor<T> to_eval_space(const Tensor<T>& t, const EvalSpace& space, const NormalizationSpec& norm) {
    if (!space.window) return t;
    Tensor<T> out = t;
    const auto aff = window_to_affine(*space.window);
    const double span = norm.hu_max - norm.hu_min;
    for (auto& v : out.values())
        v = static_cast<T>(window_level(double(v) * span + norm.hu_min, aff, *space.window));
    return out;
}

template <class T>
Tensor<T> predict(const ParameterSet<T>& p, const RVAEConfig& c, const Tensor<T>& inputs, int batch_size) {
    Tensor<T> out(inputs.n(), 1, inputs.h(), inputs.w());
    for (int start = 0; start < inputs.n(); start += batch_size) {
        const int m = std::min(batch_size, inputs.n() - start);
        Tensor<T> x(m, 1, inputs.h(), inputs.w());
        for (int i = 0; i < m; ++i) std::copy(inputs.sample(start + i).begin(), inputs.sample(start + i).end(),
                                              x.sample(i).begin());
        const auto fwd = forward(p, c, x, EpsSource::zeros());
        for (int i = 0; i < m; ++i)
            std::copy(fwd.y.sample(i).begin(), fwd.y.sample(i).end(), out.sample(start + i).begin());
    }
    return out;
}

/// Per-slice metrics of predictions against targets, plus their mean.
template <class T>
Evaluation<T> evaluate_predictions(Tensor<T> predictions, const PairSet<T>& pairs, const EvalSpace& space = {},
                                   const NormalizationSpec& norm = {}) {
    if (pairs.empty()) throw ValidationError("evaluate: no test pairs");
    Evaluation<T> ev;
    const auto pred = to_eval_space(predictions, space, norm);
    const auto ref = to_eval_space(pairs.targets, space, norm);
    for (int i = 0; i < pairs.size(); ++i) ev.per_slice.push_back(evaluate_image(image_of(pred, i), image_of(ref, i)));
    ev.ids = pairs.ids;
    ev.mean = aggregate(ev.per_slice);
    ev.predictions = std::move(predictions);
    return ev;
}

template <class T>
Evaluation<T> evaluate_model(const ParameterSet<T>& p, const RVAEConfig& c, const PairSet<T>& pairs, int batch_size,
                             const EvalSpace& space = {}, const NormalizationSpec& norm = {}) {
    return evaluate_predictions(predict(p, c, pairs.inputs, batch_size), pairs, space, norm);
}

// ---------------------------------------------------------------------------
// Two-phase protocol

template <class T>
struct ProtocolData {
    PairSet<T> pretext_train;
    PairSet<T> pretext_val;
    PairSet<T> labeled;
    PairSet<T> validation;
};

template <class T>
ProtocolData<T> build_protocol_data(const DatasetSplit& split, const PretextTask& task, SliceStore& train_store,
                                    const Preprocess& pre, std::uint64_t seed) {
    ProtocolData<T> d;
    d.pretext_train = build_pretext_pairs<T>(split, task, train_store, pre, seed);
    if (task.kind != PretextKind::none) {
        std::vector<std::string> val_ldct;
        for (const auto& p : split.validation) val_ldct.push_back(p.ldct);
        d.pretext_val = build_pretext_pairs<T>(std::span<const std::string>(val_ldct), task, train_store, pre,
                                               derive_seed(seed, {stream::nac, 1}));
    }
    d.labeled = build_denoising_pairs<T>(split.labeled, train_store, pre);
    d.validation = build_denoising_pairs<T>(split.validation, train_store, pre);
    return d;
}

template <class T>
struct ProtocolHooks {
    PhaseHooks<T> pretext;
    PhaseHooks<T> downstream;
    /// Called once with the pretext result before fine-tuning starts.
    std::function<void(const TrainState<T>&)> on_pretext_done;
};

template <class T>
struct ProtocolResult {
    std::optional<TrainState<T>> pretext;
    TrainState<T> downstream;
};

inline const char* pretext_phase = "pretext";
inline const char* downstream_phase = "downstream";

/// Pretext phase (skipped for PretextKind::none or zero pretext epochs), then
/// fine-tuning from the pretext best parameters with fresh optimizer state.
/// resume_downstream / resume_pretext continue interrupted phases.
template <class T>
ProtocolResult<T> run_protocol(const ProtocolData<T>& data, const PretextTask& task, const RVAEConfig& model,
                               const TrainConfig& cfg, const LossWeights& weights, const FeatureExtractor<T>* F,
                               const ProtocolHooks<T>& hooks = {},
                               std::optional<TrainState<T>> resume_pretext = std::nullopt,
                               std::optional<TrainState<T>> resume_downstream = std::nullopt) {
    cfg.validate();
    task.validate();
    ProtocolResult<T> r;
    ParameterSet<T> start = init_params<T>(model, cfg.seed);
    const bool run_pretext = task.kind != PretextKind::none && cfg.pretext_epochs > 0;
    if (run_pretext && !resume_downstream) {
        const LossWeights pw = cfg.pretext_mse_only ? LossWeights{0.0, weights.alpha} : weights;
        TrainState<T> s = resume_pretext ? std::move(*resume_pretext)
                                         : TrainState<T>::fresh(start, cfg.seed, pretext_phase);
        s = train_phase(std::move(s), data.pretext_train, cfg, cfg.pretext_epochs, model, pw, F, data.pretext_val,
                        hooks.pretext);
        if (hooks.on_pretext_done) hooks.on_pretext_done(s);
        start = s.best_params;
        r.pretext = std::move(s);
    }
    TrainState<T> s = resume_downstream ? std::move(*resume_downstream)
                                        : TrainState<T>::fresh(std::move(start), cfg.seed, downstream_phase);
    r.downstream = train_phase(std::move(s), data.labeled, cfg, cfg.finetune_epochs, model, weights, F,
                               data.validation, hooks.downstream);
    return r;
}

/// Window-level pretraining then denoising fine-tuning, evaluated on test.
template <class T>
std::pair<TrainState<T>, MetricReport> run_sswl_idn(const ProtocolData<T>& data, const PairSet<T>& test,
                                                    const WindowSpec& window, const RVAEConfig& model,
                                                    const TrainConfig& cfg, const LossWeights& weights,
                                                    const FeatureExtractor<T>* F) {
    auto r = run_protocol(data, PretextTask::sswl(window), model, cfg, weights, F);
    auto ev = evaluate_model(r.downstream.best_params, model, test, cfg.batch_size);
    return {std::move(r.downstream), ev.mean};
}

}  // namespace sswl
