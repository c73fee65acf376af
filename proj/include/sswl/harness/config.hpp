#pragma once

/// Experiment description in flat `key = value` text. `#` starts a comment.
/// Relative paths resolve against the directory of the spec file. Every
/// problem in a file is collected and reported together.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sswl/checkpoint.hpp"
#include "sswl/dose_sim.hpp"
#include "sswl/feature_extractor.hpp"
#include "sswl/trainer.hpp"

namespace sswl::harness {

namespace fs = std::filesystem;

inline constexpr const char* data_root_env = "SSWL_DATA_ROOT";

struct ExperimentSpec {
    fs::path dataset_root;
    fs::path test_root;
    std::optional<fs::path> cross_domain_root;
    double val_fraction = 0.15;
    NormalizationSpec norm;
    /// Downstream targets window-leveled instead of normalized; inputs stay normalized.
    std::optional<WindowSpec> target_window;

    PretextTask pretext = PretextTask::sswl();
    std::vector<LabeledSize> labeled_sizes{250, 500, 1000, labeled_full};
    int repeats = 5;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

    RVAEConfig model;
    TrainConfig train;
    LossWeights loss;
    FeatureDescriptor features;
    NoiseScaleModel noise_model = NoiseScaleModel::excess_quanta;
    std::optional<WindowSpec> eval_window;
    fs::path output_root = "runs";

    void validate() const {
        std::vector<std::string> errs;
        const auto check = [&](auto&& fn) {
            try {
                fn();
            } catch (const ValidationError& e) {
                errs.emplace_back(e.what());
            }
        };
        if (dataset_root.empty()) errs.emplace_back("dataset.root is not set (and " + std::string(data_root_env) + " is empty)");
        if (test_root.empty()) errs.emplace_back("dataset.test_root is not set");
        if (labeled_sizes.empty()) errs.emplace_back("sweep.labeled_sizes must not be empty");
        if (repeats < 1) errs.emplace_back("sweep.repeats must be at least 1");
        if (seeds.size() < std::size_t(std::max(repeats, 0)))
            errs.emplace_back("sweep.seeds lists " + std::to_string(seeds.size()) + " seeds but sweep.repeats is " +
                              std::to_string(repeats));
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) errs.emplace_back("dataset.val_fraction must lie in (0, 1)");
        check([&] { norm.validate(); });
        check([&] { pretext.validate(); });
        check([&] { model.validate(); });
        check([&] { train.validate(); });
        check([&] { loss.validate(); });
        if (eval_window) check([&] { eval_window->validate(); });
        if (target_window) check([&] { target_window->validate(); });
        if (target_window && eval_window)
            errs.emplace_back("eval.window must be none when dataset.target_window is set");
        if (!errs.empty()) {
            std::string msg;
            for (const auto& e : errs) msg += (msg.empty() ? "" : "\n") + e;
            throw ValidationError(msg);
        }
    }

    /// Seeds actually run: the first `repeats` entries.
    std::vector<std::uint64_t> run_seeds() const {
        return {seeds.begin(), seeds.begin() + std::min<std::ptrdiff_t>(repeats, std::ptrdiff_t(seeds.size()))};
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double parse_real(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) throw ValidationError("not a finite number: '" + s + "'");
    return v;
}

inline long long parse_int(const std::string& s) {
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (s.empty() || end != s.c_str() + s.size()) throw ValidationError("not an integer: '" + s + "'");
    return v;
}

inline std::uint64_t parse_u64(const std::string& s) {
    char* end = nullptr;
    if (s.empty() || s[0] == '-') throw ValidationError("not a non-negative integer: '" + s + "'");
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size()) throw ValidationError("not a non-negative integer: '" + s + "'");
    return v;
}

inline bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ValidationError("not a boolean: '" + s + "'");
}

inline std::string real_text(double v) {
    char buf[40];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class V, class F>
std::string join(const std::vector<V>& v, F&& f) {
    std::string out;
    for (const auto& x : v) out += (out.empty() ? "" : ", ") + f(x);
    return out;
}

inline std::optional<WindowSpec> parse_window(const std::string& s) {
    if (s == "none") return std::nullopt;
    const auto parts = split_list(s);
    if (parts.size() == 1) return WindowSpec::preset(parts[0]);
    if (parts.size() != 2) throw ValidationError("window must be 'none', a preset name or 'center, width'");
    WindowSpec w;
    w.center = parse_real(parts[0]);
    w.width = parse_real(parts[1]);
    return w;
}

inline std::string window_text(const std::optional<WindowSpec>& w) {
    return w ? real_text(w->center) + ", " + real_text(w->width) : "none";
}

}  // namespace detail

/// Keys in canonical order.
inline const std::vector<std::string>& spec_keys() {
    static const std::vector<std::string> keys{
        "dataset.root",                "dataset.test_root",           "dataset.cross_domain_root",
        "dataset.val_fraction",        "dataset.hu_min",              "dataset.hu_max",
        "dataset.target_window",       "pretext.kind",                "pretext.window_center",
        "pretext.window_width",        "pretext.nac_sigma",           "pretext.loss",
        "sweep.labeled_sizes",         "sweep.repeats",               "sweep.seeds",
        "model.layers",                "model.filters",               "model.kernel",
        "model.latent_dim",            "model.bottleneck_hidden",     "model.bottleneck",
        "model.skip_pairs",            "model.input_size",            "train.batch_size",
        "train.learning_rate",         "train.lr_decay_factor",       "train.lr_decay_every_epochs",
        "train.adam_beta1",            "train.adam_beta2",            "train.adam_eps",
        "train.pretext_epochs",        "train.finetune_epochs",       "train.precision",
        "loss.beta",                   "loss.alpha",                  "features.kind",
        "features.seed",               "features.weights",            "features.layers",
        "features.channels",           "noise.model",                 "eval.window",
        "output.root"};
    return keys;
}

/// Keys that vary across the runs of one sweep and so are left out of the fingerprint.
inline bool is_sweep_key(const std::string& key) {
    return (key.rfind("pretext.", 0) == 0 && key != "pretext.loss") || key.rfind("sweep.", 0) == 0 ||
           key == "output.root";
}

/// Parses spec text. `base` resolves relative paths.
inline ExperimentSpec parse_spec(const std::string& text, const fs::path& base = {}) {
    using namespace detail;
    ExperimentSpec s;
    std::vector<std::string> errs;
    std::map<std::string, std::string> kv;
    {
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        const std::set<std::string> known(spec_keys().begin(), spec_keys().end());
        while (std::getline(in, line)) {
            ++lineno;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                errs.push_back("line " + std::to_string(lineno) + ": expected 'key = value'");
                continue;
            }
            const auto key = trim(line.substr(0, eq));
            const auto value = trim(line.substr(eq + 1));
            if (!known.count(key)) {
                errs.push_back("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
                continue;
            }
            if (!kv.emplace(key, value).second)
                errs.push_back("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
    }
    const auto path_of = [&](const std::string& v) {
        fs::path p(v);
        return p.is_relative() && !base.empty() ? base / p : p;
    };
    bool seeds_given = false;
    std::optional<WindowSpec> window = WindowSpec::preset("abdomen");
    PretextKind kind = PretextKind::sswl;
    double nac_sigma = 0.05;
    const std::map<std::string, std::function<void(const std::string&)>> setters{
        {"dataset.root", [&](const std::string& v) { s.dataset_root = path_of(v); }},
        {"dataset.test_root", [&](const std::string& v) { s.test_root = path_of(v); }},
        {"dataset.cross_domain_root",
         [&](const std::string& v) {
             if (v == "none") s.cross_domain_root.reset();
             else s.cross_domain_root = path_of(v);
         }},
        {"dataset.val_fraction", [&](const std::string& v) { s.val_fraction = parse_real(v); }},
        {"dataset.hu_min", [&](const std::string& v) { s.norm.hu_min = parse_real(v); }},
        {"dataset.hu_max", [&](const std::string& v) { s.norm.hu_max = parse_real(v); }},
        {"pretext.kind", [&](const std::string& v) { kind = pretext_from_string(v); }},
        {"pretext.window_center", [&](const std::string& v) { window->center = parse_real(v); }},
        {"pretext.window_width", [&](const std::string& v) { window->width = parse_real(v); }},
        {"pretext.nac_sigma", [&](const std::string& v) { nac_sigma = parse_real(v); }},
        {"pretext.loss",
         [&](const std::string& v) {
             if (v != "same" && v != "mse") throw ValidationError("must be 'same' or 'mse'");
             s.train.pretext_mse_only = v == "mse";
         }},
        {"sweep.labeled_sizes",
         [&](const std::string& v) {
             s.labeled_sizes.clear();
             for (const auto& item : split_list(v)) s.labeled_sizes.push_back(labeled_size_from_string(item));
         }},
        {"sweep.repeats", [&](const std::string& v) { s.repeats = int(parse_int(v)); }},
        {"sweep.seeds",
         [&](const std::string& v) {
             s.seeds.clear();
             for (const auto& item : split_list(v)) s.seeds.push_back(parse_u64(item));
             seeds_given = true;
         }},
        {"model.layers",
         [&](const std::string& v) {
             s.model.n_enc_layers = s.model.n_dec_layers = int(parse_int(v));
             if (s.model.n_enc_layers >= 1) s.model.skip_pairs = RVAEConfig::default_skip_pairs(s.model.n_enc_layers);
         }},
        {"model.filters", [&](const std::string& v) { s.model.filters = int(parse_int(v)); }},
        {"model.kernel", [&](const std::string& v) { s.model.kernel = int(parse_int(v)); }},
        {"model.latent_dim", [&](const std::string& v) { s.model.latent_dim = int(parse_int(v)); }},
        {"model.bottleneck_hidden", [&](const std::string& v) { s.model.bottleneck_hidden = int(parse_int(v)); }},
        {"model.bottleneck", [&](const std::string& v) { s.model.bottleneck_enabled = parse_bool(v); }},
        {"model.skip_pairs",
         [&](const std::string& v) {
             if (v == "default") return;
             s.model.skip_pairs.clear();
             if (v == "none") return;
             for (const auto& item : split_list(v)) {
                 const auto ab = split_list(item, ':');
                 if (ab.size() != 2) throw ValidationError("skip pairs are written 'enc:dec, ...'");
                 s.model.skip_pairs.emplace_back(int(parse_int(ab[0])), int(parse_int(ab[1])));
             }
         }},
        {"model.input_size", [&](const std::string& v) { s.model.input_h = s.model.input_w = int(parse_int(v)); }},
        {"train.batch_size", [&](const std::string& v) { s.train.batch_size = int(parse_int(v)); }},
        {"train.learning_rate", [&](const std::string& v) { s.train.learning_rate = parse_real(v); }},
        {"train.lr_decay_factor", [&](const std::string& v) { s.train.lr_decay_factor = parse_real(v); }},
        {"train.lr_decay_every_epochs", [&](const std::string& v) { s.train.lr_decay_every_epochs = int(parse_int(v)); }},
        {"train.adam_beta1", [&](const std::string& v) { s.train.adam.beta1 = parse_real(v); }},
        {"train.adam_beta2", [&](const std::string& v) { s.train.adam.beta2 = parse_real(v); }},
        {"train.adam_eps", [&](const std::string& v) { s.train.adam.eps = parse_real(v); }},
        {"train.pretext_epochs", [&](const std::string& v) { s.train.pretext_epochs = int(parse_int(v)); }},
        {"train.finetune_epochs", [&](const std::string& v) { s.train.finetune_epochs = int(parse_int(v)); }},
        {"train.precision", [&](const std::string& v) { s.train.precision = precision_from_string(v); }},
        {"loss.beta", [&](const std::string& v) { s.loss.beta = parse_real(v); }},
        {"loss.alpha", [&](const std::string& v) { s.loss.alpha = parse_real(v); }},
        {"features.kind",
         [&](const std::string& v) {
             if (v == "fixed_random") s.features.kind = FeatureDescriptor::Kind::fixed_random;
             else if (v == "external_weights") s.features.kind = FeatureDescriptor::Kind::external_weights;
             else throw ValidationError("must be 'fixed_random' or 'external_weights'");
         }},
        {"features.seed", [&](const std::string& v) { s.features.seed = parse_u64(v); }},
        {"features.weights", [&](const std::string& v) { s.features.weights = path_of(v); }},
        {"features.layers",
         [&](const std::string& v) {
             s.features.layers.clear();
             for (const auto& item : split_list(v)) s.features.layers.push_back(int(parse_int(item)));
         }},
        {"features.channels",
         [&](const std::string& v) {
             s.features.channels.clear();
             for (const auto& item : split_list(v)) s.features.channels.push_back(int(parse_int(item)));
         }},
        {"noise.model", [&](const std::string& v) { s.noise_model = noise_model_from_string(v); }},
        {"eval.window", [&](const std::string& v) { s.eval_window = parse_window(v); }},
        {"dataset.target_window", [&](const std::string& v) { s.target_window = parse_window(v); }},
        {"output.root", [&](const std::string& v) { s.output_root = path_of(v); }},
    };
    // Canonical order so that model.layers resets skip pairs before model.skip_pairs applies.
    for (const auto& key : spec_keys()) {
        auto it = kv.find(key);
        if (it == kv.end()) continue;
        try {
            setters.at(key)(it->second);
        } catch (const ValidationError& e) {
            errs.push_back(key + ": " + e.what());
        }
    }
    if (!kv.count("dataset.root"))
        if (const char* env = std::getenv(data_root_env); env && *env) s.dataset_root = env;
    if (!seeds_given && s.repeats >= 1) {
        s.seeds.clear();
        for (int i = 1; i <= s.repeats; ++i) s.seeds.push_back(std::uint64_t(i));
    }
    s.pretext.kind = kind;
    s.pretext.window = kind == PretextKind::sswl ? window : std::nullopt;
    s.pretext.nac_sigma = kind == PretextKind::noisy_as_clean ? nac_sigma : 0.0;
    if (kind == PretextKind::sswl && window) {
        try {
            window->validate();
        } catch (const ValidationError& e) {
            errs.push_back(std::string("pretext.window: ") + e.what());
        }
    }
    if (kind == PretextKind::noisy_as_clean && !(nac_sigma > 0.0)) errs.push_back("pretext.nac_sigma must be positive");
    if (s.features.kind == FeatureDescriptor::Kind::external_weights && s.features.weights.empty())
        errs.push_back("features.weights is required for external_weights");
    if (errs.empty()) {
        try {
            s.validate();
        } catch (const ValidationError& e) {
            errs.emplace_back(e.what());
        }
    }
    if (!errs.empty()) {
        std::string msg = "invalid experiment spec:";
        for (const auto& e : errs) msg += "\n  " + e;
        throw ValidationError(msg);
    }
    return s;
}

inline ExperimentSpec load_spec(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open spec file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_spec(ss.str(), path.parent_path());
}

/// Every key with its effective value, in canonical order.
inline std::vector<std::pair<std::string, std::string>> spec_entries(const ExperimentSpec& s) {
    using namespace detail;
    const auto str = [](const auto& v) { return std::to_string(v); };
    const auto window = s.pretext.window.value_or(WindowSpec::preset("abdomen"));
    std::string skips;
    for (const auto& [e, d] : s.model.skip_pairs) skips += (skips.empty() ? "" : ", ") + str(e) + ":" + str(d);
    const std::vector<std::string> values{
        s.dataset_root.string(),
        s.test_root.string(),
        s.cross_domain_root ? s.cross_domain_root->string() : "none",
        real_text(s.val_fraction),
        real_text(s.norm.hu_min),
        real_text(s.norm.hu_max),
        window_text(s.target_window),
        to_string(s.pretext.kind),
        real_text(window.center),
        real_text(window.width),
        real_text(s.pretext.kind == PretextKind::noisy_as_clean ? s.pretext.nac_sigma : 0.05),
        s.train.pretext_mse_only ? "mse" : "same",
        join(s.labeled_sizes, [](const LabeledSize& l) { return sswl::to_string(l); }),
        str(s.repeats),
        join(s.seeds, [](std::uint64_t v) { return std::to_string(v); }),
        str(s.model.n_enc_layers),
        str(s.model.filters),
        str(s.model.kernel),
        str(s.model.latent_dim),
        str(s.model.bottleneck_hidden),
        s.model.bottleneck_enabled ? "true" : "false",
        skips.empty() ? "none" : skips,
        s.model.input_h == s.model.input_w ? str(s.model.input_h) : "?",
        str(s.train.batch_size),
        real_text(s.train.learning_rate),
        real_text(s.train.lr_decay_factor),
        str(s.train.lr_decay_every_epochs),
        real_text(s.train.adam.beta1),
        real_text(s.train.adam.beta2),
        real_text(s.train.adam.eps),
        str(s.train.pretext_epochs),
        str(s.train.finetune_epochs),
        sswl::to_string(s.train.precision),
        real_text(s.loss.beta),
        real_text(s.loss.alpha),
        s.features.kind == FeatureDescriptor::Kind::fixed_random ? "fixed_random" : "external_weights",
        std::to_string(s.features.seed),
        s.features.weights.empty() ? "none" : s.features.weights.string(),
        join(s.features.layers, [](int v) { return std::to_string(v); }),
        join(s.features.channels, [](int v) { return std::to_string(v); }),
        sswl::to_string(s.noise_model),
        window_text(s.eval_window),
        s.output_root.string(),
    };
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < spec_keys().size(); ++i) out.emplace_back(spec_keys()[i], values[i]);
    return out;
}

inline std::string spec_text(const ExperimentSpec& s) {
    std::string out;
    for (const auto& [k, v] : spec_entries(s)) {
        if (k == "features.weights" && v == "none") continue;
        out += k + " = " + v + "\n";
    }
    return out;
}

/// CRC-64 of the canonical text without the per-run sweep keys. Runs that
/// can be compared in one report share a fingerprint.
inline std::string spec_fingerprint(const ExperimentSpec& s) {
    std::string text;
    for (const auto& [k, v] : spec_entries(s))
        if (!is_sweep_key(k)) text += k + " = " + v + "\n";
    return crc64_hex(crc64({reinterpret_cast<const unsigned char*>(text.data()), text.size()}));
}

}  // namespace sswl::harness
