#pragma once

/// The five command-line verbs as library functions. Each throws
/// ValidationError for bad input (exit code 1) and any other Error for
/// runtime failures (exit code 2); progress goes to the given stream.
///
/// Run directory `{pretext}_{size}_{seed}/`:
///     spec.cfg            effective spec of this run
///     train_log.csv       epoch,phase,lr,train_loss,val_mse,wall_seconds
///     latest.ckpt         state after the last finished epoch (incomplete runs only)
///     pretext_best.ckpt   pretext phase state (runs with a pretext)
///     final.ckpt          downstream state; best_params is the selected model
///     metrics_test.csv    slice,psnr,ssim,mse,nrmse plus a `mean` row
///     metrics_cross.csv   same, on the cross-domain test set (when configured)
///     run_summary.csv     written last; its presence marks the run complete

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "sswl/checkpoint.hpp"
#include "sswl/dose_sim.hpp"
#include "sswl/harness/config.hpp"
#include "sswl/harness/csv.hpp"
#include "sswl/harness/render.hpp"
#include "sswl/trainer.hpp"

namespace sswl::harness {

enum ExitCode : int { exit_ok = 0, exit_validation = 1, exit_runtime = 2 };

template <class F>
decltype(auto) with_precision(Precision p, F&& f) {
    if (p == Precision::f32) return f.template operator()<float>();
    return f.template operator()<double>();
}

inline std::string dose_text(double d) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", d);
    return buf;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
    // Phantom mode.
    int phantom = 0;
    int size = 64;
    double dose = 0.05;
    std::uint64_t seed = 0;
    std::string family = "abdomen";
    fs::path out;
    // Re-dosing mode.
    std::optional<fs::path> from;
    double source_dose = 0.0;
    double target_dose = 0.0;
    NoiseScaleModel noise_model = NoiseScaleModel::excess_quanta;
    bool force = false;
};

struct SimulateResult {
    int files_written = 0;
    int pairs = 0;
};

/// n phantom pairs under out/: full/<scan>.ctsl, low/<scan>.ctsl, manifest.json.
inline SimulateResult simulate_phantoms(const SimulateOptions& o) {
    if (o.phantom < 1) throw ValidationError("--phantom must be at least 1");
    if (o.out.empty()) throw ValidationError("--out is required");
    const DoseLevel dose(o.dose);
    if (dose.is_full()) throw ValidationError("--dose must be below 1 for a low-dose pair");
    const auto family = PhantomFamily::by_name(o.family);
    if (fs::exists(o.out / ScanManifest::file_name) && !o.force)
        throw ValidationError(o.out.string() + " already holds a dataset; pass --force to overwrite");
    fs::create_directories(o.out / "full");
    fs::create_directories(o.out / "low");
    ScanManifest m{o.out, {}};
    SimulateResult r;
    for (int i = 0; i < o.phantom; ++i) {
        auto [full, low] = generate_phantom_pair(derive_seed(o.seed, {stream::phantom, std::uint64_t(i)}), o.size,
                                                 o.size, dose, family);
        char id[64];
        std::snprintf(id, sizeof id, "%s-%llu-%04d", family.name.c_str(), static_cast<unsigned long long>(o.seed), i);
        full.scan_id = low.scan_id = id;
        const std::string fp = std::string("full/") + id + ".ctsl", lp = std::string("low/") + id + ".ctsl";
        write_slice(full, o.out / fp);
        write_slice(low, o.out / lp);
        m.entries.push_back(make_manifest_entry(full, fp));
        m.entries.push_back(make_manifest_entry(low, lp));
        r.files_written += 2;
        ++r.pairs;
    }
    save_manifest(m);
    return r;
}

/// One new low-dose slice per (full, source-dose) pair of an existing dataset,
/// written to low_<target>/ and appended to its manifest.
inline SimulateResult simulate_from_manifest(const SimulateOptions& o) {
    const DoseLevel src(o.source_dose), tgt(o.target_dose);
    if (tgt.fraction() > src.fraction())
        throw ValidationError("target dose " + dose_text(tgt.fraction()) + " exceeds source dose " +
                              dose_text(src.fraction()) + "; noise can only be added");
    ScanManifest m = load_manifest(*o.from);
    std::map<std::pair<std::string, int>, const ManifestEntry*> full;
    for (const auto& e : m.entries)
        if (e.dose == 1.0) full[{e.scan_id, e.slice_index}] = &e;
    const std::string dir = "low_" + dose_text(tgt.fraction());
    std::vector<ManifestEntry> added;
    std::set<std::string> replaced;
    for (const auto& e : m.entries) {
        if (e.dose != src.fraction()) continue;
        auto it = full.find({e.scan_id, e.slice_index});
        if (it == full.end()) continue;
        const std::string rel = dir + "/" + fs::path(it->second->path).filename().string();
        if (m.find(rel)) {
            if (!o.force) throw ValidationError(rel + " already exists; pass --force to overwrite");
            replaced.insert(rel);
        }
        const CTSlice f = read_slice(m, *it->second);
        const CTSlice l = read_slice(m, e);
        const CTSlice out = synthesize_dose(f, extract_noise(l, f), tgt, o.noise_model);
        fs::create_directories(m.root / dir);
        write_slice(out, m.root / rel);
        added.push_back(make_manifest_entry(out, rel));
    }
    if (added.empty())
        throw ValidationError("no (full-dose, " + dose_text(src.fraction()) + ") pairs in " + o.from->string());
    std::erase_if(m.entries, [&](const ManifestEntry& e) { return replaced.count(e.path) > 0; });
    m.entries.insert(m.entries.end(), added.begin(), added.end());
    save_manifest(m);
    return {int(added.size()), int(added.size())};
}

inline int cmd_simulate(const SimulateOptions& o, std::ostream& log) {
    const auto r = o.from ? simulate_from_manifest(o) : simulate_phantoms(o);
    log << "wrote " << r.files_written << " slice files (" << r.pairs << " pairs)\n";
    return exit_ok;
}

// ---------------------------------------------------------------------------
// Metrics CSV

inline const std::vector<std::string> metrics_columns{"slice", "psnr", "ssim", "mse", "nrmse"};

inline void write_metrics_csv(const fs::path& path, const std::vector<std::string>& ids,
                              const std::vector<MetricReport>& rows, const MetricReport& mean) {
    CsvTable t{metrics_columns, {}};
    const auto row = [](const std::string& id, const MetricReport& r) {
        return std::vector<std::string>{id, csv_real(r.psnr_db), csv_real(r.ssim), csv_real(r.mse), csv_real(r.nrmse)};
    };
    for (std::size_t i = 0; i < rows.size(); ++i) t.rows.push_back(row(ids[i], rows[i]));
    t.rows.push_back(row("mean", mean));
    write_csv(path, t);
}

struct MetricsFile {
    std::vector<MetricReport> per_slice;
    MetricReport mean;
};

inline MetricsFile read_metrics_csv(const fs::path& path) {
    const auto t = read_csv(path);
    MetricsFile f;
    bool have_mean = false;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const MetricReport r{t.real(i, "psnr"), t.real(i, "ssim"), t.real(i, "mse"), t.real(i, "nrmse"), 1};
        if (t.at(i, "slice") == "mean") {
            f.mean = r;
            have_mean = true;
        } else {
            f.per_slice.push_back(r);
        }
    }
    if (!have_mean) throw FormatError(FormatError::Kind::bad_header, path.string(), "no mean row");
    f.mean.n_images = int(f.per_slice.size());
    return f;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    fs::path spec;
    std::optional<PretextKind> pretext;
    std::optional<LabeledSize> labeled_size;
    std::optional<fs::path> out;
    bool force = false;
};

inline std::string run_name(PretextKind k, const LabeledSize& size, std::uint64_t seed) {
    return to_string(k) + "_" + to_string(size) + "_" + std::to_string(seed);
}

inline const char* summary_file = "run_summary.csv";

inline bool run_complete(const fs::path& dir) { return fs::exists(dir / summary_file); }

/// Missing slice files of a manifest, all of them.
inline void require_files(const ScanManifest& m) {
    std::string missing;
    int n = 0;
    for (const auto& e : m.entries)
        if (!fs::exists(m.resolve(e))) {
            missing += "\n  " + m.resolve(e).string();
            ++n;
        }
    if (n) throw IoError(m.root.string(), std::to_string(n) + " slice file(s) missing:" + missing);
}

/// Data shared by every run of one train invocation.
struct TrainContext {
    ExperimentSpec spec;
    std::unique_ptr<SliceStore> train_store, test_store, cross_store;
    std::vector<SlicePair> test_pairs, cross_pairs;

    explicit TrainContext(ExperimentSpec s) : spec(std::move(s)) {
        auto train_m = load_manifest(spec.dataset_root);
        auto test_m = load_manifest(spec.test_root);
        require_files(train_m);
        require_files(test_m);
        test_pairs = collect_pairs(test_m);
        if (test_pairs.empty()) throw ValidationError("test dataset " + spec.test_root.string() + " has no pairs");
        train_store = std::make_unique<SliceStore>(std::move(train_m));
        test_store = std::make_unique<SliceStore>(std::move(test_m));
        if (spec.cross_domain_root) {
            auto cross_m = load_manifest(*spec.cross_domain_root);
            require_files(cross_m);
            cross_pairs = collect_pairs(cross_m);
            if (cross_pairs.empty()) throw ValidationError("cross-domain dataset has no pairs");
            cross_store = std::make_unique<SliceStore>(std::move(cross_m));
        }
    }

    Preprocess preprocess() const { return {spec.norm, spec.model.input_h, spec.model.input_w, spec.target_window}; }
};

namespace detail {

inline std::string log_row_text(const LogRow& r, double wall) {
    char w[32];
    std::snprintf(w, sizeof w, "%.3f", wall);
    return std::to_string(r.epoch) + "," + r.phase + "," + csv_real(r.lr) + "," + csv_real(r.train_loss) + "," +
           csv_real(r.val_mse) + "," + w + "\n";
}

inline const char* log_header = "epoch,phase,lr,train_loss,val_mse,wall_seconds\n";

/// Rewrites train_log.csv keeping only rows for epochs that `resume_phase`
/// state already covers (all pretext rows when resuming the downstream phase).
inline void truncate_log(const fs::path& path, const std::string& resume_phase, int resume_epoch) {
    std::string text = log_header;
    if (fs::exists(path)) {
        const auto t = read_csv(path);
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            const auto& phase = t.at(i, "phase");
            const int epoch = std::stoi(t.at(i, "epoch"));
            const bool keep = phase == resume_phase ? epoch < resume_epoch
                                                    : (phase == pretext_phase && resume_phase == downstream_phase);
            if (!keep) continue;
            for (std::size_t c = 0; c < t.rows[i].size(); ++c) text += (c ? "," : "") + t.rows[i][c];
            text += "\n";
        }
    }
    sswl::detail::write_file_atomic(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

inline void append_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::app | std::ios::binary);
    out << text;
    if (!out.flush()) throw IoError(path.string(), "append failed");
}

}  // namespace detail

struct RunSummary {
    std::string pretext;
    std::string labeled_size;
    std::uint64_t seed = 0;
    std::string model;
    std::string precision;
    std::string fingerprint;
    int best_epoch = -1;
    double best_val_mse = 0.0;
    double pretext_best_val_mse = std::numeric_limits<double>::quiet_NaN();
    int n_labeled = 0, n_unlabeled = 0, n_validation = 0, n_test = 0;
};

inline const std::vector<std::string> summary_columns{
    "pretext",    "labeled_size", "seed",      "model",       "precision",  "spec_fingerprint",     "best_epoch",
    "best_val_mse", "pretext_best_val_mse", "n_labeled", "n_unlabeled", "n_validation", "n_test"};

inline void write_run_summary(const fs::path& path, const RunSummary& s) {
    write_csv(path, {summary_columns,
                     {{s.pretext, s.labeled_size, std::to_string(s.seed), s.model, s.precision, s.fingerprint,
                       std::to_string(s.best_epoch), csv_real(s.best_val_mse), csv_real(s.pretext_best_val_mse),
                       std::to_string(s.n_labeled), std::to_string(s.n_unlabeled), std::to_string(s.n_validation),
                       std::to_string(s.n_test)}}});
}

inline RunSummary read_run_summary(const fs::path& path) {
    const auto t = read_csv(path);
    if (t.rows.size() != 1) throw FormatError(FormatError::Kind::bad_header, path.string(), "expected one row");
    RunSummary s;
    s.pretext = t.at(0, "pretext");
    s.labeled_size = t.at(0, "labeled_size");
    s.seed = detail::parse_u64(t.at(0, "seed"));
    s.model = t.at(0, "model");
    s.precision = t.at(0, "precision");
    s.fingerprint = t.at(0, "spec_fingerprint");
    s.best_epoch = std::stoi(t.at(0, "best_epoch"));
    s.best_val_mse = t.real(0, "best_val_mse");
    s.pretext_best_val_mse = t.real(0, "pretext_best_val_mse");
    s.n_labeled = std::stoi(t.at(0, "n_labeled"));
    s.n_unlabeled = std::stoi(t.at(0, "n_unlabeled"));
    s.n_validation = std::stoi(t.at(0, "n_validation"));
    s.n_test = std::stoi(t.at(0, "n_test"));
    return s;
}

inline std::string model_name(const RVAEConfig& c) { return c.bottleneck_enabled ? "RVAE" : "RED-CNN"; }

/// One (pretext, labeled size, seed) run, resuming from latest.ckpt when present.
template <class T>
void train_run(TrainContext& ctx, const LabeledSize& size, std::uint64_t seed, const fs::path& dir,
               const FeatureExtractor<T>* F, std::ostream& log) {
    const auto& spec = ctx.spec;
    ExperimentSpec run_spec = spec;
    run_spec.labeled_sizes = {size};
    run_spec.seeds = {seed};
    run_spec.repeats = 1;
    const std::string cfg_text = spec_text(run_spec);

    fs::create_directories(dir);
    const auto cfg_path = dir / "spec.cfg", log_path = dir / "train_log.csv", latest = dir / "latest.ckpt";
    if (fs::exists(cfg_path)) {
        std::ifstream in(cfg_path);
        std::stringstream ss;
        ss << in.rdbuf();
        if (ss.str() != cfg_text)
            throw ValidationError(dir.string() + " holds a partial run of a different spec; pass --force to restart");
    }
    sswl::detail::write_file_atomic(cfg_path, {reinterpret_cast<const unsigned char*>(cfg_text.data()), cfg_text.size()});

    TrainConfig cfg = spec.train;
    cfg.seed = seed;
    const auto split = make_splits(ctx.train_store->manifest(), size, spec.val_fraction, seed, &ctx.test_store->manifest());
    const auto pre = ctx.preprocess();
    const auto data = build_protocol_data<T>(split, spec.pretext, *ctx.train_store, pre, seed);

    std::optional<TrainState<T>> resume_pretext, resume_downstream;
    if (fs::exists(latest)) {
        auto s = load_checkpoint<T>(latest);
        if (s.seed != seed) throw ValidationError(latest.string() + " belongs to seed " + std::to_string(s.seed));
        detail::truncate_log(log_path, s.phase, s.epoch);
        log << "  resuming " << s.phase << " phase at epoch " << s.epoch << "\n";
        if (s.phase == pretext_phase) resume_pretext = std::move(s);
        else resume_downstream = std::move(s);
    } else {
        detail::truncate_log(log_path, "", 0);
    }

    PhaseHooks<T> epoch_hook;
    epoch_hook.on_epoch = [&](const TrainState<T>& s, double wall) {
        detail::append_text(log_path, detail::log_row_text(s.log.back(), wall));
        save_checkpoint(latest, s, spec.model);
        const auto& r = s.log.back();
        log << "  " << r.phase << " epoch " << r.epoch << " loss " << csv_real(r.train_loss) << " val_mse "
            << csv_real(r.val_mse) << "\n"
            << std::flush;
    };
    ProtocolHooks<T> hooks{epoch_hook, epoch_hook, [&](const TrainState<T>& s) {
                               save_checkpoint(dir / "pretext_best.ckpt", s, spec.model);
                           }};
    ProtocolResult<T> result;
    try {
        result = run_protocol(data, spec.pretext, spec.model, cfg, spec.loss, F, hooks, std::move(resume_pretext),
                              std::move(resume_downstream));
    } catch (const DivergenceError<T>& e) {
        save_checkpoint(dir / "diverged.ckpt", e.last_good(), spec.model);
        throw Error(std::string(e.what()) + "; last good state saved to " + (dir / "diverged.ckpt").string());
    }
    const auto& final_state = result.downstream;
    save_checkpoint(dir / "final.ckpt", final_state, spec.model);

    const EvalSpace space{spec.eval_window};
    const auto test = build_denoising_pairs<T>(ctx.test_pairs, *ctx.test_store, pre);
    const auto ev = evaluate_model(final_state.best_params, spec.model, test, cfg.batch_size, space, spec.norm);
    write_metrics_csv(dir / "metrics_test.csv", ev.ids, ev.per_slice, ev.mean);
    if (ctx.cross_store) {
        const auto cross = build_denoising_pairs<T>(ctx.cross_pairs, *ctx.cross_store, pre);
        const auto cev = evaluate_model(final_state.best_params, spec.model, cross, cfg.batch_size, space, spec.norm);
        write_metrics_csv(dir / "metrics_cross.csv", cev.ids, cev.per_slice, cev.mean);
    }

    RunSummary sum;
    sum.pretext = to_string(spec.pretext.kind);
    sum.labeled_size = to_string(size);
    sum.seed = seed;
    sum.model = model_name(spec.model);
    sum.precision = to_string(spec.train.precision);
    sum.fingerprint = spec_fingerprint(spec);
    sum.best_epoch = final_state.best_epoch;
    sum.best_val_mse = final_state.best_val;
    if (result.pretext) sum.pretext_best_val_mse = result.pretext->best_val;
    else if (fs::exists(dir / "pretext_best.ckpt"))
        sum.pretext_best_val_mse = load_checkpoint<T>(dir / "pretext_best.ckpt").best_val;
    sum.n_labeled = int(split.labeled.size());
    sum.n_unlabeled = int(split.unlabeled.size());
    sum.n_validation = int(split.validation.size());
    sum.n_test = int(ctx.test_pairs.size());
    fs::remove(latest);
    write_run_summary(dir / summary_file, sum);
    log << "  test psnr " << csv_real(ev.mean.psnr_db) << " ssim " << csv_real(ev.mean.ssim) << "\n";
}

/// Runs every (labeled size, seed) of an experiment spec. Returns the run directories.
inline std::vector<fs::path> train_sweep(const TrainOptions& o, std::ostream& log) {
    ExperimentSpec spec = load_spec(o.spec);
    if (o.pretext) {
        spec.pretext.kind = *o.pretext;
        spec.pretext.window = *o.pretext == PretextKind::sswl ? std::optional(spec.pretext.window.value_or(
                                                                    WindowSpec::preset("abdomen")))
                                                              : std::nullopt;
        spec.pretext.nac_sigma = *o.pretext == PretextKind::noisy_as_clean
                                     ? (spec.pretext.nac_sigma > 0.0 ? spec.pretext.nac_sigma : 0.05)
                                     : 0.0;
    }
    if (o.labeled_size) spec.labeled_sizes = {*o.labeled_size};
    if (o.out) spec.output_root = *o.out;
    spec.validate();
    if (spec.pretext.kind != PretextKind::none && spec.train.pretext_epochs < 1)
        throw ValidationError("train.pretext_epochs must be set for pretext " + to_string(spec.pretext.kind));

    std::vector<std::pair<LabeledSize, std::uint64_t>> runs;
    std::vector<fs::path> dirs;
    for (const auto& size : spec.labeled_sizes)
        for (auto seed : spec.run_seeds()) {
            runs.emplace_back(size, seed);
            dirs.push_back(spec.output_root / run_name(spec.pretext.kind, size, seed));
        }
    std::string done;
    for (const auto& d : dirs)
        if (run_complete(d)) done += "\n  " + d.string();
    if (!done.empty() && !o.force) throw ValidationError("completed run directories exist (pass --force to redo):" + done);
    if (o.force)
        for (const auto& d : dirs) fs::remove_all(d);

    TrainContext ctx(spec);
    with_precision(spec.train.precision, [&]<class T>() {
        const auto F = FeatureExtractor<T>::make(spec.features);
        for (std::size_t i = 0; i < runs.size(); ++i) {
            log << "run " << dirs[i].filename().string() << "\n";
            train_run<T>(ctx, runs[i].first, runs[i].second, dirs[i], spec.loss.beta != 0.0 ? &F : nullptr, log);
        }
    });
    return dirs;
}

inline int cmd_train(const TrainOptions& o, std::ostream& log) {
    train_sweep(o, log);
    return exit_ok;
}

// ---------------------------------------------------------------------------
// evaluate

struct Roi {
    int x = 0, y = 0, w = 0, h = 0;
};

inline Roi parse_roi(const std::string& s) {
    const auto parts = detail::split_list(s);
    if (parts.size() != 4) throw ValidationError("--roi expects x,y,w,h");
    Roi r{int(detail::parse_int(parts[0])), int(detail::parse_int(parts[1])), int(detail::parse_int(parts[2])),
          int(detail::parse_int(parts[3]))};
    return r;
}

struct EvaluateOptions {
    fs::path checkpoint;
    fs::path test_root;
    std::optional<Roi> roi;
    bool identity = false;
    fs::path out;
    std::optional<WindowSpec> window;  // metric space; normalized when unset
    std::optional<WindowSpec> target_window;  // targets window-leveled, as in training
    NormalizationSpec norm;
};

/// Writes metrics.csv and, with an ROI, roi.csv and grids/. Returns the mean report.
inline MetricReport evaluate_checkpoint(const EvaluateOptions& o, std::ostream& log) {
    if (o.window && o.target_window) throw ValidationError("--window must be none when --target-window is set");
    RVAEConfig model;
    const auto header = read_checkpoint_header(o.checkpoint);
    model = header.config();
    ScanManifest m = load_manifest(o.test_root);
    require_files(m);
    const auto pairs = collect_pairs(m);
    if (pairs.empty()) throw ValidationError("test dataset " + o.test_root.string() + " has no pairs");
    if (o.roi) {
        const auto& r = *o.roi;
        if (r.x < 0 || r.y < 0 || r.w < 7 || r.h < 7 || r.x + r.w > model.input_w || r.y + r.h > model.input_h)
            throw ValidationError("ROI must lie inside the " + std::to_string(model.input_w) + "x" +
                                  std::to_string(model.input_h) + " model grid and be at least 7x7");
    }
    const fs::path out = o.out.empty() ? o.checkpoint.parent_path() : o.out;
    fs::create_directories(out);
    SliceStore store(std::move(m));
    const Preprocess pre{o.norm, model.input_h, model.input_w, o.target_window};

    return with_precision(header.precision(), [&]<class T>() {
        const auto state = load_checkpoint<T>(o.checkpoint);
        const auto test = build_denoising_pairs<T>(pairs, store, pre);
        auto pred = o.identity ? test.targets : predict(state.best_params, model, test.inputs, 10);
        const EvalSpace space{o.window};
        const auto ev = evaluate_predictions(pred, test, space, o.norm);
        write_metrics_csv(out / "metrics.csv", ev.ids, ev.per_slice, ev.mean);
        log << "mean psnr " << csv_real(ev.mean.psnr_db) << " ssim " << csv_real(ev.mean.ssim) << " mse "
            << csv_real(ev.mean.mse) << " nrmse " << csv_real(ev.mean.nrmse) << "\n";
        if (o.roi) {
            const auto& r = *o.roi;
            // With window-leveled targets the input is compared in the same window.
            const auto in_s = to_eval_space(test.inputs, o.target_window ? EvalSpace{o.target_window} : space, o.norm);
            const auto tg_s = to_eval_space(test.targets, space, o.norm);
            const auto pr_s = to_eval_space(ev.predictions, space, o.norm);
            const auto cropped = [&](const Tensor<T>& t, int i) { return crop(image_of(t, i), r.x, r.y, r.w, r.h); };
            CsvTable roi{{"slice", "ssim_input", "ssim_prediction"}, {}};
            double acc_in = 0.0, acc_pr = 0.0;
            const WindowSpec display = o.window.value_or(WindowSpec::preset("abdomen"));
            const auto to_display = [&](const Tensor<T>& t) {
                return o.window || o.target_window ? t : to_eval_space(t, EvalSpace{display}, o.norm);
            };
            const auto in_d = to_display(in_s), tg_d = to_display(tg_s), pr_d = to_display(pr_s);
            fs::create_directories(out / "grids");
            for (int i = 0; i < test.size(); ++i) {
                const auto ci = cropped(in_s, i), ct = cropped(tg_s, i), cp = cropped(pr_s, i);
                const ImageView<T> vi{ci, r.h, r.w}, vt{ct, r.h, r.w}, vp{cp, r.h, r.w};
                const double si = ssim(vi, vt), sp = ssim(vp, vt);
                acc_in += si;
                acc_pr += sp;
                roi.rows.push_back({ev.ids[std::size_t(i)], csv_real(si), csv_real(sp)});
                char name[32];
                std::snprintf(name, sizeof name, "%04d", i);
                const auto panel = [&](const Tensor<T>& t) {
                    return to_gray(t.sample(i).begin(), t.w(), t.h());
                };
                const auto roi_panel = [&](const Tensor<T>& t) {
                    const auto c = cropped(t, i);
                    return to_gray(c.begin(), r.w, r.h);
                };
                write_pgm(out / "grids" / (std::string(name) + ".pgm"), hstack({panel(in_d), panel(tg_d), panel(pr_d)}));
                write_pgm(out / "grids" / (std::string(name) + "_roi.pgm"),
                          hstack({roi_panel(in_d), roi_panel(tg_d), roi_panel(pr_d)}));
            }
            roi.rows.push_back({"mean", csv_real(acc_in / test.size()), csv_real(acc_pr / test.size())});
            write_csv(out / "roi.csv", roi);
            log << "roi ssim input " << roi.rows.back()[1] << " prediction " << roi.rows.back()[2] << "\n";
        }
        return ev.mean;
    });
}

inline int cmd_evaluate(const EvaluateOptions& o, std::ostream& log) {
    evaluate_checkpoint(o, log);
    return exit_ok;
}

// ---------------------------------------------------------------------------
// report

struct RunRecord {
    fs::path dir;
    RunSummary summary;
    MetricReport in_domain;
    std::optional<MetricReport> cross_domain;
};

struct ReportGroup {
    std::string model, pretext, labeled_size;
    std::vector<const RunRecord*> runs;
    MetricReport in_domain;
    std::optional<MetricReport> cross_domain;
    double val_mse = 0.0;
};

struct SignificanceRow {
    std::string labeled_size, pretext_a, pretext_b;
    int n_a = 0, n_b = 0;
    TTestResult psnr, ssim, val_mse;
};

struct RunReport {
    std::vector<RunRecord> runs;
    std::vector<ReportGroup> groups;
    std::vector<SignificanceRow> significance;
    std::vector<std::string> sizes;  // ordered
};

inline int pretext_rank(const std::string& p) {
    static const std::vector<std::string> order{"none", "reconstruction", "noisy_as_clean", "sswl"};
    const auto it = std::find(order.begin(), order.end(), p);
    return int(it - order.begin());
}

inline bool size_less(const std::string& a, const std::string& b) {
    if (a == b) return false;
    if (a == "full") return false;
    if (b == "full") return true;
    return std::stoll(a) < std::stoll(b);
}

inline RunRecord load_run(const fs::path& dir) {
    RunRecord r{dir, read_run_summary(dir / summary_file), {}, {}};
    r.in_domain = read_metrics_csv(dir / "metrics_test.csv").mean;
    if (fs::exists(dir / "metrics_cross.csv")) r.cross_domain = read_metrics_csv(dir / "metrics_cross.csv").mean;
    return r;
}

/// Collects completed runs under run_root (one level deep) and aggregates them.
inline RunReport build_report(const fs::path& run_root) {
    if (!fs::is_directory(run_root)) throw ValidationError(run_root.string() + " is not a directory");
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(run_root))
        if (e.is_directory() && run_complete(e.path())) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw ValidationError("no completed runs under " + run_root.string());
    RunReport rep;
    for (const auto& d : dirs) rep.runs.push_back(load_run(d));

    const auto& first = rep.runs.front();
    for (const auto& r : rep.runs) {
        if (r.summary.fingerprint != first.summary.fingerprint)
            throw ValidationError("runs " + first.dir.filename().string() + " and " + r.dir.filename().string() +
                                  " come from incompatible specs");
        if (r.cross_domain.has_value() != first.cross_domain.has_value())
            throw ValidationError("runs disagree on whether a cross-domain test set exists");
    }

    std::map<std::tuple<int, std::string, std::string>, std::vector<const RunRecord*>> by_key;
    std::set<std::string> sizes;
    for (const auto& r : rep.runs) {
        by_key[{pretext_rank(r.summary.pretext), r.summary.pretext, r.summary.labeled_size}].push_back(&r);
        sizes.insert(r.summary.labeled_size);
    }
    rep.sizes.assign(sizes.begin(), sizes.end());
    std::sort(rep.sizes.begin(), rep.sizes.end(), size_less);

    std::vector<std::tuple<int, std::string, std::string>> keys;
    for (const auto& [k, v] : by_key) keys.push_back(k);
    std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
        return size_less(std::get<2>(a), std::get<2>(b));
    });
    for (const auto& k : keys) {
        ReportGroup g;
        g.pretext = std::get<1>(k);
        g.labeled_size = std::get<2>(k);
        g.runs = by_key[k];
        g.model = g.runs.front()->summary.model;
        std::vector<MetricReport> in, cross;
        double val = 0.0;
        for (const auto* r : g.runs) {
            in.push_back(r->in_domain);
            if (r->cross_domain) cross.push_back(*r->cross_domain);
            val += r->summary.best_val_mse;
        }
        g.in_domain = aggregate(in);
        if (!cross.empty()) g.cross_domain = aggregate(cross);
        g.val_mse = val / double(g.runs.size());
        rep.groups.push_back(std::move(g));
    }

    for (const auto& size : rep.sizes) {
        std::vector<const ReportGroup*> at;
        for (const auto& g : rep.groups)
            if (g.labeled_size == size) at.push_back(&g);
        for (std::size_t i = 0; i < at.size(); ++i)
            for (std::size_t j = i + 1; j < at.size(); ++j) {
                const auto& a = *at[i];
                const auto& b = *at[j];
                if (a.runs.size() < 2 || b.runs.size() < 2) continue;
                const auto col = [](const ReportGroup& g, auto get) {
                    std::vector<double> v;
                    for (const auto* r : g.runs) v.push_back(get(*r));
                    return v;
                };
                const auto psnr_of = [](const RunRecord& r) { return r.in_domain.psnr_db; };
                const auto ssim_of = [](const RunRecord& r) { return r.in_domain.ssim; };
                const auto val_of = [](const RunRecord& r) { return r.summary.best_val_mse; };
                rep.significance.push_back({size, a.pretext, b.pretext, int(a.runs.size()), int(b.runs.size()),
                                            welch_t_test(col(a, psnr_of), col(b, psnr_of)),
                                            welch_t_test(col(a, ssim_of), col(b, ssim_of)),
                                            welch_t_test(col(a, val_of), col(b, val_of))});
            }
    }
    return rep;
}

inline const std::vector<std::string> report_columns{
    "model",  "pretext",     "labeled_size", "n_runs",    "in_psnr",    "in_ssim",  "in_mse",
    "in_nrmse", "cross_psnr", "cross_ssim",  "cross_mse", "cross_nrmse", "val_mse"};

inline const std::vector<std::string> significance_columns{
    "labeled_size", "pretext_a", "pretext_b", "n_a",    "n_b",       "psnr_t",     "psnr_df",
    "psnr_p",       "ssim_t",    "ssim_df",   "ssim_p", "val_mse_t", "val_mse_df", "val_mse_p"};

/// report_table.csv, significance.csv and plot_*.{ppm,csv} under out.
inline void write_report(const RunReport& rep, const fs::path& out) {
    fs::create_directories(out);
    CsvTable table{report_columns, {}};
    for (const auto& g : rep.groups) {
        std::vector<std::string> row{g.model,
                                     g.pretext,
                                     g.labeled_size,
                                     std::to_string(g.runs.size()),
                                     csv_real(g.in_domain.psnr_db),
                                     csv_real(g.in_domain.ssim),
                                     csv_real(g.in_domain.mse),
                                     csv_real(g.in_domain.nrmse)};
        if (g.cross_domain) {
            for (double v : {g.cross_domain->psnr_db, g.cross_domain->ssim, g.cross_domain->mse, g.cross_domain->nrmse})
                row.push_back(csv_real(v));
        } else {
            row.insert(row.end(), 4, "");
        }
        row.push_back(csv_real(g.val_mse));
        table.rows.push_back(std::move(row));
    }
    write_csv(out / "report_table.csv", table);

    CsvTable sig{significance_columns, {}};
    for (const auto& s : rep.significance) {
        std::vector<std::string> row{s.labeled_size, s.pretext_a, s.pretext_b, std::to_string(s.n_a),
                                     std::to_string(s.n_b)};
        for (const auto* t : {&s.psnr, &s.ssim, &s.val_mse})
            for (double v : {t->t_statistic, t->degrees_of_freedom, t->p_value}) row.push_back(csv_real(v));
        sig.rows.push_back(std::move(row));
    }
    write_csv(out / "significance.csv", sig);

    const auto plot = [&](const std::string& stem, auto get) {
        std::vector<PlotSeries> series;
        for (const auto& g : rep.groups) {
            auto it = std::find_if(series.begin(), series.end(), [&](const PlotSeries& s) { return s.name == g.pretext; });
            if (it == series.end()) {
                series.push_back({g.pretext, std::vector<double>(rep.sizes.size(), std::nan(""))});
                it = series.end() - 1;
            }
            const auto pos = std::find(rep.sizes.begin(), rep.sizes.end(), g.labeled_size) - rep.sizes.begin();
            it->y[std::size_t(pos)] = get(g);
        }
        write_line_plot(out / stem, rep.sizes, series);
    };
    plot("plot_psnr", [](const ReportGroup& g) { return g.in_domain.psnr_db; });
    plot("plot_ssim", [](const ReportGroup& g) { return g.in_domain.ssim; });
    if (!rep.groups.empty() && rep.groups.front().cross_domain) {
        plot("plot_cross_psnr", [](const ReportGroup& g) { return g.cross_domain->psnr_db; });
        plot("plot_cross_ssim", [](const ReportGroup& g) { return g.cross_domain->ssim; });
    }
}

struct ReportOptions {
    fs::path run_root;
    fs::path out;  // defaults to <run_root>/report
};

inline int cmd_report(const ReportOptions& o, std::ostream& log) {
    const auto rep = build_report(o.run_root);
    const auto out = o.out.empty() ? o.run_root / "report" : o.out;
    write_report(rep, out);
    log << rep.runs.size() << " runs, " << rep.groups.size() << " table rows, " << rep.significance.size()
        << " t-tests -> " << out.string() << "\n";
    return exit_ok;
}

// ---------------------------------------------------------------------------
// describe

inline int cmd_describe(const fs::path& checkpoint, std::ostream& log) {
    const auto h = read_checkpoint_header(checkpoint);
    auto head = h.json;
    head.erase("arrays");
    const auto n_log = head["state"]["log"].size();
    head["state"].erase("log");
    head["state"]["log_rows"] = n_log;
    log << head.dump(2) << "\n";
    log << "parameters: " << parameter_count(h.config()) << "\n";
    log << "arrays (group name shape count offset):\n";
    for (const auto& a : h.json.at("arrays"))
        log << "  " << a.at("group").get<std::string>() << " " << a.at("name").get<std::string>() << " "
            << a.at("shape").dump() << " " << a.at("count") << " " << a.at("offset") << "\n";
    return exit_ok;
}

}  // namespace sswl::harness
