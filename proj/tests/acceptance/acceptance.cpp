// Acceptance gate. Runs every criterion at its stated tolerance and prints one
// PASS/FAIL line per criterion; exits non-zero when any criterion fails.
//
//     sswl_acceptance [workdir] [--only 1,4,7]

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "sswl/harness/commands.hpp"
#include "sswl/windowing.hpp"

namespace {

using namespace sswl;
using namespace sswl::harness;
using namespace sswl::testing;

struct Outcome {
    bool pass = false;
    std::string detail;
};

/// Collects failed checks; the criterion passes when none failed.
class Checks {
public:
    void expect(bool ok, const std::string& what) {
        ++total_;
        if (!ok && failures_.size() < 8) failures_.push_back(what);
        if (!ok) ++failed_;
    }
    void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }

    Outcome outcome() const {
        std::string d = notes_;
        for (const auto& f : failures_) d += (d.empty() ? "" : "; ") + ("failed: " + f);
        if (failed_ > int(failures_.size())) d += "; " + std::to_string(failed_ - int(failures_.size())) + " more";
        return {failed_ == 0 && total_ > 0, d};
    }

private:
    int total_ = 0, failed_ = 0;
    std::vector<std::string> failures_;
    std::string notes_;
};

std::string fmt(double v, int prec = 6) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p) << text;
}

void simulate(const fs::path& out, int pairs, int size, std::uint64_t seed, const std::string& family = "abdomen") {
    SimulateOptions o;
    o.phantom = pairs;
    o.size = size;
    o.dose = 0.05;
    o.seed = seed;
    o.family = family;
    o.out = out;
    o.force = true;
    simulate_phantoms(o);
}

std::vector<fs::path> sweep(const fs::path& cfg, PretextKind k, std::ostream& log) {
    TrainOptions t;
    t.spec = cfg;
    t.pretext = k;
    t.force = true;
    return train_sweep(t, log);
}

// ---------------------------------------------------------------------------

Outcome window_leveling() {
    Checks c;
    const WindowSpec spec{40.0, 300.0};
    c.expect(window_level(-110.0, spec) == 0.0, "-110 HU -> 0");
    c.expect(window_level(40.0, spec) == 0.5, "40 HU -> 0.5");
    c.expect(window_level(190.0, spec) == 1.0, "190 HU -> 1");
    double prev = -1.0, worst = 0.0;
    bool monotone = true;
    for (int i = 0; i < 10000; ++i) {
        const double hu = -1024.0 + 4095.0 * i / 9999.0;
        const double z = window_level(hu, spec);
        monotone = monotone && z >= prev;
        prev = z;
        const long double lo = 40.0L - 150.0L;
        long double want = (hu - lo) / 300.0L;
        want = std::clamp(want, 0.0L, 1.0L);
        worst = std::max(worst, double(std::fabs(z - want)));
    }
    c.expect(monotone, "monotone over 1e4-point sweep");
    c.expect(worst <= 2 * std::numeric_limits<double>::epsilon(), "affine map within 64-bit rounding");
    c.note("max deviation from exact affine " + fmt(worst, 3));
    return c.outcome();
}

std::pair<CTSlice, CTSlice> noisy_pair(int n, double dose, std::uint64_t seed) {
    CTSlice full(n, n);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1000.0, 1500.0);
    std::normal_distribution<double> g(0.0, 25.0);
    for (auto& v : full.pixels) v = float(u(rng));
    full.scan_id = "A";
    CTSlice low = full;
    low.dose = DoseLevel(dose);
    for (auto& v : low.pixels) v = float(v + g(rng));
    return {full, low};
}

double diff_variance(const CTSlice& a, const CTSlice& b) {
    long double s = 0, ss = 0;
    const auto n = double(a.pixels.size());
    for (std::size_t i = 0; i < a.pixels.size(); ++i) s += double(a.pixels[i]) - double(b.pixels[i]);
    const long double m = s / n;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const long double d = double(a.pixels[i]) - double(b.pixels[i]) - m;
        ss += d * d;
    }
    return double(ss / (n - 1));
}

Outcome dose_synthesis() {
    Checks c;
    const auto [full, low] = noisy_pair(1024, 0.25, 7);
    const auto noise = extract_noise(low, full);
    const double src = diff_variance(low, full);
    for (const auto& [model, k2] : {std::pair{NoiseScaleModel::inverse_dose, 5.0},
                                    std::pair{NoiseScaleModel::excess_quanta, 19.0 / 3.0}}) {
        const auto back = synthesize_dose(full, noise, low.dose, model);
        c.expect(std::memcmp(back.pixels.data(), low.pixels.data(), 4 * low.pixels.size()) == 0,
                 to_string(model) + " add-back bit-exact");
        const auto out = synthesize_dose(full, noise, DoseLevel(0.05), model);
        const double ratio = diff_variance(out, full) / src;
        c.expect(std::fabs(ratio - k2) <= 0.01 * k2, to_string(model) + " variance ratio");
        c.note(to_string(model) + " ratio " + fmt(ratio) + " vs " + fmt(k2));
    }
    c.note(std::to_string(full.pixels.size()) + " samples");
    return c.outcome();
}

Outcome metrics_oracles() {
    Checks c;
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> dim(8, 32);
    std::normal_distribution<double> noise(0.0, 0.1);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int h = dim(rng), w = dim(rng);
        const Img ref = random_img(h, w, rng);
        Img pred = ref;
        if (trial % 2) pred = random_img(h, w, rng);
        else
            for (auto& v : pred.px) v += noise(rng);
        const auto r = evaluate_image(pred.view(), ref.view());
        for (double e : {rel_diff(r.mse, oracle_mse(pred, ref)), rel_diff(r.psnr_db, oracle_psnr(pred, ref)),
                         rel_diff(r.nrmse, oracle_nrmse(pred, ref)), rel_diff(r.ssim, oracle_ssim(pred, ref))})
            worst = std::max(worst, e);
        c.expect(ssim(ref.view(), ref.view()) == 1.0, "ssim(x, x) = 1");
        c.expect(ssim(pred.view(), ref.view()) == ssim(ref.view(), pred.view()), "ssim symmetric");
    }
    c.expect(worst < 1e-6, "oracle agreement within 1e-6");
    const auto t = welch_t_test(std::vector<double>{1, 2, 3, 4, 5}, std::vector<double>{2, 3, 4, 5, 6});
    c.expect(std::fabs(t.t_statistic + 1.0) < 1e-12 && std::fabs(t.degrees_of_freedom - 8.0) < 1e-12, "Welch t, df");
    c.expect(std::fabs(t.p_value - 0.3466) < 1e-4, "Welch p");
    c.note("max relative error " + fmt(worst, 3) + ", Welch p " + fmt(t.p_value, 5));
    return c.outcome();
}

Outcome gradient_correctness() {
    Checks c;
    const auto cfg = RVAEConfig::tiny(16);
    double w64 = 0.0, w32 = 0.0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto d = check_gradients<double>(seed, cfg, LossWeights{0.6, 1.0});
        const auto f = check_gradients<float>(seed, cfg, LossWeights{0.6, 1.0});
        c.expect(d.checked == parameter_count(cfg), "every parameter checked");
        c.expect(d.max_rel < 1e-5, "64-bit seed " + std::to_string(seed) + " worst " + d.worst);
        c.expect(f.max_rel < 1e-3, "32-bit seed " + std::to_string(seed) + " worst " + f.worst);
        w64 = std::max(w64, d.max_rel);
        w32 = std::max(w32, f.max_rel);
    }
    c.note("max relative error 64-bit " + fmt(w64, 3) + ", 32-bit " + fmt(w32, 3) + " over seeds 1-3");
    return c.outcome();
}

Outcome architecture() {
    Checks c;
    RVAEConfig cfg;
    const auto p = init_params<float>(cfg, 1);
    auto x = random_tensor<float>(1, 1, 256, 256, 2);
    const auto latent_identity = [&](const ForwardResult<float>& r) {
        const auto& l = *r.latent;
        for (std::size_t i = 0; i < l.z.size(); ++i)
            if (l.z.values()[i] != l.mu.values()[i] + std::exp(0.5f * l.log_var.values()[i]) * l.eps.values()[i])
                return false;
        return true;
    };
    const auto a = forward(p, cfg, x, EpsSource::zeros());
    const auto b = forward(p, cfg, x, EpsSource::zeros());
    c.expect(a.y.shape() == x.shape(), "output shape equals 256x256 input shape");
    c.expect(a.y == b.y, "zero eps forward bit-deterministic");
    c.expect(latent_identity(a) && latent_identity(b), "latent identity with zero eps");
    const auto s = forward(p, cfg, x, EpsSource::sample(9));
    c.expect(latent_identity(s), "latent identity with sampled eps");
    auto off = cfg;
    off.bottleneck_enabled = false;
    const auto q = init_params<float>(off, 1);
    c.expect(forward(q, off, x, EpsSource::sample(1)).y == forward(q, off, x, EpsSource::sample(2)).y,
             "bottleneck-off output independent of eps");
    c.note("default config, " + std::to_string(parameter_count(cfg)) + " parameters");
    return c.outcome();
}

Outcome loss_laws() {
    Checks c;
    const auto filled = [](int n, int ch, double v) { return Tensor<double>(n, ch, 1, 1, v); };
    c.expect(kl_loss(filled(2, 4, 0.0), filled(2, 4, 0.0)) == 0.0, "KL(0, 0) = 0");
    for (int d : {1, 4, 16})
        c.expect(kl_loss(filled(1, d, 1.0), filled(1, d, 0.0)) == 0.5 * d, "KL(1, 1) = 0.5 per dim");
    const auto cfg = RVAEConfig::tiny(16);
    const auto p = init_params<double>(cfg, 2);
    const auto x = random_tensor<double>(2, 1, 16, 16, 3), y = random_tensor<double>(2, 1, 16, 16, 4);
    const auto F = FeatureExtractor<double>::fixed_random(5);
    const auto fwd = forward(p, cfg, x, EpsSource::sample(6));
    for (const LossWeights w : {LossWeights{0.6, 1.0}, LossWeights{0.3, 0.01}, LossWeights{2.0, 0.5}}) {
        const auto l = hybrid_loss(fwd.y, y, &*fwd.latent, &F, w);
        const double sum = l.mse_term + w.beta * l.perceptual_term + w.alpha * l.kl_term;
        c.expect(std::fabs(l.total - sum) <= 4 * std::numeric_limits<double>::epsilon() * std::fabs(sum),
                 "total within 4 ulps");
    }
    c.expect(hybrid_loss(fwd.y, y, &*fwd.latent, &F, LossWeights{0.0, 0.0}).total == mse_loss(fwd.y, y),
             "beta = alpha = 0 is MSE");
    return c.outcome();
}

const char* tiny_model_keys = "model.layers = 2\n"
                              "model.filters = 4\n"
                              "model.kernel = 5\n"
                              "model.latent_dim = 4\n"
                              "model.bottleneck_hidden = 4\n";

Outcome scaled_experiment(const fs::path& work) {
    Checks c;
    const auto root = work / "c7";
    simulate(root / "train", 200, 64, 1);
    simulate(root / "test", 50, 64, 2);
    // Inputs stay normalized and targets are window-leveled FDCT, the space the pretext predicts into.
    const WindowSpec window = WindowSpec::preset("abdomen");
    const std::string common = std::string("dataset.root = train\ndataset.test_root = test\n"
                                           "dataset.target_window = abdomen\n") +
                               tiny_model_keys +
                               "model.input_size = 64\n"
                               "train.batch_size = 10\n"
                               "train.lr_decay_every_epochs = 1000\n";
    std::ostringstream log;

    // (a) fully supervised.
    write_text(root / "full.cfg", common + "sweep.labeled_sizes = full\nsweep.repeats = 1\n"
                                           "train.learning_rate = 3e-3\n"
                                           "train.finetune_epochs = 150\noutput.root = runs_full\n");
    const std::clock_t cpu0 = std::clock();
    const auto full_dir = sweep(root / "full.cfg", PretextKind::none, log).front();
    const double cpu_min = double(std::clock() - cpu0) / CLOCKS_PER_SEC / 60.0;
    const double model_psnr = read_metrics_csv(full_dir / "metrics_test.csv").mean.psnr_db;
    SliceStore store(load_manifest(root / "test"));
    const auto test = build_denoising_pairs<float>(collect_pairs(store.manifest()), store, Preprocess{{}, 64, 64, window});
    const double input_psnr =
        evaluate_predictions(to_eval_space(test.inputs, EvalSpace{window}, NormalizationSpec{}), test).mean.psnr_db;
    c.expect(model_psnr - input_psnr >= 2.0, "(a) PSNR gain >= 2 dB");
    c.expect(cpu_min <= 30.0, "(a) within 30 CPU-minutes");
    c.note("(a) input " + fmt(input_psnr, 5) + " dB -> model " + fmt(model_psnr, 5) + " dB in " + fmt(cpu_min, 3) +
           " CPU-min");

    // (b) 25 labeled pairs, five seeds, equal downstream epochs.
    write_text(root / "small.cfg", common + "sweep.labeled_sizes = 25\nsweep.repeats = 5\n"
                                            "train.learning_rate = 1e-3\n"
                                            "train.pretext_epochs = 40\ntrain.finetune_epochs = 100\n"
                                            "output.root = runs_small\n");
    const auto base = sweep(root / "small.cfg", PretextKind::none, log);
    const auto ssl = sweep(root / "small.cfg", PretextKind::sswl, log);
    int wins = 0;
    std::string vals;
    for (std::size_t i = 0; i < base.size(); ++i) {
        const double a = read_run_summary(base[i] / summary_file).best_val_mse;
        const double b = read_run_summary(ssl[i] / summary_file).best_val_mse;
        wins += b <= a;
        vals += (vals.empty() ? "" : " ") + fmt(b / a, 3);
    }
    c.expect(wins >= 3, "(b) sswl validation MSE <= baseline in >= 3 of 5 seeds");
    std::ostringstream rlog;
    cmd_report({root / "runs_small", root / "report"}, rlog);
    const auto sig = read_csv(root / "report" / "significance.csv");
    const bool has_test = sig.rows.size() == 1 && sig.at(0, "pretext_a") == "none" && sig.at(0, "pretext_b") == "sswl" &&
                          std::isfinite(sig.real(0, "val_mse_p"));
    c.expect(has_test, "(b) report emits the Welch test");
    c.note("(b) sswl wins " + std::to_string(wins) + "/5, val-MSE ratios sswl/none " + vals +
           (has_test ? ", Welch p(psnr) " + fmt(sig.real(0, "psnr_p"), 3) + " p(val_mse) " +
                           fmt(sig.real(0, "val_mse_p"), 3)
                     : ""));
    return c.outcome();
}

/// Stream that ends the process once a line containing `trigger` was written.
class ExitOnLine : public std::streambuf {
public:
    explicit ExitOnLine(std::string trigger) : trigger_(std::move(trigger)) {}

protected:
    int overflow(int ch) override {
        if (ch == '\n') {
            if (line_.find(trigger_) != std::string::npos) ::_exit(0);
            line_.clear();
        } else if (ch != EOF) {
            line_ += char(ch);
        }
        return ch;
    }

private:
    std::string trigger_, line_;
};

/// Runs the sweep in a child process that is cut off after `trigger` is logged.
bool interrupted_sweep(const fs::path& cfg, PretextKind k, const std::string& trigger) {
    const pid_t pid = ::fork();
    if (pid == 0) {
        ExitOnLine buf(trigger);
        std::ostream log(&buf);
        TrainOptions t;
        t.spec = cfg;
        t.pretext = k;
        try {
            train_sweep(t, log);
        } catch (...) {
            ::_exit(3);
        }
        ::_exit(4);  // finished without reaching the trigger
    }
    int status = 0;
    ::waitpid(pid, &status, 0);
    return WIFEXITED(status) && WEXITSTATUS(status) == 0;
}

std::string loss_columns(const fs::path& log) {
    const auto t = read_csv(log);
    std::string out;
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        for (const char* col : {"epoch", "phase", "lr", "train_loss", "val_mse"}) out += t.at(i, col) + ",";
    return out;
}

Outcome reproducibility(const fs::path& work) {
    Checks c;
    const auto root = work / "c8";
    simulate(root / "train", 40, 32, 3);
    simulate(root / "test", 6, 32, 4);
    const std::string spec = std::string("dataset.root = train\ndataset.test_root = test\n") + tiny_model_keys +
                             "model.input_size = 32\n"
                             "sweep.labeled_sizes = 10\n"
                             "sweep.repeats = 2\n"
                             "train.batch_size = 4\n"
                             "train.learning_rate = 1e-3\n"
                             "train.pretext_epochs = 4\n"
                             "train.finetune_epochs = 4\n";
    for (const char* r : {"a", "b", "c"}) write_text(root / (std::string(r) + ".cfg"), spec + "output.root = runs_" + r + "\n");
    std::ostringstream log;
    sweep(root / "a.cfg", PretextKind::sswl, log);
    sweep(root / "b.cfg", PretextKind::sswl, log);
    for (const char* run : {"sswl_10_1", "sswl_10_2"})
        for (const char* f : {"final.ckpt", "pretext_best.ckpt", "metrics_test.csv"})
            c.expect(slurp(root / "runs_a" / run / f) == slurp(root / "runs_b" / run / f),
                     std::string(run) + "/" + f + " byte-identical");

    // Kill mid-pretext, then mid-fine-tuning, then let it finish.
    const auto dir = root / "runs_c" / "sswl_10_1";
    c.expect(interrupted_sweep(root / "c.cfg", PretextKind::sswl, "pretext epoch 1 "), "first interruption");
    c.expect(fs::exists(dir / "latest.ckpt") && !fs::exists(dir / "final.ckpt"), "stopped inside the pretext phase");
    c.expect(interrupted_sweep(root / "c.cfg", PretextKind::sswl, "downstream epoch 1 "), "second interruption");
    c.expect(fs::exists(dir / "latest.ckpt") && load_checkpoint<float>(dir / "latest.ckpt").phase == "downstream",
             "stopped inside the downstream phase");
    TrainOptions t;
    t.spec = root / "c.cfg";
    t.pretext = PretextKind::sswl;
    train_sweep(t, log);
    for (const char* run : {"sswl_10_1", "sswl_10_2"}) {
        c.expect(loss_columns(root / "runs_a" / run / "train_log.csv") ==
                     loss_columns(root / "runs_c" / run / "train_log.csv"),
                 std::string(run) + " resumed loss sequence identical");
        c.expect(slurp(root / "runs_a" / run / "final.ckpt") == slurp(root / "runs_c" / run / "final.ckpt"),
                 std::string(run) + " resumed final checkpoint identical");
    }

    CTSlice s(37, 53);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1024.0, 3071.0);
    for (auto& v : s.pixels) v = float(u(rng));
    s.scan_id = "R";
    s.slice_index = 12;
    s.dose = DoseLevel(0.25);
    const auto ds = root / "slices";
    fs::create_directories(ds);
    write_slice(s, ds / "slice.ctsl");
    ScanManifest m;
    m.root = ds;
    m.entries.push_back(make_manifest_entry(s, "slice.ctsl"));
    save_manifest(m);
    const auto back = read_slice(ds / "slice.ctsl");
    c.expect(back.height == s.height && back.width == s.width &&
                 std::memcmp(back.pixels.data(), s.pixels.data(), 4 * s.pixels.size()) == 0,
             "slice pixels round trip bit-exact");
    c.expect(back.scan_id == s.scan_id && back.slice_index == s.slice_index && back.dose == s.dose,
             "slice metadata round trip through the manifest");
    auto bytes = sswl::detail::read_file_bytes(ds / "slice.ctsl");
    bytes[bytes.size() - 3] ^= 0x01;
    bool caught = false;
    try {
        decode_slice(bytes, "corrupted");
    } catch (const FormatError& e) {
        caught = e.kind() == FormatError::Kind::checksum_mismatch;
    }
    c.expect(caught, "corrupted slice rejected by CRC");
    c.note("2 seeds x 2 repetitions, one run interrupted twice and resumed");
    return c.outcome();
}

Outcome harness_contract(const fs::path& work) {
    Checks c;
    const auto root = work / "c9";
    simulate(root / "train", 60, 32, 11);
    simulate(root / "test", 6, 32, 12);
    simulate(root / "cross", 6, 32, 13, "chest");
    c.expect(PhantomFamily::chest().palette != PhantomFamily::abdomen().palette, "cross-domain palette differs");
    write_text(root / "sweep.cfg", std::string("dataset.root = train\ndataset.test_root = test\n"
                                               "dataset.cross_domain_root = cross\n") +
                                       tiny_model_keys +
                                       "model.input_size = 32\n"
                                       "sweep.labeled_sizes = 10, 25\n"
                                       "sweep.repeats = 5\n"
                                       "train.batch_size = 5\n"
                                       "train.learning_rate = 1e-3\n"
                                       "train.pretext_epochs = 2\n"
                                       "train.finetune_epochs = 2\n"
                                       "output.root = runs\n");
    std::ostringstream log;
    std::size_t n_runs = 0;
    for (auto k : {PretextKind::none, PretextKind::sswl}) n_runs += sweep(root / "sweep.cfg", k, log).size();
    c.expect(n_runs == 20, "20 runs");
    cmd_report({root / "runs", root / "report"}, log);
    const auto table = read_csv(root / "report" / "report_table.csv");
    c.expect(table.header == std::vector<std::string>{"model", "pretext", "labeled_size", "n_runs", "in_psnr",
                                                      "in_ssim", "in_mse", "in_nrmse", "cross_psnr", "cross_ssim",
                                                      "cross_mse", "cross_nrmse", "val_mse"},
             "column layout");
    c.expect(table.rows.size() == 4, "4 mean rows");
    double worst = 0.0;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        std::vector<MetricReport> in, cross;
        for (int seed = 1; seed <= 5; ++seed) {
            const auto d = root / "runs" / (table.at(i, "pretext") + "_" + table.at(i, "labeled_size") + "_" +
                                            std::to_string(seed));
            in.push_back(read_metrics_csv(d / "metrics_test.csv").mean);
            cross.push_back(read_metrics_csv(d / "metrics_cross.csv").mean);
        }
        const auto mi = aggregate(in), mc = aggregate(cross);
        const double got[] = {table.real(i, "in_psnr"),    table.real(i, "in_ssim"),    table.real(i, "in_mse"),
                              table.real(i, "in_nrmse"),   table.real(i, "cross_psnr"), table.real(i, "cross_ssim"),
                              table.real(i, "cross_mse"),  table.real(i, "cross_nrmse")};
        const double want[] = {mi.psnr_db, mi.ssim, mi.mse, mi.nrmse, mc.psnr_db, mc.ssim, mc.mse, mc.nrmse};
        for (int j = 0; j < 8; ++j) worst = std::max(worst, std::fabs(got[j] - want[j]));
        c.expect(table.at(i, "n_runs") == "5", "5 runs per row");
    }
    c.expect(worst <= 1e-12, "means equal recomputed aggregates within 1e-12");
    c.expect(read_csv(root / "report" / "significance.csv").rows.size() == 2, "2 t-test rows");
    c.note("max |mean - aggregate| " + fmt(worst, 3));
    return c.outcome();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance gate"};
    std::string work = "acceptance_work", only;
    app.add_option("workdir", work, "scratch directory (wiped first)");
    app.add_option("--only", only, "comma-separated criterion numbers");
    CLI11_PARSE(app, argc, argv);

    const fs::path root = fs::absolute(work);
    fs::remove_all(root);
    fs::create_directories(root);

    struct Criterion {
        int id;
        const char* name;
        double max_seconds;  // 0: no limit
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> all{
        {1, "window-leveling exactness", 1.0, window_leveling},
        {2, "dose synthesis consistency", 10.0, dose_synthesis},
        {3, "metrics oracle equivalence", 5.0, metrics_oracles},
        {4, "gradient correctness", 120.0, gradient_correctness},
        {5, "architecture invariants", 0.0, architecture},
        {6, "loss component laws", 0.0, loss_laws},
        {7, "scaled SSWL experiment", 0.0, [&] { return scaled_experiment(root); }},
        {8, "reproducibility and persistence", 0.0, [&] { return reproducibility(root); }},
        {9, "harness contract", 0.0, [&] { return harness_contract(root); }},
    };
    std::set<int> selected;
    for (const auto& s : harness::detail::split_list(only)) selected.insert(std::stoi(s));

    int failed = 0;
    for (const auto& cr : all) {
        if (!selected.empty() && !selected.count(cr.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = cr.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = seconds_since(t0);
        if (cr.max_seconds > 0 && secs >= cr.max_seconds) {
            o.pass = false;
            o.detail += "; runtime over " + fmt(cr.max_seconds) + " s";
        }
        failed += !o.pass;
        std::cout << "criterion " << cr.id << " " << (o.pass ? "PASS" : "FAIL") << " " << cr.name << " ("
                  << fmt(secs, 3) << " s): " << o.detail << std::endl;
    }
    std::cout << (failed ? "acceptance: " + std::to_string(failed) + " criteria failed" : "acceptance: all passed")
              << std::endl;
    return failed ? 1 : 0;
}
