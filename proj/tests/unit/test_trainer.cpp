#include <gtest/gtest.h>

#include "sswl/harness/commands.hpp"
#include "sswl/trainer.hpp"
#include "support.hpp"

namespace {

using namespace sswl;
using sswl::testing::random_tensor;
using sswl::testing::TempDir;

TEST(Schedule, StepDecay) {
    TrainConfig c;
    for (int e = 0; e < 8; ++e) EXPECT_EQ(c.lr_at(e), 1e-5);
    for (int e = 8; e < 16; ++e) EXPECT_DOUBLE_EQ(c.lr_at(e), 1e-6);
    EXPECT_DOUBLE_EQ(c.lr_at(16), 1e-7);
    c.lr_decay_factor = 1.0;
    EXPECT_EQ(c.lr_at(100), 1e-5);
    c.lr_decay_factor = 0.0;
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParameterSet<double> p;
    p.add("w", {3}).values = {1.0, -2.0, 0.5};
    auto s = TrainState<double>::fresh(p, 0, "downstream");
    ParameterSet<double> g = p.zeros_like();
    g.at("w").values = {0.3, -4.0, 0.0};
    adam_step(s, g, 0.01, AdamParams{});
    // Bias correction makes the first update lr * g / (|g| + eps').
    EXPECT_NEAR(s.params.at("w").values[0], 1.0 - 0.01, 1e-9);
    EXPECT_NEAR(s.params.at("w").values[1], -2.0 + 0.01, 1e-9);
    EXPECT_EQ(s.params.at("w").values[2], 0.5);
    EXPECT_EQ(s.step, 1);
    adam_step(s, g, 0.01, AdamParams{});
    const double w1 = 1.0 - 0.01 * 0.3 / (0.3 + 1e-8);
    const double m = 0.9 * 0.1 * 0.3 + 0.1 * 0.3, v = 0.999 * 0.001 * 0.09 + 0.001 * 0.09;
    const double mh = m / (1 - 0.9 * 0.9), vh = v / (1 - 0.999 * 0.999);
    EXPECT_NEAR(s.params.at("w").values[0], w1 - 0.01 * mh / (std::sqrt(vh) + 1e-8), 1e-12);
}

PairSet<double> smooth_pairs(int n, int size, std::uint64_t seed) {
    PairSet<double> p{random_tensor<double>(n, 1, size, size, seed), Tensor<double>(n, 1, size, size), {}};
    for (std::size_t i = 0; i < p.inputs.size(); ++i) p.targets.values()[i] = 0.6 * p.inputs.values()[i] + 0.2;
    for (int i = 0; i < n; ++i) p.ids.push_back("s" + std::to_string(i));
    return p;
}

template <class T>
void expect_same_state(const TrainState<T>& a, const TrainState<T>& b) {
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(a.adam_m, b.adam_m);
    EXPECT_EQ(a.adam_v, b.adam_v);
    EXPECT_EQ(a.best_params, b.best_params);
    EXPECT_EQ(a.log, b.log);
    EXPECT_EQ(a.step, b.step);
    EXPECT_EQ(a.epoch, b.epoch);
    EXPECT_EQ(a.phase, b.phase);
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_EQ(a.best_val, b.best_val);
    EXPECT_EQ(a.best_epoch, b.best_epoch);
}

TrainConfig quick_config() {
    TrainConfig c;
    c.batch_size = 8;
    c.learning_rate = 1e-3;
    c.lr_decay_every_epochs = 100;
    c.seed = 13;
    return c;
}

TEST(TrainPhase, LossDecreases) {
    const auto model = RVAEConfig::tiny(16);
    const auto pairs = smooth_pairs(32, 16, 1), val = smooth_pairs(8, 16, 2);
    const auto F = FeatureExtractor<double>::fixed_random(3, {4, 4}, {0, 1});
    auto s = TrainState<double>::fresh(init_params<double>(model, 4), 13, "downstream");
    s = train_phase(std::move(s), pairs, quick_config(), 20, model, LossWeights{}, &F, val);
    ASSERT_EQ(s.log.size(), 20u);
    EXPECT_LT(s.log.back().train_loss, 0.5 * s.log.front().train_loss);
    EXPECT_LT(s.best_val, s.log.front().val_mse);
    EXPECT_EQ(s.step, 20 * 4);
    EXPECT_EQ(s.log[s.best_epoch].val_mse, s.best_val);
}

TEST(TrainPhase, DeterministicAndResumable) {
    const auto model = RVAEConfig::tiny(16);
    const auto pairs = smooth_pairs(20, 16, 5), val = smooth_pairs(6, 16, 6);
    const auto F = FeatureExtractor<float>::fixed_random(3, {4, 4}, {0, 1});
    const auto pf = PairSet<float>{pairs.inputs.cast<float>(), pairs.targets.cast<float>(), pairs.ids};
    const auto vf = PairSet<float>{val.inputs.cast<float>(), val.targets.cast<float>(), val.ids};
    const auto cfg = quick_config();
    const auto fresh = TrainState<float>::fresh(init_params<float>(model, 7), cfg.seed, "downstream");

    TempDir dir;
    PhaseHooks<float> hooks;
    hooks.on_epoch = [&](const TrainState<float>& s, double) {
        if (s.epoch == 3) save_checkpoint(dir / "mid.ckpt", s, model);
    };
    const auto full = train_phase(fresh, pf, cfg, 6, model, LossWeights{}, &F, vf, hooks);
    const auto again = train_phase(fresh, pf, cfg, 6, model, LossWeights{}, &F, vf);
    expect_same_state(full, again);

    auto mid = load_checkpoint<float>(dir / "mid.ckpt");
    EXPECT_EQ(mid.epoch, 3);
    const auto resumed = train_phase(std::move(mid), pf, cfg, 6, model, LossWeights{}, &F, vf);
    expect_same_state(resumed, full);
}

TEST(TrainPhase, DivergenceCarriesLastGoodState) {
    const auto model = RVAEConfig::tiny(16);
    auto pairs = smooth_pairs(8, 16, 1);
    const auto val = smooth_pairs(2, 16, 2);
    auto cfg = quick_config();
    cfg.learning_rate = 1e30;
    auto s = TrainState<double>::fresh(init_params<double>(model, 1), 1, "downstream");
    try {
        train_phase(std::move(s), pairs, cfg, 50, model, LossWeights{0.0, 1.0}, static_cast<const FeatureExtractor<double>*>(nullptr), val);
        FAIL() << "expected divergence";
    } catch (const DivergenceError<double>& e) {
        EXPECT_TRUE(e.last_good().params.all_finite());
        EXPECT_EQ(e.last_good().log.size(), std::size_t(e.last_good().epoch));
    }
}

class PhantomData : public ::testing::Test {
protected:
    void SetUp() override {
        harness::SimulateOptions o;
        o.phantom = 30;
        o.size = 24;
        o.seed = 3;
        o.out = dir.path();
        harness::simulate_phantoms(o);
    }
    TempDir dir;
};

TEST_F(PhantomData, PretextPairCountsAndRanges) {
    SliceStore store(load_manifest(dir.path()));
    const auto split = make_splits(store.manifest(), 10, 0.1, 1);
    const Preprocess pre{{}, 24, 24, {}};
    EXPECT_EQ(pretext_sources(split).size(), 27u);

    const auto s = build_pretext_pairs<float>(split, PretextTask::sswl(), store, pre, 1);
    ASSERT_EQ(s.size(), 27);
    for (int i = 0; i < s.size(); ++i) {
        const auto& hu = store.hu(s.ids[std::size_t(i)], 24, 24);
        const auto want = apply_window_level(hu, WindowSpec{});
        for (std::size_t q = 0; q < want.pixels.size(); ++q) ASSERT_EQ(s.targets.sample(i)[q], want.pixels[q]);
    }
    for (float v : s.targets.values()) {
        EXPECT_GE(v, 0.f);
        EXPECT_LE(v, 1.f);
    }

    const auto r = build_pretext_pairs<float>(split, PretextTask::reconstruction(), store, pre, 1);
    EXPECT_EQ(r.inputs, r.targets);
    EXPECT_EQ(r.inputs, s.inputs);
    EXPECT_TRUE(build_pretext_pairs<float>(split, PretextTask::none(), store, pre, 1).empty());

    const auto n = build_pretext_pairs<double>(split, PretextTask::noisy_as_clean(0.05), store, pre, 1);
    double ss = 0.0;
    for (std::size_t q = 0; q < n.inputs.size(); ++q)
        ss += (n.inputs.values()[q] - n.targets.values()[q]) * (n.inputs.values()[q] - n.targets.values()[q]);
    EXPECT_NEAR(std::sqrt(ss / double(n.inputs.size())), 0.05, 0.002);
    EXPECT_EQ(n.inputs, build_pretext_pairs<double>(split, PretextTask::noisy_as_clean(0.05), store, pre, 1).inputs);
}

TEST_F(PhantomData, DenoisingPairsAreNormalized) {
    SliceStore store(load_manifest(dir.path()));
    const auto split = make_splits(store.manifest(), labeled_full, 0.0, 1);
    const auto p = build_denoising_pairs<double>(split.labeled, store, Preprocess{{}, 16, 16, {}});
    EXPECT_EQ(p.size(), 30);
    EXPECT_EQ(p.inputs.h(), 16);
    const auto& hu = store.hu(split.labeled[0].fdct, 16, 16);
    EXPECT_DOUBLE_EQ(p.targets(0, 0, 5, 7), double(normalize_hu(hu, {}).at(5, 7)));

    const auto w = build_denoising_pairs<double>(split.labeled, store, Preprocess{{}, 16, 16, WindowSpec{}});
    EXPECT_EQ(w.inputs, p.inputs);
    const auto want = apply_window_level(hu, WindowSpec{});
    for (std::size_t q = 0; q < want.pixels.size(); ++q) ASSERT_EQ(w.targets.sample(0)[q], double(want.pixels[q]));
}

TEST_F(PhantomData, ProtocolRunsBothPhases) {
    SliceStore store(load_manifest(dir.path()));
    const auto split = make_splits(store.manifest(), 8, 0.2, 2);
    const Preprocess pre{{}, 16, 16, {}};
    auto cfg = quick_config();
    cfg.pretext_epochs = 2;
    cfg.finetune_epochs = 3;
    const auto model = RVAEConfig::tiny(16);
    const auto F = FeatureExtractor<float>::fixed_random(1, {4, 4}, {0, 1});

    const auto data = build_protocol_data<float>(split, PretextTask::sswl(), store, pre, cfg.seed);
    EXPECT_EQ(data.pretext_train.size(), 24);
    EXPECT_EQ(data.pretext_val.size(), 6);
    int pretext_done = 0;
    ProtocolHooks<float> hooks;
    hooks.on_pretext_done = [&](const TrainState<float>& s) {
        ++pretext_done;
        EXPECT_EQ(s.phase, "pretext");
        EXPECT_EQ(s.epoch, 2);
    };
    const auto r = run_protocol(data, PretextTask::sswl(), model, cfg, LossWeights{}, &F, hooks);
    EXPECT_EQ(pretext_done, 1);
    ASSERT_TRUE(r.pretext.has_value());
    EXPECT_EQ(r.downstream.log.size(), 3u);
    EXPECT_EQ(r.downstream.step, 3);

    const auto none = build_protocol_data<float>(split, PretextTask::none(), store, pre, cfg.seed);
    const auto rn = run_protocol(none, PretextTask::none(), model, cfg, LossWeights{}, &F);
    EXPECT_FALSE(rn.pretext.has_value());
    EXPECT_NE(rn.downstream.params, r.downstream.params);

    const auto test = build_denoising_pairs<float>(split.validation, store, pre);
    const auto [state, report] = run_sswl_idn(data, test, WindowSpec{}, model, cfg, LossWeights{}, &F);
    expect_same_state(state, r.downstream);
    EXPECT_EQ(report.n_images, test.size());
}

TEST(Evaluation, WindowedSpaceMapsBackToHu) {
    Tensor<double> t(1, 1, 1, 3);
    const NormalizationSpec norm;
    t.values() = {(-110.0 + 1024.0) / 4095.0, (40.0 + 1024.0) / 4095.0, (190.0 + 1024.0) / 4095.0};
    const auto w = to_eval_space(t, EvalSpace{WindowSpec{}}, norm);
    EXPECT_NEAR(w.values()[0], 0.0, 1e-12);
    EXPECT_NEAR(w.values()[1], 0.5, 1e-12);
    EXPECT_NEAR(w.values()[2], 1.0, 1e-12);
    EXPECT_EQ(to_eval_space(t, EvalSpace{}, norm), t);
}

TEST(Pretext, Validation) {
    EXPECT_EQ(pretext_from_string("nac"), PretextKind::noisy_as_clean);
    EXPECT_EQ(pretext_from_string("rec"), PretextKind::reconstruction);
    EXPECT_THROW(pretext_from_string("jigsaw"), ValidationError);
    PretextTask t = PretextTask::none();
    t.window = WindowSpec{};
    EXPECT_THROW(t.validate(), ValidationError);
    EXPECT_THROW((PretextTask{PretextKind::noisy_as_clean, std::nullopt, 0.0}.validate()), ValidationError);
}

}  // namespace
