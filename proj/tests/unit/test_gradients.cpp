// Analytic gradients of the full hybrid loss against the finite-difference oracle.

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace {

using namespace sswl;
using namespace sswl::testing;

class GradientSeeds : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradientSeeds, Double) {
    const auto r = check_gradients<double>(GetParam(), RVAEConfig::tiny(16), LossWeights{0.6, 1.0});
    EXPECT_EQ(r.checked, parameter_count(RVAEConfig::tiny(16)));
    EXPECT_LT(r.max_rel, 1e-5) << "worst entry " << r.worst;
}

TEST_P(GradientSeeds, Float) {
    const auto r = check_gradients<float>(GetParam(), RVAEConfig::tiny(16), LossWeights{0.6, 1.0});
    EXPECT_LT(r.max_rel, 1e-3) << "worst entry " << r.worst;
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradientSeeds, ::testing::Values(1u, 2u, 3u));

TEST(Gradients, BottleneckOff) {
    auto c = RVAEConfig::tiny(16);
    c.bottleneck_enabled = false;
    const auto r = check_gradients<double>(7, c, LossWeights{0.6, 1.0});
    EXPECT_LT(r.max_rel, 1e-5) << "worst entry " << r.worst;
}

TEST(Gradients, ThreeStagesWithoutInputSkip) {
    auto c = RVAEConfig::tiny(20);
    c.n_enc_layers = c.n_dec_layers = 3;
    c.kernel = 3;
    c.skip_pairs = {{2, 1}};
    const auto r = check_gradients<double>(11, c, LossWeights{0.3, 0.5});
    EXPECT_LT(r.max_rel, 1e-5) << "worst entry " << r.worst;
}

}  // namespace
