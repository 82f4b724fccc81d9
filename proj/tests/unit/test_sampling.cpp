#include <gtest/gtest.h>

#include <random>

#include "vidguide/errors.hpp"
#include "vidguide/guidance.hpp"

using namespace vidguide;

namespace {

constexpr const char* kPrompt = "a man is walking and a dog is running";

ToyModelConfig small_model(std::size_t steps, unsigned long long seed = 0) {
    ToyModelConfig c;
    c.frames = 2;
    c.latent_h = 8;
    c.latent_w = 8;
    c.hidden = 16;
    c.embed_dim = 16;
    c.head_dim = 8;
    c.seed = seed;
    c.schedule.steps = steps;
    return c;
}

const SpatialPriorSet& scene() {
    static const SpatialPriorSet s = load_box_file(VIDGUIDE_SCENE_FILE);
    return s;
}

}  // namespace

TEST(Sampling, ScheduleConformanceForArbitraryConfigs) {
    std::mt19937 rng(77);
    for (int trial = 0; trial < 12; ++trial) {
        GuidanceConfig g;
        g.total_steps = 4 + rng() % 7;
        g.t1 = rng() % (g.total_steps + 1);
        g.t2 = g.t1 + rng() % (g.total_steps - g.t1 + 1);
        g.iters_spatial = 1 + rng() % 3;
        g.iters_syntax = 1 + rng() % 2;
        const ToyDenoiser model(small_model(g.total_steps, trial));
        const SamplingResult r = run_guided_sampling(kPrompt, scene(), g, model, trial);

        ASSERT_EQ(r.trace.size(), g.t1 * g.iters_spatial + (g.t2 - g.t1) * g.iters_syntax)
            << "T=" << g.total_steps << " t1=" << g.t1 << " t2=" << g.t2;
        std::size_t k = 0;
        for (std::size_t step = 1; step <= g.t2; ++step) {
            const bool spatial = step <= g.t1;
            const std::size_t iters = spatial ? g.iters_spatial : g.iters_syntax;
            for (std::size_t it = 0; it < iters; ++it, ++k) {
                EXPECT_EQ(r.trace[k].step, step);
                EXPECT_EQ(r.trace[k].iteration, it + 1);
                EXPECT_EQ(r.trace[k].loss_name, spatial ? "L_sp" : "L_syt");
                EXPECT_EQ(r.trace[k].weight, spatial ? g.lambda_sp : g.lambda_syt);
            }
        }
        EXPECT_EQ(r.trajectory.size(), g.total_steps + 1);
        EXPECT_EQ(r.ca_records.size(), g.total_steps);
    }
}

TEST(Sampling, ZeroWeightsMatchUnguidedBitExactly) {
    GuidanceConfig g;
    g.total_steps = 8;
    g.t1 = 2;
    g.t2 = 5;
    GuidanceConfig zero = g;
    zero.lambda_sp = 0.0;
    zero.lambda_syt = 0.0;
    GuidanceConfig empty = g;
    empty.t1 = 0;
    empty.t2 = 0;
    const ToyDenoiser model(small_model(8, 3));
    const SamplingResult a = run_guided_sampling(kPrompt, scene(), zero, model, 3);
    const SamplingResult b = run_guided_sampling(kPrompt, scene(), empty, model, 3);
    EXPECT_TRUE(a.trace.empty());
    EXPECT_TRUE(b.trace.empty());
    ASSERT_EQ(a.trajectory.size(), b.trajectory.size());
    for (std::size_t k = 0; k < a.trajectory.size(); ++k) EXPECT_TRUE(bit_identical(a.trajectory[k], b.trajectory[k]));
    const SamplingResult guided = run_guided_sampling(kPrompt, scene(), g, model, 3);
    EXPECT_FALSE(bit_identical(guided.trajectory.back(), a.trajectory.back()));
}

TEST(Sampling, SeededRunIsReproducible) {
    GuidanceConfig g;
    g.total_steps = 6;
    g.t1 = 2;
    g.t2 = 4;
    g.iters_spatial = 2;
    const ToyDenoiser m1(small_model(6, 5)), m2(small_model(6, 5));
    const SamplingResult a = run_guided_sampling(kPrompt, scene(), g, m1, 5);
    const SamplingResult b = run_guided_sampling(kPrompt, scene(), g, m2, 5);
    EXPECT_EQ(a.trace, b.trace);
    for (std::size_t k = 0; k < a.trajectory.size(); ++k) EXPECT_TRUE(bit_identical(a.trajectory[k], b.trajectory[k]));
    for (std::size_t k = 0; k < a.ca_records.size(); ++k) {
        EXPECT_TRUE(bit_identical(a.ca_records[k].attn, b.ca_records[k].attn));
    }
}

TEST(Sampling, MasksBoundToPairTokens) {
    GuidanceConfig g;
    g.total_steps = 3;
    g.t1 = 0;
    g.t2 = 0;
    const SamplingResult r = run_guided_sampling(kPrompt, scene(), g, ToyDenoiser(small_model(3)), 0);
    EXPECT_EQ(r.pairs.pairs.size(), 2u);
    EXPECT_EQ(r.masks.grid_h, 4u);
    EXPECT_EQ(r.masks.frames, 2u);
    EXPECT_EQ(r.masks.by_token.size(), 4u);
    EXPECT_EQ(r.ca_at(1).step, 1u);
    EXPECT_THROW(r.ca_at(4), ContractError);
}

TEST(Sampling, StepMismatchIsInputError) {
    GuidanceConfig g;  // 50 steps
    EXPECT_THROW(run_guided_sampling(kPrompt, scene(), g, ToyDenoiser(small_model(10)), 0), InputError);
}

TEST(Sampling, SpatialGuidanceLowersSpatialLoss) {
    GuidanceConfig g;
    g.total_steps = 10;
    g.t1 = 2;
    g.t2 = 2;
    const SamplingResult r = run_guided_sampling(kPrompt, scene(), g, ToyDenoiser(small_model(10, 1)), 1);
    ASSERT_EQ(r.trace.size(), 20u);
    EXPECT_LT(r.trace.back().loss_value, r.trace.front().loss_value);
}
