#include <gtest/gtest.h>

#include <cmath>

#include "occdepth/gradcheck.hpp"

using namespace occdepth;

TEST(Gradcheck, RelativeErrorHandValues) {
    EXPECT_DOUBLE_EQ(gradient_relative_error({1.0, 2.0}, {1.0, 2.0}), 0.0);
    EXPECT_DOUBLE_EQ(gradient_relative_error({1.0, 4.0}, {1.0, 3.0}), 0.25);
    EXPECT_THROW(static_cast<void>(gradient_relative_error({1.0}, {})), ContractError);
}

TEST(Gradcheck, NumericGradientOfQuadratic) {
    double x = 1.5, y = -2.0;
    const auto g = numeric_gradient([&] { return x * x + 3.0 * x * y; }, {&x, &y});
    EXPECT_NEAR(g[0], 2.0 * 1.5 + 3.0 * -2.0, 1e-8);
    EXPECT_NEAR(g[1], 3.0 * 1.5, 1e-8);
    EXPECT_EQ(x, 1.5);
}

TEST(Gradcheck, DetectsAWrongGradient) {
    double x = 0.7;
    const auto numeric = numeric_gradient([&] { return std::sin(x); }, {&x});
    EXPECT_TRUE(make_gradcheck_result("m", "sin", {std::cos(0.7)}, numeric).passed);
    EXPECT_FALSE(make_gradcheck_result("m", "sin", {1.01 * std::cos(0.7)}, numeric).passed);
}

class GradcheckModule : public ::testing::TestWithParam<std::string> {};

TEST_P(GradcheckModule, PassesForSeveralSeeds) {
    for (const std::uint64_t seed : {1, 2, 3}) {
        const auto results = run_gradcheck(GetParam(), seed);
        ASSERT_FALSE(results.empty());
        for (const auto& r : results) {
            EXPECT_GT(r.entries, 0u) << r.operation;
            EXPECT_TRUE(r.passed) << r.module << " " << r.operation << " seed " << seed << " err " << r.max_rel_error;
        }
    }
}

INSTANTIATE_TEST_SUITE_P(Modules, GradcheckModule, ::testing::Values("lifting", "oad", "losses", "pipeline"));

TEST(Gradcheck, UnknownModule) { EXPECT_THROW(run_gradcheck("toynet"), ContractError); }
