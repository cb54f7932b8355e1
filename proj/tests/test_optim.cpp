#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "kgd/error.hpp"
#include "kgd/optim.hpp"

using namespace kgd;

namespace {

void step(Optimizer& opt, Matrix& w, const Matrix& g) {
    Matrix* ps[] = {&w};
    const Matrix* gs[] = {&g};
    opt.step(ps, gs);
}

}  // namespace

TEST(Optimizer, AdamFirstStepIsSignedLearningRate) {
    Matrix w{{1.0, -2.0, 0.5}};
    Optimizer opt({OptimizerKind::Adam, 0.01});
    step(opt, w, Matrix{{3.0, -0.5, 1e-3}});
    EXPECT_NEAR(w(0, 0), 1.0 - 0.01, 1e-8);
    EXPECT_NEAR(w(0, 1), -2.0 + 0.01, 1e-8);
    EXPECT_NEAR(w(0, 2), 0.5 - 0.01, 1e-7);
}

TEST(Optimizer, AdamWDecaysDecoupled) {
    Matrix w{{2.0}};
    Optimizer opt({.kind = OptimizerKind::AdamW, .lr = 0.1, .weight_decay = 0.5});
    step(opt, w, Matrix{{0.0}});
    EXPECT_NEAR(w(0, 0), 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}

TEST(Optimizer, GradientDescentCoupledDecay) {
    Matrix w{{2.0}};
    Optimizer opt({.kind = OptimizerKind::GradientDescent, .lr = 0.1, .weight_decay = 0.5});
    step(opt, w, Matrix{{1.0}});
    EXPECT_NEAR(w(0, 0), 2.0 - 0.1 * (1.0 + 1.0), 1e-15);
}

TEST(Optimizer, CosineScheduleWithoutWarmup) {
    Optimizer opt({.kind = OptimizerKind::GradientDescent, .lr = 1.0, .cosine_schedule = true, .total_steps = 4});
    Matrix w{{0.0}};
    const Matrix g{{1.0}};
    std::vector<double> rates;
    for (int t = 0; t < 5; ++t) {
        rates.push_back(opt.learning_rate());
        step(opt, w, g);
    }
    for (int t = 0; t <= 4; ++t) {
        EXPECT_NEAR(rates[t], (1.0 + std::cos(std::numbers::pi * t / 4.0)) / 2.0, 1e-15) << t;
    }
    EXPECT_NEAR(w(0, 0), -(1.0 + 0.8535533905932737 + 0.5 + 0.14644660940672627 + 0.0), 1e-12);
}

TEST(Optimizer, ShapeChecks) {
    Optimizer opt({OptimizerKind::Adam, 0.1});
    Matrix w(2, 2);
    try {
        step(opt, w, Matrix(1, 2));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
    }
}

TEST(Optimizer, KindNames) {
    EXPECT_EQ(parse_optimizer_kind("adam"), OptimizerKind::Adam);
    EXPECT_EQ(parse_optimizer_kind("adamw"), OptimizerKind::AdamW);
    EXPECT_EQ(parse_optimizer_kind("gd"), OptimizerKind::GradientDescent);
    EXPECT_EQ(to_string(OptimizerKind::AdamW), "adamw");
    EXPECT_THROW(parse_optimizer_kind("lbfgs"), Error);
}
