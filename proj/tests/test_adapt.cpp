#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "kgd/adapt.hpp"
#include "kgd/error.hpp"
#include "kgd/synth.hpp"
#include "oracles.hpp"

using namespace kgd;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no kgd::Error thrown";
    return ErrorCode::IoError;
}

double loss_of(const ClassifierHead& h, const Matrix& f, const Matrix& t) { return soft_cross_entropy(h, f, t).loss; }

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// A small synthetic domain shared by the loop tests.
class AdaptLoop : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        SynthSpec spec;
        spec.n_images = 60;
        spec.probe_size = 200;
        spec.dim = 16;
        const auto dir = test::fresh_dir("adapt_loop_data");
        data_ = new Dataset(load_dataset(synth_generate(spec, dir)));
    }
    static void TearDownTestSuite() {
        delete data_;
        data_ = nullptr;
    }
    void SetUp() override { ASSERT_NE(data_, nullptr) << "synthetic fixture failed to load"; }
    static AdaptationConfig quick() {
        AdaptationConfig c = synthetic_benchmark_config();
        c.iterations = 40;
        c.hidden_dim = 16;
        c.init_epochs = 50;
        return c;
    }
    static Dataset* data_;
};

Dataset* AdaptLoop::data_ = nullptr;

}  // namespace

TEST(ThresholdFilter, BoundaryIsInclusive) {
    const Matrix p{{0.9, 0.05, 0.05}, {0.2, 0.2, 0.2}, {0.25, 0.2, 0.15}};
    EXPECT_EQ(kept_indices(p, 0.25), (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(kept_indices(p, 0.0), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(ThresholdFilter, DefaultTauAndIdempotence) {
    EXPECT_EQ(AdaptationConfig{}.tau, 0.25);
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        ProposalBatch b;
        b.image_id = "x";
        const std::size_t m = rng.below(6);
        b.probs = test::random_probs(rng, m, 3, 1.0);
        for (std::size_t j = 0; j < m; ++j) {
            b.boxes.push_back({0, 0, 1, 1});
            b.feature_rows.push_back(j);
        }
        const double tau = rng.uniform(0.2, 0.8);
        const ProposalBatch once = threshold_filter(b, tau);
        const ProposalBatch twice = threshold_filter(once, tau);
        EXPECT_EQ(once.probs, twice.probs);
        EXPECT_EQ(once.feature_rows, twice.feature_rows);
        for (std::size_t j = 0; j < once.probs.rows(); ++j) {
            auto r = once.probs.row(j);
            EXPECT_GE(*std::max_element(r.begin(), r.end()), tau);
        }
    }
}

TEST(FuseLabels, HandArithmetic) {
    EXPECT_EQ(fuse_labels(Matrix{{0.1, 0.2}}, Matrix{{0.1, 0.4}}), (Matrix{{0, 1}}));
    const Matrix p = fuse_labels(Matrix{{0.1, 0.3, 0.2}}, Matrix{{0.1, 0.3, 0.2}});
    // s = [0.2, 0.6, 0.4] -> min-max [0, 1, 0.5] -> [0, 2/3, 1/3]
    EXPECT_NEAR(p(0, 0), 0.0, 1e-15);
    EXPECT_NEAR(p(0, 1), 2.0 / 3, 1e-15);
    EXPECT_NEAR(p(0, 2), 1.0 / 3, 1e-15);
}

TEST(FuseLabels, ConstantRowIsUniform) {
    EXPECT_EQ(fuse_labels(Matrix{{0.2, 0.2, 0.2, 0.2}}, Matrix(1, 4)), Matrix(1, 4, 0.25));
}

TEST(FuseLabels, PreservesArgmaxAndSumsToOne) {
    Rng rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n_c = 2 + rng.below(6);
        const Matrix pl = test::random_probs(rng, 1, n_c);
        const Matrix pv = test::random_probs(rng, 1, n_c);
        const Matrix p = fuse_labels(pl, pv);
        const Matrix s = pl + pv;
        EXPECT_EQ(argmax(p.row(0)), argmax(s.row(0)));
        double sum = 0.0;
        for (double v : p.row(0)) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(SoftCrossEntropy, ConfidentCorrectHeadHasTinyLoss) {
    ClassifierHead h = ClassifierHead::zeros(2, 3);
    h.weights = Matrix{{10, 0, 0}, {0, 0, 0}};
    const Matrix f{{1, 0}};
    const Matrix t{{1, 0, 0}};
    ASSERT_GE(head_probs(h, f)(0, 0), 0.999);
    EXPECT_LE(loss_of(h, f, t), 1e-3);
}

TEST(SoftCrossEntropy, UniformTargetBound) {
    Rng rng(3);
    const Matrix f = test::random_matrix(rng, 5, 4);
    const Matrix t(5, 3, 1.0 / 3);
    EXPECT_NEAR(loss_of(ClassifierHead::zeros(4, 3), f, t), std::log(3.0), 1e-12);
    for (int trial = 0; trial < 50; ++trial) {
        ClassifierHead h{test::random_matrix(rng, 4, 3), test::random_matrix(rng, 1, 3)};
        EXPECT_GE(loss_of(h, f, t), std::log(3.0) - 1e-9);
    }
}

TEST(SoftCrossEntropy, GradientMatchesFiniteDifferences) {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        ClassifierHead h{test::random_matrix(rng, 5, 3), test::random_matrix(rng, 1, 3)};
        const Matrix f = test::random_matrix(rng, 6, 5);
        const Matrix t = test::random_probs(rng, 6, 3);
        const HeadGradient g = soft_cross_entropy(h, f, t);
        auto loss = [&] { return loss_of(h, f, t); };
        EXPECT_LT(test::max_relative_error(g.weights, test::central_difference(h.weights, loss, 1e-4)), 1e-4);
        EXPECT_LT(test::max_relative_error(g.bias, test::central_difference(h.bias, loss, 1e-4)), 1e-4);
    }
}

TEST(StudentStep, EmptyBatchIsNoOp) {
    ClassifierHead h{Matrix(3, 2, 0.5), Matrix(1, 2, 0.1)};
    const ClassifierHead before = h;
    Optimizer opt({OptimizerKind::AdamW, 0.1});
    EXPECT_EQ(student_step(h, Matrix(0, 3), Matrix(0, 2), opt), 0.0);
    EXPECT_EQ(h, before);
    EXPECT_EQ(opt.steps_taken(), 0u);
}

TEST(StudentStep, NonFiniteLossDiverges) {
    ClassifierHead h = ClassifierHead::zeros(2, 2);
    h.weights(0, 0) = std::nan("");
    Optimizer opt({OptimizerKind::AdamW, 0.1});
    EXPECT_EQ(code_of([&] { student_step(h, Matrix{{1, 1}}, Matrix{{1, 0}}, opt); }), ErrorCode::DivergedStudent);
}

TEST(TeacherEma, Extremes) {
    Rng rng(5);
    const ClassifierHead s{test::random_matrix(rng, 3, 2), test::random_matrix(rng, 1, 2)};
    ClassifierHead t{test::random_matrix(rng, 3, 2), test::random_matrix(rng, 1, 2)};
    const ClassifierHead t0 = t;
    teacher_ema(t, s, 1.0);
    EXPECT_EQ(t, t0);
    teacher_ema(t, s, 0.0);
    EXPECT_EQ(t, s);
    EXPECT_EQ(AdaptationConfig{}.ema_rate, 0.9999);
}

TEST(TeacherEma, NormBoundedByHistory) {
    Rng rng(6);
    ClassifierHead t{test::random_matrix(rng, 4, 3), test::random_matrix(rng, 1, 3)};
    double bound = norm_l2(t.weights.data());
    for (int step = 0; step < 200; ++step) {
        const ClassifierHead s{test::random_matrix(rng, 4, 3, rng.uniform(0.1, 3)), Matrix(1, 3)};
        bound = std::max(bound, norm_l2(s.weights.data()));
        teacher_ema(t, s, rng.uniform(0.0, 1.0));
        EXPECT_LE(norm_l2(t.weights.data()), bound + 1e-12);
    }
}

TEST(TeacherEma, ShapeMismatch) {
    ClassifierHead t = ClassifierHead::zeros(3, 2);
    EXPECT_EQ(code_of([&] { teacher_ema(t, ClassifierHead::zeros(3, 3), 0.5); }), ErrorCode::DimMismatch);
}

TEST(HeadCheckpoint, RoundTrip) {
    Rng rng(7);
    const ClassifierHead h{test::random_matrix(rng, 4, 3), test::random_matrix(rng, 1, 3)};
    const auto dir = test::fresh_dir("head_checkpoint");
    save_head(dir / "h.kgde", h);
    const ClassifierHead back = load_head(dir / "h.kgde");
    EXPECT_EQ(back.weights, round_to_float(h.weights));
    EXPECT_EQ(back.bias, round_to_float(h.bias));
}

TEST(CalibrateLabels, MtOnlyUsesNoGraph) {
    const Matrix p{{0.7, 0.2, 0.1}, {0.1, 0.1, 0.1}};
    const auto labels = calibrate_labels(Matrix{{1, 0}, {0, 1}}, p, 0.25, Fusion::MtOnly, nullptr, nullptr);
    EXPECT_EQ(labels.kept, (std::vector<std::size_t>{0}));
    EXPECT_TRUE(labels.p_l.empty());
    EXPECT_TRUE(labels.p_v.empty());
    EXPECT_EQ(labels.fused, normalize_labels(Matrix{{0.7, 0.2, 0.1}}));
}

TEST(CalibrateLabels, MissingGraphRejected) {
    const Matrix p{{0.7, 0.3}};
    EXPECT_EQ(code_of([&] { calibrate_labels(Matrix{{1, 0}}, p, 0.25, Fusion::Kgd, nullptr, nullptr); }),
              ErrorCode::InvalidConfig);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
    AdaptationConfig c;
    c.tau = 0.4;
    c.fusion = Fusion::VkgOnly;
    c.vkg_mode = VkgMode::Static;
    c.lkg_mode = PromptMode::Names;
    c.gcn_optimizer = OptimizerKind::GradientDescent;
    c.seed = 77;
    const AdaptationConfig back = config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(code_of([] { config_from_json({{"tua", 0.3}}); }), ErrorCode::InvalidConfig);
    EXPECT_EQ(code_of([] { config_from_json({{"tau", "high"}}); }), ErrorCode::InvalidConfig);
}

TEST(Config, ValidationRanges) {
    auto invalid = [](auto mutate) {
        AdaptationConfig c;
        mutate(c);
        return code_of([&] { c.validate(); });
    };
    EXPECT_EQ(invalid([](AdaptationConfig& c) { c.tau = 1.0; }), ErrorCode::InvalidConfig);
    EXPECT_EQ(invalid([](AdaptationConfig& c) { c.tau = -0.1; }), ErrorCode::InvalidConfig);
    EXPECT_EQ(invalid([](AdaptationConfig& c) { c.ema_rate = 1.0; }), ErrorCode::InvalidConfig);
    EXPECT_EQ(invalid([](AdaptationConfig& c) { c.lr = 0.0; }), ErrorCode::InvalidConfig);
    EXPECT_EQ(invalid([](AdaptationConfig& c) { c.batch_size = 0; }), ErrorCode::InvalidConfig);
    EXPECT_EQ(invalid([](AdaptationConfig& c) { c.alpha = 1.0; }), ErrorCode::InvalidConfig);
    AdaptationConfig{}.validate();
}

TEST(Config, Defaults) {
    const AdaptationConfig c;
    EXPECT_EQ(c.lr, 5e-6);
    EXPECT_EQ(c.weight_decay, 1e-4);
    EXPECT_EQ(c.batch_size, 2u);
    EXPECT_TRUE(c.cosine_schedule);
}

TEST_F(AdaptLoop, ZeroIterationsIsSourceOnlyEvaluation) {
    AdaptationConfig c = quick();
    c.iterations = 0;
    const auto r = run_adaptation(c, *data_);
    ASSERT_TRUE(r.initial_accuracy && r.teacher_accuracy);
    EXPECT_EQ(*r.teacher_accuracy, *r.initial_accuracy);
    EXPECT_EQ(*r.student_accuracy, *r.initial_accuracy);
    EXPECT_TRUE(r.iterations.empty());
}

TEST_F(AdaptLoop, MtOnlyInvokesNoGraph) {
    AdaptationConfig c = quick();
    c.fusion = Fusion::MtOnly;
    const auto r = run_adaptation(c, *data_);
    EXPECT_EQ(r.lkg_invocations, 0u);
    EXPECT_EQ(r.vkg_invocations, 0u);
    EXPECT_FALSE(r.lkg.has_value());
    EXPECT_FALSE(r.vkg.has_value());
    for (const auto& rec : r.iterations) EXPECT_EQ(rec.loss_lkg, 0.0);
}

TEST_F(AdaptLoop, KgdInvokesBothGraphsEveryIteration) {
    const auto r = run_adaptation(quick(), *data_);
    EXPECT_EQ(r.lkg_invocations, 40u);
    EXPECT_EQ(r.vkg_invocations, 40u);
    ASSERT_EQ(r.iterations.size(), 40u);
    for (const auto& rec : r.iterations) EXPECT_GT(rec.loss_lkg, 0.0);
}

TEST_F(AdaptLoop, TauExtremes) {
    AdaptationConfig c = quick();
    c.tau = 0.0;
    for (const auto& rec : run_adaptation(c, *data_).iterations) EXPECT_EQ(rec.kept_count, 8u);

    c.tau = 1.0 - 1e-12;
    const auto r = run_adaptation(c, *data_);
    for (const auto& rec : r.iterations) {
        EXPECT_EQ(rec.kept_count, 0u);
        EXPECT_EQ(rec.loss_cls, 0.0);
    }
    EXPECT_LT(test::max_abs_diff(r.student.weights, r.teacher.weights), 1e-12);

    c.tau = 1.0;
    EXPECT_EQ(code_of([&] { run_adaptation(c, *data_); }), ErrorCode::InvalidConfig);
}

TEST_F(AdaptLoop, SlowEmaWarning) {
    AdaptationConfig c = quick();
    c.ema_rate = 0.9999;
    const auto r = run_adaptation(c, *data_);
    ASSERT_FALSE(r.warnings.empty());
    EXPECT_NE(r.warnings.front().find("SlowEmaRate"), std::string::npos);
    for (const auto& w : run_adaptation(quick(), *data_).warnings) {
        EXPECT_EQ(w.find("SlowEmaRate"), std::string::npos) << w;
    }
}

TEST_F(AdaptLoop, SingleCategoryRejected) {
    Dataset one = *data_;
    one.lexicon.resize(1);
    EXPECT_EQ(code_of([&] { run_adaptation(quick(), one); }), ErrorCode::TooFewCategories);
}

TEST_F(AdaptLoop, DeterministicOutputs) {
    const auto a = test::fresh_dir("adapt_det_a");
    const auto b = test::fresh_dir("adapt_det_b");
    run_adaptation(quick(), *data_, a);
    run_adaptation(quick(), *data_, b);
    for (const char* name : {"report.json", "teacher_head.kgde", "student_head.kgde", "lkg.json", "lkg_omega.kgde",
                             "lkg_w0.kgde", "lkg_w1.kgde", "vkg.json", "vkg_nodes.kgde"}) {
        ASSERT_TRUE(std::filesystem::exists(a / name)) << name;
        EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
    }
}

TEST_F(AdaptLoop, EveryAblationCombinationCompletes) {
    for (auto lkg_mode : {PromptMode::Names, PromptMode::Definitions, PromptMode::Hierarchy}) {
        for (auto vkg_mode : {VkgMode::Static, VkgMode::DynamicNoSmooth, VkgMode::Dynamic}) {
            for (auto fusion : {Fusion::Kgd, Fusion::MtOnly, Fusion::LkgOnly, Fusion::VkgOnly}) {
                AdaptationConfig c = quick();
                c.iterations = 15;
                c.lkg_mode = lkg_mode;
                c.vkg_mode = vkg_mode;
                c.fusion = fusion;
                const auto r = run_adaptation(c, *data_);
                EXPECT_EQ(r.iterations.size(), 15u);
                EXPECT_TRUE(r.teacher.weights.all_finite());
            }
        }
    }
}

TEST_F(AdaptLoop, ReportJsonShape) {
    const auto dir = test::fresh_dir("adapt_report");
    run_adaptation(quick(), *data_, dir);
    std::ifstream in(dir / "report.json");
    const auto j = nlohmann::json::parse(in);
    for (const char* key : {"config", "data", "iterations", "probe", "warnings", "checkpoints"}) {
        EXPECT_TRUE(j.contains(key)) << key;
    }
    EXPECT_EQ(j["iterations"].size(), 40u);
    for (const char* key : {"loss_cls", "loss_lkg", "kept_count"}) EXPECT_TRUE(j["iterations"][0].contains(key));
    EXPECT_EQ(j["checkpoints"]["teacher_head"], "teacher_head.kgde");
}
