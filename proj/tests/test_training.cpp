#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mstpp/mstpp.hpp"
#include "oracles.hpp"

using namespace mstpp;
namespace fs = std::filesystem;

namespace {

void set_grad(Tensor& t, std::vector<double> g) { t.impl().grad = std::move(g); }

Dataset small_dataset(std::size_t n, std::size_t size) {
    const auto m = ResponseMatrix::gaussian_default(SpectralCube::default_wavelengths());
    Dataset d;
    for (std::size_t i = 0; i < n; ++i) d.train.push_back(make_pair({200 + i, size, size, 4, 1e-3}, m));
    return d;
}

TrainConfig quick_config() {
    TrainConfig c;
    c.patch_size = 8;
    c.batch_size = 2;
    c.epochs = 2;
    c.lr = 1e-3;
    c.seed = 5;
    return c;
}

MstPlusPlusParams tiny(std::uint64_t seed) {
    auto cfg = MstConfig::tiny();
    cfg.seed = seed;
    return MstPlusPlusParams::init(cfg);
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
    std::vector<std::pair<std::string, Tensor>> p{{"w", Tensor::from({3}, {1.0, -2.0, 0.5})}};
    set_grad(p[0].second, {1.0, -1.0, 4.0});
    AdamState st;
    adam_step(p, st, 0.1);
    const double step = 0.1 / (1.0 + 1e-8);
    EXPECT_NEAR(p[0].second[0], 1.0 - step, 1e-15);
    EXPECT_NEAR(p[0].second[1], -2.0 + step, 1e-15);
    EXPECT_NEAR(p[0].second[2], 0.5 - 0.1 * 4.0 / (4.0 + 1e-8), 1e-15);
    EXPECT_EQ(st.step, 1u);
}

TEST(Adam, MatchesScalarReference) {
    std::vector<std::pair<std::string, Tensor>> p{{"w", Tensor::scalar(0.3)}};
    AdamState st;
    double w = 0.3, m = 0.0, v = 0.0;
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int t = 1; t <= 10; ++t) {
        const double g = 2.0 * w - std::sin(t);  // arbitrary state-dependent gradient
        set_grad(p[0].second, {2.0 * p[0].second[0] - std::sin(t)});
        adam_step(p, st, lr);
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
        w -= lr * mh / (std::sqrt(vh) + eps);
        EXPECT_NEAR(p[0].second[0], w, 1e-10) << "step " << t;
    }
}

TEST(Adam, ZeroRateOrZeroGradientLeavesParameters) {
    std::vector<std::pair<std::string, Tensor>> p{{"a", Tensor::from({2}, {0.25, -1.5})}, {"b", Tensor::scalar(3.0)}};
    set_grad(p[0].second, {0.7, -0.2});
    AdamState st;
    adam_step(p, st, 0.0);
    EXPECT_EQ(p[0].second.values(), (std::vector<double>{0.25, -1.5}));
    EXPECT_EQ(p[1].second[0], 3.0);  // no gradient at all
    AdamState st2;
    p[0].second.zero_grad();
    set_grad(p[0].second, {0.0, 0.0});
    adam_step(p, st2, 0.1);
    EXPECT_EQ(p[0].second.values(), (std::vector<double>{0.25, -1.5}));
}

TEST(Adam, NonFiniteGradientNamesParameter) {
    std::vector<std::pair<std::string, Tensor>> p{{"encoder.w", Tensor::from({2}, {1.0, 2.0})}};
    set_grad(p[0].second, {1.0, std::nan("")});
    AdamState st;
    try {
        adam_step(p, st, 0.1);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("encoder.w"), std::string::npos);
    }
    EXPECT_EQ(p[0].second[0], 1.0);
}

TEST(Schedule, CosineEndpointsAndMonotone) {
    EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 4e-4, 1e-6), 4e-4);
    EXPECT_NEAR(cosine_lr(100, 100, 4e-4, 1e-6), 1e-6, 1e-18);
    EXPECT_NEAR(cosine_lr(50, 100, 4e-4, 0.0), 2e-4, 1e-18);
    for (std::size_t s = 1; s <= 100; ++s) EXPECT_LE(cosine_lr(s, 100, 4e-4, 1e-6), cosine_lr(s - 1, 100, 4e-4, 1e-6));
    EXPECT_THROW((void)cosine_lr(101, 100, 4e-4, 1e-6), std::invalid_argument);
}

TEST(Loss, MraeValueAndGradient) {
    Tensor pred = Tensor::from({1, 1, 1, 1}, {1.0}, true);
    const Tensor gt = Tensor::from({1, 1, 1, 1}, {2.0});
    const Tensor loss = mrae_loss(pred, gt);
    EXPECT_DOUBLE_EQ(loss.item(), 0.5);
    loss.backward();
    ASSERT_TRUE(pred.has_grad());
    EXPECT_DOUBLE_EQ(pred.grad()[0], -0.5);
}

TEST(Loss, AgreesWithEvaluationMetric) {
    const auto gt = oracle::random_cube(4, 4, 31);
    const auto pred = oracle::random_cube(4, 4, 32);
    const double l = mrae_loss(cube_to_tensor(pred), cube_to_tensor(gt)).item();
    EXPECT_NEAR(l, mrae(gt, pred), 1e-10);
    EXPECT_THROW((void)mrae_loss(Tensor::zeros({1, 2}), Tensor::zeros({2, 1})), DimensionError);
}

TEST(Train, ZeroEpochsIsANoOp) {
    auto model = tiny(1);
    const auto before = serialize_checkpoint(model);
    auto cfg = quick_config();
    cfg.epochs = 0;
    const auto r = train(cfg, small_dataset(2, 8), model);
    EXPECT_TRUE(r.steps.empty());
    EXPECT_EQ(serialize_checkpoint(model), before);
}

TEST(Train, SameSeedSameHistory) {
    const auto data = small_dataset(3, 12);
    auto a = tiny(2), b = tiny(2);
    const auto ra = train(quick_config(), data, a);
    const auto rb = train(quick_config(), data, b);
    ASSERT_EQ(ra.steps.size(), 4u);  // 3 patches, batch 2, 2 epochs
    EXPECT_EQ(ra.loss_history(), rb.loss_history());
    EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
    for (double l : ra.loss_history()) EXPECT_TRUE(std::isfinite(l));
}

TEST(Train, ParametersStayBinary32Representable) {
    auto m = tiny(3);
    (void)train(quick_config(), small_dataset(2, 8), m);
    for (const auto& [name, t] : named_params(m))
        for (double v : t.values()) ASSERT_EQ(v, round_to_f32(v)) << name;
}

TEST(Train, WritesArtefacts) {
    const auto dir = fs::temp_directory_path() / "mstpp_train_out";
    fs::remove_all(dir);
    auto m = tiny(4);
    TrainOptions opt;
    opt.out_dir = dir;
    std::vector<std::string> logs;
    opt.log = [&](const std::string& s) { logs.push_back(s); };
    const auto r = train(quick_config(), small_dataset(2, 8), m, opt);
    EXPECT_TRUE(fs::exists(dir / "loss.csv"));
    EXPECT_TRUE(fs::exists(dir / "best.mstw"));
    EXPECT_TRUE(fs::exists(dir / "last.mstw"));
    EXPECT_EQ(logs.size(), 2u);
    EXPECT_EQ(r.evals.size(), 2u);
    std::ifstream csv(dir / "loss.csv");
    std::string line;
    std::size_t rows = 0;
    std::getline(csv, line);
    EXPECT_EQ(line, "step,lr,loss,mrae,rmse,psnr");
    while (std::getline(csv, line)) ++rows;
    EXPECT_EQ(rows, r.steps.size());
    auto last = load((dir / "last.mstw").string());
    EXPECT_EQ(serialize_checkpoint(last), serialize_checkpoint(m));
}

TEST(Train, RejectsBadConfigs) {
    auto bad = quick_config();
    bad.batch_size = 0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = quick_config();
    bad.lr = 0.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = quick_config();
    bad.beta2 = 1.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    auto m = tiny(5);
    EXPECT_THROW((void)train(quick_config(), Dataset{}, m), std::invalid_argument);
    bad = quick_config();
    bad.patch_size = 64;
    EXPECT_THROW((void)train(bad, small_dataset(1, 8), m), DimensionError);
}
