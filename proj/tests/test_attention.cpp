#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "mstpp/mstpp.hpp"
#include "oracles.hpp"

using namespace mstpp;

namespace {

std::uint64_t core_macs(const std::function<void()>& run) {
    CostLedger ledger;
    LedgerScope attach(ledger);
    run();
    return ledger.total_with_leaf("core");
}

// [1, H, W, C] -> [H*W][C] row-major, which is the tensor's own layout.
std::vector<double> tokens(const Tensor& x) { return x.values(); }

void zero_position_branch(SMsaParams& p) {
    for (Tensor* t : {&p.pos1.weight, &p.pos1.bias, &p.pos2.weight, &p.pos2.bias})
        for (auto& v : t->data()) v = 0.0;
}

}  // namespace

TEST(SpectralMsa, MatchesLoopTranscription) {
    for (std::size_t heads : {1u, 2u}) {
        Rng rng(40 + heads);
        auto p = SMsaParams::init(4, heads, rng);
        for (std::size_t j = 0; j < heads; ++j) p.sigma[j] = 0.5 + 0.75 * static_cast<double>(j);
        for (Tensor* t : {&p.pos1.bias, &p.pos2.bias})
            for (auto& v : t->data()) v = rng.uniform(-0.2, 0.2);
        const Tensor x = oracle::random_tensor({1, 2, 2, 4}, 50 + heads);
        const Tensor y = s_msa_forward(x, p);
        const auto ref = oracle::s_msa(tokens(x), p, 2, 2);
        ASSERT_EQ(y.numel(), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-10) << "heads " << heads << " i " << i;
    }
}

TEST(SpectralMsa, ZeroScaleGivesUniformAttention) {
    Rng rng(60);
    auto p = SMsaParams::init(6, 2, rng);
    for (double s : {0.0, 1e-12}) {
        for (auto& v : p.sigma.data()) v = s;
        AttentionTrace trace;
        (void)s_msa_forward(oracle::random_tensor({2, 3, 3, 6}, 61, false, -5.0, 5.0), p, &trace);
        for (double a : trace.attention.values()) EXPECT_NEAR(a, 1.0 / 3.0, 1e-9);
    }
}

TEST(SpectralMsa, ColumnsSumToOne) {
    Rng rng(62);
    const auto p = SMsaParams::init(8, 2, rng);
    AttentionTrace trace;
    (void)s_msa_forward(oracle::random_tensor({2, 5, 4, 8}, 63, false, -10.0, 10.0), p, &trace);
    const auto& a = trace.attention;
    ASSERT_EQ(a.shape(), (Shape{2, 2, 4, 4}));
    for (std::size_t m = 0; m < 4; ++m)
        for (std::size_t b = 0; b < 4; ++b) {
            double s = 0.0;
            for (std::size_t r = 0; r < 4; ++r) s += a[m * 16 + r * 4 + b];
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
}

TEST(SpectralMsa, ConstantInputStaysSpatiallyConstantWithoutPositionBranch) {
    Rng rng(64);
    auto p = SMsaParams::init(4, 1, rng);
    zero_position_branch(p);
    const Tensor y = s_msa_forward(Tensor::full({1, 2, 2, 4}, 0.3), p);
    for (std::size_t t = 1; t < 4; ++t)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(y[t * 4 + c], y[c]);
}

// Dyadic inputs and weights keep every product and sum exact, so token
// order cannot change any bit of the result.
TEST(SpectralMsa, SpatialPermutationEquivarianceIsBitwise) {
    const std::size_t H = 4, W = 5, C = 6, T = H * W;
    Rng rng(65);
    auto p = SMsaParams::init(C, 2, rng);
    zero_position_branch(p);
    std::uint64_t seed = 66;
    for (Tensor* t : {&p.to_q.weight, &p.to_k.weight, &p.to_v.weight, &p.to_out.weight}) {
        const auto v = oracle::dyadic_vec(t->numel(), seed++, 16, 16.0);
        std::copy(v.begin(), v.end(), t->data().begin());
    }
    p.sigma[0] = 1.0 / 1024.0;
    p.sigma[1] = 1.0 / 512.0;
    const auto xv = oracle::dyadic_vec(T * C, 70, 16, 16.0);
    const Tensor x = Tensor::from({1, H, W, C}, xv);

    std::vector<std::size_t> perm(T);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng shuffle(71);
    for (std::size_t i = T; i > 1; --i) std::swap(perm[i - 1], perm[shuffle.below(i)]);
    std::vector<double> xp(T * C);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c) xp[t * C + c] = xv[perm[t] * C + c];

    const Tensor y = s_msa_forward(x, p);
    const Tensor yp = s_msa_forward(Tensor::from({1, H, W, C}, xp), p);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c) EXPECT_EQ(yp[t * C + c], y[perm[t] * C + c]) << t << "," << c;
}

TEST(SpectralMsa, HeadsMustDivideChannels) {
    Rng rng(72);
    EXPECT_THROW((void)SMsaParams::init(6, 4, rng), DimensionError);
    EXPECT_THROW((void)SMsaParams::init(6, 0, rng), DimensionError);
}

TEST(GlobalMsa, MatchesLoopTranscription) {
    for (std::size_t heads : {1u, 2u}) {
        Rng rng(80 + heads);
        const auto p = MsaParams::init(4, heads, rng);
        const Tensor x = oracle::random_tensor({1, 2, 2, 4}, 82 + heads);
        const Tensor y = global_msa_forward(x, p);
        const auto ref = oracle::global_msa(tokens(x), p, 4);
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-10);
    }
}

TEST(GlobalMsa, SinglePixelAttendsToItself) {
    Rng rng(84);
    const auto p = MsaParams::init(4, 1, rng);
    const Tensor x = oracle::random_tensor({1, 1, 1, 4}, 85);
    const Tensor y = global_msa_forward(x, p);
    const auto v = oracle::matmul(x.values(), p.to_v.weight.values(), 1, 4, 4);
    const auto want = oracle::matmul(v, p.to_out.weight.values(), 1, 4, 4);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], want[i], 1e-14);
}

TEST(GlobalMsa, TokenPermutationEquivariance) {
    Rng rng(86);
    const auto p = MsaParams::init(4, 2, rng);
    const std::size_t T = 9, C = 4;
    const auto xv = oracle::random_vec(T * C, 87);
    std::vector<std::size_t> perm{4, 7, 0, 2, 8, 1, 3, 6, 5};
    std::vector<double> xp(T * C);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c) xp[t * C + c] = xv[perm[t] * C + c];
    const Tensor y = global_msa_forward(Tensor::from({1, 3, 3, C}, xv), p);
    const Tensor yp = global_msa_forward(Tensor::from({1, 3, 3, C}, xp), p);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c) EXPECT_NEAR(yp[t * C + c], y[perm[t] * C + c], 1e-14);
}

TEST(GlobalMsa, RefusesTooManyTokens) {
    Rng rng(88);
    const auto p = MsaParams::init(4, 1, rng);
    EXPECT_THROW((void)global_msa_forward(Tensor::meta({1, 65, 64, 4}), p), DimensionError);
    EXPECT_THROW((void)global_msa_forward(Tensor::zeros({1, 4, 4, 4}), p, 15), DimensionError);
}

TEST(WindowMsa, SingleWindowEqualsGlobal) {
    Rng rng(90);
    const auto p = MsaParams::init(4, 2, rng);
    const Tensor x = oracle::random_tensor({2, 4, 4, 4}, 91);
    EXPECT_EQ(window_msa_forward(x, p, 4).values(), global_msa_forward(x, p).values());
}

TEST(WindowMsa, OutputDependsOnlyOnOwnWindow) {
    Rng rng(92);
    const auto p = MsaParams::init(4, 1, rng);
    const Tensor x = oracle::random_tensor({1, 4, 4, 4}, 93);
    Tensor x2 = x.clone();
    for (std::size_t i = 2; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t c = 0; c < 4; ++c) x2[(i * 4 + j) * 4 + c] += 0.5;  // windows (1,0) and (1,1)
    for (std::size_t j = 2; j < 4; ++j)
        for (std::size_t c = 0; c < 4; ++c) x2[(0 * 4 + j) * 4 + c] -= 0.25;  // window (0,1)
    const Tensor y = window_msa_forward(x, p, 2);
    const Tensor y2 = window_msa_forward(x2, p, 2);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(y[(i * 4 + j) * 4 + c], y2[(i * 4 + j) * 4 + c]);
}

TEST(WindowMsa, MacsArePerWindowTimesWindows) {
    Rng rng(94);
    const auto p = MsaParams::init(4, 1, rng);
    const auto per_window = core_macs([&] { (void)global_msa_forward(Tensor::zeros({1, 2, 2, 4}), p); });
    const auto tiled = core_macs([&] { (void)window_msa_forward(Tensor::zeros({1, 4, 4, 4}), p, 2); });
    EXPECT_EQ(tiled, 4 * per_window);
}

TEST(WindowMsa, RejectsNonTilingWindow) {
    Rng rng(95);
    const auto p = MsaParams::init(4, 1, rng);
    EXPECT_THROW((void)window_msa_forward(Tensor::zeros({1, 4, 6, 4}), p, 4), DimensionError);
}

TEST(PredictedCost, ClosedFormExamples) {
    EXPECT_EQ(predicted_cost(AttentionKind::Global, 8, 8, 4, 1, 0), 32768u);
    EXPECT_EQ(predicted_cost(AttentionKind::Window, 8, 8, 4, 1, 4), 8192u);
    EXPECT_EQ(predicted_cost(AttentionKind::Spectral, 8, 8, 4, 1, 0), 2048u);
    EXPECT_THROW((void)predicted_cost(AttentionKind::Spectral, 0, 8, 4, 1, 0), DimensionError);
    EXPECT_THROW((void)parse_attention_kind("shifted"), std::invalid_argument);
    EXPECT_EQ(parse_attention_kind(to_string(AttentionKind::Window)), AttentionKind::Window);
}

TEST(PredictedCost, MeasuredCoreMacsMatchOverSweep) {
    for (std::size_t H : {4u, 8u})
        for (std::size_t C : {4u, 8u})
            for (std::size_t N : {1u, 2u}) {
                Rng rng(H * 100 + C * 10 + N);
                const auto sp = SMsaParams::init(C, N, rng);
                const auto mp = MsaParams::init(C, N, rng);
                const Tensor x = Tensor::meta({1, H, H, C});
                EXPECT_EQ(core_macs([&] { (void)s_msa_forward(x, sp); }),
                          predicted_cost(AttentionKind::Spectral, H, H, C, N, 0));
                EXPECT_EQ(core_macs([&] { (void)global_msa_forward(x, mp); }),
                          predicted_cost(AttentionKind::Global, H, H, C, N, 0));
                for (std::size_t M : {2u, 4u})
                    EXPECT_EQ(core_macs([&] { (void)window_msa_forward(x, mp, M); }),
                              predicted_cost(AttentionKind::Window, H, H, C, N, M));
            }
}

TEST(PredictedCost, DoublingExtentsScalesByLaw) {
    Rng rng(96);
    const auto sp = SMsaParams::init(8, 2, rng);
    const auto mp = MsaParams::init(8, 2, rng);
    auto spectral = [&](std::size_t h) { return core_macs([&] { (void)s_msa_forward(Tensor::meta({1, h, h, 8}), sp); }); };
    auto global = [&](std::size_t h) { return core_macs([&] { (void)global_msa_forward(Tensor::meta({1, h, h, 8}), mp); }); };
    auto window = [&](std::size_t h) {
        return core_macs([&] { (void)window_msa_forward(Tensor::meta({1, h, h, 8}), mp, 2); });
    };
    EXPECT_EQ(global(8), 16 * global(4));
    EXPECT_EQ(window(8), 4 * window(4));
    EXPECT_EQ(spectral(8), 4 * spectral(4));
}
