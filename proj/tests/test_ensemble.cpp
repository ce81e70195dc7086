#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mstpp/mstpp.hpp"
#include "oracles.hpp"

using namespace mstpp;

namespace {

// Per-pixel spectral model: band b = (b + 1) * mean(rgb) / 31. Commutes with
// every spatial permutation.
SpectralCube per_pixel(const SpectralCube& rgb) {
    auto out = SpectralCube::zeros(rgb.height, rgb.width, SpectralCube::default_wavelengths());
    for (std::size_t y = 0; y < rgb.height; ++y)
        for (std::size_t x = 0; x < rgb.width; ++x) {
            const float m = (rgb.at(0, y, x) + rgb.at(1, y, x) + rgb.at(2, y, x)) / 3.0f;
            for (std::size_t b = 0; b < 31; ++b) out.at(b, y, x) = m * static_cast<float>(b + 1) / 31.0f;
        }
    return out;
}

SpectralCube random_rgb(std::size_t h, std::size_t w, std::uint64_t seed) {
    auto c = SpectralCube::zeros(h, w, SpectralCube::rgb_wavelengths());
    c.values = oracle::random_cube(h, w, seed).values;
    c.values.resize(3 * h * w);
    return c;
}

SpectralCube constant_cube(double v) {
    auto c = SpectralCube::zeros(3, 3, SpectralCube::default_wavelengths());
    std::fill(c.values.begin(), c.values.end(), static_cast<float>(v));
    return c;
}

}  // namespace

TEST(SelfEnsemble, EquivariantModelIsUnchanged) {
    const auto rgb = random_rgb(5, 7, 1);
    const auto plain = per_pixel(rgb);
    const auto ens = self_ensemble(per_pixel, rgb);
    ASSERT_TRUE(ens.same_shape(plain));
    for (std::size_t i = 0; i < plain.size(); ++i) EXPECT_NEAR(ens.values[i], plain.values[i], 1e-6);
}

TEST(SelfEnsemble, AlignsTransformedOutputs) {
    // A model that only reads the top-left pixel is not equivariant; the
    // ensemble then averages the eight corners back into place.
    const CubeModel corner = [](const SpectralCube& rgb) {
        auto out = SpectralCube::zeros(rgb.height, rgb.width, SpectralCube::default_wavelengths());
        out.at(0, 0, 0) = rgb.at(0, 0, 0);
        return out;
    };
    auto rgb = SpectralCube::zeros(4, 4, SpectralCube::rgb_wavelengths());
    rgb.at(0, 0, 0) = 8.0f;
    const auto ens = self_ensemble(corner, rgb);
    // Only the two transforms that fix the top-left corner see the 8.
    EXPECT_FLOAT_EQ(ens.at(0, 0, 0), 2.0f);
    double total = 0.0;
    for (float v : ens.values) total += v;
    EXPECT_FLOAT_EQ(static_cast<float>(total), 2.0f);
}

TEST(SelfEnsemble, ConstantInputConstantOutput) {
    const CubeModel m = [](const SpectralCube& rgb) { return per_pixel(rgb); };
    auto rgb = SpectralCube::zeros(4, 6, SpectralCube::rgb_wavelengths());
    std::fill(rgb.values.begin(), rgb.values.end(), 0.4f);
    const auto out = self_ensemble(m, rgb);
    for (std::size_t b = 0; b < 31; ++b)
        for (std::size_t i = 0; i < out.plane_size(); ++i)
            EXPECT_EQ(out.values[b * out.plane_size() + i], out.values[b * out.plane_size()]);
}

TEST(Multiscale, AveragesModels) {
    std::vector<CubeModel> models;
    for (double v : {0.1, 0.2, 0.6}) models.push_back([v](const SpectralCube&) { return constant_cube(v); });
    const auto out = multiscale_ensemble(models, random_rgb(3, 3, 2));
    for (float v : out.values) EXPECT_NEAR(v, 0.3, 1e-7);
    const auto one = multiscale_ensemble({per_pixel}, random_rgb(3, 3, 3));
    EXPECT_EQ(one, per_pixel(random_rgb(3, 3, 3)));
    EXPECT_THROW((void)multiscale_ensemble({}, random_rgb(3, 3, 3)), std::invalid_argument);
}

TEST(Multiscale, IdenticalModelsAreIdempotent) {
    const auto rgb = random_rgb(4, 4, 4);
    const auto out = multiscale_ensemble({per_pixel, per_pixel, per_pixel, per_pixel}, rgb);
    const auto ref = per_pixel(rgb);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.values[i], ref.values[i], 1e-7);
}

TEST(TopK, OneHotSelectsExactly) {
    const std::vector<SpectralCube> cubes{oracle::random_cube(3, 4, 5), oracle::random_cube(3, 4, 6),
                                          oracle::random_cube(3, 4, 7)};
    for (std::size_t k = 0; k < 3; ++k) {
        EnsembleWeights w{{0.0, 0.0, 0.0}};
        w.alpha[k] = 1.0;
        EXPECT_EQ(topk_ensemble(cubes, w), cubes[k]);
    }
}

TEST(TopK, ConvexCombinationStaysInBounds) {
    const std::vector<SpectralCube> cubes{oracle::random_cube(3, 4, 8), oracle::random_cube(3, 4, 9)};
    const auto out = topk_ensemble(cubes, {{0.3, 0.7}});
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float lo = std::min(cubes[0].values[i], cubes[1].values[i]);
        const float hi = std::max(cubes[0].values[i], cubes[1].values[i]);
        EXPECT_GE(out.values[i], lo);
        EXPECT_LE(out.values[i], hi);
        EXPECT_NEAR(out.values[i], 0.3 * cubes[0].values[i] + 0.7 * cubes[1].values[i], 1e-7);
    }
}

TEST(TopK, IdempotentAndScaleCommuting) {
    const auto c = oracle::random_cube(2, 3, 10);
    EXPECT_EQ(topk_ensemble({c, c, c}, EnsembleWeights::uniform(3)).values.size(), c.size());
    const auto same = topk_ensemble({c, c}, {{0.5, 0.5}});
    EXPECT_EQ(same, c);
    auto d = oracle::random_cube(2, 3, 11);
    auto c2 = c, d2 = d;
    for (auto& v : c2.values) v *= 2.0f;
    for (auto& v : d2.values) v *= 2.0f;
    const auto base = topk_ensemble({c, d}, {{0.25, 0.75}});
    const auto scaled = topk_ensemble({c2, d2}, {{0.25, 0.75}});
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(scaled.values[i], 2.0f * base.values[i]);
}

TEST(TopK, RejectsBadWeightsAndShapes) {
    const std::vector<SpectralCube> cubes{oracle::random_cube(2, 2, 12), oracle::random_cube(2, 2, 13)};
    EXPECT_THROW((void)topk_ensemble(cubes, {{0.5, 0.6}}), std::invalid_argument);
    EXPECT_THROW((void)topk_ensemble(cubes, {{1.5, -0.5}}), std::invalid_argument);
    EXPECT_THROW((void)topk_ensemble(cubes, {{1.0}}), std::invalid_argument);
    EXPECT_THROW((void)EnsembleWeights::uniform(0), std::invalid_argument);
    const std::vector<SpectralCube> mixed{oracle::random_cube(2, 2, 14), oracle::random_cube(2, 3, 15)};
    EXPECT_THROW((void)topk_ensemble(mixed, {{0.5, 0.5}}), DimensionError);
}
