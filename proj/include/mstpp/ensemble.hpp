#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cube.hpp"
#include "errors.hpp"

namespace mstpp {

/// A reconstruction model seen as a cube-to-cube map.
using CubeModel = std::function<SpectralCube(const SpectralCube&)>;

/// Non-negative convex weights, sum within 1e-9 of one.
struct EnsembleWeights {
    std::vector<double> alpha;

    static EnsembleWeights uniform(std::size_t k) {
        if (k == 0) throw std::invalid_argument("EnsembleWeights: K must be positive");
        return {std::vector<double>(k, 1.0 / static_cast<double>(k))};
    }

    void validate() const {
        if (alpha.empty()) throw std::invalid_argument("EnsembleWeights: no weights");
        double s = 0.0;
        for (double a : alpha) {
            if (!(a >= 0.0) || !std::isfinite(a)) throw std::invalid_argument("EnsembleWeights: weights must be finite and non-negative");
            s += a;
        }
        if (std::abs(s - 1.0) > 1e-9)
            throw std::invalid_argument("EnsembleWeights: weights sum to " + std::to_string(s) + ", expected 1");
    }
};

namespace detail {

inline void require_common_shape(const std::vector<SpectralCube>& cubes) {
    if (cubes.empty()) throw std::invalid_argument("ensemble: no inputs");
    for (const auto& c : cubes)
        if (!c.same_shape(cubes.front()))
            throw DimensionError("ensemble: output shapes disagree (" + c.shape_string() + " vs " +
                                 cubes.front().shape_string() + ")");
}

// Weighted sum accumulated in float64, folded in index order.
inline SpectralCube weighted_sum(const std::vector<SpectralCube>& cubes, const std::vector<double>& w) {
    require_common_shape(cubes);
    std::vector<double> acc(cubes.front().size(), 0.0);
    for (std::size_t k = 0; k < cubes.size(); ++k)
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w[k] * static_cast<double>(cubes[k].values[i]);
    SpectralCube out = cubes.front();
    for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = static_cast<float>(acc[i]);
    return out;
}

inline SpectralCube plain_mean(const std::vector<SpectralCube>& cubes) {
    require_common_shape(cubes);
    std::vector<double> acc(cubes.front().size(), 0.0);
    for (const auto& c : cubes)
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(c.values[i]);
    SpectralCube out = cubes.front();
    const double k = static_cast<double>(cubes.size());
    for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = static_cast<float>(acc[i] / k);
    return out;
}

}  // namespace detail

/// Runs the model on all 8 flips/rotations of the input, undoes each
/// transform on the output and averages.
inline SpectralCube self_ensemble(const CubeModel& model, const SpectralCube& rgb) {
    std::vector<SpectralCube> outs;
    for (const auto g : Dihedral::all()) outs.push_back(apply(model(apply(rgb, g)), g.inverse()));
    return detail::plain_mean(outs);
}

/// Unweighted mean of full-image outputs from several models.
inline SpectralCube multiscale_ensemble(const std::vector<CubeModel>& models, const SpectralCube& rgb) {
    if (models.empty()) throw std::invalid_argument("multiscale_ensemble: no models");
    std::vector<SpectralCube> outs;
    for (const auto& m : models) outs.push_back(m(rgb));
    return detail::plain_mean(outs);
}

/// Y = sum_i alpha_i Y_i
inline SpectralCube topk_ensemble(const std::vector<SpectralCube>& cubes, const EnsembleWeights& weights) {
    weights.validate();
    if (weights.alpha.size() != cubes.size())
        throw std::invalid_argument("topk_ensemble: " + std::to_string(weights.alpha.size()) + " weights for " +
                                    std::to_string(cubes.size()) + " cubes");
    return detail::weighted_sum(cubes, weights.alpha);
}

}  // namespace mstpp
