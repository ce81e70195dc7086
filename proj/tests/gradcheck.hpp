#pragma once

// Central finite-difference gradient checker.
//
// The tensor under test is reduced to a scalar L = sum(w * f()) with fixed
// random weights w (scaled by 1/sqrt(n) so L stays O(1)). Each checked
// coordinate x_i is compared as
//   rel = |g_auto - g_fd| / max(|g_auto|, |g_fd|, floor)
// with the fourth-order central difference
//   g_fd = (L(x-2h) - 8 L(x-h) + 8 L(x+h) - L(x+2h)) / 12h.
// Its O(h^4) truncation allows a larger h, which keeps rounding noise in L
// well below small true gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mstpp/ops.hpp"
#include "mstpp/rng.hpp"
#include "mstpp/tensor.hpp"

namespace gradcheck {

struct Options {
    double h = 1e-3;
    double floor = 1e-6;
    std::size_t max_coords = 0;  // per leaf; 0 = every coordinate
    std::uint64_t seed = 7;
};

struct Result {
    double max_rel = 0.0;
    std::size_t checked = 0;
    std::string worst;  // "<leaf>[<index>]"
};

inline mstpp::Tensor projection_weights(const mstpp::Shape& shape, std::uint64_t seed) {
    mstpp::Rng rng(seed);
    std::vector<double> w(mstpp::shape_numel(shape));
    const double s = 1.0 / std::sqrt(static_cast<double>(w.size()));
    for (auto& v : w) v = rng.normal() * s;
    return mstpp::Tensor::from(shape, std::move(w));
}

/// `f` rebuilds the output from the current values of `leaves` (which it
/// captures by handle). Leaves must have requires_grad set.
inline Result check(const std::function<mstpp::Tensor()>& f, std::vector<mstpp::Tensor> leaves,
                    const Options& opt = {}) {
    for (auto& l : leaves) l.zero_grad();
    const mstpp::Tensor out = f();
    const mstpp::Tensor w = projection_weights(out.shape(), opt.seed);
    auto scalar = [&](const mstpp::Tensor& y) { return mstpp::sum(mstpp::mul(y, w)); };
    scalar(out).backward();

    std::vector<std::vector<double>> analytic;
    for (const auto& l : leaves) {
        std::vector<double> g(l.numel(), 0.0);
        if (l.has_grad()) std::copy(l.grad().begin(), l.grad().end(), g.begin());
        analytic.push_back(std::move(g));
    }

    auto eval = [&]() {
        mstpp::NoGradGuard no_grad;
        return scalar(f()).item();
    };

    Result r;
    mstpp::Rng pick(opt.seed ^ 0x5bd1e995ULL);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        mstpp::Tensor& leaf = leaves[li];
        const std::size_t n = leaf.numel();
        std::vector<std::size_t> coords;
        if (opt.max_coords == 0 || opt.max_coords >= n) {
            for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (std::size_t k = 0; k < opt.max_coords; ++k) coords.push_back(static_cast<std::size_t>(pick.below(n)));
        }
        for (std::size_t i : coords) {
            const double x0 = leaf[i];
            auto at = [&](double dx) {
                leaf[i] = x0 + dx;
                return eval();
            };
            const double fd = (at(-2.0 * opt.h) - 8.0 * at(-opt.h) + 8.0 * at(opt.h) - at(2.0 * opt.h)) / (12.0 * opt.h);
            leaf[i] = x0;
            const double a = analytic[li][i];
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), opt.floor});
            ++r.checked;
            if (rel > r.max_rel) {
                r.max_rel = rel;
                r.worst = "leaf " + std::to_string(li) + "[" + std::to_string(i) + "]";
            }
        }
    }
    return r;
}

}  // namespace gradcheck
