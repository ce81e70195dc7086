#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace mstpp {

/// Rounds to the nearest binary32 value. Parameters are kept float-representable
/// so that checkpoints (stored as binary32) round-trip bitwise.
inline double round_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline std::string param_path(const std::string& prefix, const std::string& leaf) {
    return prefix.empty() ? leaf : prefix + "." + leaf;
}

/// Fan-in scaled uniform init, bound sqrt(1/fan_in).
inline Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& e : v) e = round_to_f32(rng.uniform(-bound, bound));
    return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor init_const(Shape shape, double value) { return Tensor::full(std::move(shape), value, true); }

/// Dense projection over the last axis: y = x W (+ b). Weight is [in, out].
struct Linear {
    Tensor weight;
    Tensor bias;

    static Linear init(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
        Linear l;
        l.weight = init_uniform({in, out}, in, rng);
        if (with_bias) l.bias = init_const({out}, 0.0);
        return l;
    }

    Tensor operator()(const Tensor& x) const {
        auto y = matmul(x, weight);
        return bias.defined() ? add(y, bias) : y;
    }

    template <typename F>
    void for_each_param(const std::string& prefix, F&& f) {
        f(param_path(prefix, "weight"), weight);
        if (bias.defined()) f(param_path(prefix, "bias"), bias);
    }
};

struct Conv2d {
    Tensor weight;  // [out, in/groups, k, k]
    Tensor bias;    // optional [out]
    Conv2dOptions opt;

    static Conv2d init(std::size_t in, std::size_t out, std::size_t k, Conv2dOptions opt, bool with_bias, Rng& rng) {
        Conv2d c;
        c.opt = opt;
        const std::size_t fan_in = in / opt.groups * k * k;
        c.weight = init_uniform({out, in / opt.groups, k, k}, fan_in, rng);
        if (with_bias) c.bias = init_const({out}, 0.0);
        return c;
    }

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, opt); }

    template <typename F>
    void for_each_param(const std::string& prefix, F&& f) {
        f(param_path(prefix, "weight"), weight);
        if (bias.defined()) f(param_path(prefix, "bias"), bias);
    }
};

struct Deconv2d {
    Tensor weight;  // [in, out, 2, 2]
    Tensor bias;    // [out]

    static Deconv2d init(std::size_t in, std::size_t out, Rng& rng) {
        Deconv2d d;
        d.weight = init_uniform({in, out, 2, 2}, in * 4, rng);
        d.bias = init_const({out}, 0.0);
        return d;
    }

    Tensor operator()(const Tensor& x) const { return deconv2d(x, weight, bias, 2); }

    template <typename F>
    void for_each_param(const std::string& prefix, F&& f) {
        f(param_path(prefix, "weight"), weight);
        f(param_path(prefix, "bias"), bias);
    }
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    static LayerNorm init(std::size_t c) { return {init_const({c}, 1.0), init_const({c}, 0.0)}; }

    Tensor operator()(const Tensor& x) const { return layernorm(x, gamma, beta); }

    template <typename F>
    void for_each_param(const std::string& prefix, F&& f) {
        f(param_path(prefix, "gamma"), gamma);
        f(param_path(prefix, "beta"), beta);
    }
};

/// Total learnable scalar count of anything exposing for_each_param.
template <typename Params>
std::uint64_t count_params(Params& p) {
    std::uint64_t n = 0;
    p.for_each_param("", [&](const std::string&, Tensor& t) { n += t.numel(); });
    return n;
}

/// Named handles to every parameter, in visitation order.
template <typename Params>
std::vector<std::pair<std::string, Tensor>> named_params(Params& p, const std::string& prefix = "") {
    std::vector<std::pair<std::string, Tensor>> out;
    p.for_each_param(prefix, [&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
}

}  // namespace mstpp
