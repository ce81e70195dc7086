#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "cost_ledger.hpp"
#include "errors.hpp"
#include "tensor.hpp"

namespace mstpp {

namespace detail {

inline std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `s` aligned to `out`, zero along broadcast axes.
inline std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
    std::vector<std::size_t> st(out.size(), 0);
    const auto own = strides_of(s);
    const std::size_t off = out.size() - s.size();
    for (std::size_t i = 0; i < s.size(); ++i) st[off + i] = s[i] == 1 ? 0 : own[i];
    return st;
}

// Calls f(out_index, a_index, b_index) for every element of the broadcast result.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                        F&& f) {
    const std::size_t n = shape_numel(out);
    const std::size_t r = out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

enum class BinaryKind { Add, Sub, Mul, Div };

inline Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
    const Shape out = broadcast_shapes(a.shape(), b.shape());
    if (any_meta({a, b})) return make_meta_result(out);
    const auto sa = broadcast_strides(a.shape(), out);
    const auto sb = broadcast_strides(b.shape(), out);
    std::vector<double> y(shape_numel(out));
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < y.size(); ++i) {
            switch (kind) {
                case BinaryKind::Add: y[i] = pa[i] + pb[i]; break;
                case BinaryKind::Sub: y[i] = pa[i] - pb[i]; break;
                case BinaryKind::Mul: y[i] = pa[i] * pb[i]; break;
                case BinaryKind::Div: y[i] = pa[i] / pb[i]; break;
            }
        }
    } else {
        for_each_broadcast(out, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            switch (kind) {
                case BinaryKind::Add: y[i] = pa[ia] + pb[ib]; break;
                case BinaryKind::Sub: y[i] = pa[ia] - pb[ib]; break;
                case BinaryKind::Mul: y[i] = pa[ia] * pb[ib]; break;
                case BinaryKind::Div: y[i] = pa[ia] / pb[ib]; break;
            }
        });
    }
    return make_op_result(out, std::move(y), {a, b}, [a, b, out, sa, sb, kind](const std::vector<double>& g) {
        double* ga = grad_sink(a);
        double* gb = grad_sink(b);
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        for_each_broadcast(out, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            switch (kind) {
                case BinaryKind::Add:
                    if (ga) ga[ia] += g[i];
                    if (gb) gb[ib] += g[i];
                    break;
                case BinaryKind::Sub:
                    if (ga) ga[ia] += g[i];
                    if (gb) gb[ib] -= g[i];
                    break;
                case BinaryKind::Mul:
                    if (ga) ga[ia] += g[i] * pb[ib];
                    if (gb) gb[ib] += g[i] * pa[ia];
                    break;
                case BinaryKind::Div:
                    if (ga) ga[ia] += g[i] / pb[ib];
                    if (gb) gb[ib] -= g[i] * pa[ia] / (pb[ib] * pb[ib]);
                    break;
            }
        });
    });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
    if (x.is_meta()) return make_meta_result(x.shape());
    std::vector<double> y(x.numel());
    const auto xs = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(xs[i]);
    return make_op_result(x.shape(), std::move(y), {x}, [x, deriv](const std::vector<double>& g) {
        double* gx = grad_sink(x);
        const auto xs = x.data();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xs[i]);
    });
}

inline std::size_t normalize_axis(long axis, std::size_t rank) {
    const long r = static_cast<long>(rank);
    if (axis < -r || axis >= r)
        throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = A[i * k + p];
            const double* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void gemm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* b = B + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[p] * b[p];
            C[i * n + j] += s;
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]
inline void gemm_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* b = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double a = A[p * m + i];
            double* c = C + i * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::Add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::Sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::Mul); }
inline Tensor div(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::Div); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

inline Tensor scale(const Tensor& x, double s) {
    return detail::unary(x, [s](double v) { return v * s; }, [s](double) { return s; });
}

inline Tensor abs(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return std::abs(v); },
        [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

/// GELU, tanh approximation.
inline Tensor gelu(const Tensor& x) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c = 0.044715;
    return detail::unary(
        x,
        [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))); },
        [](double v) {
            const double t = std::tanh(k * (v + c * v * v * v));
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * c * v * v);
        });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
    if (x.is_meta()) return make_meta_result({1});
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_op_result({1}, {s}, {x}, [x](const std::vector<double>& g) {
        double* gx = grad_sink(x);
        for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[0];
    });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// ---------------------------------------------------------------------------
// Layout

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes size");
    if (x.is_meta()) return make_meta_result(std::move(shape));
    return make_op_result(shape, x.values(), {x}, [x](const std::vector<double>& g) {
        double* gx = grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
    const std::size_t r = x.rank();
    if (perm.size() != r) throw DimensionError("permute rank mismatch for " + shape_str(x.shape()));
    std::vector<bool> used(r, false);
    for (auto p : perm) {
        if (p >= r || used[p]) throw DimensionError("invalid permutation for " + shape_str(x.shape()));
        used[p] = true;
    }
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) out[i] = x.dim(perm[i]);
    if (x.is_meta()) return make_meta_result(out);
    const auto in_st = detail::strides_of(x.shape());
    std::vector<std::size_t> src_st(r);
    for (std::size_t i = 0; i < r; ++i) src_st[i] = in_st[perm[i]];
    const std::vector<std::size_t> zero(r, 0);
    std::vector<std::size_t> map(x.numel());
    detail::for_each_broadcast(out, src_st, zero, [&](std::size_t i, std::size_t is, std::size_t) { map[i] = is; });
    std::vector<double> y(x.numel());
    const auto xs = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xs[map[i]];
    return make_op_result(out, std::move(y), {x}, [x, map = std::move(map)](const std::vector<double>& g) {
        double* gx = grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[map[i]] += g[i];
    });
}

/// Contiguous sub-range [start, start+len) along `axis`.
inline Tensor slice(const Tensor& x, long axis_in, std::size_t start, std::size_t len) {
    const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
    if (len == 0 || start + len > x.dim(axis))
        throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                             ") out of range for axis of extent " + std::to_string(x.dim(axis)));
    Shape out = x.shape();
    out[axis] = len;
    if (x.is_meta()) return make_meta_result(out);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t full = x.dim(axis);
    std::vector<double> y(shape_numel(out));
    const auto xs = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>((o * full + start) * inner), len * inner,
                    y.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
    return make_op_result(out, std::move(y), {x}, [x, outer, inner, full, start, len](const std::vector<double>& g) {
        double* gx = grad_sink(x);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < len * inner; ++i) gx[(o * full + start) * inner + i] += g[o * len * inner + i];
    });
}

inline std::vector<Tensor> split(const Tensor& x, long axis_in, std::size_t parts) {
    const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
    if (parts == 0 || x.dim(axis) % parts != 0)
        throw DimensionError("cannot split extent " + std::to_string(x.dim(axis)) + " into " +
                             std::to_string(parts) + " parts");
    const std::size_t len = x.dim(axis) / parts;
    std::vector<Tensor> out;
    for (std::size_t p = 0; p < parts; ++p) out.push_back(slice(x, static_cast<long>(axis), p * len, len));
    return out;
}

inline Tensor concat(const std::vector<Tensor>& xs, long axis_in) {
    if (xs.empty()) throw DimensionError("concat of an empty list");
    const std::size_t axis = detail::normalize_axis(axis_in, xs[0].rank());
    Shape out = xs[0].shape();
    out[axis] = 0;
    bool meta = false;
    for (const auto& t : xs) {
        if (t.rank() != out.size()) throw DimensionError("concat rank mismatch");
        for (std::size_t i = 0; i < out.size(); ++i)
            if (i != axis && t.dim(i) != xs[0].dim(i))
                throw DimensionError("concat shape mismatch: " + shape_str(t.shape()) + " vs " +
                                     shape_str(xs[0].shape()));
        out[axis] += t.dim(axis);
        meta = meta || t.is_meta();
    }
    if (meta) return make_meta_result(out);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= out[i];
    for (std::size_t i = axis + 1; i < out.size(); ++i) inner *= out[i];
    std::vector<double> y(shape_numel(out));
    std::size_t offset = 0;
    for (const auto& t : xs) {
        const std::size_t len = t.dim(axis);
        const auto ts = t.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(ts.begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                        y.begin() + static_cast<std::ptrdiff_t>((o * out[axis] + offset) * inner));
        offset += len;
    }
    auto result = make_op_result(out, std::move(y), {}, nullptr);
    // make_op_result only takes a fixed list; attach the node for a variable input list here.
    bool tracked = false;
    for (const auto& t : xs) tracked = tracked || t.requires_grad();
    if (tracked && grad_enabled()) {
        auto& impl = result.impl();
        impl.requires_grad = true;
        auto node = std::make_shared<detail::Node>();
        for (const auto& t : xs)
            if (t.requires_grad()) node->inputs.push_back(t.impl_ptr());
        const std::size_t total = out[axis];
        node->backward = [xs, axis, outer, inner, total](const std::vector<double>& g) {
            std::size_t offset = 0;
            for (const auto& t : xs) {
                const std::size_t len = t.dim(axis);
                if (double* gt = grad_sink(t))
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t i = 0; i < len * inner; ++i)
                            gt[o * len * inner + i] += g[(o * total + offset) * inner + i];
                offset += len;
            }
        };
        impl.grad_fn = std::move(node);
    }
    return result;
}

/// Reflect-pads the two trailing (spatial) axes of an N-C-H-W tensor.
/// Mirrors without repeating the edge sample, matching the usual "reflect" mode.
inline Tensor reflect_pad2d(const Tensor& x, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right) {
    if (x.rank() != 4) throw DimensionError("reflect_pad2d expects a rank-4 tensor, got " + shape_str(x.shape()));
    const std::size_t H = x.dim(2), W = x.dim(3);
    if (std::max(top, bottom) >= H || std::max(left, right) >= W)
        throw DimensionError("reflect padding must be smaller than the padded extent " + shape_str(x.shape()));
    const std::size_t Ho = H + top + bottom, Wo = W + left + right;
    Shape out{x.dim(0), x.dim(1), Ho, Wo};
    if (x.is_meta()) return make_meta_result(out);
    auto reflect = [](long i, long n) {
        if (i < 0) return -i;
        if (i >= n) return 2 * (n - 1) - i;
        return i;
    };
    const std::size_t planes = x.dim(0) * x.dim(1);
    std::vector<std::size_t> map(planes * Ho * Wo);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                const auto si = static_cast<std::size_t>(reflect(static_cast<long>(i) - static_cast<long>(top), static_cast<long>(H)));
                const auto sj = static_cast<std::size_t>(reflect(static_cast<long>(j) - static_cast<long>(left), static_cast<long>(W)));
                map[(p * Ho + i) * Wo + j] = (p * H + si) * W + sj;
            }
    std::vector<double> y(map.size());
    const auto xs = x.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xs[map[i]];
    return make_op_result(out, std::move(y), {x}, [x, map = std::move(map)](const std::vector<double>& g) {
        double* gx = grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[map[i]] += g[i];
    });
}

/// Spatial crop of an N-C-H-W tensor.
inline Tensor crop2d(const Tensor& x, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
    if (x.rank() != 4) throw DimensionError("crop2d expects a rank-4 tensor, got " + shape_str(x.shape()));
    if (height == x.dim(2) && width == x.dim(3) && top == 0 && left == 0) return x;
    return slice(slice(x, 2, top, height), 3, left, width);
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product. Accepted forms:
///   [m x k] . [k x n]
///   [... x m x k] . [k x n]        (leading axes flattened)
///   [b x m x k] . [b x k x n]      (batched)
/// Records m*n*k MACs per product in the active ledger.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const bool batched = a.rank() == 3 && b.rank() == 3;
    if (a.rank() < 2 || (b.rank() != 2 && !batched))
        throw DimensionError("matmul: unsupported shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t k = a.dim(a.rank() - 1);
    const std::size_t kb = b.dim(b.rank() - 2);
    if (k != kb || (batched && a.dim(0) != b.dim(0)))
        throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t n = b.dim(b.rank() - 1);
    const std::size_t batch = batched ? a.dim(0) : 1;
    const std::size_t m = batched ? a.dim(1) : a.numel() / k;
    Shape out = a.shape();
    out.back() = n;
    record_macs(static_cast<std::uint64_t>(batch) * m * n * k);
    if (any_meta({a, b})) return make_meta_result(out);

    std::vector<double> y(batch * m * n, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    const std::size_t b_stride = batched ? k * n : 0;
    for (std::size_t t = 0; t < batch; ++t) detail::gemm_nn(pa + t * m * k, pb + t * b_stride, y.data() + t * m * n, m, k, n);
    return make_op_result(out, std::move(y), {a, b}, [a, b, batch, m, k, n, b_stride](const std::vector<double>& g) {
        const double* pa = a.data().data();
        const double* pb = b.data().data();
        double* ga = grad_sink(a);
        double* gb = grad_sink(b);
        for (std::size_t t = 0; t < batch; ++t) {
            if (ga) detail::gemm_nt(g.data() + t * m * n, pb + t * b_stride, ga + t * m * k, m, n, k);
            if (gb) detail::gemm_tn(pa + t * m * k, g.data() + t * m * n, gb + t * b_stride, k, m, n);
        }
    });
}

/// Swaps the last two axes.
inline Tensor transpose_last(const Tensor& x) {
    std::vector<std::size_t> perm(x.rank());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::swap(perm[x.rank() - 1], perm[x.rank() - 2]);
    return permute(x, perm);
}

// ---------------------------------------------------------------------------
// Normalization

/// Softmax along `axis`, computed after subtracting the per-slice maximum.
inline Tensor softmax(const Tensor& x, long axis_in) {
    const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
    if (x.is_meta()) return make_meta_result(x.shape());
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t len = x.dim(axis);
    std::vector<double> y(x.numel());
    const auto xs = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = xs[base];
            for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, xs[base + i * inner]);
            double s = 0.0;
            for (std::size_t i = 0; i < len; ++i) {
                const double e = std::exp(xs[base + i * inner] - mx);
                y[base + i * inner] = e;
                s += e;
            }
            for (std::size_t i = 0; i < len; ++i) y[base + i * inner] /= s;
        }
    auto result = make_op_result(x.shape(), std::move(y), {x}, nullptr);
    if (result.requires_grad()) {
        // The closure reads the output values, so it holds a weak reference to avoid a cycle.
        std::weak_ptr<detail::TensorImpl> out_ref = result.impl_ptr();
        result.impl().grad_fn->backward = [x, out_ref, outer, inner, len](const std::vector<double>& g) {
            const auto out = out_ref.lock();
            const auto& y = out->data;
            double* gx = grad_sink(x);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
                    for (std::size_t i = 0; i < len; ++i)
                        gx[base + i * inner] += y[base + i * inner] * (g[base + i * inner] - dot);
                }
        };
    }
    return result;
}

inline constexpr double kLayerNormEps = 1e-5;

/// Layer normalization over the last axis with affine gamma/beta of that extent.
inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps) {
    const std::size_t c = x.dim(x.rank() - 1);
    if (gamma.numel() != c || beta.numel() != c)
        throw DimensionError("layernorm: affine extent mismatch for " + shape_str(x.shape()));
    if (any_meta({x, gamma, beta})) return make_meta_result(x.shape());
    const std::size_t rows = x.numel() / c;
    std::vector<double> y(x.numel()), xhat(x.numel()), inv_std(rows);
    const auto xs = x.data();
    const auto gs = gamma.data();
    const auto bs = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xs.data() + r * c;
        double mu = 0.0;
        for (std::size_t i = 0; i < c; ++i) mu += row[i];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t i = 0; i < c; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t i = 0; i < c; ++i) {
            const double h = (row[i] - mu) * is;
            xhat[r * c + i] = h;
            y[r * c + i] = h * gs[i] + bs[i];
        }
    }
    return make_op_result(x.shape(), std::move(y), {x, gamma, beta},
                          [x, gamma, beta, c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                              const std::vector<double>& g) {
                              double* gx = grad_sink(x);
                              double* gg = grad_sink(gamma);
                              double* gb = grad_sink(beta);
                              const auto gs = gamma.data();
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const double* gr = g.data() + r * c;
                                  const double* hr = xhat.data() + r * c;
                                  if (gg)
                                      for (std::size_t i = 0; i < c; ++i) gg[i] += gr[i] * hr[i];
                                  if (gb)
                                      for (std::size_t i = 0; i < c; ++i) gb[i] += gr[i];
                                  if (gx) {
                                      double m1 = 0.0, m2 = 0.0;
                                      for (std::size_t i = 0; i < c; ++i) {
                                          const double dh = gr[i] * gs[i];
                                          m1 += dh;
                                          m2 += dh * hr[i];
                                      }
                                      m1 /= static_cast<double>(c);
                                      m2 /= static_cast<double>(c);
                                      for (std::size_t i = 0; i < c; ++i)
                                          gx[r * c + i] += inv_std[r] * (gr[i] * gs[i] - m1 - hr[i] * m2);
                                  }
                              }
                          });
}

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

/// Zero-padded 2-D convolution (cross-correlation) over N-C-H-W input.
/// Weight is [C_out, C_in/groups, kh, kw]; bias is optional [C_out].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt = {}) {
    if (x.rank() != 4 || w.rank() != 4)
        throw DimensionError("conv2d expects rank-4 input and weight, got " + shape_str(x.shape()) + " and " +
                             shape_str(w.shape()));
    const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Cout = w.dim(0), Cg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
    const std::size_t G = opt.groups, S = opt.stride, P = opt.padding;
    if (G == 0 || Cin % G != 0 || Cout % G != 0)
        throw DimensionError("conv2d: channels " + std::to_string(Cin) + "/" + std::to_string(Cout) +
                             " not divisible by groups " + std::to_string(G));
    if (Cg != Cin / G)
        throw DimensionError("conv2d: weight " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
    if (S == 0) throw DimensionError("conv2d: stride must be positive");
    if (KH > H + 2 * P || KW > W + 2 * P)
        throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " + shape_str(x.shape()));
    if (bias.defined() && bias.numel() != Cout) throw DimensionError("conv2d: bias extent mismatch");
    const std::size_t Ho = conv_out_extent(H, KH, S, P), Wo = conv_out_extent(W, KW, S, P);
    const std::size_t Cog = Cout / G;
    Shape out{B, Cout, Ho, Wo};
    record_macs(static_cast<std::uint64_t>(B) * Cout * Ho * Wo * KH * KW * Cg);
    if (any_meta({x, w, bias})) return make_meta_result(out);

    // Valid output range along one axis for kernel offset `k`.
    auto valid_range = [S, P](std::size_t k, std::size_t in, std::size_t out_n) {
        // need o*S + k - P in [0, in)
        long lo = 0;
        if (k < P) lo = static_cast<long>((P - k + S - 1) / S);
        long hi = static_cast<long>(out_n);
        const long lim = static_cast<long>(in) + static_cast<long>(P) - static_cast<long>(k);  // o*S < lim
        if (lim <= 0) return std::pair<long, long>{0, 0};
        hi = std::min<long>(hi, (lim + static_cast<long>(S) - 1) / static_cast<long>(S));
        return std::pair<long, long>{lo, std::max(lo, hi)};
    };

    std::vector<double> y(shape_numel(out), 0.0);
    const double* xs = x.data().data();
    const double* ws = w.data().data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oc = 0; oc < Cout; ++oc) {
            double* yp = y.data() + (b * Cout + oc) * Ho * Wo;
            if (bias.defined()) std::fill_n(yp, Ho * Wo, bias[oc]);
            const std::size_t g = oc / Cog;
            for (std::size_t icg = 0; icg < Cg; ++icg) {
                const double* xp = xs + (b * Cin + g * Cg + icg) * H * W;
                for (std::size_t ky = 0; ky < KH; ++ky) {
                    const auto [oy0, oy1] = valid_range(ky, H, Ho);
                    for (std::size_t kx = 0; kx < KW; ++kx) {
                        const auto [ox0, ox1] = valid_range(kx, W, Wo);
                        const double wv = ws[((oc * Cg + icg) * KH + ky) * KW + kx];
                        for (long oy = oy0; oy < oy1; ++oy) {
                            const std::size_t iy = static_cast<std::size_t>(oy) * S + ky - P;
                            const double* xr = xp + iy * W;
                            double* yr = yp + static_cast<std::size_t>(oy) * Wo;
                            for (long ox = ox0; ox < ox1; ++ox)
                                yr[ox] += wv * xr[static_cast<std::size_t>(ox) * S + kx - P];
                        }
                    }
                }
            }
        }
    return make_op_result(out, std::move(y), {x, w, bias}, [=](const std::vector<double>& g) {
        double* gx = grad_sink(x);
        double* gw = grad_sink(w);
        double* gb = grad_sink(bias);
        const double* xs = x.data().data();
        const double* ws = w.data().data();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t oc = 0; oc < Cout; ++oc) {
                const double* gp = g.data() + (b * Cout + oc) * Ho * Wo;
                if (gb)
                    for (std::size_t i = 0; i < Ho * Wo; ++i) gb[oc] += gp[i];
                const std::size_t grp = oc / Cog;
                for (std::size_t icg = 0; icg < Cg; ++icg) {
                    const std::size_t plane = (b * Cin + grp * Cg + icg) * H * W;
                    for (std::size_t ky = 0; ky < KH; ++ky) {
                        const auto [oy0, oy1] = valid_range(ky, H, Ho);
                        for (std::size_t kx = 0; kx < KW; ++kx) {
                            const auto [ox0, ox1] = valid_range(kx, W, Wo);
                            const std::size_t widx = ((oc * Cg + icg) * KH + ky) * KW + kx;
                            const double wv = ws[widx];
                            double acc = 0.0;
                            for (long oy = oy0; oy < oy1; ++oy) {
                                const std::size_t iy = static_cast<std::size_t>(oy) * S + ky - P;
                                const double* gr = gp + static_cast<std::size_t>(oy) * Wo;
                                for (long ox = ox0; ox < ox1; ++ox) {
                                    const std::size_t ix = static_cast<std::size_t>(ox) * S + kx - P;
                                    if (gx) gx[plane + iy * W + ix] += wv * gr[ox];
                                    if (gw) acc += gr[ox] * xs[plane + iy * W + ix];
                                }
                            }
                            if (gw) gw[widx] += acc;
                        }
                    }
                }
            }
    });
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, Conv2dOptions opt = {}) { return conv2d(x, w, Tensor{}, opt); }

/// Transposed convolution with kernel == stride and no padding (default 2x2,
/// stride 2): every input pixel scatters into its own k x k output block.
/// Weight is [C_in, C_out, k, k]; bias optional [C_out].
inline Tensor deconv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride = 2) {
    if (x.rank() != 4 || w.rank() != 4)
        throw DimensionError("deconv2d expects rank-4 input and weight, got " + shape_str(x.shape()) + " and " +
                             shape_str(w.shape()));
    const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Cout = w.dim(1), K = w.dim(2);
    if (w.dim(0) != Cin || w.dim(3) != K || K != stride)
        throw DimensionError("deconv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                             shape_str(x.shape()) + " and stride " + std::to_string(stride));
    if (bias.defined() && bias.numel() != Cout) throw DimensionError("deconv2d: bias extent mismatch");
    const std::size_t Ho = (H - 1) * stride + K, Wo = (W - 1) * stride + K;
    Shape out{B, Cout, Ho, Wo};
    record_macs(static_cast<std::uint64_t>(B) * Cin * H * W * K * K * Cout);
    if (any_meta({x, w, bias})) return make_meta_result(out);

    std::vector<double> y(shape_numel(out), 0.0);
    const double* xs = x.data().data();
    const double* ws = w.data().data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oc = 0; oc < Cout; ++oc) {
            double* yp = y.data() + (b * Cout + oc) * Ho * Wo;
            if (bias.defined()) std::fill_n(yp, Ho * Wo, bias[oc]);
            for (std::size_t ic = 0; ic < Cin; ++ic) {
                const double* xp = xs + (b * Cin + ic) * H * W;
                for (std::size_t ky = 0; ky < K; ++ky)
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        const double wv = ws[((ic * Cout + oc) * K + ky) * K + kx];
                        for (std::size_t iy = 0; iy < H; ++iy) {
                            double* yr = yp + (iy * stride + ky) * Wo + kx;
                            const double* xr = xp + iy * W;
                            for (std::size_t ix = 0; ix < W; ++ix) yr[ix * stride] += wv * xr[ix];
                        }
                    }
            }
        }
    return make_op_result(out, std::move(y), {x, w, bias}, [=](const std::vector<double>& g) {
        double* gx = grad_sink(x);
        double* gw = grad_sink(w);
        double* gb = grad_sink(bias);
        const double* xs = x.data().data();
        const double* ws = w.data().data();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t oc = 0; oc < Cout; ++oc) {
                const double* gp = g.data() + (b * Cout + oc) * Ho * Wo;
                if (gb)
                    for (std::size_t i = 0; i < Ho * Wo; ++i) gb[oc] += gp[i];
                for (std::size_t ic = 0; ic < Cin; ++ic) {
                    const std::size_t plane = (b * Cin + ic) * H * W;
                    for (std::size_t ky = 0; ky < K; ++ky)
                        for (std::size_t kx = 0; kx < K; ++kx) {
                            const std::size_t widx = ((ic * Cout + oc) * K + ky) * K + kx;
                            const double wv = ws[widx];
                            double acc = 0.0;
                            for (std::size_t iy = 0; iy < H; ++iy) {
                                const double* gr = gp + (iy * stride + ky) * Wo + kx;
                                for (std::size_t ix = 0; ix < W; ++ix) {
                                    if (gx) gx[plane + iy * W + ix] += wv * gr[ix * stride];
                                    if (gw) acc += gr[ix * stride] * xs[plane + iy * W + ix];
                                }
                            }
                            if (gw) gw[widx] += acc;
                        }
                }
            }
    });
}

inline Tensor deconv2d(const Tensor& x, const Tensor& w, std::size_t stride = 2) {
    return deconv2d(x, w, Tensor{}, stride);
}

}  // namespace mstpp
