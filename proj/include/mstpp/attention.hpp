#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "cost_ledger.hpp"
#include "layers.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace mstpp {

// Spectral-wise multi-head self-attention.
//
// Each channel's H*W feature map is one token, so every head's attention
// matrix is d_h x d_h over channels:
//
//   A_j    = softmax_i(sigma_j * K_j^T Q_j)     columns of A_j sum to 1
//   head_j = V_j A_j
//   out    = concat_j(head_j) W_out + f_p(V)
//
// f_p is depthwise 3x3 -> GELU -> depthwise 3x3 on V laid out spatially.
// Cost paths recorded under the caller's scope: qkv, core, out, pos.

struct SMsaParams {
    std::size_t channels = 0;
    std::size_t heads = 1;
    Linear to_q, to_k, to_v, to_out;  // bias-free C x C projections
    Tensor sigma;                     // [heads], one scale per head
    Conv2d pos1, pos2;                // depthwise 3x3 with bias

    static SMsaParams init(std::size_t channels, std::size_t heads, Rng& rng) {
        if (heads == 0 || channels % heads != 0)
            throw DimensionError("S-MSA: channels " + std::to_string(channels) + " not divisible by heads " +
                                 std::to_string(heads));
        SMsaParams p;
        p.channels = channels;
        p.heads = heads;
        p.to_q = Linear::init(channels, channels, false, rng);
        p.to_k = Linear::init(channels, channels, false, rng);
        p.to_v = Linear::init(channels, channels, false, rng);
        p.to_out = Linear::init(channels, channels, false, rng);
        p.sigma = init_const({heads}, 1.0);
        const Conv2dOptions dw{.stride = 1, .padding = 1, .groups = channels};
        p.pos1 = Conv2d::init(channels, channels, 3, dw, true, rng);
        p.pos2 = Conv2d::init(channels, channels, 3, dw, true, rng);
        return p;
    }

    std::size_t head_dim() const { return channels / heads; }

    template <typename F>
    void for_each_param(const std::string& prefix, F&& f) {
        to_q.for_each_param(param_path(prefix, "to_q"), f);
        to_k.for_each_param(param_path(prefix, "to_k"), f);
        to_v.for_each_param(param_path(prefix, "to_v"), f);
        to_out.for_each_param(param_path(prefix, "to_out"), f);
        f(param_path(prefix, "sigma"), sigma);
        pos1.for_each_param(param_path(prefix, "pos1"), f);
        pos2.for_each_param(param_path(prefix, "pos2"), f);
    }
};

/// Optional side output for inspection: the attention matrices [B, heads, d_h, d_h].
struct AttentionTrace {
    Tensor attention;
};

namespace detail {

// [B, T, C] -> [B*N, T, C/N]
inline Tensor split_heads(const Tensor& x, std::size_t heads) {
    const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2), d = C / heads;
    return reshape(permute(reshape(x, {B, T, heads, d}), {0, 2, 1, 3}), {B * heads, T, d});
}

// [B*N, T, d] -> [B, T, N*d]
inline Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
    const std::size_t T = x.dim(1), d = x.dim(2);
    return reshape(permute(reshape(x, {batch, heads, T, d}), {0, 2, 1, 3}), {batch, T, heads * d});
}

inline void require_bhwc(const Tensor& x, std::size_t channels, std::string_view who) {
    if (x.rank() != 4 || x.dim(3) != channels)
        throw DimensionError(std::string(who) + ": expected [B, H, W, " + std::to_string(channels) + "], got " +
                             shape_str(x.shape()));
}

}  // namespace detail

/// x: [B, H, W, C] -> [B, H, W, C]
inline Tensor s_msa_forward(const Tensor& x, const SMsaParams& p, AttentionTrace* trace = nullptr) {
    detail::require_bhwc(x, p.channels, "s_msa_forward");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = p.channels, N = p.heads, d = p.head_dim();
    const Tensor tokens = reshape(x, {B, H * W, C});

    Tensor q, k, v;
    {
        CostScope scope("qkv");
        q = p.to_q(tokens);
        k = p.to_k(tokens);
        v = p.to_v(tokens);
    }
    Tensor heads_out;
    {
        CostScope scope("core");
        const Tensor qh = detail::split_heads(q, N);
        const Tensor kh = detail::split_heads(k, N);
        const Tensor vh = detail::split_heads(v, N);
        Tensor scores = reshape(matmul(transpose_last(kh), qh), {B, N, d, d});
        scores = mul(scores, reshape(p.sigma, {1, N, 1, 1}));
        const Tensor attn = softmax(scores, 2);
        if (trace) trace->attention = attn;
        heads_out = matmul(vh, reshape(attn, {B * N, d, d}));
    }
    Tensor out;
    {
        CostScope scope("out");
        out = p.to_out(detail::merge_heads(heads_out, B, N));
    }
    Tensor pos;
    {
        CostScope scope("pos");
        const Tensor v_spatial = permute(reshape(v, {B, H, W, C}), {0, 3, 1, 2});
        pos = permute(p.pos2(gelu(p.pos1(v_spatial))), {0, 2, 3, 1});
    }
    return add(reshape(out, {B, H, W, C}), pos);
}

/// Plain spatial multi-head attention (no position terms), used as a
/// reference baseline.
struct MsaParams {
    std::size_t channels = 0;
    std::size_t heads = 1;
    Linear to_q, to_k, to_v, to_out;

    static MsaParams init(std::size_t channels, std::size_t heads, Rng& rng) {
        if (heads == 0 || channels % heads != 0)
            throw DimensionError("MSA: channels " + std::to_string(channels) + " not divisible by heads " +
                                 std::to_string(heads));
        MsaParams p;
        p.channels = channels;
        p.heads = heads;
        p.to_q = Linear::init(channels, channels, false, rng);
        p.to_k = Linear::init(channels, channels, false, rng);
        p.to_v = Linear::init(channels, channels, false, rng);
        p.to_out = Linear::init(channels, channels, false, rng);
        return p;
    }

    std::size_t head_dim() const { return channels / heads; }

    template <typename F>
    void for_each_param(const std::string& prefix, F&& f) {
        to_q.for_each_param(param_path(prefix, "to_q"), f);
        to_k.for_each_param(param_path(prefix, "to_k"), f);
        to_v.for_each_param(param_path(prefix, "to_v"), f);
        to_out.for_each_param(param_path(prefix, "to_out"), f);
    }
};

inline constexpr std::size_t kDefaultGlobalTokenCap = 4096;

/// Global attention over all H*W pixel tokens: A_j = softmax(Q_j K_j^T / sqrt(d_h)), head_j = A_j V_j.
inline Tensor global_msa_forward(const Tensor& x, const MsaParams& p, std::size_t token_cap = kDefaultGlobalTokenCap) {
    detail::require_bhwc(x, p.channels, "global_msa_forward");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = p.channels, N = p.heads;
    const std::size_t T = H * W;
    if (T > token_cap)
        throw DimensionError("global_msa_forward: " + std::to_string(T) + " tokens exceed the cap of " +
                             std::to_string(token_cap));
    const Tensor tokens = reshape(x, {B, T, C});
    Tensor q, k, v;
    {
        CostScope scope("qkv");
        q = p.to_q(tokens);
        k = p.to_k(tokens);
        v = p.to_v(tokens);
    }
    Tensor heads_out;
    {
        CostScope scope("core");
        const Tensor qh = detail::split_heads(q, N);
        const Tensor kh = detail::split_heads(k, N);
        const Tensor vh = detail::split_heads(v, N);
        const Tensor scores = scale(matmul(qh, transpose_last(kh)), 1.0 / std::sqrt(static_cast<double>(p.head_dim())));
        heads_out = matmul(softmax(scores, -1), vh);
    }
    CostScope scope("out");
    return reshape(p.to_out(detail::merge_heads(heads_out, B, N)), {B, H, W, C});
}

/// Global attention inside each non-overlapping window x window tile.
inline Tensor window_msa_forward(const Tensor& x, const MsaParams& p, std::size_t window) {
    detail::require_bhwc(x, p.channels, "window_msa_forward");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = p.channels, M = window;
    if (M == 0 || H % M != 0 || W % M != 0)
        throw DimensionError("window_msa_forward: window " + std::to_string(M) + " does not tile " +
                             std::to_string(H) + "x" + std::to_string(W));
    const std::size_t nh = H / M, nw = W / M;
    const Tensor windows =
        reshape(permute(reshape(x, {B, nh, M, nw, M, C}), {0, 1, 3, 2, 4, 5}), {B * nh * nw, M, M, C});
    const Tensor y = global_msa_forward(windows, p, M * M);
    return reshape(permute(reshape(y, {B, nh, nw, M, M, C}), {0, 1, 3, 2, 4, 5}), {B, H, W, C});
}

enum class AttentionKind { Global, Window, Spectral };

inline AttentionKind parse_attention_kind(std::string_view s) {
    if (s == "global") return AttentionKind::Global;
    if (s == "window") return AttentionKind::Window;
    if (s == "spectral") return AttentionKind::Spectral;
    throw std::invalid_argument("unknown attention kind '" + std::string(s) + "'");
}

inline const char* to_string(AttentionKind k) {
    switch (k) {
        case AttentionKind::Global: return "global";
        case AttentionKind::Window: return "window";
        case AttentionKind::Spectral: return "spectral";
    }
    return "?";
}

/// Closed-form MACs of the attention core (score and aggregation products,
/// projections excluded) for one image:
///   global   2 (HW)^2 C
///   window   2 M^2 HW C
///   spectral 2 HW C^2 / N
inline std::uint64_t predicted_cost(AttentionKind kind, std::uint64_t H, std::uint64_t W, std::uint64_t C,
                                    std::uint64_t heads, std::uint64_t window) {
    if (H == 0 || W == 0 || C == 0) throw DimensionError("predicted_cost: extents must be positive");
    const std::uint64_t hw = H * W;
    switch (kind) {
        case AttentionKind::Global: return 2 * hw * hw * C;
        case AttentionKind::Window:
            if (window == 0) throw DimensionError("predicted_cost: window must be positive");
            return 2 * window * window * hw * C;
        case AttentionKind::Spectral:
            if (heads == 0 || C % heads != 0) throw DimensionError("predicted_cost: heads must divide C");
            return 2 * hw * C * C / heads;
    }
    throw std::invalid_argument("predicted_cost: unknown kind");
}

}  // namespace mstpp
