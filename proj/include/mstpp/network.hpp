#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "attention.hpp"
#include "cost_ledger.hpp"
#include "layers.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace mstpp {

/// Architecture hyper-parameters. Defaults give the 3-stage, 31-channel model.
struct MstConfig {
    std::size_t in_channels = 3;
    std::size_t out_channels = 31;
    std::size_t channels = 31;           // feature width C at full resolution
    std::size_t stages = 3;              // number of cascaded U-shaped stages
    std::size_t levels = 2;              // downsamplings per stage
    std::vector<std::size_t> blocks{1, 1, 1};  // SABs per level, last entry = bottleneck
    std::vector<std::size_t> heads{1, 2, 4};   // attention heads per level
    std::size_t ffn_mult = 4;
    std::size_t pad_multiple = 8;
    std::uint64_t seed = 0;

    /// One stage, 8 channels (8/16/32), single-head attention everywhere.
    static MstConfig tiny() {
        MstConfig c;
        c.channels = 8;
        c.stages = 1;
        c.heads = {1, 1, 1};
        return c;
    }

    void validate() const {
        if (in_channels == 0 || out_channels == 0 || channels == 0) throw DimensionError("MstConfig: zero channels");
        if (blocks.size() != levels + 1 || heads.size() != levels + 1)
            throw DimensionError("MstConfig: blocks/heads need levels+1 entries");
        for (std::size_t l = 0; l <= levels; ++l) {
            const std::size_t dim = channels << l;
            if (heads[l] == 0 || dim % heads[l] != 0)
                throw DimensionError("MstConfig: level " + std::to_string(l) + " width " + std::to_string(dim) +
                                     " not divisible by " + std::to_string(heads[l]) + " heads");
        }
        if (pad_multiple % (std::size_t{1} << levels) != 0)
            throw DimensionError("MstConfig: pad_multiple must be a multiple of 2^levels");
        if (ffn_mult == 0) throw DimensionError("MstConfig: ffn_mult must be positive");
    }

    /// True when the feature-level long identity mapping applies (feature and
    /// output widths agree).
    bool has_long_skip() const { return channels == out_channels; }
};

namespace detail {
inline Tensor to_bhwc(const Tensor& x) { return permute(x, {0, 2, 3, 1}); }
inline Tensor to_bchw(const Tensor& x) { return permute(x, {0, 3, 1, 2}); }
}  // namespace detail

/// Pointwise expand -> GELU -> depthwise 3x3 -> GELU -> pointwise project.
struct FfnParams {
    std::size_t channels = 0;
    std::size_t mult = 4;
    Conv2d expand, depthwise, project;

    static FfnParams init(std::size_t channels, std::size_t mult, Rng& rng) {
        FfnParams p;
        p.channels = channels;
        p.mult = mult;
        const std::size_t hidden = channels * mult;
        p.expand = Conv2d::init(channels, hidden, 1, {}, false, rng);
        p.depthwise = Conv2d::init(hidden, hidden, 3, {.stride = 1, .padding = 1, .groups = hidden}, false, rng);
        p.project = Conv2d::init(hidden, channels, 1, {}, false, rng);
        return p;
    }

    template <typename F>
    void for_each_param(const std::string& prefix, F&& f) {
        expand.for_each_param(param_path(prefix, "expand"), f);
        depthwise.for_each_param(param_path(prefix, "depthwise"), f);
        project.for_each_param(param_path(prefix, "project"), f);
    }
};

/// x: [B, H, W, C] -> [B, H, W, C]
inline Tensor ffn_forward(const Tensor& x, const FfnParams& p) {
    const Tensor h = detail::to_bchw(x);
    return detail::to_bhwc(p.project(gelu(p.depthwise(gelu(p.expand(h))))));
}

struct SabParams {
    LayerNorm norm1;
    SMsaParams msa;
    LayerNorm norm2;
    FfnParams ffn;

    static SabParams init(std::size_t channels, std::size_t heads, std::size_t mult, Rng& rng) {
        SabParams p;
        p.norm1 = LayerNorm::init(channels);
        p.msa = SMsaParams::init(channels, heads, rng);
        p.norm2 = LayerNorm::init(channels);
        p.ffn = FfnParams::init(channels, mult, rng);
        return p;
    }

    std::size_t channels() const { return msa.channels; }

    template <typename F>
    void for_each_param(const std::string& prefix, F&& f) {
        norm1.for_each_param(param_path(prefix, "norm1"), f);
        msa.for_each_param(param_path(prefix, "msa"), f);
        norm2.for_each_param(param_path(prefix, "norm2"), f);
        ffn.for_each_param(param_path(prefix, "ffn"), f);
    }
};

/// Spectral-wise attention block on [B, H, W, C]:
///   y = x + S-MSA(LN(x)),  out = y + FFN(LN(y))
inline Tensor sab_forward(const Tensor& x, const SabParams& p) {
    detail::require_bhwc(x, p.channels(), "sab_forward");
    Tensor y;
    {
        CostScope scope("msa");
        y = add(x, s_msa_forward(p.norm1(x), p.msa));
    }
    CostScope scope("ffn");
    return add(y, ffn_forward(p.norm2(y), p.ffn));
}

struct SstParams {
    struct Encoder {
        std::vector<SabParams> blocks;
        Conv2d down;  // 4x4 stride 2, width doubles
    };
    struct Decoder {
        Deconv2d up;    // 2x2 stride 2, width halves
        Conv2d fuse;    // 1x1 over [skip, up] concatenation
        std::vector<SabParams> blocks;
    };

    std::size_t channels = 0;
    Conv2d embedding;
    std::vector<Encoder> encoder;
    std::vector<SabParams> bottleneck;
    std::vector<Decoder> decoder;
    Conv2d mapping;

    static SstParams init(const MstConfig& cfg, Rng& rng) {
        SstParams p;
        const std::size_t C = cfg.channels;
        p.channels = C;
        const Conv2dOptions same3{.stride = 1, .padding = 1, .groups = 1};
        p.embedding = Conv2d::init(C, C, 3, same3, false, rng);
        std::size_t dim = C;
        for (std::size_t l = 0; l < cfg.levels; ++l) {
            Encoder e;
            for (std::size_t b = 0; b < cfg.blocks[l]; ++b)
                e.blocks.push_back(SabParams::init(dim, cfg.heads[l], cfg.ffn_mult, rng));
            e.down = Conv2d::init(dim, dim * 2, 4, {.stride = 2, .padding = 1, .groups = 1}, false, rng);
            p.encoder.push_back(std::move(e));
            dim *= 2;
        }
        for (std::size_t b = 0; b < cfg.blocks[cfg.levels]; ++b)
            p.bottleneck.push_back(SabParams::init(dim, cfg.heads[cfg.levels], cfg.ffn_mult, rng));
        for (std::size_t l = cfg.levels; l-- > 0;) {
            Decoder d;
            d.up = Deconv2d::init(dim, dim / 2, rng);
            d.fuse = Conv2d::init(dim, dim / 2, 1, {}, false, rng);
            for (std::size_t b = 0; b < cfg.blocks[l]; ++b)
                d.blocks.push_back(SabParams::init(dim / 2, cfg.heads[l], cfg.ffn_mult, rng));
            p.decoder.push_back(std::move(d));
            dim /= 2;
        }
        p.mapping = Conv2d::init(C, C, 3, same3, false, rng);
        return p;
    }

    std::size_t levels() const { return encoder.size(); }

    template <typename F>
    void for_each_param(const std::string& prefix, F&& f) {
        embedding.for_each_param(param_path(prefix, "embedding"), f);
        for (std::size_t l = 0; l < encoder.size(); ++l) {
            const auto base = param_path(prefix, "encoder." + std::to_string(l));
            for (std::size_t b = 0; b < encoder[l].blocks.size(); ++b)
                encoder[l].blocks[b].for_each_param(base + ".sab." + std::to_string(b), f);
            encoder[l].down.for_each_param(base + ".down", f);
        }
        for (std::size_t b = 0; b < bottleneck.size(); ++b)
            bottleneck[b].for_each_param(param_path(prefix, "bottleneck." + std::to_string(b)), f);
        for (std::size_t l = 0; l < decoder.size(); ++l) {
            const auto base = param_path(prefix, "decoder." + std::to_string(l));
            decoder[l].up.for_each_param(base + ".up", f);
            decoder[l].fuse.for_each_param(base + ".fuse", f);
            for (std::size_t b = 0; b < decoder[l].blocks.size(); ++b)
                decoder[l].blocks[b].for_each_param(base + ".sab." + std::to_string(b), f);
        }
        mapping.for_each_param(param_path(prefix, "mapping"), f);
    }
};

namespace detail {
inline Tensor run_sabs(const Tensor& x_bchw, const std::vector<SabParams>& blocks, const std::string& name) {
    if (blocks.empty()) return x_bchw;
    Tensor h = to_bhwc(x_bchw);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        CostScope scope(name + "." + std::to_string(b));
        h = sab_forward(h, blocks[b]);
    }
    return to_bchw(h);
}
}  // namespace detail

/// U-shaped single stage on [B, C, H, W]; H and W must be divisible by 2^levels.
/// Output = mapping(decoder(...)) + x.
inline Tensor sst_forward(const Tensor& x, const SstParams& p) {
    if (x.rank() != 4 || x.dim(1) != p.channels)
        throw DimensionError("sst_forward: expected [B, " + std::to_string(p.channels) + ", H, W], got " +
                             shape_str(x.shape()));
    const std::size_t div = std::size_t{1} << p.levels();
    if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
        throw DimensionError("sst_forward: spatial extents " + shape_str(x.shape()) + " not divisible by " +
                             std::to_string(div) + "; pad the input first");
    Tensor fea;
    {
        CostScope scope("embedding");
        fea = p.embedding(x);
    }
    std::vector<Tensor> skips;
    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
        CostScope scope("encoder." + std::to_string(l));
        fea = detail::run_sabs(fea, p.encoder[l].blocks, "sab");
        skips.push_back(fea);
        CostScope down("down");
        fea = p.encoder[l].down(fea);
    }
    {
        CostScope scope("bottleneck");
        fea = detail::run_sabs(fea, p.bottleneck, "sab");
    }
    for (std::size_t l = 0; l < p.decoder.size(); ++l) {
        CostScope scope("decoder." + std::to_string(l));
        const auto& dec = p.decoder[l];
        {
            CostScope up("up");
            fea = dec.up(fea);
        }
        {
            CostScope fuse("fuse");
            fea = dec.fuse(concat({skips[skips.size() - 1 - l], fea}, 1));
        }
        fea = detail::run_sabs(fea, dec.blocks, "sab");
    }
    CostScope scope("mapping");
    return add(p.mapping(fea), x);
}

struct MstPlusPlusParams {
    MstConfig config;
    Conv2d conv_in;
    std::vector<SstParams> body;
    Conv2d conv_out;

    static MstPlusPlusParams init(const MstConfig& cfg) {
        cfg.validate();
        Rng rng(cfg.seed);
        MstPlusPlusParams p;
        p.config = cfg;
        const Conv2dOptions same3{.stride = 1, .padding = 1, .groups = 1};
        p.conv_in = Conv2d::init(cfg.in_channels, cfg.channels, 3, same3, false, rng);
        for (std::size_t s = 0; s < cfg.stages; ++s) p.body.push_back(SstParams::init(cfg, rng));
        p.conv_out = Conv2d::init(cfg.channels, cfg.out_channels, 3, same3, false, rng);
        return p;
    }

    template <typename F>
    void for_each_param(const std::string& prefix, F&& f) {
        conv_in.for_each_param(param_path(prefix, "conv_in"), f);
        for (std::size_t s = 0; s < body.size(); ++s) body[s].for_each_param(param_path(prefix, "body." + std::to_string(s)), f);
        conv_out.for_each_param(param_path(prefix, "conv_out"), f);
    }
};

/// Padding applied to reach the next multiple of `multiple` (bottom/right only).
inline std::size_t pad_to_multiple(std::size_t extent, std::size_t multiple) {
    return (multiple - extent % multiple) % multiple;
}

/// rgb: [B, in_channels, H, W] -> [B, out_channels, H, W]. Reflect-pads the
/// bottom/right edges to a multiple of config.pad_multiple and crops after.
inline Tensor mstpp_forward(const Tensor& rgb, const MstPlusPlusParams& p) {
    const auto& cfg = p.config;
    if (rgb.rank() != 4 || rgb.dim(1) != cfg.in_channels)
        throw DimensionError("mstpp_forward: expected [B, " + std::to_string(cfg.in_channels) + ", H, W], got " +
                             shape_str(rgb.shape()));
    const std::size_t H = rgb.dim(2), W = rgb.dim(3);
    const std::size_t ph = pad_to_multiple(H, cfg.pad_multiple), pw = pad_to_multiple(W, cfg.pad_multiple);
    const Tensor x = (ph || pw) ? reflect_pad2d(rgb, 0, ph, 0, pw) : rgb;
    Tensor fea;
    {
        CostScope scope("conv_in");
        fea = p.conv_in(x);
    }
    Tensor h = fea;
    for (std::size_t s = 0; s < p.body.size(); ++s) {
        CostScope scope("body." + std::to_string(s));
        h = sst_forward(h, p.body[s]);
    }
    {
        CostScope scope("conv_out");
        h = p.conv_out(h);
    }
    if (cfg.has_long_skip()) h = add(h, fea);
    return crop2d(h, 0, 0, H, W);
}

/// FLOP report of one cost-only forward pass. FLOPs = 2 x MACs over
/// convolutions, transposed convolutions and matrix products (attention
/// included); normalization, activation and elementwise ops are excluded.
struct FlopReport {
    CostLedger ledger;
    std::uint64_t macs() const { return ledger.total(); }
    std::uint64_t flops() const { return 2 * ledger.total(); }
    static constexpr const char* convention =
        "FLOPs = 2 x MACs over conv/deconv/matmul (attention included); normalization and activation excluded";
};

/// Runs `forward` on a shape-only input under a fresh ledger.
inline FlopReport count_flops(const std::function<Tensor(const Tensor&)>& forward, const Shape& input_shape) {
    FlopReport report;
    NoGradGuard no_grad;
    LedgerScope attach(report.ledger);
    (void)forward(Tensor::meta(input_shape));
    return report;
}

inline FlopReport count_flops(const MstPlusPlusParams& p, std::size_t H, std::size_t W, std::size_t batch = 1) {
    return count_flops([&p](const Tensor& x) { return mstpp_forward(x, p); }, {batch, p.config.in_channels, H, W});
}

}  // namespace mstpp
