#pragma once

#include <vector>

#include "msnerv/nn_ops.hpp"
#include "msnerv/params.hpp"
#include "msnerv/rng.hpp"

namespace msnerv {

enum class UpsampleMode { Hybrid, Bilinear, PixelShuffle };
enum class FusionKind { DualDepthwise, Conv3Mlp };

struct DecoderConfig {
    std::vector<int64_t> factors = {3, 2, 2, 2};
    std::vector<int64_t> fusion_depth = {3, 3, 3, 3};
    double slice_ratio = 0.5;
    int64_t channels_min = 12;
    double channel_growth = 1.0;
    std::vector<int64_t> channels_override;  // explicit per-block widths, optional
    int64_t mlp_expansion = 2;
    UpsampleMode upsample = UpsampleMode::Hybrid;
    FusionKind fusion = FusionKind::DualDepthwise;
    bool cross_depth = true;
    int64_t local_grid_t = 3;  // temporal knots of each hierarchical encoding grid
    int64_t mrs_levels = 4;    // pyramid level count N; heads attach where resolutions match
};

inline int64_t total_upsample(const DecoderConfig& cfg) {
    int64_t s = 1;
    for (int64_t f : cfg.factors) s *= f;
    return s;
}

// Per-block output widths: halve per x2 stage by default, floored at
// channels_min; growth scales the schedule.
inline std::vector<int64_t> decoder_channels(const DecoderConfig& cfg, int64_t c0) {
    if (!cfg.channels_override.empty()) {
        if (cfg.channels_override.size() != cfg.factors.size())
            throw std::invalid_argument("decoder: channels override length mismatch");
        return cfg.channels_override;
    }
    std::vector<int64_t> ch;
    int64_t prev = c0;
    for (int64_t s : cfg.factors) {
        int64_t base = (prev + s - 1) / s;
        int64_t c = std::max(cfg.channels_min,
                             static_cast<int64_t>(std::llround(cfg.channel_growth *
                                                               static_cast<double>(base))));
        ch.push_back(c);
        prev = c;
    }
    return ch;
}

// Intermediate (h, w) after each block for a given grid size.
inline std::vector<std::pair<int64_t, int64_t>> resolution_ladder(const DecoderConfig& cfg,
                                                                  int64_t gh, int64_t gw) {
    std::vector<std::pair<int64_t, int64_t>> out;
    int64_t h = gh, w = gw;
    for (int64_t s : cfg.factors) {
        h *= s;
        w *= s;
        out.emplace_back(h, w);
    }
    return out;
}

// Decoder level n carries pyramid level r = n - (#blocks - N); heads exist
// for 1 <= r <= N-1. Returns -1 where unsupervised.
inline int64_t pyramid_level_of_block(const DecoderConfig& cfg, int64_t block) {
    int64_t b = static_cast<int64_t>(cfg.factors.size());
    int64_t r = block + 1 - (b - cfg.mrs_levels);
    return (r >= 1 && r < cfg.mrs_levels) ? r : -1;
}

// Smallest grid-cell context margin for which a patch decode reproduces the
// full-frame decode exactly: walks the exactness margin forward through
// every stage and grows the input margin until the output stays valid.
inline int64_t required_context_cells(const DecoderConfig& cfg) {
    auto survives = [&](int64_t m0) {
        double m = static_cast<double>(m0);
        for (size_t n = 0; n < cfg.factors.size(); ++n) {
            int64_t s = cfg.factors[n];
            if (cfg.upsample == UpsampleMode::PixelShuffle) {
                m = m * static_cast<double>(s);
            } else {
                // bilinear half-pixel: output margin floor(s*(m - 0.5) + 0.5)
                m = std::floor(static_cast<double>(s) * (m - 0.5) + 0.5);
            }
            int64_t rad = cfg.fusion == FusionKind::DualDepthwise ? 2 : 1;
            m -= static_cast<double>(rad * cfg.fusion_depth[n]);
            if (m < 0) return false;
        }
        return m - 1.0 >= 0.0;  // final 3x3 head
    };
    int64_t m = 0;
    while (!survives(m)) ++m;
    return m;
}

// Parameter layout of one multi-scale feature block.
struct MsfBlock {
    int64_t s = 1, cin = 0, cout = 0, depth = 0;
    size_t ps_w = 0, ps_b = 0;      // pixel-shuffle projection
    size_t gamma = 0;               // hierarchical encoding grid
    size_t proj_w = 0, proj_b = 0;  // channel projection cin -> cout
    struct Fusion {
        size_t n1g, n1b, dw3_w, dw3_b, dw5_w, dw5_b, n2g, n2b, m1w, m1b, m2w, m2b;
    };
    std::vector<Fusion> layers;
    size_t cross_w = 0, cross_b = 0;
    size_t mrs_w = 0, mrs_b = 0;
    bool has_ps = false, has_gamma = false, has_cross = false, has_mrs = false;
};

class SpatialDecoder {
public:
    SpatialDecoder(ParamStore& store, const DecoderConfig& cfg, int64_t c0, Rng& init)
        : cfg_(cfg), c0_(c0) {
        if (cfg.factors.empty()) throw std::invalid_argument("decoder: no blocks configured");
        if (cfg.fusion_depth.size() != cfg.factors.size())
            throw std::invalid_argument("decoder: fusion_depth length mismatch");
        auto ch = decoder_channels(cfg, c0);

        auto kaiming = [&](std::vector<int64_t> shape, int64_t fan_in) {
            double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
            return init.uniform_tensor(std::move(shape), -b, b);
        };

        int64_t prev = c0;
        for (size_t n = 0; n < cfg.factors.size(); ++n) {
            MsfBlock b;
            b.s = cfg.factors[n];
            b.cin = prev;
            b.cout = ch[n];
            b.depth = cfg.fusion_depth[n];
            std::string pre = "dec.b" + std::to_string(n) + ".";

            if (cfg.upsample != UpsampleMode::Bilinear) {
                b.has_ps = true;
                int64_t cps = b.cin * b.s * b.s;
                // zero init keeps the hybrid path purely bilinear at step 0;
                // the pixel-shuffle-only variant needs a live projection
                Tensor w = cfg.upsample == UpsampleMode::Hybrid ? Tensor({cps, b.cin})
                                                                : kaiming({cps, b.cin}, b.cin);
                b.ps_w = store.add(pre + "ps_w", std::move(w));
                b.ps_b = store.add(pre + "ps_b", Tensor({cps}));
            }
            if (cfg.upsample == UpsampleMode::Hybrid) {
                b.has_gamma = true;
                b.gamma = store.add(pre + "gamma",
                                    init.uniform_tensor({cfg.local_grid_t, b.s, b.s, b.cin},
                                                        -1e-2, 1e-2));
            }
            b.proj_w = store.add(pre + "proj_w", kaiming({b.cout, b.cin}, b.cin));
            b.proj_b = store.add(pre + "proj_b", Tensor({b.cout}));

            for (int64_t k = 0; k < b.depth; ++k) {
                std::string fp = pre + "f" + std::to_string(k) + ".";
                MsfBlock::Fusion f{};
                int64_t c = b.cout;
                f.n1g = store.add(fp + "n1g", Tensor({c}, 1.0));
                f.n1b = store.add(fp + "n1b", Tensor({c}));
                f.dw3_w = store.add(fp + "dw3_w", kaiming({c, 3, 3}, 9));
                f.dw3_b = store.add(fp + "dw3_b", Tensor({c}));
                if (cfg.fusion == FusionKind::DualDepthwise) {
                    f.dw5_w = store.add(fp + "dw5_w", kaiming({c, 5, 5}, 25));
                    f.dw5_b = store.add(fp + "dw5_b", Tensor({c}));
                }
                f.n2g = store.add(fp + "n2g", Tensor({c}, 1.0));
                f.n2b = store.add(fp + "n2b", Tensor({c}));
                int64_t ce = c * cfg.mlp_expansion;
                f.m1w = store.add(fp + "m1w", kaiming({ce, c}, c));
                f.m1b = store.add(fp + "m1b", Tensor({ce}));
                f.m2w = store.add(fp + "m2w", kaiming({c, ce}, ce));
                f.m2b = store.add(fp + "m2b", Tensor({c}));
                b.layers.push_back(f);
            }
            if (cfg.cross_depth) {
                b.has_cross = true;
                int64_t cc = b.cout * b.depth;
                b.cross_w = store.add(pre + "cross_w", kaiming({b.cout, cc}, cc));
                b.cross_b = store.add(pre + "cross_b", Tensor({b.cout}));
            }
            if (pyramid_level_of_block(cfg, static_cast<int64_t>(n)) > 0) {
                b.has_mrs = true;
                b.mrs_w = store.add(pre + "mrs_w", kaiming({3, b.cout, 3, 3}, 9 * b.cout),
                                    /*decodable=*/false);
                b.mrs_b = store.add(pre + "mrs_b", Tensor({3}), /*decodable=*/false);
            }
            blocks_.push_back(b);
            prev = b.cout;
        }
        head_w_ = store.add("dec.head_w", kaiming({3, prev, 3, 3}, 9 * prev));
        head_b_ = store.add("dec.head_b", Tensor({3}));
    }

    const std::vector<MsfBlock>& blocks() const { return blocks_; }
    int64_t input_channels() const { return c0_; }
    const DecoderConfig& config() const { return cfg_; }

    // Eq. 9 realization: bilinear + pixel-shuffle branches plus the tiled
    // hierarchical encoding, per the configured upsample mode.
    Var upsample(GraphCtx& ctx, Var x, size_t block, double t_norm, const Geom& geom) const {
        const MsfBlock& b = blocks_[block];
        std::vector<Var> terms;
        if (cfg_.upsample != UpsampleMode::PixelShuffle)
            terms.push_back(bilinear_up(x, b.s, geom));
        if (b.has_ps)
            terms.push_back(pixel_shuffle(pointwise(x, ctx.use(b.ps_w), ctx.use(b.ps_b)), b.s));
        if (b.has_gamma) {
            Geom og = geom.scaled(b.s);
            terms.push_back(local_grid_tile(ctx.use(b.gamma), t_norm, x.shape()[0] * b.s,
                                            x.shape()[1] * b.s, og.origin_r, og.origin_c));
        }
        return add_n(std::move(terms));
    }

    Var fusion_layer(GraphCtx& ctx, Var x, size_t block, size_t layer) const {
        const MsfBlock& b = blocks_[block];
        const MsfBlock::Fusion& f = b.layers[layer];
        int64_t c = b.cout;
        Var h1 = layer_norm_c(x, ctx.use(f.n1g), ctx.use(f.n1b));
        if (cfg_.fusion == FusionKind::Conv3Mlp) {
            Var xhat = depthwise(h1, ctx.use(f.dw3_w), ctx.use(f.dw3_b));
            Var m = layer_norm_c(xhat, ctx.use(f.n2g), ctx.use(f.n2b));
            m = pointwise(gelu(pointwise(m, ctx.use(f.m1w), ctx.use(f.m1b))), ctx.use(f.m2w),
                          ctx.use(f.m2b));
            return add(x, m);
        }
        Var xhat = add(depthwise(h1, ctx.use(f.dw3_w), ctx.use(f.dw3_b)),
                       depthwise(h1, ctx.use(f.dw5_w), ctx.use(f.dw5_b)));
        Var m = layer_norm_c(xhat, ctx.use(f.n2g), ctx.use(f.n2b));
        m = pointwise(gelu(pointwise(m, ctx.use(f.m1w), ctx.use(f.m1b))), ctx.use(f.m2w),
                      ctx.use(f.m2b));
        int64_t cm = std::clamp<int64_t>(std::llround(cfg_.slice_ratio * static_cast<double>(c)),
                                         1, c - 1);
        return add(x, concat_c({slice_c(xhat, 0, c - cm), slice_c(m, 0, cm)}));
    }

    // Returns X_n and the per-layer taps X_n^(1..K).
    std::pair<Var, std::vector<Var>> msf_block(GraphCtx& ctx, Var x, size_t block, double t_norm,
                                               const Geom& geom) const {
        const MsfBlock& b = blocks_[block];
        Var up = upsample(ctx, x, block, t_norm, geom);
        Var cur = pointwise(up, ctx.use(b.proj_w), ctx.use(b.proj_b));
        std::vector<Var> taps;
        for (size_t k = 0; k < b.layers.size(); ++k) {
            cur = fusion_layer(ctx, cur, block, k);
            taps.push_back(cur);
        }
        Var out = cur;
        if (b.has_cross)
            out = add(cur, pointwise(concat_c(taps), ctx.use(b.cross_w), ctx.use(b.cross_b)));
        return {out, taps};
    }

    struct Out {
        Var output;                       // [H, W, 3], unclamped
        std::vector<Var> mrs;             // projections for pyramid levels 1..N-1
        std::vector<int64_t> mrs_levels;  // pyramid level of each entry
        std::vector<Var> features;        // X_1..X_B
    };

    Out decode(GraphCtx& ctx, Var grid, double t_norm, Geom geom, bool train_mode) const {
        if (grid.shape()[2] != c0_)
            throw std::invalid_argument("decode: grid has " + std::to_string(grid.shape()[2]) +
                                        " channels, decoder expects " + std::to_string(c0_));
        Out out;
        Var cur = grid;
        for (size_t n = 0; n < blocks_.size(); ++n) {
            cur = msf_block(ctx, cur, n, t_norm, geom).first;
            geom = geom.scaled(blocks_[n].s);
            out.features.push_back(cur);
            if (train_mode && blocks_[n].has_mrs) {
                out.mrs.push_back(conv2d(cur, ctx.use(blocks_[n].mrs_w), ctx.use(blocks_[n].mrs_b)));
                out.mrs_levels.push_back(pyramid_level_of_block(cfg_, static_cast<int64_t>(n)));
            }
        }
        out.output = conv2d(cur, ctx.use(head_w_), ctx.use(head_b_));
        return out;
    }

    static int64_t count_params(const DecoderConfig& cfg, int64_t c0, bool decodable_only) {
        auto ch = decoder_channels(cfg, c0);
        int64_t n = 0, prev = c0;
        for (size_t i = 0; i < cfg.factors.size(); ++i) {
            int64_t s = cfg.factors[i], cout = ch[i], k = cfg.fusion_depth[i];
            if (cfg.upsample != UpsampleMode::Bilinear) n += prev * s * s * prev + prev * s * s;
            if (cfg.upsample == UpsampleMode::Hybrid) n += cfg.local_grid_t * s * s * prev;
            n += cout * prev + cout;  // channel projection
            int64_t per_layer = 2 * cout + (9 * cout + cout) + 2 * cout +
                                (cout * cfg.mlp_expansion * cout + cout * cfg.mlp_expansion) +
                                (cout * cfg.mlp_expansion * cout + cout);
            if (cfg.fusion == FusionKind::DualDepthwise) per_layer += 25 * cout + cout;
            n += per_layer * k;
            if (cfg.cross_depth) n += cout * cout * k + cout;
            if (!decodable_only && pyramid_level_of_block(cfg, static_cast<int64_t>(i)) > 0)
                n += 3 * cout * 9 + 3;
            prev = cout;
        }
        n += 3 * prev * 9 + 3;  // output head
        return n;
    }

private:
    DecoderConfig cfg_;
    int64_t c0_;
    std::vector<MsfBlock> blocks_;
    size_t head_w_ = 0, head_b_ = 0;
};

}  // namespace msnerv
