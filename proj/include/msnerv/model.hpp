#pragma once

#include <optional>
#include <string>

#include "msnerv/batching.hpp"
#include "msnerv/decoder.hpp"
#include "msnerv/encoder.hpp"

namespace msnerv {

enum class Variant { FULL, V1, V2, V3, V4, V5, V6, V7 };

inline Variant variant_from_string(const std::string& s) {
    if (s == "FULL" || s == "full") return Variant::FULL;
    if (s.size() == 2 && (s[0] == 'V' || s[0] == 'v') && s[1] >= '1' && s[1] <= '7')
        return static_cast<Variant>(1 + (s[1] - '1'));
    throw std::invalid_argument("unknown variant: " + s + " (expected FULL or V1..V7)");
}

inline std::string to_string(Variant v) {
    if (v == Variant::FULL) return "FULL";
    return "V" + std::to_string(static_cast<int>(v));
}

struct ModelConfig {
    EncoderConfig enc;
    DecoderConfig dec;
    int64_t levels = 4;    // resolution pyramid depth N
    bool mrs = true;       // multi-resolution supervision heads + per-level losses
    bool hf_boost = true;  // high-frequency-boosted reference at full resolution
    uint64_t init_seed = 1;
    Variant variant = Variant::FULL;
};

// Structural ablations. Each variant changes exactly one mechanism; the
// caller re-tunes C0 afterwards for parameter parity.
inline ModelConfig variant_transform(ModelConfig cfg, Variant v) {
    cfg.variant = v;
    switch (v) {
        case Variant::FULL: break;
        case Variant::V1: cfg.enc.temporal_fusion = false; break;
        case Variant::V2: cfg.mrs = false; break;
        case Variant::V3: cfg.hf_boost = false; break;
        case Variant::V4: cfg.dec.upsample = UpsampleMode::Bilinear; break;
        case Variant::V5: cfg.dec.upsample = UpsampleMode::PixelShuffle; break;
        case Variant::V6: cfg.dec.fusion = FusionKind::Conv3Mlp; break;
        case Variant::V7: cfg.dec.cross_depth = false; break;
    }
    cfg.dec.mrs_levels = cfg.mrs ? cfg.levels : 0;
    return cfg;
}

class Model {
public:
    Model(ModelConfig cfg, int64_t t_frames, int64_t h, int64_t w)
        : cfg_(std::move(cfg)), t_(t_frames), h_(h), w_(w) {
        int64_t stride = total_upsample(cfg_.dec);
        if (h_ % stride != 0 || w_ % stride != 0)
            throw std::invalid_argument("video dimensions must be divisible by the decoder stride " +
                                        std::to_string(stride));
        gh_ = h_ / stride;
        gw_ = w_ / stride;
        cfg_.dec.mrs_levels = cfg_.mrs ? cfg_.levels : 0;
        validate_mrs_geometry();

        Rng init(mix_seed(cfg_.init_seed, 0xC0DE));
        encoder_.emplace(store_, cfg_.enc, t_, gh_, gw_, init);
        decoder_.emplace(store_, cfg_.dec, cfg_.enc.c0, init);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    TemporalEncoder& encoder() { return *encoder_; }
    SpatialDecoder& decoder() { return *decoder_; }
    int64_t frames() const { return t_; }
    int64_t height() const { return h_; }
    int64_t width() const { return w_; }
    int64_t grid_h() const { return gh_; }
    int64_t grid_w() const { return gw_; }

    double t_norm(int64_t t) const {
        return t_ > 1 ? static_cast<double>(t - 1) / static_cast<double>(t_ - 1) : 0.0;
    }

    struct FrameOut {
        Var recon;  // [H, W, 3] (or patch extent), unclamped
        std::vector<Var> mrs;
        std::vector<int64_t> mrs_levels;
        bool exact_patch = true;
    };

    FrameOut forward(GraphCtx& ctx, int64_t t, bool train_mode) {
        Var grid = encoder_->encode(ctx, t);
        auto dec = decoder_->decode(ctx, grid, t_norm(t), Geom::frame(gh_, gw_), train_mode);
        return {dec.output, dec.mrs, dec.mrs_levels, true};
    }

    // Decodes a window plus `margin` grid cells of true context, then crops
    // the margin at every level. Offsets and sizes must be multiples of the
    // decoder stride.
    FrameOut forward_patch(GraphCtx& ctx, int64_t t, const PatchWindow& win, int64_t margin,
                           bool train_mode) {
        int64_t stride = total_upsample(cfg_.dec);
        if (win.r0 % stride || win.c0 % stride || win.rows % stride || win.cols % stride)
            throw std::invalid_argument("patch window must align to the decoder stride");
        int64_t gr0 = win.r0 / stride, gc0 = win.c0 / stride;
        int64_t grows = win.rows / stride, gcols = win.cols / stride;

        Var grid = encoder_->encode(ctx, t);
        Var patch = extract_pad(grid, gr0 - margin, gc0 - margin, grows + 2 * margin,
                                gcols + 2 * margin);
        Geom geom{gr0 - margin, gc0 - margin, gh_, gw_};
        auto dec = decoder_->decode(ctx, patch, t_norm(t), geom, train_mode);

        auto prefix = [&](size_t upto) {
            int64_t p = 1;
            for (size_t i = 0; i <= upto; ++i) p *= cfg_.dec.factors[i];
            return p;
        };
        FrameOut out;
        out.exact_patch = margin >= required_context_cells(cfg_.dec);
        int64_t pn = prefix(cfg_.dec.factors.size() - 1);
        out.recon = extract_pad(dec.output, margin * pn, margin * pn, grows * pn, gcols * pn);
        size_t mi = 0;
        for (size_t n = 0; n < cfg_.dec.factors.size() && mi < dec.mrs.size(); ++n) {
            if (pyramid_level_of_block(cfg_.dec, static_cast<int64_t>(n)) !=
                dec.mrs_levels[mi])
                continue;
            int64_t p = prefix(n);
            out.mrs.push_back(
                extract_pad(dec.mrs[mi], margin * p, margin * p, grows * p, gcols * p));
            out.mrs_levels.push_back(dec.mrs_levels[mi]);
            ++mi;
        }
        return out;
    }

    // Evaluation reconstruction, clamped to [0, 1].
    Tensor reconstruct(int64_t t, bool qat = false, int bits = 8) {
        GraphCtx ctx{&store_, /*train=*/false, qat, bits};
        Var out = forward(ctx, t, /*train_mode=*/false).recon;
        Tensor img = out.val();
        for (int64_t i = 0; i < img.numel(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
        return img;
    }

    VideoTensor reconstruct_video(bool qat = false, int bits = 8) {
        VideoTensor v;
        for (int64_t t = 1; t <= t_; ++t) v.frames.push_back(reconstruct(t, qat, bits));
        return v;
    }

    int64_t decodable_params() const { return store_.count(/*decodable_only=*/true); }

    static int64_t count_decodable(const ModelConfig& cfg, int64_t t_frames, int64_t h,
                                   int64_t w) {
        ModelConfig c = cfg;
        c.dec.mrs_levels = c.mrs ? c.levels : 0;
        int64_t stride = total_upsample(c.dec);
        return TemporalEncoder::count_params(c.enc, t_frames, h / stride, w / stride) +
               SpatialDecoder::count_params(c.dec, c.enc.c0, /*decodable_only=*/true);
    }

private:
    void validate_mrs_geometry() const {
        if (!cfg_.mrs) return;
        int64_t stride = total_upsample(cfg_.dec);
        int64_t prefix = 1;
        for (size_t n = 0; n < cfg_.dec.factors.size(); ++n) {
            prefix *= cfg_.dec.factors[n];
            int64_t r = pyramid_level_of_block(cfg_.dec, static_cast<int64_t>(n));
            if (r < 1) continue;
            int64_t want = stride >> (cfg_.levels - r);  // stride / 2^(N-r)
            if (prefix != want)
                throw std::invalid_argument(
                    "decoder level " + std::to_string(n + 1) + " resolution does not match "
                    "pyramid level " + std::to_string(r) + "; use halving factors such as (3,2,2,2)");
        }
    }

    ModelConfig cfg_;
    int64_t t_, h_, w_, gh_ = 0, gw_ = 0;
    ParamStore store_;
    std::optional<TemporalEncoder> encoder_;
    std::optional<SpatialDecoder> decoder_;
};

// Re-tunes C0 so the variant's decodable parameter count stays as close as
// possible to the FULL model's at the same data dimensions.
inline ModelConfig apply_variant(const ModelConfig& base, Variant v, int64_t t_frames, int64_t h,
                                 int64_t w) {
    ModelConfig cfg = variant_transform(base, v);
    if (v == Variant::FULL) return cfg;
    int64_t target = Model::count_decodable(variant_transform(base, Variant::FULL), t_frames, h, w);
    int64_t best_c0 = cfg.enc.c0;
    int64_t best_err = std::numeric_limits<int64_t>::max();
    for (int64_t c0 = 4; c0 <= std::max<int64_t>(512, base.enc.c0 * 8); ++c0) {
        ModelConfig probe = cfg;
        probe.enc.c0 = c0;
        int64_t err = std::llabs(Model::count_decodable(probe, t_frames, h, w) - target);
        if (err < best_err) {
            best_err = err;
            best_c0 = c0;
        }
    }
    cfg.enc.c0 = best_c0;
    return cfg;
}

}  // namespace msnerv
