#pragma once

#include <vector>

#include "msnerv/nn_ops.hpp"
#include "msnerv/params.hpp"
#include "msnerv/rng.hpp"

namespace msnerv {

// One temporal base sub-grid: scales are relative to the full temporal
// extent (T + l - 1) and the fused-grid spatial size; c_frac splits the C0
// channel budget.
struct BaseGridSpec {
    double t_scale = 1.0;
    double s_scale = 1.0;
    double c_frac = 1.0;
};

struct EncoderConfig {
    int64_t c0 = 64;
    int64_t window = 5;     // l, odd
    int64_t gop_count = 5;  // GoP length G = ceil(T / gop_count)
    std::vector<BaseGridSpec> base_grids = {{1.0, 1.0, 0.5}, {0.2, 0.5, 0.5}};
    bool temporal_fusion = true;  // off: encode(t) == sample_base(t), no window/GoP params
    double init_range = 1e-2;
};

namespace detail {

struct BaseGridShape {
    int64_t t, h, w, c;
};

inline std::vector<BaseGridShape> base_grid_shapes(const EncoderConfig& cfg, int64_t t_ext,
                                                   int64_t gh, int64_t gw) {
    if (cfg.base_grids.empty()) throw std::invalid_argument("encoder: no base grids configured");
    std::vector<BaseGridShape> shapes;
    int64_t c_used = 0;
    for (size_t j = 0; j < cfg.base_grids.size(); ++j) {
        const auto& s = cfg.base_grids[j];
        BaseGridShape sh;
        sh.t = std::max<int64_t>(2, std::llround(s.t_scale * static_cast<double>(t_ext)));
        sh.t = std::min(sh.t, std::max<int64_t>(2, t_ext));
        sh.h = std::max<int64_t>(1, std::llround(s.s_scale * static_cast<double>(gh)));
        sh.w = std::max<int64_t>(1, std::llround(s.s_scale * static_cast<double>(gw)));
        sh.c = (j + 1 == cfg.base_grids.size()) ? cfg.c0 - c_used
                                                : std::llround(s.c_frac * static_cast<double>(cfg.c0));
        if (sh.c < 1) throw std::invalid_argument("encoder: base grid with no channels");
        c_used += sh.c;
        shapes.push_back(sh);
    }
    if (c_used != cfg.c0) throw std::invalid_argument("encoder: channel fractions exceed C0");
    return shapes;
}

}  // namespace detail

// Maps a frame index to the fused grid: temporal-window fusion of
// multi-resolution base grids plus a per-GoP background grid.
class TemporalEncoder {
public:
    TemporalEncoder(ParamStore& store, const EncoderConfig& cfg, int64_t t_frames, int64_t gh,
                    int64_t gw, Rng& init)
        : cfg_(cfg), t_frames_(t_frames), gh_(gh), gw_(gw) {
        if (t_frames < 1) throw std::invalid_argument("encoder: empty video");
        window_len_ = cfg_.temporal_fusion ? cfg_.window : 1;
        if (window_len_ < 1 || window_len_ % 2 == 0)
            throw std::invalid_argument("encoder: window size must be odd and positive");
        t_ext_ = t_frames_ + window_len_ - 1;

        for (size_t j = 0; j < cfg.base_grids.size(); ++j) {
            auto sh = detail::base_grid_shapes(cfg_, t_ext_, gh_, gw_)[j];
            base_ids_.push_back(store.add(
                "enc.base" + std::to_string(j),
                init.uniform_tensor({sh.t, sh.h, sh.w, sh.c}, -cfg.init_range, cfg.init_range)));
        }
        if (cfg_.temporal_fusion) {
            // one-hot at the center offset: training starts from the identity map
            Tensor w({t_frames_, window_len_});
            for (int64_t t = 0; t < t_frames_; ++t) w[t * window_len_ + window_len_ / 2] = 1.0;
            window_id_ = store.add("enc.window", std::move(w));

            gop_len_ = (t_frames_ + cfg_.gop_count - 1) / cfg_.gop_count;
            gop_n_ = (t_frames_ + gop_len_ - 1) / gop_len_;
            gop_id_ = store.add("enc.gop", init.uniform_tensor({gop_n_, gh_, gw_, cfg_.c0},
                                                               -cfg.init_range, cfg.init_range));
        }
    }

    int64_t frames() const { return t_frames_; }
    int64_t window_len() const { return window_len_; }
    int64_t gop_length() const { return gop_len_; }
    int64_t gop_count() const { return gop_n_; }
    int64_t grid_h() const { return gh_; }
    int64_t grid_w() const { return gw_; }
    int64_t channels() const { return cfg_.c0; }

    // k = ceil(t / G), 1-based
    int64_t gop_index(int64_t t) const {
        check_frame(t);
        if (!cfg_.temporal_fusion) return 1;
        return (t + gop_len_ - 1) / gop_len_;
    }

    // Samples all base sub-grids at extended index t in [1, T + l - 1].
    Var sample_base(GraphCtx& ctx, int64_t t) const {
        if (t < 1 || t > t_ext_)
            throw std::out_of_range("sample_base: index " + std::to_string(t) +
                                    " outside [1, " + std::to_string(t_ext_) + "]");
        double tn = t_ext_ > 1 ? static_cast<double>(t - 1) / static_cast<double>(t_ext_ - 1) : 0.0;
        std::vector<Var> parts;
        for (size_t id : base_ids_) parts.push_back(grid_trilinear(ctx.use(id), tn, gh_, gw_));
        return parts.size() == 1 ? parts[0] : concat_c(std::move(parts));
    }

    // Weighted window over base indices t .. t + l - 1 using row t.
    Var fuse_temporal(GraphCtx& ctx, int64_t t) const {
        check_frame(t);
        if (!cfg_.temporal_fusion) return sample_base(ctx, t);
        Var w = ctx.use(window_id_);
        std::vector<Var> terms;
        for (int64_t d = 0; d < window_len_; ++d)
            terms.push_back(mul(sample_base(ctx, t + d), pick(w, (t - 1) * window_len_ + d)));
        return add_n(std::move(terms));
    }

    Var encode(GraphCtx& ctx, int64_t t) const {
        Var fused = fuse_temporal(ctx, t);
        if (!cfg_.temporal_fusion) return fused;
        return add(fused, slice_leading(ctx.use(gop_id_), gop_index(t) - 1));
    }

    static int64_t count_params(const EncoderConfig& cfg, int64_t t_frames, int64_t gh,
                                int64_t gw) {
        int64_t l = cfg.temporal_fusion ? cfg.window : 1;
        int64_t t_ext = t_frames + l - 1;
        int64_t n = 0;
        for (const auto& sh : detail::base_grid_shapes(cfg, t_ext, gh, gw))
            n += sh.t * sh.h * sh.w * sh.c;
        if (cfg.temporal_fusion) {
            int64_t g = (t_frames + cfg.gop_count - 1) / cfg.gop_count;
            int64_t k = (t_frames + g - 1) / g;
            n += t_frames * l + k * gh * gw * cfg.c0;
        }
        return n;
    }

private:
    void check_frame(int64_t t) const {
        if (t < 1 || t > t_frames_)
            throw std::out_of_range("frame index " + std::to_string(t) + " outside [1, " +
                                    std::to_string(t_frames_) + "]");
    }

    EncoderConfig cfg_;
    int64_t t_frames_, gh_, gw_;
    int64_t window_len_ = 1, t_ext_ = 0;
    int64_t gop_len_ = 1, gop_n_ = 1;
    std::vector<size_t> base_ids_;
    size_t window_id_ = 0, gop_id_ = 0;
};

}  // namespace msnerv
