#pragma once

#include <algorithm>

#include "msnerv/autodiff.hpp"

namespace msnerv {

// Global placement of a feature array inside the full frame at its level.
// origin may be negative for patches whose context margin crosses the frame
// border; full_h/full_w are the frame dimensions at the same level. Border
// clamping in bilinear_up resolves against the frame, not the array, so
// patch and full-frame decodes agree.
struct Geom {
    int64_t origin_r = 0;
    int64_t origin_c = 0;
    int64_t full_h = 0;
    int64_t full_w = 0;

    Geom scaled(int64_t s) const { return {origin_r * s, origin_c * s, full_h * s, full_w * s}; }
    static Geom frame(int64_t h, int64_t w) { return {0, 0, h, w}; }
};

// y[p, o] = sum_i W[o, i] * x[p, i] + b[o]
inline Var pointwise(Var x, Var w, Var b) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    if (xv.rank() != 3 || wv.rank() != 2) throw std::invalid_argument("pointwise: bad ranks");
    int64_t h = xv.dim(0), ww = xv.dim(1), ci = xv.dim(2), co = wv.dim(0);
    if (wv.dim(1) != ci) throw std::invalid_argument("pointwise: channel mismatch");
    bool has_b = b.defined();
    if (has_b && b.val().numel() != co) throw std::invalid_argument("pointwise: bias mismatch");

    Tensor out({h, ww, co});
    int64_t np = h * ww;
    const double* xd = xv.data();
    const double* wd = wv.data();
    for (int64_t p = 0; p < np; ++p) {
        const double* xi = xd + p * ci;
        double* yo = out.data() + p * co;
        for (int64_t o = 0; o < co; ++o) {
            const double* wo = wd + o * ci;
            double acc = has_b ? b.val()[o] : 0.0;
            for (int64_t i = 0; i < ci; ++i) acc += wo[i] * xi[i];
            yo[o] = acc;
        }
    }
    std::vector<Var> parents = {x, w};
    if (has_b) parents.push_back(b);
    return make_op(std::move(out), std::move(parents), [np, ci, co, has_b](Node& n) {
        Node& px = *n.parents[0];
        Node& pw = *n.parents[1];
        const double* g = n.grad.data();
        if (px.needs_grad) {
            px.ensure_grad();
            for (int64_t p = 0; p < np; ++p) {
                const double* gp = g + p * co;
                double* xg = px.grad.data() + p * ci;
                for (int64_t o = 0; o < co; ++o) {
                    const double* wo = pw.val.data() + o * ci;
                    double go = gp[o];
                    for (int64_t i = 0; i < ci; ++i) xg[i] += go * wo[i];
                }
            }
        }
        if (pw.needs_grad) {
            pw.ensure_grad();
            for (int64_t p = 0; p < np; ++p) {
                const double* gp = g + p * co;
                const double* xi = px.val.data() + p * ci;
                for (int64_t o = 0; o < co; ++o) {
                    double* wg = pw.grad.data() + o * ci;
                    double go = gp[o];
                    for (int64_t i = 0; i < ci; ++i) wg[i] += go * xi[i];
                }
            }
        }
        if (has_b && n.parents[2]->needs_grad) {
            Node& pb = *n.parents[2];
            pb.ensure_grad();
            for (int64_t p = 0; p < np; ++p)
                for (int64_t o = 0; o < co; ++o) pb.grad[o] += g[p * co + o];
        }
    });
}

// Dense 2D convolution, odd kernel, stride 1, zero same-padding.
// w is [Co, Ci, kh, kw].
inline Var conv2d(Var x, Var w, Var b) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    if (xv.rank() != 3 || wv.rank() != 4) throw std::invalid_argument("conv2d: bad ranks");
    int64_t h = xv.dim(0), ww = xv.dim(1), ci = xv.dim(2);
    int64_t co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    if (wv.dim(1) != ci) throw std::invalid_argument("conv2d: channel mismatch");
    if (kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("conv2d: odd kernels only");
    int64_t rh = kh / 2, rw = kw / 2;
    bool has_b = b.defined();

    Tensor out({h, ww, co});
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < ww; ++j)
            for (int64_t o = 0; o < co; ++o) {
                double acc = has_b ? b.val()[o] : 0.0;
                for (int64_t u = 0; u < kh; ++u) {
                    int64_t si = i + u - rh;
                    if (si < 0 || si >= h) continue;
                    for (int64_t v = 0; v < kw; ++v) {
                        int64_t sj = j + v - rw;
                        if (sj < 0 || sj >= ww) continue;
                        const double* xp = xv.data() + (si * ww + sj) * ci;
                        const double* wp = wv.data() + ((o * ci) * kh + u) * kw + v;
                        for (int64_t cc = 0; cc < ci; ++cc) acc += xp[cc] * wp[cc * kh * kw];
                    }
                }
                out.at3(i, j, o) = acc;
            }
    std::vector<Var> parents = {x, w};
    if (has_b) parents.push_back(b);
    return make_op(std::move(out), std::move(parents),
                   [h, ww, ci, co, kh, kw, rh, rw, has_b](Node& n) {
        Node& px = *n.parents[0];
        Node& pw = *n.parents[1];
        if (px.needs_grad) px.ensure_grad();
        if (pw.needs_grad) pw.ensure_grad();
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < ww; ++j)
                for (int64_t o = 0; o < co; ++o) {
                    double g = n.grad.at3(i, j, o);
                    if (g == 0.0) continue;
                    for (int64_t u = 0; u < kh; ++u) {
                        int64_t si = i + u - rh;
                        if (si < 0 || si >= h) continue;
                        for (int64_t v = 0; v < kw; ++v) {
                            int64_t sj = j + v - rw;
                            if (sj < 0 || sj >= ww) continue;
                            for (int64_t cc = 0; cc < ci; ++cc) {
                                int64_t wi = ((o * ci + cc) * kh + u) * kw + v;
                                if (px.needs_grad)
                                    px.grad.at3(si, sj, cc) += g * pw.val[wi];
                                if (pw.needs_grad)
                                    pw.grad[wi] += g * px.val.at3(si, sj, cc);
                            }
                        }
                    }
                }
        if (has_b && n.parents[2]->needs_grad) {
            Node& pb = *n.parents[2];
            pb.ensure_grad();
            for (int64_t i = 0; i < h; ++i)
                for (int64_t j = 0; j < ww; ++j)
                    for (int64_t o = 0; o < co; ++o) pb.grad[o] += n.grad.at3(i, j, o);
        }
    });
}

// Per-channel 2D convolution, odd kernel, zero same-padding. w is [C, kh, kw].
inline Var depthwise(Var x, Var w, Var b) {
    const Tensor& xv = x.val();
    const Tensor& wv = w.val();
    if (xv.rank() != 3 || wv.rank() != 3) throw std::invalid_argument("depthwise: bad ranks");
    int64_t h = xv.dim(0), ww = xv.dim(1), c = xv.dim(2);
    int64_t kh = wv.dim(1), kw = wv.dim(2);
    if (wv.dim(0) != c) throw std::invalid_argument("depthwise: channel mismatch");
    if (kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("depthwise: odd kernels only");
    int64_t rh = kh / 2, rw = kw / 2;
    bool has_b = b.defined();

    Tensor out({h, ww, c});
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < ww; ++j) {
            double* yo = out.data() + (i * ww + j) * c;
            for (int64_t u = 0; u < kh; ++u) {
                int64_t si = i + u - rh;
                if (si < 0 || si >= h) continue;
                for (int64_t v = 0; v < kw; ++v) {
                    int64_t sj = j + v - rw;
                    if (sj < 0 || sj >= ww) continue;
                    const double* xp = xv.data() + (si * ww + sj) * c;
                    const double* wp = wv.data() + u * kw + v;
                    for (int64_t cc = 0; cc < c; ++cc) yo[cc] += xp[cc] * wp[cc * kh * kw];
                }
            }
            if (has_b)
                for (int64_t cc = 0; cc < c; ++cc) yo[cc] += b.val()[cc];
        }
    std::vector<Var> parents = {x, w};
    if (has_b) parents.push_back(b);
    return make_op(std::move(out), std::move(parents),
                   [h, ww, c, kh, kw, rh, rw, has_b](Node& n) {
        Node& px = *n.parents[0];
        Node& pw = *n.parents[1];
        if (px.needs_grad) px.ensure_grad();
        if (pw.needs_grad) pw.ensure_grad();
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < ww; ++j) {
                const double* g = n.grad.data() + (i * ww + j) * c;
                for (int64_t u = 0; u < kh; ++u) {
                    int64_t si = i + u - rh;
                    if (si < 0 || si >= h) continue;
                    for (int64_t v = 0; v < kw; ++v) {
                        int64_t sj = j + v - rw;
                        if (sj < 0 || sj >= ww) continue;
                        int64_t xoff = (si * ww + sj) * c;
                        for (int64_t cc = 0; cc < c; ++cc) {
                            int64_t wi = (cc * kh + u) * kw + v;
                            if (px.needs_grad) px.grad[xoff + cc] += g[cc] * pw.val[wi];
                            if (pw.needs_grad) pw.grad[wi] += g[cc] * px.val[xoff + cc];
                        }
                    }
                }
            }
        if (has_b && n.parents[2]->needs_grad) {
            Node& pb = *n.parents[2];
            pb.ensure_grad();
            for (int64_t p = 0; p < h * ww; ++p)
                for (int64_t cc = 0; cc < c; ++cc) pb.grad[cc] += n.grad[p * c + cc];
        }
    });
}

// 1D convolution along rows or columns with a fixed (non-learnable) kernel,
// valid region only. Used for the separable SSIM window.
inline Var conv1d_valid_const(Var x, const std::vector<double>& k, bool along_rows) {
    const Tensor& xv = x.val();
    if (xv.rank() != 3) throw std::invalid_argument("conv1d_valid_const: rank-3 expected");
    int64_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    int64_t kl = static_cast<int64_t>(k.size());
    int64_t oh = along_rows ? h - kl + 1 : h;
    int64_t ow = along_rows ? w : w - kl + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv1d_valid_const: kernel larger than input");

    Tensor out({oh, ow, c});
    for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
            double* yo = out.data() + (i * ow + j) * c;
            for (int64_t t = 0; t < kl; ++t) {
                int64_t si = along_rows ? i + t : i;
                int64_t sj = along_rows ? j : j + t;
                const double* xp = xv.data() + (si * w + sj) * c;
                double kt = k[static_cast<size_t>(t)];
                for (int64_t cc = 0; cc < c; ++cc) yo[cc] += kt * xp[cc];
            }
        }
    auto kp = std::make_shared<std::vector<double>>(k);
    return make_op(std::move(out), {x}, [kp, along_rows, oh, ow, w, c, kl](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        for (int64_t i = 0; i < oh; ++i)
            for (int64_t j = 0; j < ow; ++j) {
                const double* g = n.grad.data() + (i * ow + j) * c;
                for (int64_t t = 0; t < kl; ++t) {
                    int64_t si = along_rows ? i + t : i;
                    int64_t sj = along_rows ? j : j + t;
                    double* xg = p.grad.data() + (si * w + sj) * c;
                    double kt = (*kp)[static_cast<size_t>(t)];
                    for (int64_t cc = 0; cc < c; ++cc) xg[cc] += kt * g[cc];
                }
            }
    });
}

// Channelwise layer normalization per pixel.
inline Var layer_norm_c(Var x, Var gamma, Var beta, double eps = 1e-6) {
    const Tensor& xv = x.val();
    if (xv.rank() != 3) throw std::invalid_argument("layer_norm_c: rank-3 expected");
    int64_t np = xv.dim(0) * xv.dim(1), c = xv.dim(2);
    if (gamma.numel() != c || beta.numel() != c)
        throw std::invalid_argument("layer_norm_c: affine param mismatch");

    Tensor out(xv.shape());
    Tensor mu({np}), istd({np});
    for (int64_t p = 0; p < np; ++p) {
        const double* xp = xv.data() + p * c;
        double m = 0.0;
        for (int64_t i = 0; i < c; ++i) m += xp[i];
        m /= static_cast<double>(c);
        double v = 0.0;
        for (int64_t i = 0; i < c; ++i) {
            double d = xp[i] - m;
            v += d * d;
        }
        v /= static_cast<double>(c);
        double is = 1.0 / std::sqrt(v + eps);
        mu[p] = m;
        istd[p] = is;
        double* yo = out.data() + p * c;
        for (int64_t i = 0; i < c; ++i)
            yo[i] = (xp[i] - m) * is * gamma.val()[i] + beta.val()[i];
    }
    auto mup = std::make_shared<Tensor>(std::move(mu));
    auto istdp = std::make_shared<Tensor>(std::move(istd));
    return make_op(std::move(out), {x, gamma, beta}, [mup, istdp, np, c](Node& n) {
        Node& px = *n.parents[0];
        Node& pg = *n.parents[1];
        Node& pb = *n.parents[2];
        if (px.needs_grad) px.ensure_grad();
        if (pg.needs_grad) pg.ensure_grad();
        if (pb.needs_grad) pb.ensure_grad();
        for (int64_t p = 0; p < np; ++p) {
            const double* xp = px.val.data() + p * c;
            const double* g = n.grad.data() + p * c;
            double m = (*mup)[p], is = (*istdp)[p];
            if (pg.needs_grad || pb.needs_grad) {
                for (int64_t i = 0; i < c; ++i) {
                    double xhat = (xp[i] - m) * is;
                    if (pg.needs_grad) pg.grad[i] += g[i] * xhat;
                    if (pb.needs_grad) pb.grad[i] += g[i];
                }
            }
            if (px.needs_grad) {
                // dL/dx = is/c * (c*gy - sum(gy) - xhat * sum(gy*xhat)),
                // with gy = g * gamma
                double sum_gy = 0.0, sum_gyx = 0.0;
                for (int64_t i = 0; i < c; ++i) {
                    double gy = g[i] * pg.val[i];
                    double xhat = (xp[i] - m) * is;
                    sum_gy += gy;
                    sum_gyx += gy * xhat;
                }
                double* xg = px.grad.data() + p * c;
                double invc = 1.0 / static_cast<double>(c);
                for (int64_t i = 0; i < c; ++i) {
                    double gy = g[i] * pg.val[i];
                    double xhat = (xp[i] - m) * is;
                    xg[i] += is * (gy - invc * (sum_gy + xhat * sum_gyx));
                }
            }
        }
    });
}

namespace detail {

// half-pixel-centers source coordinate for integer upsampling, clamped
// against the full frame so that patches and full frames agree
inline void bilinear_coords(int64_t out_global, int64_t s, int64_t full_in, int64_t& i0,
                            int64_t& i1, double& w1) {
    double src = (static_cast<double>(out_global) + 0.5) / static_cast<double>(s) - 0.5;
    double f = std::floor(src);
    w1 = src - f;
    i0 = static_cast<int64_t>(f);
    i1 = i0 + 1;
    i0 = std::clamp<int64_t>(i0, 0, full_in - 1);
    i1 = std::clamp<int64_t>(i1, 0, full_in - 1);
}

}  // namespace detail

// Bilinear x(s) upsampling with half-pixel centers. geom describes the
// input array placement; output placement is geom.scaled(s).
inline Var bilinear_up(Var x, int64_t s, const Geom& geom) {
    const Tensor& xv = x.val();
    if (xv.rank() != 3) throw std::invalid_argument("bilinear_up: rank-3 expected");
    int64_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    int64_t oh = h * s, ow = w * s;
    Geom og = geom.scaled(s);

    // resolve indices once; reused by forward and backward
    std::vector<int64_t> r0(oh), r1(oh), c0(ow), c1(ow);
    std::vector<double> wr(oh), wc(ow);
    for (int64_t i = 0; i < oh; ++i) {
        int64_t a, b;
        double t;
        detail::bilinear_coords(og.origin_r + i, s, geom.full_h, a, b, t);
        r0[i] = a - geom.origin_r;
        r1[i] = b - geom.origin_r;
        wr[i] = t;
        if (r0[i] < 0 || r1[i] >= h)
            throw std::logic_error("bilinear_up: context margin too small for patch");
    }
    for (int64_t j = 0; j < ow; ++j) {
        int64_t a, b;
        double t;
        detail::bilinear_coords(og.origin_c + j, s, geom.full_w, a, b, t);
        c0[j] = a - geom.origin_c;
        c1[j] = b - geom.origin_c;
        wc[j] = t;
        if (c0[j] < 0 || c1[j] >= w)
            throw std::logic_error("bilinear_up: context margin too small for patch");
    }

    Tensor out({oh, ow, c});
    for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
            const double* p00 = xv.data() + (r0[i] * w + c0[j]) * c;
            const double* p01 = xv.data() + (r0[i] * w + c1[j]) * c;
            const double* p10 = xv.data() + (r1[i] * w + c0[j]) * c;
            const double* p11 = xv.data() + (r1[i] * w + c1[j]) * c;
            double a00 = (1 - wr[i]) * (1 - wc[j]), a01 = (1 - wr[i]) * wc[j];
            double a10 = wr[i] * (1 - wc[j]), a11 = wr[i] * wc[j];
            double* yo = out.data() + (i * ow + j) * c;
            for (int64_t cc = 0; cc < c; ++cc)
                yo[cc] = a00 * p00[cc] + a01 * p01[cc] + a10 * p10[cc] + a11 * p11[cc];
        }
    auto idx = std::make_shared<std::tuple<std::vector<int64_t>, std::vector<int64_t>,
                                           std::vector<int64_t>, std::vector<int64_t>,
                                           std::vector<double>, std::vector<double>>>(
        std::move(r0), std::move(r1), std::move(c0), std::move(c1), std::move(wr), std::move(wc));
    return make_op(std::move(out), {x}, [idx, oh, ow, w, c](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        const auto& [r0, r1, c0, c1, wr, wc] = *idx;
        for (int64_t i = 0; i < oh; ++i)
            for (int64_t j = 0; j < ow; ++j) {
                const double* g = n.grad.data() + (i * ow + j) * c;
                double a00 = (1 - wr[i]) * (1 - wc[j]), a01 = (1 - wr[i]) * wc[j];
                double a10 = wr[i] * (1 - wc[j]), a11 = wr[i] * wc[j];
                double* g00 = p.grad.data() + (r0[i] * w + c0[j]) * c;
                double* g01 = p.grad.data() + (r0[i] * w + c1[j]) * c;
                double* g10 = p.grad.data() + (r1[i] * w + c0[j]) * c;
                double* g11 = p.grad.data() + (r1[i] * w + c1[j]) * c;
                for (int64_t cc = 0; cc < c; ++cc) {
                    g00[cc] += a00 * g[cc];
                    g01[cc] += a01 * g[cc];
                    g10[cc] += a10 * g[cc];
                    g11[cc] += a11 * g[cc];
                }
            }
    });
}

// [h, w, C*s*s] -> [h*s, w*s, C]; input channel (c*s + di)*s + dj maps to
// output offset (di, dj) of cell (i, j)
inline Var pixel_shuffle(Var x, int64_t s) {
    const Tensor& xv = x.val();
    if (xv.rank() != 3) throw std::invalid_argument("pixel_shuffle: rank-3 expected");
    int64_t h = xv.dim(0), w = xv.dim(1), cin = xv.dim(2);
    if (cin % (s * s) != 0) throw std::invalid_argument("pixel_shuffle: channels not divisible");
    int64_t c = cin / (s * s);

    Tensor out({h * s, w * s, c});
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            const double* xp = xv.data() + (i * w + j) * cin;
            for (int64_t di = 0; di < s; ++di)
                for (int64_t dj = 0; dj < s; ++dj) {
                    double* yo = out.data() + ((i * s + di) * (w * s) + (j * s + dj)) * c;
                    for (int64_t cc = 0; cc < c; ++cc) yo[cc] = xp[(cc * s + di) * s + dj];
                }
        }
    return make_op(std::move(out), {x}, [h, w, s, c, cin](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) {
                double* xg = p.grad.data() + (i * w + j) * cin;
                for (int64_t di = 0; di < s; ++di)
                    for (int64_t dj = 0; dj < s; ++dj) {
                        const double* g =
                            n.grad.data() + ((i * s + di) * (w * s) + (j * s + dj)) * c;
                        for (int64_t cc = 0; cc < c; ++cc) xg[(cc * s + di) * s + dj] += g[cc];
                    }
            }
    });
}

// Trilinear sampling of a [Tg, gh, gw, C] grid at normalized time t_norm,
// spatially resized to (oh, ow). Knots sit at the array corners, so integer
// queries on a full-resolution axis reproduce stored planes exactly.
inline Var grid_trilinear(Var grid, double t_norm, int64_t oh, int64_t ow) {
    const Tensor& gv = grid.val();
    if (gv.rank() != 4) throw std::invalid_argument("grid_trilinear: rank-4 expected");
    int64_t tg = gv.dim(0), gh = gv.dim(1), gw = gv.dim(2), c = gv.dim(3);

    auto axis_coord = [](int64_t out_i, int64_t out_n, int64_t in_n, int64_t& i0, int64_t& i1,
                         double& w1) {
        if (in_n == 1 || out_n == 1) {
            double pos = (in_n == 1) ? 0.0 : 0.5 * static_cast<double>(in_n - 1);
            double f = std::floor(pos);
            i0 = static_cast<int64_t>(f);
            i1 = std::min(i0 + 1, in_n - 1);
            w1 = pos - f;
            return;
        }
        double pos = static_cast<double>(out_i) * static_cast<double>(in_n - 1) /
                     static_cast<double>(out_n - 1);
        double f = std::floor(pos);
        i0 = static_cast<int64_t>(f);
        i1 = std::min(i0 + 1, in_n - 1);
        w1 = pos - f;
    };

    double tpos = t_norm * static_cast<double>(tg - 1);
    tpos = std::clamp(tpos, 0.0, static_cast<double>(tg - 1));
    int64_t t0 = static_cast<int64_t>(std::floor(tpos));
    int64_t t1 = std::min(t0 + 1, tg - 1);
    double wt = tpos - static_cast<double>(t0);

    std::vector<int64_t> r0(oh), r1(oh), c0(ow), c1(ow);
    std::vector<double> wr(oh), wc(ow);
    for (int64_t i = 0; i < oh; ++i) axis_coord(i, oh, gh, r0[i], r1[i], wr[i]);
    for (int64_t j = 0; j < ow; ++j) axis_coord(j, ow, gw, c0[j], c1[j], wc[j]);

    Tensor out({oh, ow, c});
    auto plane = [&](int64_t tt, int64_t rr, int64_t jj) {
        return gv.data() + ((tt * gh + rr) * gw + jj) * c;
    };
    for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
            double* yo = out.data() + (i * ow + j) * c;
            for (int64_t cc = 0; cc < c; ++cc) {
                double v00 = (1 - wt) * plane(t0, r0[i], c0[j])[cc] + wt * plane(t1, r0[i], c0[j])[cc];
                double v01 = (1 - wt) * plane(t0, r0[i], c1[j])[cc] + wt * plane(t1, r0[i], c1[j])[cc];
                double v10 = (1 - wt) * plane(t0, r1[i], c0[j])[cc] + wt * plane(t1, r1[i], c0[j])[cc];
                double v11 = (1 - wt) * plane(t0, r1[i], c1[j])[cc] + wt * plane(t1, r1[i], c1[j])[cc];
                yo[cc] = (1 - wr[i]) * ((1 - wc[j]) * v00 + wc[j] * v01) +
                         wr[i] * ((1 - wc[j]) * v10 + wc[j] * v11);
            }
        }
    auto idx = std::make_shared<std::tuple<std::vector<int64_t>, std::vector<int64_t>,
                                           std::vector<int64_t>, std::vector<int64_t>,
                                           std::vector<double>, std::vector<double>>>(
        std::move(r0), std::move(r1), std::move(c0), std::move(c1), std::move(wr), std::move(wc));
    return make_op(std::move(out), {grid}, [idx, t0, t1, wt, oh, ow, gh, gw, c](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        const auto& [r0, r1, c0, c1, wr, wc] = *idx;
        auto gslot = [&](int64_t tt, int64_t rr, int64_t jj) {
            return p.grad.data() + ((tt * gh + rr) * gw + jj) * c;
        };
        for (int64_t i = 0; i < oh; ++i)
            for (int64_t j = 0; j < ow; ++j) {
                const double* g = n.grad.data() + (i * ow + j) * c;
                double a00 = (1 - wr[i]) * (1 - wc[j]), a01 = (1 - wr[i]) * wc[j];
                double a10 = wr[i] * (1 - wc[j]), a11 = wr[i] * wc[j];
                for (int64_t cc = 0; cc < c; ++cc) {
                    gslot(t0, r0[i], c0[j])[cc] += (1 - wt) * a00 * g[cc];
                    gslot(t1, r0[i], c0[j])[cc] += wt * a00 * g[cc];
                    gslot(t0, r0[i], c1[j])[cc] += (1 - wt) * a01 * g[cc];
                    gslot(t1, r0[i], c1[j])[cc] += wt * a01 * g[cc];
                    gslot(t0, r1[i], c0[j])[cc] += (1 - wt) * a10 * g[cc];
                    gslot(t1, r1[i], c0[j])[cc] += wt * a10 * g[cc];
                    gslot(t0, r1[i], c1[j])[cc] += (1 - wt) * a11 * g[cc];
                    gslot(t1, r1[i], c1[j])[cc] += wt * a11 * g[cc];
                }
            }
    });
}

// Periodic tiling of a [Tg, s, s, C] grid over an (oh, ow) output:
// pixel (i, j) takes entry ((origin+i) mod s, (origin+j) mod s), linearly
// interpolated along the first axis at t_norm.
inline Var local_grid_tile(Var grid, double t_norm, int64_t oh, int64_t ow, int64_t origin_r,
                           int64_t origin_c) {
    const Tensor& gv = grid.val();
    if (gv.rank() != 4) throw std::invalid_argument("local_grid_tile: rank-4 expected");
    int64_t tg = gv.dim(0), s = gv.dim(1), c = gv.dim(3);
    if (gv.dim(2) != s) throw std::invalid_argument("local_grid_tile: square cell expected");

    double tpos = std::clamp(t_norm, 0.0, 1.0) * static_cast<double>(tg - 1);
    int64_t t0 = static_cast<int64_t>(std::floor(tpos));
    int64_t t1 = std::min(t0 + 1, tg - 1);
    double wt = tpos - static_cast<double>(t0);

    auto wrap = [](int64_t v, int64_t m) { return ((v % m) + m) % m; };
    Tensor out({oh, ow, c});
    for (int64_t i = 0; i < oh; ++i) {
        int64_t di = wrap(origin_r + i, s);
        for (int64_t j = 0; j < ow; ++j) {
            int64_t dj = wrap(origin_c + j, s);
            const double* g0 = gv.data() + ((t0 * s + di) * s + dj) * c;
            const double* g1 = gv.data() + ((t1 * s + di) * s + dj) * c;
            double* yo = out.data() + (i * ow + j) * c;
            for (int64_t cc = 0; cc < c; ++cc) yo[cc] = (1 - wt) * g0[cc] + wt * g1[cc];
        }
    }
    return make_op(std::move(out), {grid},
                   [t0, t1, wt, oh, ow, s, c, origin_r, origin_c](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        auto wrap = [](int64_t v, int64_t m) { return ((v % m) + m) % m; };
        for (int64_t i = 0; i < oh; ++i) {
            int64_t di = wrap(origin_r + i, s);
            for (int64_t j = 0; j < ow; ++j) {
                int64_t dj = wrap(origin_c + j, s);
                const double* g = n.grad.data() + (i * ow + j) * c;
                double* s0 = p.grad.data() + ((t0 * s + di) * s + dj) * c;
                double* s1 = p.grad.data() + ((t1 * s + di) * s + dj) * c;
                for (int64_t cc = 0; cc < c; ++cc) {
                    s0[cc] += (1 - wt) * g[cc];
                    s1[cc] += wt * g[cc];
                }
            }
        }
    });
}

// Window [r0, r0+oh) x [c0, c0+ow) of x, zero-filled where the window
// leaves the array. Differentiable slice-with-padding for patch extraction.
inline Var extract_pad(Var x, int64_t r0, int64_t c0, int64_t oh, int64_t ow) {
    const Tensor& xv = x.val();
    if (xv.rank() != 3) throw std::invalid_argument("extract_pad: rank-3 expected");
    int64_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);

    Tensor out({oh, ow, c});
    for (int64_t i = 0; i < oh; ++i) {
        int64_t si = r0 + i;
        if (si < 0 || si >= h) continue;
        for (int64_t j = 0; j < ow; ++j) {
            int64_t sj = c0 + j;
            if (sj < 0 || sj >= w) continue;
            const double* xp = xv.data() + (si * w + sj) * c;
            double* yo = out.data() + (i * ow + j) * c;
            for (int64_t cc = 0; cc < c; ++cc) yo[cc] = xp[cc];
        }
    }
    return make_op(std::move(out), {x}, [r0, c0, oh, ow, h, w, c](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        for (int64_t i = 0; i < oh; ++i) {
            int64_t si = r0 + i;
            if (si < 0 || si >= h) continue;
            for (int64_t j = 0; j < ow; ++j) {
                int64_t sj = c0 + j;
                if (sj < 0 || sj >= w) continue;
                const double* g = n.grad.data() + (i * ow + j) * c;
                double* xg = p.grad.data() + (si * w + sj) * c;
                for (int64_t cc = 0; cc < c; ++cc) xg[cc] += g[cc];
            }
        }
    });
}

// 2x2 stride-2 average pooling, floor semantics (trailing row/col dropped)
inline Var avg_pool2(Var x) {
    const Tensor& xv = x.val();
    if (xv.rank() != 3) throw std::invalid_argument("avg_pool2: rank-3 expected");
    int64_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    int64_t oh = h / 2, ow = w / 2;
    Tensor out({oh, ow, c});
    for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
            const double* a = xv.data() + ((2 * i) * w + 2 * j) * c;
            const double* b = xv.data() + ((2 * i) * w + 2 * j + 1) * c;
            const double* d = xv.data() + ((2 * i + 1) * w + 2 * j) * c;
            const double* e = xv.data() + ((2 * i + 1) * w + 2 * j + 1) * c;
            double* yo = out.data() + (i * ow + j) * c;
            for (int64_t cc = 0; cc < c; ++cc) yo[cc] = 0.25 * (a[cc] + b[cc] + d[cc] + e[cc]);
        }
    return make_op(std::move(out), {x}, [oh, ow, w, c](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        for (int64_t i = 0; i < oh; ++i)
            for (int64_t j = 0; j < ow; ++j) {
                const double* g = n.grad.data() + (i * ow + j) * c;
                for (int64_t di = 0; di < 2; ++di)
                    for (int64_t dj = 0; dj < 2; ++dj) {
                        double* xg = p.grad.data() + ((2 * i + di) * w + 2 * j + dj) * c;
                        for (int64_t cc = 0; cc < c; ++cc) xg[cc] += 0.25 * g[cc];
                    }
            }
    });
}

}  // namespace msnerv
