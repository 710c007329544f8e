#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "msnerv/video.hpp"

namespace msnerv {

enum class Downsample { Max, Avg, Bicubic, Direct };

inline Downsample downsample_from_string(const std::string& s) {
    if (s == "max") return Downsample::Max;
    if (s == "avg") return Downsample::Avg;
    if (s == "bicubic") return Downsample::Bicubic;
    if (s == "direct") return Downsample::Direct;
    throw std::invalid_argument("unknown downsample mode: " + s);
}

inline Tensor max_pool2(const Tensor& img) {
    int64_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    Tensor out({h / 2, w / 2, c});
    for (int64_t i = 0; i < h / 2; ++i)
        for (int64_t j = 0; j < w / 2; ++j)
            for (int64_t cc = 0; cc < c; ++cc)
                out.at3(i, j, cc) = std::max(
                    std::max(img.at3(2 * i, 2 * j, cc), img.at3(2 * i, 2 * j + 1, cc)),
                    std::max(img.at3(2 * i + 1, 2 * j, cc), img.at3(2 * i + 1, 2 * j + 1, cc)));
    return out;
}

inline Tensor avg_pool2_img(const Tensor& img) {
    int64_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    Tensor out({h / 2, w / 2, c});
    for (int64_t i = 0; i < h / 2; ++i)
        for (int64_t j = 0; j < w / 2; ++j)
            for (int64_t cc = 0; cc < c; ++cc)
                out.at3(i, j, cc) =
                    0.25 * (img.at3(2 * i, 2 * j, cc) + img.at3(2 * i, 2 * j + 1, cc) +
                            img.at3(2 * i + 1, 2 * j, cc) + img.at3(2 * i + 1, 2 * j + 1, cc));
    return out;
}

inline Tensor subsample2(const Tensor& img) {
    int64_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    Tensor out({h / 2, w / 2, c});
    for (int64_t i = 0; i < h / 2; ++i)
        for (int64_t j = 0; j < w / 2; ++j)
            for (int64_t cc = 0; cc < c; ++cc) out.at3(i, j, cc) = img.at3(2 * i, 2 * j, cc);
    return out;
}

// Catmull-Rom sampling at half-pixel centers of the x2-smaller target.
inline Tensor bicubic_half(const Tensor& img) {
    int64_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    int64_t oh = h / 2, ow = w / 2;
    auto cubic = [](double x) {
        constexpr double a = -0.5;
        x = std::fabs(x);
        if (x <= 1.0) return (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0;
        if (x < 2.0) return a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a;
        return 0.0;
    };
    Tensor out({oh, ow, c});
    for (int64_t i = 0; i < oh; ++i) {
        double sy = (i + 0.5) * 2.0 - 0.5;
        int64_t y1 = static_cast<int64_t>(std::floor(sy));
        double fy = sy - y1;
        for (int64_t j = 0; j < ow; ++j) {
            double sx = (j + 0.5) * 2.0 - 0.5;
            int64_t x1 = static_cast<int64_t>(std::floor(sx));
            double fx = sx - x1;
            for (int64_t cc = 0; cc < c; ++cc) {
                double acc = 0.0;
                for (int64_t dy = -1; dy <= 2; ++dy) {
                    int64_t yy = std::clamp<int64_t>(y1 + dy, 0, h - 1);
                    double wy = cubic(static_cast<double>(dy) - fy);
                    for (int64_t dx = -1; dx <= 2; ++dx) {
                        int64_t xx = std::clamp<int64_t>(x1 + dx, 0, w - 1);
                        acc += wy * cubic(static_cast<double>(dx) - fx) * img.at3(yy, xx, cc);
                    }
                }
                out.at3(i, j, cc) = std::clamp(acc, 0.0, 1.0);
            }
        }
    }
    return out;
}

inline Tensor downsample2(const Tensor& img, Downsample mode) {
    switch (mode) {
        case Downsample::Max: return max_pool2(img);
        case Downsample::Avg: return avg_pool2_img(img);
        case Downsample::Bicubic: return bicubic_half(img);
        case Downsample::Direct: return subsample2(img);
    }
    throw std::logic_error("unreachable");
}

// Cascaded downsampling ladder. Level N (1-based) is the source; level r is
// one 2x2 pool of level r+1.
struct ResolutionPyramid {
    std::vector<VideoTensor> levels;  // levels[r-1] has shape [T, H/2^(N-r), W/2^(N-r), 3]

    int64_t N() const { return static_cast<int64_t>(levels.size()); }
    const VideoTensor& level(int64_t r) const { return levels[static_cast<size_t>(r - 1)]; }
    const Tensor& slice(int64_t r, int64_t t) const { return level(r).frame(t); }
};

inline ResolutionPyramid build_pyramid(const VideoTensor& video, int64_t n,
                                       Downsample mode = Downsample::Max) {
    if (n < 1) throw std::invalid_argument("build_pyramid: need at least one level");
    int64_t div = int64_t{1} << (n - 1);
    if (video.H() % div != 0 || video.W() % div != 0)
        throw std::invalid_argument("build_pyramid: dimensions not divisible by 2^" +
                                    std::to_string(n - 1));

    ResolutionPyramid pyr;
    pyr.levels.resize(static_cast<size_t>(n));
    pyr.levels[static_cast<size_t>(n - 1)] = video;
    for (int64_t r = n - 1; r >= 1; --r) {
        const VideoTensor& above = pyr.levels[static_cast<size_t>(r)];
        VideoTensor& lvl = pyr.levels[static_cast<size_t>(r - 1)];
        lvl.frame_rate = video.frame_rate;
        lvl.frames.reserve(above.frames.size());
        for (const Tensor& fr : above.frames) lvl.frames.push_back(downsample2(fr, mode));
    }
    return pyr;
}

// Shrinks the requested level count until the coarsest level stays >= 8x8.
inline int64_t auto_levels(int64_t h, int64_t w, int64_t requested = 4) {
    int64_t n = requested;
    while (n > 1) {
        int64_t div = int64_t{1} << (n - 1);
        if (h / div >= 8 && w / div >= 8 && h % div == 0 && w % div == 0) break;
        --n;
    }
    return n;
}

}  // namespace msnerv
