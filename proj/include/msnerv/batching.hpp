#pragma once

#include <optional>
#include <numeric>
#include <vector>

#include "msnerv/pyramid.hpp"
#include "msnerv/rng.hpp"

namespace msnerv {

// Counted access to source frames. Training and task pipelines read frames
// only through this, so held-out-frame hygiene is checkable.
class FrameStore {
public:
    explicit FrameStore(VideoTensor video)
        : video_(std::move(video)), counts_(static_cast<size_t>(video_.T()) + 1, 0) {}

    int64_t T() const { return video_.T(); }
    int64_t H() const { return video_.H(); }
    int64_t W() const { return video_.W(); }
    double frame_rate() const { return video_.frame_rate; }

    const Tensor& frame(int64_t t) const {  // 1-based
        if (t < 1 || t > T()) throw std::out_of_range("FrameStore: frame index out of range");
        ++counts_[static_cast<size_t>(t)];
        return video_.frames[static_cast<size_t>(t - 1)];
    }

    int64_t access_count(int64_t t) const { return counts_[static_cast<size_t>(t)]; }

    // Copies the selected frames (counting the reads) into a new video.
    VideoTensor gather(const std::vector<int64_t>& indices) const {
        VideoTensor out;
        out.frame_rate = video_.frame_rate;
        for (int64_t t : indices) out.frames.push_back(frame(t));
        return out;
    }

private:
    VideoTensor video_;
    mutable std::vector<int64_t> counts_;
};

// Full-resolution patch window; offsets are multiples of the patch size, so
// windows come from the non-overlapping tiling of the frame.
struct PatchWindow {
    int64_t r0 = 0, c0 = 0, rows = 0, cols = 0;
};

struct TrainBatch {
    std::vector<int64_t> frame_indices;  // 1-based, unique
    std::optional<PatchWindow> window;   // shared by all frames of the batch
};

struct BatchConfig {
    int64_t batch_frames = 1;
    bool patch_mode = false;
    int64_t patch_rows = 0, patch_cols = 0;  // at the top level
    int64_t levels = 4;
};

// Deterministic batch stream: each epoch is a seeded permutation of all
// frames chunked into batches, with one patch window drawn per batch.
class BatchStream {
public:
    BatchStream(int64_t t, int64_t h, int64_t w, BatchConfig cfg, uint64_t seed)
        : t_(t), h_(h), w_(w), cfg_(cfg), seed_(seed) {
        if (cfg_.batch_frames < 1) throw std::invalid_argument("batch_frames must be >= 1");
        if (cfg_.patch_mode) {
            if (cfg_.patch_rows > h_ || cfg_.patch_cols > w_)
                throw std::invalid_argument("patch larger than frame");
            int64_t align = std::lcm(kGridStride, int64_t{1} << (cfg_.levels - 1));
            if (cfg_.patch_rows % align != 0 || cfg_.patch_cols % align != 0)
                throw std::invalid_argument("patch size must be divisible by " +
                                            std::to_string(align));
            if (h_ % cfg_.patch_rows != 0 || w_ % cfg_.patch_cols != 0)
                throw std::invalid_argument("frame not tileable by the patch size");
        }
    }

    int64_t batches_per_epoch() const { return (t_ + cfg_.batch_frames - 1) / cfg_.batch_frames; }

    std::vector<TrainBatch> epoch(int64_t e) const {
        Rng rng(mix_seed(seed_, static_cast<uint64_t>(e)));
        std::vector<int64_t> order(static_cast<size_t>(t_));
        std::iota(order.begin(), order.end(), 1);
        rng.shuffle(order);

        std::vector<TrainBatch> batches;
        for (int64_t start = 0; start < t_; start += cfg_.batch_frames) {
            TrainBatch b;
            int64_t end = std::min(t_, start + cfg_.batch_frames);
            b.frame_indices.assign(order.begin() + start, order.begin() + end);
            if (cfg_.patch_mode) {
                int64_t tri = h_ / cfg_.patch_rows, tci = w_ / cfg_.patch_cols;
                PatchWindow win;
                win.r0 = rng.uniform_int(tri) * cfg_.patch_rows;
                win.c0 = rng.uniform_int(tci) * cfg_.patch_cols;
                win.rows = cfg_.patch_rows;
                win.cols = cfg_.patch_cols;
                b.window = win;
            }
            batches.push_back(std::move(b));
        }
        return batches;
    }

private:
    int64_t t_, h_, w_;
    BatchConfig cfg_;
    uint64_t seed_;
};

}  // namespace msnerv
