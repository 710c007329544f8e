#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "msnerv/batching.hpp"
#include "msnerv/pyramid.hpp"
#include "msnerv/video.hpp"
#include "test_util.hpp"

using namespace msnerv;
namespace fs = std::filesystem;

namespace {

fs::path make_temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("msnerv_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

VideoTensor synthetic_video(int64_t t, int64_t h, int64_t w, uint64_t seed = 5) {
    Rng rng(seed);
    VideoTensor v;
    for (int64_t k = 0; k < t; ++k) v.frames.push_back(rng.uniform_tensor({h, w, 3}, 0.0, 1.0));
    return v;
}

}  // namespace

TEST_CASE("png round trip through a frame directory") {
    auto dir = make_temp_dir("pngdir");
    VideoTensor v = synthetic_video(3, 48, 96);
    write_frames(dir, v);

    VideoTensor r = load_frames(dir);
    REQUIRE(r.T() == 3);
    REQUIRE(r.H() == 48);
    REQUIRE(r.W() == 96);
    // 8-bit quantization bound
    for (int64_t t = 1; t <= 3; ++t)
        for (int64_t i = 0; i < r.frame(t).numel(); ++i)
            REQUIRE(std::fabs(r.frame(t)[i] - v.frame(t)[i]) <= 0.5 / 255.0 + 1e-12);
    fs::remove_all(dir);
}

TEST_CASE("load_frames rejects sizes not divisible by the grid stride") {
    auto dir = make_temp_dir("badsize");
    write_png(dir / "00001.png", Tensor({100, 100, 3}, 0.5));
    REQUIRE_THROWS_WITH(load_frames(dir), Catch::Matchers::ContainsSubstring("not divisible"));
    fs::remove_all(dir);
}

TEST_CASE("load_frames names a corrupt frame") {
    auto dir = make_temp_dir("corrupt");
    write_png(dir / "00001.png", Tensor({24, 24, 3}, 0.5));
    std::ofstream(dir / "00002.png") << "not a png";
    REQUIRE_THROWS_WITH(load_frames(dir), Catch::Matchers::ContainsSubstring("00002"));
    fs::remove_all(dir);
}

TEST_CASE("y4m load converts BT.709 limited range") {
    auto dir = make_temp_dir("y4m");
    auto path = dir / "clip.y4m";
    {
        std::ofstream f(path, std::ios::binary);
        f << "YUV4MPEG2 W48 H24 F30:1 Ip A1:1 C420jpeg\n";
        for (int frame = 0; frame < 2; ++frame) {
            f << "FRAME\n";
            std::vector<uint8_t> y(48 * 24, frame == 0 ? 235 : 16);  // white / black
            std::vector<uint8_t> c(2 * 24 * 12, 128);
            f.write(reinterpret_cast<char*>(y.data()), static_cast<std::streamsize>(y.size()));
            f.write(reinterpret_cast<char*>(c.data()), static_cast<std::streamsize>(c.size()));
        }
    }
    VideoTensor v = load_frames(path);
    REQUIRE(v.T() == 2);
    REQUIRE(v.H() == 24);
    REQUIRE(v.W() == 48);
    REQUIRE(v.frame_rate == Catch::Approx(30.0));
    for (int64_t i = 0; i < v.frame(1).numel(); ++i) REQUIRE(v.frame(1)[i] == Catch::Approx(1.0));
    for (int64_t i = 0; i < v.frame(2).numel(); ++i) REQUIRE(v.frame(2)[i] == Catch::Approx(0.0));

    // a chroma sample against the matrix, computed directly
    {
        std::ofstream f(path, std::ios::binary);
        f << "YUV4MPEG2 W48 H24 F30:1 C420\n" << "FRAME\n";
        std::vector<uint8_t> y(48 * 24, 126);
        std::vector<uint8_t> cb(24 * 12, 90), cr(24 * 12, 190);
        f.write(reinterpret_cast<char*>(y.data()), static_cast<std::streamsize>(y.size()));
        f.write(reinterpret_cast<char*>(cb.data()), static_cast<std::streamsize>(cb.size()));
        f.write(reinterpret_cast<char*>(cr.data()), static_cast<std::streamsize>(cr.size()));
    }
    VideoTensor u = load_frames(path);
    double yv = (126.0 - 16.0) / 219.0, pb = (90.0 - 128.0) / 224.0, pr = (190.0 - 128.0) / 224.0;
    REQUIRE(u.frame(1).at3(5, 7, 0) == Catch::Approx(yv + 1.5748 * pr));
    REQUIRE(u.frame(1).at3(5, 7, 2) == Catch::Approx(yv + 1.8556 * pb));
    fs::remove_all(dir);
}

TEST_CASE("y4m 1080p geometry is accepted") {
    auto dir = make_temp_dir("y4m1080");
    auto path = dir / "hd.y4m";
    {
        std::ofstream f(path, std::ios::binary);
        f << "YUV4MPEG2 W1920 H1080 F50:1 C420\nFRAME\n";
        std::vector<uint8_t> buf(1920 * 1080 * 3 / 2, 128);
        f.write(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    VideoTensor v = load_frames(path);
    REQUIRE(v.H() == 1080);
    REQUIRE(v.W() == 1920);
    fs::remove_all(dir);
}

TEST_CASE("pyramid levels halve and level N is the source") {
    VideoTensor v = synthetic_video(2, 48, 96);
    ResolutionPyramid pyr = build_pyramid(v, 4);
    REQUIRE(pyr.N() == 4);
    REQUIRE(pyr.level(1).H() == 6);
    REQUIRE(pyr.level(1).W() == 12);
    REQUIRE(pyr.level(4).H() == 48);
    for (int64_t i = 0; i < v.frame(1).numel(); ++i)
        REQUIRE(pyr.level(4).frame(1)[i] == v.frame(1)[i]);

    // every level-r pixel is the max of its 2x2 block one level up
    for (int64_t r = 1; r < 4; ++r) {
        const Tensor& lo = pyr.level(r).frame(1);
        const Tensor& hi = pyr.level(r + 1).frame(1);
        for (int64_t i = 0; i < lo.dim(0); ++i)
            for (int64_t j = 0; j < lo.dim(1); ++j)
                for (int64_t c = 0; c < 3; ++c) {
                    double m = std::max(
                        std::max(hi.at3(2 * i, 2 * j, c), hi.at3(2 * i, 2 * j + 1, c)),
                        std::max(hi.at3(2 * i + 1, 2 * j, c), hi.at3(2 * i + 1, 2 * j + 1, c)));
                    REQUIRE(lo.at3(i, j, c) == m);
                }
    }
}

TEST_CASE("pyramid of a constant video is constant") {
    VideoTensor v;
    v.frames.assign(2, Tensor({24, 24, 3}, 0.42));
    ResolutionPyramid pyr = build_pyramid(v, 3);
    for (int64_t r = 1; r <= 3; ++r)
        for (int64_t i = 0; i < pyr.level(r).frame(1).numel(); ++i)
            REQUIRE(pyr.level(r).frame(1)[i] == 0.42);
}

TEST_CASE("single bright pixel survives max pooling into its quadrant") {
    // brute-force 2x2 max over all 16 pixels of a 4x4 frame
    VideoTensor v;
    Tensor f({4, 4, 3}, 0.1);
    f.at3(2, 1, 0) = 0.9;
    v.frames.push_back(f);
    ResolutionPyramid pyr = build_pyramid(v, 2);
    const Tensor& lo = pyr.level(1).frame(1);
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 2; ++j) {
            double expect = 0.1;
            for (int64_t di = 0; di < 2; ++di)
                for (int64_t dj = 0; dj < 2; ++dj)
                    expect = std::max(expect, f.at3(2 * i + di, 2 * j + dj, 0));
            REQUIRE(lo.at3(i, j, 0) == expect);
        }
    REQUIRE(lo.at3(1, 0, 0) == 0.9);
}

TEST_CASE("pyramid shape is idempotent") {
    VideoTensor v = synthetic_video(1, 48, 48);
    ResolutionPyramid pyr = build_pyramid(v, 3);
    ResolutionPyramid again = build_pyramid(pyr.level(3), 3);
    for (int64_t r = 1; r <= 3; ++r)
        for (int64_t i = 0; i < pyr.level(r).frame(1).numel(); ++i)
            REQUIRE(again.level(r).frame(1)[i] == pyr.level(r).frame(1)[i]);
}

TEST_CASE("pyramid rejects non-divisible dimensions") {
    VideoTensor v = synthetic_video(1, 24, 24);
    REQUIRE_THROWS(build_pyramid(v, 5));  // 24 not divisible by 16
}

TEST_CASE("alternative downsampling modes differ from max pooling") {
    VideoTensor v = synthetic_video(1, 24, 24, 99);
    auto pmax = build_pyramid(v, 2, Downsample::Max);
    auto pavg = build_pyramid(v, 2, Downsample::Avg);
    auto pdir = build_pyramid(v, 2, Downsample::Direct);
    auto pbic = build_pyramid(v, 2, Downsample::Bicubic);
    REQUIRE(mse(pmax.level(1).frame(1), pavg.level(1).frame(1)) > 0.0);
    REQUIRE(mse(pmax.level(1).frame(1), pdir.level(1).frame(1)) > 0.0);
    REQUIRE(mse(pmax.level(1).frame(1), pbic.level(1).frame(1)) > 0.0);
    REQUIRE(pdir.level(1).frame(1).at3(0, 0, 0) == v.frame(1).at3(0, 0, 0));
}

TEST_CASE("batches partition the frames each epoch") {
    BatchStream bs(30, 96, 192, {.batch_frames = 5}, 7);
    auto batches = bs.epoch(0);
    REQUIRE(batches.size() == 6);
    std::multiset<int64_t> seen;
    for (const auto& b : batches) {
        REQUIRE(b.frame_indices.size() == 5);
        seen.insert(b.frame_indices.begin(), b.frame_indices.end());
    }
    REQUIRE(seen.size() == 30);
    for (int64_t t = 1; t <= 30; ++t) REQUIRE(seen.count(t) == 1);
}

TEST_CASE("batch stream is deterministic per seed and differs across epochs") {
    BatchStream a(13, 48, 48, {.batch_frames = 4}, 11);
    BatchStream b(13, 48, 48, {.batch_frames = 4}, 11);
    auto ea = a.epoch(3), eb = b.epoch(3);
    REQUIRE(ea.size() == 4);  // ragged last batch
    REQUIRE(ea.back().frame_indices.size() == 1);
    for (size_t i = 0; i < ea.size(); ++i) REQUIRE(ea[i].frame_indices == eb[i].frame_indices);
    REQUIRE(a.epoch(4)[0].frame_indices != ea[0].frame_indices);
}

TEST_CASE("patch windows tile the frame aligned to the grid") {
    BatchConfig cfg{.batch_frames = 2, .patch_mode = true, .patch_rows = 96, .patch_cols = 96,
                    .levels = 4};
    BatchStream bs(8, 96, 192, cfg, 3);
    std::set<int64_t> offsets;
    for (int64_t e = 0; e < 20; ++e)
        for (const auto& b : bs.epoch(e)) {
            REQUIRE(b.window.has_value());
            REQUIRE(b.window->r0 == 0);
            REQUIRE((b.window->c0 == 0 || b.window->c0 == 96));
            REQUIRE(b.window->c0 % 24 == 0);
            offsets.insert(b.window->c0);
        }
    REQUIRE(offsets.size() == 2);  // both tiles get sampled
}

TEST_CASE("patch config validation") {
    REQUIRE_THROWS_WITH(BatchStream(4, 48, 48,
                                    {.batch_frames = 1, .patch_mode = true, .patch_rows = 96,
                                     .patch_cols = 48, .levels = 4},
                                    1),
                        Catch::Matchers::ContainsSubstring("patch larger than frame"));
    REQUIRE_THROWS(BatchStream(4, 96, 96,
                               {.batch_frames = 1, .patch_mode = true, .patch_rows = 36,
                                .patch_cols = 36, .levels = 4},
                               1));  // 36 not divisible by lcm(24, 8)
}

TEST_CASE("frame store counts accesses") {
    FrameStore store(synthetic_video(6, 24, 24));
    store.frame(2);
    store.frame(2);
    store.gather({1, 3, 5});
    REQUIRE(store.access_count(2) == 2);
    REQUIRE(store.access_count(1) == 1);
    REQUIRE(store.access_count(4) == 0);
    REQUIRE(store.access_count(6) == 0);
}

TEST_CASE("auto_levels keeps the coarsest level at least 8x8") {
    REQUIRE(auto_levels(1080, 1920) == 4);
    REQUIRE(auto_levels(48, 96) == 3);  // 48/8 = 6 < 8 at N=4
    REQUIRE(auto_levels(24, 24) == 2);
    REQUIRE(auto_levels(96, 96) == 4);
}
