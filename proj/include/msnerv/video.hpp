#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "msnerv/image.hpp"
#include "msnerv/tensor.hpp"

namespace msnerv {

// Spatial stride of the encoder grid: every loadable video must have H and W
// divisible by this.
inline constexpr int64_t kGridStride = 24;

struct VideoTensor {
    std::vector<Tensor> frames;  // each [H, W, 3], values in [0, 1]
    double frame_rate = 0.0;     // metadata only

    int64_t T() const { return static_cast<int64_t>(frames.size()); }
    int64_t H() const { return frames.empty() ? 0 : frames[0].dim(0); }
    int64_t W() const { return frames.empty() ? 0 : frames[0].dim(1); }

    const Tensor& frame(int64_t t) const {  // 1-based, matching run indices
        if (t < 1 || t > T()) throw std::out_of_range("frame index out of range");
        return frames[static_cast<size_t>(t - 1)];
    }
};

// BT.709 limited-range Y'CbCr -> full-range RGB, output clamped to [0, 1]
inline void bt709_to_rgb(double y8, double cb8, double cr8, double& r, double& g, double& b) {
    double y = (y8 - 16.0) / 219.0;
    double pb = (cb8 - 128.0) / 224.0;
    double pr = (cr8 - 128.0) / 224.0;
    r = std::clamp(y + 1.5748 * pr, 0.0, 1.0);
    g = std::clamp(y - 0.1873242729306488 * pb - 0.4681242729306488 * pr, 0.0, 1.0);
    b = std::clamp(y + 1.8556 * pb, 0.0, 1.0);
}

// Bilinear resize with half-pixel centers; used only for the optional
// load-time resize.
inline Tensor resize_bilinear(const Tensor& img, int64_t oh, int64_t ow) {
    int64_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    Tensor out({oh, ow, c});
    for (int64_t i = 0; i < oh; ++i) {
        double sy = (i + 0.5) * static_cast<double>(h) / static_cast<double>(oh) - 0.5;
        int64_t y0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(sy)), 0, h - 1);
        int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
        double wy = std::clamp(sy - std::floor(sy), 0.0, 1.0);
        if (sy < 0) wy = 0.0;
        for (int64_t j = 0; j < ow; ++j) {
            double sx = (j + 0.5) * static_cast<double>(w) / static_cast<double>(ow) - 0.5;
            int64_t x0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(sx)), 0, w - 1);
            int64_t x1 = std::min<int64_t>(x0 + 1, w - 1);
            double wx = std::clamp(sx - std::floor(sx), 0.0, 1.0);
            if (sx < 0) wx = 0.0;
            for (int64_t cc = 0; cc < c; ++cc) {
                double v = (1 - wy) * ((1 - wx) * img.at3(y0, x0, cc) + wx * img.at3(y0, x1, cc)) +
                           wy * ((1 - wx) * img.at3(y1, x0, cc) + wx * img.at3(y1, x1, cc));
                out.at3(i, j, cc) = v;
            }
        }
    }
    return out;
}

namespace detail {

inline void check_grid_divisible(int64_t h, int64_t w) {
    if (h % kGridStride == 0 && w % kGridStride == 0) return;
    auto nearest = [](int64_t v) { return std::max<int64_t>(kGridStride, (v + kGridStride / 2) / kGridStride * kGridStride); };
    throw std::invalid_argument("video dimensions " + std::to_string(w) + "x" + std::to_string(h) +
                                " not divisible by " + std::to_string(kGridStride) +
                                "; nearest valid size is " + std::to_string(nearest(w)) + "x" +
                                std::to_string(nearest(h)) + " (use a resize)");
}

struct Y4mHeader {
    int64_t w = 0, h = 0;
    double fps = 0.0;
    std::string chroma = "420";
};

inline Y4mHeader parse_y4m_header(const std::string& line) {
    if (line.rfind("YUV4MPEG2", 0) != 0) throw std::runtime_error("not a Y4M stream");
    Y4mHeader hd;
    size_t pos = 9;
    while (pos < line.size()) {
        while (pos < line.size() && line[pos] == ' ') ++pos;
        size_t end = line.find(' ', pos);
        std::string tok = line.substr(pos, end == std::string::npos ? end : end - pos);
        if (!tok.empty()) {
            char tag = tok[0];
            std::string val = tok.substr(1);
            if (tag == 'W') hd.w = std::stoll(val);
            else if (tag == 'H') hd.h = std::stoll(val);
            else if (tag == 'F') {
                auto slash = val.find(':');
                if (slash != std::string::npos)
                    hd.fps = std::stod(val.substr(0, slash)) / std::stod(val.substr(slash + 1));
            } else if (tag == 'C') hd.chroma = val;
        }
        if (end == std::string::npos) break;
        pos = end + 1;
    }
    if (hd.w <= 0 || hd.h <= 0) throw std::runtime_error("Y4M header missing dimensions");
    return hd;
}

// chroma layout: subsampling factors per plane axis
inline void chroma_factors(const std::string& chroma, int64_t& sx, int64_t& sy) {
    if (chroma.rfind("420", 0) == 0) { sx = 2; sy = 2; }
    else if (chroma.rfind("422", 0) == 0) { sx = 2; sy = 1; }
    else if (chroma.rfind("444", 0) == 0) { sx = 1; sy = 1; }
    else if (chroma.rfind("mono", 0) == 0) { sx = 0; sy = 0; }
    else throw std::runtime_error("unsupported Y4M chroma mode: " + chroma);
}

inline Tensor yuv_planes_to_rgb(const std::vector<uint8_t>& buf, int64_t w, int64_t h, int64_t sx,
                                int64_t sy) {
    Tensor out({h, w, 3});
    int64_t ysz = w * h;
    int64_t cw = sx ? w / sx : 0, ch = sy ? h / sy : 0;
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            double y = buf[static_cast<size_t>(i * w + j)];
            double cb = 128.0, cr = 128.0;
            if (sx) {
                int64_t ci = std::min(i / sy, ch - 1), cj = std::min(j / sx, cw - 1);
                cb = buf[static_cast<size_t>(ysz + ci * cw + cj)];
                cr = buf[static_cast<size_t>(ysz + cw * ch + ci * cw + cj)];
            }
            double r, g, b;
            bt709_to_rgb(y, cb, cr, r, g, b);
            out.at3(i, j, 0) = r;
            out.at3(i, j, 1) = g;
            out.at3(i, j, 2) = b;
        }
    return out;
}

inline VideoTensor load_y4m(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path.string());
    std::string header;
    std::getline(f, header);
    Y4mHeader hd = parse_y4m_header(header);
    int64_t sx, sy;
    chroma_factors(hd.chroma, sx, sy);
    int64_t frame_bytes = hd.w * hd.h + (sx ? 2 * (hd.w / sx) * (hd.h / sy) : 0);

    VideoTensor video;
    video.frame_rate = hd.fps;
    std::string marker;
    while (std::getline(f, marker)) {
        if (marker.rfind("FRAME", 0) != 0)
            throw std::runtime_error("corrupt Y4M frame marker at frame " +
                                     std::to_string(video.frames.size() + 1));
        std::vector<uint8_t> buf(static_cast<size_t>(frame_bytes));
        f.read(reinterpret_cast<char*>(buf.data()), frame_bytes);
        if (f.gcount() != frame_bytes)
            throw std::runtime_error("truncated Y4M frame " +
                                     std::to_string(video.frames.size() + 1));
        video.frames.push_back(yuv_planes_to_rgb(buf, hd.w, hd.h, sx, sy));
    }
    if (video.frames.empty()) throw std::runtime_error("Y4M stream has no frames");
    return video;
}

// raw 4:2:0 YUV; dimensions must appear in the filename as <W>x<H>
inline VideoTensor load_raw_yuv(const std::filesystem::path& path) {
    std::smatch m;
    std::string name = path.filename().string();
    if (!std::regex_search(name, m, std::regex("([0-9]+)x([0-9]+)")))
        throw std::runtime_error("raw YUV needs <W>x<H> in the filename (or use Y4M): " + name);
    int64_t w = std::stoll(m[1]), h = std::stoll(m[2]);
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path.string());
    int64_t frame_bytes = w * h * 3 / 2;
    VideoTensor video;
    while (true) {
        std::vector<uint8_t> buf(static_cast<size_t>(frame_bytes));
        f.read(reinterpret_cast<char*>(buf.data()), frame_bytes);
        if (f.gcount() == 0) break;
        if (f.gcount() != frame_bytes)
            throw std::runtime_error("truncated YUV frame " + std::to_string(video.frames.size() + 1));
        video.frames.push_back(yuv_planes_to_rgb(buf, w, h, 2, 2));
    }
    if (video.frames.empty()) throw std::runtime_error("raw YUV file has no frames");
    return video;
}

inline VideoTensor load_png_dir(const std::filesystem::path& dir) {
    std::vector<std::pair<long long, std::filesystem::path>> entries;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".png") continue;
        std::string stem = e.path().stem().string();
        long long idx = 0;
        auto [p, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), idx);
        if (ec != std::errc() || p != stem.data() + stem.size()) continue;
        entries.emplace_back(idx, e.path());
    }
    if (entries.empty()) throw std::runtime_error("no numbered PNG frames in " + dir.string());
    std::sort(entries.begin(), entries.end());

    VideoTensor video;
    for (const auto& [idx, p] : entries) {
        Tensor img = read_png(p);
        if (!video.frames.empty() &&
            (img.dim(0) != video.H() || img.dim(1) != video.W()))
            throw std::runtime_error("frame size mismatch at " + p.string());
        video.frames.push_back(std::move(img));
    }
    return video;
}

}  // namespace detail

// Loads a frame directory (numbered PNGs), a Y4M stream, or raw 4:2:0 YUV.
// Dimensions after the optional resize must be divisible by the grid stride.
inline VideoTensor load_frames(const std::filesystem::path& source,
                               std::optional<std::pair<int64_t, int64_t>> resize_hw = {}) {
    if (!std::filesystem::exists(source))
        throw std::runtime_error("input does not exist: " + source.string());

    VideoTensor video;
    if (std::filesystem::is_directory(source)) {
        video = detail::load_png_dir(source);
    } else {
        auto ext = source.extension().string();
        if (ext == ".y4m") video = detail::load_y4m(source);
        else if (ext == ".yuv") video = detail::load_raw_yuv(source);
        else if (ext == ".png") throw std::runtime_error("pass the frame directory, not one PNG");
        else throw std::runtime_error("unsupported input type: " + source.string());
    }

    if (resize_hw) {
        auto [rh, rw] = *resize_hw;
        for (auto& fr : video.frames) fr = resize_bilinear(fr, rh, rw);
    }
    detail::check_grid_divisible(video.H(), video.W());
    return video;
}

inline void write_frames(const std::filesystem::path& dir, const VideoTensor& video) {
    std::filesystem::create_directories(dir);
    char name[32];
    for (int64_t t = 1; t <= video.T(); ++t) {
        std::snprintf(name, sizeof(name), "%05lld.png", static_cast<long long>(t));
        write_png(dir / name, video.frame(t));
    }
}

}  // namespace msnerv
