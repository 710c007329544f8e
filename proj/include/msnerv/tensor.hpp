#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace msnerv {

// Dense row-major tensor of doubles. Images are [H, W, C] with the channel
// index fastest; grids are [T, H, W, C].
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

    static Tensor scalar(double v) {
        Tensor t({1});
        t.data_[0] = v;
        return t;
    }

    static Tensor from(std::vector<int64_t> shape, std::vector<double> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        if (checked_numel(t.shape_) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("Tensor::from: shape/data size mismatch");
        t.data_ = std::move(data);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int64_t>& shape() const { return shape_; }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at3(int64_t i, int64_t j, int64_t c) {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + c)];
    }
    double at3(int64_t i, int64_t j, int64_t c) const {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + c)];
    }
    double& at4(int64_t t, int64_t i, int64_t j, int64_t c) {
        return data_[static_cast<size_t>(((t * shape_[1] + i) * shape_[2] + j) * shape_[3] + c)];
    }
    double at4(int64_t t, int64_t i, int64_t j, int64_t c) const {
        return data_[static_cast<size_t>(((t * shape_[1] + i) * shape_[2] + j) * shape_[3] + c)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::fabs(v));
        return m;
    }

    void fill(double v) { data_.assign(data_.size(), v); }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    static int64_t checked_numel(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

inline double mse(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return a.numel() ? acc / static_cast<double>(a.numel()) : 0.0;
}

// FNV-1a over the raw bytes of a double sequence; used for determinism
// checks and config hashes.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t hash_tensor(const Tensor& t, uint64_t h = 1469598103934665603ull) {
    return fnv1a64(t.data(), sizeof(double) * static_cast<size_t>(t.numel()), h);
}

}  // namespace msnerv
