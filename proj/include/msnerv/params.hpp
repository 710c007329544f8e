#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "msnerv/autodiff.hpp"

namespace msnerv {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m, adam_v;
    bool decodable = true;  // false: training-only (excluded from the bitstream)
};

class ParamStore {
public:
    size_t add(std::string name, Tensor init, bool decodable = true) {
        if (index_.count(name)) throw std::logic_error("duplicate parameter: " + name);
        Param p;
        p.name = std::move(name);
        p.grad = Tensor(init.shape());
        p.adam_m = Tensor(init.shape());
        p.adam_v = Tensor(init.shape());
        p.value = std::move(init);
        p.decodable = decodable;
        index_[p.name] = params_.size();
        params_.push_back(std::move(p));
        return params_.size() - 1;
    }

    Param& at(size_t i) { return params_[i]; }
    const Param& at(size_t i) const { return params_[i]; }
    size_t size() const { return params_.size(); }

    Param& by_name(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return params_[it->second];
    }

    int64_t count(bool decodable_only) const {
        int64_t n = 0;
        for (const auto& p : params_)
            if (!decodable_only || p.decodable) n += p.value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p.grad.fill(0.0);
    }

    // hash of all values in declaration order; used for determinism checks
    uint64_t value_hash() const {
        uint64_t h = 1469598103934665603ull;
        for (const auto& p : params_) {
            h = fnv1a64(p.name.data(), p.name.size(), h);
            h = hash_tensor(p.value, h);
        }
        return h;
    }

    std::vector<Param>& all() { return params_; }
    const std::vector<Param>& all() const { return params_; }

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, size_t> index_;
};

// Symmetric per-tensor quantization step for the given bit depth.
inline double quant_scale(const Tensor& v, int bits) {
    double qmax = static_cast<double>((int64_t{1} << (bits - 1)) - 1);
    double m = v.max_abs();
    return m > 0.0 ? m / qmax : 1.0;
}

inline int64_t quant_round(double x) { return static_cast<int64_t>(std::llround(x)); }

// scale * round(v / scale), clamped to the symmetric lattice
inline Tensor fake_quantize(const Tensor& v, int bits) {
    double s = quant_scale(v, bits);
    int64_t qmax = (int64_t{1} << (bits - 1)) - 1;
    Tensor out(v.shape());
    for (int64_t i = 0; i < v.numel(); ++i) {
        int64_t q = std::clamp<int64_t>(quant_round(v[i] / s), -qmax, qmax);
        out[i] = s * static_cast<double>(q);
    }
    return out;
}

// Per-step graph context: caches one leaf per parameter so every use of a
// parameter shares gradient accumulation, and applies fake quantization to
// decodable weights during QAT (straight-through backward).
struct GraphCtx {
    ParamStore* store = nullptr;
    bool train = true;
    bool qat = false;
    int qat_bits = 8;

    Var use(size_t idx) {
        auto it = cache_.find(idx);
        if (it != cache_.end()) return it->second;
        Param& p = store->at(idx);
        Tensor v = (qat && p.decodable) ? fake_quantize(p.value, qat_bits) : p.value;
        auto n = std::make_shared<Node>();
        n->val = std::move(v);
        n->needs_grad = train;
        if (train) {
            Param* pp = &p;
            n->backprop = [pp](Node& self) {
                for (int64_t i = 0; i < self.grad.numel(); ++i) pp->grad[i] += self.grad[i];
            };
        }
        Var var{n};
        cache_.emplace(idx, var);
        return var;
    }

private:
    std::unordered_map<size_t, Var> cache_;
};

}  // namespace msnerv
