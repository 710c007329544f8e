#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "msnerv/tensor.hpp"

namespace msnerv {

// Reverse-mode tape over tensor-valued nodes. A fresh graph is built per
// training step; backward() walks it once in reverse topological order.
struct Node {
    Tensor val;
    Tensor grad;  // allocated on first accumulation
    bool needs_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
        if (grad.numel() != val.numel()) grad = Tensor(val.shape());
    }
};

struct Var {
    std::shared_ptr<Node> n;

    const Tensor& val() const { return n->val; }
    const Tensor& grad() const { return n->grad; }
    int64_t numel() const { return n->val.numel(); }
    const std::vector<int64_t>& shape() const { return n->val.shape(); }
    double scalar() const { return n->val[0]; }
    bool defined() const { return static_cast<bool>(n); }
};

inline Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    return Var{n};
}

inline Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

inline Var leaf(Tensor t, bool needs_grad = true) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->needs_grad = needs_grad;
    return Var{n};
}

inline Var make_op(Tensor val, std::vector<Var> parents, std::function<void(Node&)> bp) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    for (const Var& p : parents) n->needs_grad = n->needs_grad || p.n->needs_grad;
    if (n->needs_grad) {
        n->parents.reserve(parents.size());
        for (Var& p : parents) n->parents.push_back(std::move(p.n));
        n->backprop = std::move(bp);
    }
    return Var{n};
}

// Accumulates d(root)/d(leaf) into every reachable node that needs_grad.
// root must be scalar.
inline void backward(const Var& root) {
    if (root.numel() != 1) throw std::logic_error("backward: root must be scalar");
    if (!root.n->needs_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.n.get(), 0);
    seen.insert(root.n.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->needs_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.n->ensure_grad();
    root.n->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backprop && node->grad.numel() == node->val.numel()) node->backprop(*node);
    }
}

namespace detail {

inline void check_same_or_scalar(const Var& a, const Var& b, const char* op) {
    if (a.numel() != b.numel() && a.numel() != 1 && b.numel() != 1)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.val().shape_str() +
                                    " vs " + b.val().shape_str());
}

// Accumulate g (shaped like the op output) into parent p, reducing if the
// parent was broadcast from a scalar.
inline void accum(Node& p, const Tensor& g, double factor = 1.0) {
    if (!p.needs_grad) return;
    p.ensure_grad();
    if (p.val.numel() == g.numel()) {
        for (int64_t i = 0; i < g.numel(); ++i) p.grad[i] += factor * g[i];
    } else {  // scalar parent
        double acc = 0.0;
        for (int64_t i = 0; i < g.numel(); ++i) acc += g[i];
        p.grad[0] += factor * acc;
    }
}

}  // namespace detail

inline Var add(Var a, Var b) {
    detail::check_same_or_scalar(a, b, "add");
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    bool as = av.numel() == 1, bs = bv.numel() == 1;
    Tensor out(as ? bv.shape() : av.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[as ? 0 : i] + bv[bs ? 0 : i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        detail::accum(*n.parents[0], n.grad);
        detail::accum(*n.parents[1], n.grad);
    });
}

inline Var sub(Var a, Var b) {
    detail::check_same_or_scalar(a, b, "sub");
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    bool as = av.numel() == 1, bs = bv.numel() == 1;
    Tensor out(as ? bv.shape() : av.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[as ? 0 : i] - bv[bs ? 0 : i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        detail::accum(*n.parents[0], n.grad);
        detail::accum(*n.parents[1], n.grad, -1.0);
    });
}

inline Var mul(Var a, Var b) {
    detail::check_same_or_scalar(a, b, "mul");
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    bool as = av.numel() == 1, bs = bv.numel() == 1;
    Tensor out(as ? bv.shape() : av.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[as ? 0 : i] * bv[bs ? 0 : i];
    return make_op(std::move(out), {a, b}, [as, bs](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.needs_grad) {
            pa.ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i)
                pa.grad[as ? 0 : i] += n.grad[i] * pb.val[bs ? 0 : i];
        }
        if (pb.needs_grad) {
            pb.ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i)
                pb.grad[bs ? 0 : i] += n.grad[i] * pa.val[as ? 0 : i];
        }
    });
}

inline Var div(Var a, Var b) {
    detail::check_same_or_scalar(a, b, "div");
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    bool as = av.numel() == 1, bs = bv.numel() == 1;
    Tensor out(as ? bv.shape() : av.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[as ? 0 : i] / bv[bs ? 0 : i];
    return make_op(std::move(out), {a, b}, [as, bs](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.needs_grad) {
            pa.ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i)
                pa.grad[as ? 0 : i] += n.grad[i] / pb.val[bs ? 0 : i];
        }
        if (pb.needs_grad) {
            pb.ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) {
                double bi = pb.val[bs ? 0 : i];
                pb.grad[bs ? 0 : i] -= n.grad[i] * pa.val[as ? 0 : i] / (bi * bi);
            }
        }
    });
}

inline Var scale(Var a, double k) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * k;
    return make_op(std::move(out), {a},
                   [k](Node& n) { detail::accum(*n.parents[0], n.grad, k); });
}

inline Var add_const(Var a, double k) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] + k;
    return make_op(std::move(out), {a}, [](Node& n) { detail::accum(*n.parents[0], n.grad); });
}

inline Var neg(Var a) { return scale(std::move(a), -1.0); }

inline Var operator+(Var a, Var b) { return add(std::move(a), std::move(b)); }
inline Var operator-(Var a, Var b) { return sub(std::move(a), std::move(b)); }
inline Var operator*(Var a, Var b) { return mul(std::move(a), std::move(b)); }
inline Var operator/(Var a, Var b) { return div(std::move(a), std::move(b)); }

// |x| with subgradient 0 at x == 0
inline Var abs_sg(Var a) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(a.val()[i]);
    return make_op(std::move(out), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            double x = p.val[i];
            p.grad[i] += n.grad[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
        }
    });
}

inline Var relu(Var a) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, a.val()[i]);
    return make_op(std::move(out), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            if (p.val[i] > 0.0) p.grad[i] += n.grad[i];
    });
}

inline Var clamp_min_c(Var a, double lo) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(lo, a.val()[i]);
    return make_op(std::move(out), {a}, [lo](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            if (p.val[i] > lo) p.grad[i] += n.grad[i];
    });
}

// x^e for x > 0 (callers clamp first when x may reach 0)
inline Var powc(Var a, double e) {
    Tensor out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::pow(a.val()[i], e);
    return make_op(std::move(out), {a}, [e](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            p.grad[i] += n.grad[i] * e * std::pow(p.val[i], e - 1.0);
    });
}

inline Var gelu(Var a) {
    static constexpr double kInvSqrt2 = 0.7071067811865475244;
    static constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    Tensor out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        double x = a.val()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return make_op(std::move(out), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            double x = p.val[i];
            double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            p.grad[i] += n.grad[i] * (cdf + x * pdf);
        }
    });
}

inline Var sum_all(Var a) {
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += a.val()[i];
    return make_op(Tensor::scalar(acc), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        double g = n.grad[0];
        for (int64_t i = 0; i < p.val.numel(); ++i) p.grad[i] += g;
    });
}

inline Var mean_all(Var a) {
    int64_t cnt = a.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < cnt; ++i) acc += a.val()[i];
    return make_op(Tensor::scalar(acc / static_cast<double>(cnt)), {a}, [cnt](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        double g = n.grad[0] / static_cast<double>(cnt);
        for (int64_t i = 0; i < cnt; ++i) p.grad[i] += g;
    });
}

// sum(w*x) / sum(w) with a constant weight tensor; used for masked losses
inline Var weighted_mean(Var a, const Tensor& w) {
    if (a.numel() != w.numel()) throw std::invalid_argument("weighted_mean: shape mismatch");
    double wsum = 0.0, acc = 0.0;
    for (int64_t i = 0; i < w.numel(); ++i) {
        wsum += w[i];
        acc += w[i] * a.val()[i];
    }
    if (wsum <= 0.0) throw std::invalid_argument("weighted_mean: zero total weight");
    auto wp = std::make_shared<Tensor>(w);
    return make_op(Tensor::scalar(acc / wsum), {a}, [wp, wsum](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        double g = n.grad[0] / wsum;
        for (int64_t i = 0; i < p.val.numel(); ++i) p.grad[i] += g * (*wp)[i];
    });
}

// single element as a scalar node
inline Var pick(Var a, int64_t idx) {
    if (idx < 0 || idx >= a.numel()) throw std::out_of_range("pick: index out of range");
    return make_op(Tensor::scalar(a.val()[idx]), {a}, [idx](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        p.grad[idx] += n.grad[0];
    });
}

inline Var add_n(std::vector<Var> xs) {
    if (xs.empty()) throw std::invalid_argument("add_n: empty");
    Var acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return acc;
}

inline Var detach(const Var& a) { return constant(a.val()); }

// [K, h, w, C] -> [h, w, C] slice along the leading dimension
inline Var slice_leading(Var a, int64_t k) {
    const Tensor& v = a.val();
    if (v.rank() != 4) throw std::invalid_argument("slice_leading: rank-4 tensor expected");
    if (k < 0 || k >= v.dim(0)) throw std::out_of_range("slice_leading: index out of range");
    int64_t block = v.numel() / v.dim(0);
    Tensor out({v.dim(1), v.dim(2), v.dim(3)});
    for (int64_t i = 0; i < block; ++i) out[i] = v[k * block + i];
    return make_op(std::move(out), {a}, [k, block](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        for (int64_t i = 0; i < block; ++i) p.grad[k * block + i] += n.grad[i];
    });
}

// concatenate [H, W, C_i] along channels
inline Var concat_c(std::vector<Var> xs) {
    if (xs.empty()) throw std::invalid_argument("concat_c: empty");
    int64_t h = xs[0].shape()[0], w = xs[0].shape()[1], ctot = 0;
    for (const Var& x : xs) {
        if (x.val().rank() != 3 || x.shape()[0] != h || x.shape()[1] != w)
            throw std::invalid_argument("concat_c: spatial shape mismatch");
        ctot += x.shape()[2];
    }
    Tensor out({h, w, ctot});
    std::vector<int64_t> offs;
    int64_t off = 0;
    for (const Var& x : xs) {
        offs.push_back(off);
        int64_t c = x.shape()[2];
        for (int64_t p = 0; p < h * w; ++p)
            for (int64_t k = 0; k < c; ++k) out[p * ctot + off + k] = x.val()[p * c + k];
        off += c;
    }
    return make_op(std::move(out), std::move(xs), [offs, h, w, ctot](Node& n) {
        for (size_t s = 0; s < n.parents.size(); ++s) {
            Node& p = *n.parents[s];
            if (!p.needs_grad) continue;
            p.ensure_grad();
            int64_t c = p.val.shape()[2];
            for (int64_t px = 0; px < h * w; ++px)
                for (int64_t k = 0; k < c; ++k)
                    p.grad[px * c + k] += n.grad[px * ctot + offs[s] + k];
        }
    });
}

// channels [c0, c1) of an [H, W, C] tensor
inline Var slice_c(Var a, int64_t c0, int64_t c1) {
    const Tensor& v = a.val();
    if (v.rank() != 3) throw std::invalid_argument("slice_c: rank-3 tensor expected");
    int64_t h = v.dim(0), w = v.dim(1), c = v.dim(2);
    if (c0 < 0 || c1 > c || c0 >= c1) throw std::out_of_range("slice_c: bad channel range");
    Tensor out({h, w, c1 - c0});
    int64_t sc = c1 - c0;
    for (int64_t p = 0; p < h * w; ++p)
        for (int64_t k = 0; k < sc; ++k) out[p * sc + k] = v[p * c + c0 + k];
    return make_op(std::move(out), {a}, [c0, sc, c, h, w](Node& n) {
        Node& p = *n.parents[0];
        if (!p.needs_grad) return;
        p.ensure_grad();
        for (int64_t px = 0; px < h * w; ++px)
            for (int64_t k = 0; k < sc; ++k) p.grad[px * c + c0 + k] += n.grad[px * sc + k];
    });
}

}  // namespace msnerv
