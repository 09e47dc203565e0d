#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "echo/common.hpp"

namespace echo {

class Tensor;

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    std::vector<Tensor> inputs;
    std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into inputs
    std::uint64_t seq = 0;

    bool has_grad() const { return !grad.empty(); }
    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

inline std::uint64_t next_seq() {
    thread_local std::uint64_t seq = 0;
    return ++seq;
}

}  // namespace detail

/// Dense row-major float64 tensor with reverse-mode autodiff.
///
/// Tensor is a cheap handle: copies share the same storage and tape node,
/// which is what parameter updates and graph recording need. Every operation
/// evaluates eagerly and, when any input has requires_grad, records a
/// backward closure. backward() accumulates gradients until zero_grad().
class Tensor {
public:
    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (echo::numel(shape) != static_cast<std::int64_t>(values.size())) {
            throw shape_error("tensor: shape " + shape_str(shape) + " does not hold " +
                              std::to_string(values.size()) + " values");
        }
        for (auto d : shape) {
            if (d <= 0) throw shape_error("tensor: non-positive dimension in " + shape_str(shape));
        }
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->value = std::move(values);
        node->requires_grad = requires_grad;
        node->seq = detail::next_seq();
        return Tensor(std::move(node));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> v(static_cast<std::size_t>(echo::numel(shape)), 0.0);
        return from_data(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor full(Shape shape, double fill, bool requires_grad = false) {
        std::vector<double> v(static_cast<std::size_t>(echo::numel(shape)), fill);
        return from_data(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
        std::vector<double> v(static_cast<std::size_t>(echo::numel(shape)));
        for (auto& x : v) x = rand_normal(rng, stddev);
        return from_data(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi,
                          bool requires_grad = false) {
        std::vector<double> v(static_cast<std::size_t>(echo::numel(shape)));
        for (auto& x : v) x = rand_uniform(rng, lo, hi);
        return from_data(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor identity(std::int64_t n, bool requires_grad = false) {
        Tensor t = zeros({n, n}, requires_grad);
        for (std::int64_t i = 0; i < n; ++i) t.values()[i * n + i] = 1.0;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return check().shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(check().value.size()); }
    std::int64_t dim(std::size_t i) const { return check().shape.at(i); }
    std::size_t rank() const { return check().shape.size(); }

    std::vector<double>& values() { return check().value; }
    const std::vector<double>& values() const { return check().value; }

    bool requires_grad() const { return check().requires_grad; }
    void set_requires_grad(bool rg) { check().requires_grad = rg; }

    bool has_grad() const { return check().has_grad(); }
    const std::vector<double>& grad() const {
        if (!check().has_grad()) throw contract_error("tensor: gradient not populated");
        return check().grad;
    }
    std::vector<double>& grad_buffer() { return check().grad_buffer(); }
    void zero_grad() { check().grad.clear(); }

    double item() const {
        if (numel() != 1) {
            throw contract_error("tensor: item() on non-scalar " + shape_str(shape()));
        }
        return check().value[0];
    }

    /// Value at a row-major 2-D index.
    double at(std::int64_t r, std::int64_t c) const {
        const auto& n = check();
        if (n.shape.size() != 2) throw contract_error("tensor: at(r,c) needs rank 2");
        return n.value[static_cast<std::size_t>(r * n.shape[1] + c)];
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate across
    /// repeated calls until the tensors involved are zero_grad()ed.
    void backward() const {
        detail::Node* root = node_.get();
        if (!root) throw contract_error("backward: undefined tensor");
        if (root->value.size() != 1) {
            throw contract_error("backward: loss must be scalar, got " + shape_str(root->shape));
        }
        // Iterative postorder over input edges: producers before consumers.
        std::vector<detail::Node*> order;
        std::unordered_set<detail::Node*> visited{root};
        struct Frame {
            detail::Node* n;
            std::size_t next = 0;
        };
        std::vector<Frame> stack{{root}};
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < f.n->inputs.size()) {
                detail::Node* child = f.n->inputs[f.next++].node_.get();
                if (visited.insert(child).second) stack.push_back({child});
            } else {
                order.push_back(f.n);
                stack.pop_back();
            }
        }
        // Interior grads are scratch for this sweep; only leaf grads persist
        // and accumulate across repeated backward() calls.
        for (detail::Node* n : order) {
            if (n->backward_fn && n->has_grad()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
        }
        root->grad_buffer()[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node* n = *it;
            if (n->backward_fn && n->requires_grad && n->has_grad()) n->backward_fn(*n);
        }
    }

    /// Number of nodes in the recorded graph below this tensor (tests/diagnostics).
    std::size_t graph_size() const {
        std::unordered_set<const detail::Node*> seen;
        std::vector<const detail::Node*> stack{node_.get()};
        while (!stack.empty()) {
            const detail::Node* n = stack.back();
            stack.pop_back();
            if (!n || !seen.insert(n).second) continue;
            for (const auto& in : n->inputs) stack.push_back(in.node_.get());
        }
        return seen.size();
    }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    detail::Node& check() {
        if (!node_) throw contract_error("tensor: undefined");
        return *node_;
    }
    const detail::Node& check() const {
        if (!node_) throw contract_error("tensor: undefined");
        return *node_;
    }

    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                          std::function<void(detail::Node&)> backward_fn);
};

/// Record one eager op: value already computed, closure wired if needed.
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                      std::function<void(detail::Node&)> backward_fn) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->seq = detail::next_seq();
    bool rg = false;
    for (const auto& in : inputs) rg = rg || in.requires_grad();
    node->requires_grad = rg;
    if (rg) {
        node->inputs = std::move(inputs);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

namespace detail {

inline void axpy(std::vector<double>& acc, double a, const std::vector<double>& x) {
    for (std::size_t i = 0; i < x.size(); ++i) acc[i] += a * x[i];
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("add", a, b);
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
    Tensor ta = a, tb = b;
    return make_op(a.shape(), std::move(out), {a, b}, [ta, tb](detail::Node& self) mutable {
        if (ta.requires_grad()) detail::axpy(ta.grad_buffer(), 1.0, self.grad);
        if (tb.requires_grad()) detail::axpy(tb.grad_buffer(), 1.0, self.grad);
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("sub", a, b);
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i];
    Tensor ta = a, tb = b;
    return make_op(a.shape(), std::move(out), {a, b}, [ta, tb](detail::Node& self) mutable {
        if (ta.requires_grad()) detail::axpy(ta.grad_buffer(), 1.0, self.grad);
        if (tb.requires_grad()) detail::axpy(tb.grad_buffer(), -1.0, self.grad);
    });
}

/// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("mul", a, b);
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
    Tensor ta = a, tb = b;
    return make_op(a.shape(), std::move(out), {a, b}, [ta, tb](detail::Node& self) mutable {
        if (ta.requires_grad()) {
            auto& g = ta.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * tb.values()[i];
        }
        if (tb.requires_grad()) {
            auto& g = tb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ta.values()[i];
        }
    });
}

/// scale * a + shift, elementwise with constants.
inline Tensor affine(const Tensor& a, double scale, double shift) {
    std::vector<double> out(a.values());
    for (auto& v : out) v = scale * v + shift;
    Tensor ta = a;
    return make_op(a.shape(), std::move(out), {a}, [ta, scale](detail::Node& self) mutable {
        detail::axpy(ta.grad_buffer(), scale, self.grad);
    });
}

inline Tensor scale(const Tensor& a, double s) { return affine(a, s, 0.0); }

/// x[T,d] + b[d], broadcast over the leading axis. The only broadcast form.
inline Tensor add_row_bias(const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.rank() != 1 || x.dim(1) != b.dim(0)) {
        throw shape_error("add_row_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    }
    const std::int64_t rows = x.dim(0), cols = x.dim(1);
    std::vector<double> out(x.values());
    for (std::int64_t t = 0; t < rows; ++t)
        for (std::int64_t c = 0; c < cols; ++c) out[t * cols + c] += b.values()[c];
    Tensor tx = x, tb = b;
    return make_op(x.shape(), std::move(out), {x, b},
                   [tx, tb, rows, cols](detail::Node& self) mutable {
                       if (tx.requires_grad()) detail::axpy(tx.grad_buffer(), 1.0, self.grad);
                       if (tb.requires_grad()) {
                           auto& g = tb.grad_buffer();
                           for (std::int64_t t = 0; t < rows; ++t)
                               for (std::int64_t c = 0; c < cols; ++c)
                                   g[c] += self.grad[t * cols + c];
                       }
                   });
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.values());
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    Tensor tx = x;
    return make_op(x.shape(), std::move(out), {x}, [tx](detail::Node& self) mutable {
        auto& g = tx.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (tx.values()[i] > 0.0) g[i] += self.grad[i];
    });
}

inline Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.values());
    for (auto& v : out) v = 1.0 / (1.0 + std::exp(-v));
    Tensor tx = x;
    return make_op(x.shape(), std::move(out), {x}, [tx](detail::Node& self) mutable {
        auto& g = tx.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = self.value[i];
            g[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

/// Sum of all elements -> scalar.
inline Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.values()) total += v;
    Tensor tx = x;
    return make_op({1}, {total}, {x}, [tx](detail::Node& self) mutable {
        auto& g = tx.grad_buffer();
        const double gv = self.grad[0];
        for (auto& v : g) v += gv;
    });
}

inline Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw shape_error("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
    }
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::int64_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
        }
    }
    mac::add(static_cast<std::uint64_t>(m) * k * n);
    Tensor ta = a, tb = b;
    return make_op({m, n}, std::move(out), {a, b}, [ta, tb, m, k, n](detail::Node& self) mutable {
        if (ta.requires_grad()) {
            // dA = dOut * B^T
            auto& g = ta.grad_buffer();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j) {
                    const double go = self.grad[i * n + j];
                    for (std::int64_t p = 0; p < k; ++p) g[i * k + p] += go * tb.values()[p * n + j];
                }
        }
        if (tb.requires_grad()) {
            // dB = A^T * dOut
            auto& g = tb.grad_buffer();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    const double av_ip = ta.values()[i * k + p];
                    for (std::int64_t j = 0; j < n; ++j) g[p * n + j] += av_ip * self.grad[i * n + j];
                }
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw shape_error("transpose: needs rank 2, got " + shape_str(a.shape()));
    const std::int64_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n));
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
    Tensor ta = a;
    return make_op({n, m}, std::move(out), {a}, [ta, m, n](detail::Node& self) mutable {
        auto& g = ta.grad_buffer();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    });
}

inline Tensor slice_rows(const Tensor& a, std::int64_t lo, std::int64_t hi) {
    if (a.rank() != 2) throw shape_error("slice_rows: needs rank 2");
    if (lo < 0 || hi > a.dim(0) || lo >= hi) {
        throw contract_error("slice_rows: bad range [" + std::to_string(lo) + "," +
                             std::to_string(hi) + ") for " + shape_str(a.shape()));
    }
    const std::int64_t cols = a.dim(1);
    std::vector<double> out(a.values().begin() + lo * cols, a.values().begin() + hi * cols);
    Tensor ta = a;
    return make_op({hi - lo, cols}, std::move(out), {a},
                   [ta, lo, cols](detail::Node& self) mutable {
                       auto& g = ta.grad_buffer();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[static_cast<std::size_t>(lo * cols) + i] += self.grad[i];
                   });
}

inline Tensor slice_cols(const Tensor& a, std::int64_t lo, std::int64_t hi) {
    if (a.rank() != 2) throw shape_error("slice_cols: needs rank 2");
    if (lo < 0 || hi > a.dim(1) || lo >= hi) {
        throw contract_error("slice_cols: bad range [" + std::to_string(lo) + "," +
                             std::to_string(hi) + ") for " + shape_str(a.shape()));
    }
    const std::int64_t rows = a.dim(0), cols = a.dim(1), w = hi - lo;
    std::vector<double> out(static_cast<std::size_t>(rows * w));
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < w; ++c) out[r * w + c] = a.values()[r * cols + lo + c];
    Tensor ta = a;
    return make_op({rows, w}, std::move(out), {a},
                   [ta, rows, cols, lo, w](detail::Node& self) mutable {
                       auto& g = ta.grad_buffer();
                       for (std::int64_t r = 0; r < rows; ++r)
                           for (std::int64_t c = 0; c < w; ++c)
                               g[r * cols + lo + c] += self.grad[r * w + c];
                   });
}

inline Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw contract_error("concat_cols: no inputs");
    const std::int64_t rows = parts[0].dim(0);
    std::int64_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != rows) {
            throw shape_error("concat_cols: row mismatch " + shape_str(p.shape()));
        }
        total += p.dim(1);
    }
    std::vector<double> out(static_cast<std::size_t>(rows * total));
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t w = p.dim(1);
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < w; ++c) out[r * total + off + c] = p.values()[r * w + c];
        off += w;
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    auto inputs_copy = inputs;
    return make_op({rows, total}, std::move(out), std::move(inputs),
                   [inputs_copy, rows, total](detail::Node& self) mutable {
                       std::int64_t off = 0;
                       for (auto& p : inputs_copy) {
                           const std::int64_t w = p.dim(1);
                           if (p.requires_grad()) {
                               auto& g = p.grad_buffer();
                               for (std::int64_t r = 0; r < rows; ++r)
                                   for (std::int64_t c = 0; c < w; ++c)
                                       g[r * w + c] += self.grad[r * total + off + c];
                           }
                           off += w;
                       }
                   });
}

inline Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw contract_error("concat_rows: no inputs");
    const std::int64_t cols = parts[0].dim(1);
    std::int64_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != cols) {
            throw shape_error("concat_rows: column mismatch " + shape_str(p.shape()));
        }
        total += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(total * cols));
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    auto inputs_copy = inputs;
    return make_op({total, cols}, std::move(out), std::move(inputs),
                   [inputs_copy](detail::Node& self) mutable {
                       std::size_t off = 0;
                       for (auto& p : inputs_copy) {
                           const std::size_t n = p.values().size();
                           if (p.requires_grad()) {
                               auto& g = p.grad_buffer();
                               for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
                           }
                           off += n;
                       }
                   });
}

/// Stack scalar tensors into a vector [n].
inline Tensor stack_scalars(std::span<const Tensor> scalars) {
    if (scalars.empty()) throw contract_error("stack_scalars: no inputs");
    std::vector<double> out;
    out.reserve(scalars.size());
    for (const auto& s : scalars) out.push_back(s.item());
    std::vector<Tensor> inputs(scalars.begin(), scalars.end());
    auto inputs_copy = inputs;
    return make_op({static_cast<std::int64_t>(scalars.size())}, std::move(out), std::move(inputs),
                   [inputs_copy](detail::Node& self) mutable {
                       for (std::size_t i = 0; i < inputs_copy.size(); ++i)
                           if (inputs_copy[i].requires_grad())
                               inputs_copy[i].grad_buffer()[0] += self.grad[i];
                   });
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

namespace detail {

// Shared softmax-with-axis machinery: iterates all 1-D slices along `axis`.
template <typename Fn>
void for_each_slice(const Shape& shape, int axis, Fn&& fn) {
    const int rank = static_cast<int>(shape.size());
    std::int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < rank; ++i) inner *= shape[i];
    for (int i = 0; i < axis; ++i) outer *= shape[i];
    const std::int64_t len = shape[axis];
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) fn(o * len * inner + in, inner, len);
}

}  // namespace detail

/// Numerically stable softmax along `axis` (negative axes count from the back).
inline Tensor softmax(const Tensor& x, int axis = -1) {
    const int rank = static_cast<int>(x.rank());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw contract_error("softmax: bad axis");
    for (double v : x.values())
        if (std::isnan(v)) throw numeric_error("softmax: NaN input");
    std::vector<double> out(x.values());
    detail::for_each_slice(x.shape(), axis, [&](std::int64_t base, std::int64_t stride,
                                                std::int64_t len) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t i = 0; i < len; ++i) mx = std::max(mx, out[base + i * stride]);
        double total = 0.0;
        for (std::int64_t i = 0; i < len; ++i) {
            double e = std::exp(out[base + i * stride] - mx);
            out[base + i * stride] = e;
            total += e;
        }
        for (std::int64_t i = 0; i < len; ++i) out[base + i * stride] /= total;
    });
    Tensor tx = x;
    const Shape shp = x.shape();
    return make_op(shp, std::move(out), {x}, [tx, shp, axis](detail::Node& self) mutable {
        auto& g = tx.grad_buffer();
        detail::for_each_slice(shp, axis, [&](std::int64_t base, std::int64_t stride,
                                              std::int64_t len) {
            double dot = 0.0;
            for (std::int64_t i = 0; i < len; ++i)
                dot += self.grad[base + i * stride] * self.value[base + i * stride];
            for (std::int64_t i = 0; i < len; ++i) {
                const std::int64_t idx = base + i * stride;
                g[idx] += self.value[idx] * (self.grad[idx] - dot);
            }
        });
    });
}

/// Row-wise softmax of [T,S] scores with a boolean keep-mask; masked entries get
/// exactly zero weight and receive no gradient. Every row must keep >= 1 entry.
inline Tensor masked_softmax_rows(const Tensor& scores, const std::vector<std::uint8_t>& keep) {
    if (scores.rank() != 2) throw shape_error("masked_softmax_rows: needs rank 2");
    const std::int64_t rows = scores.dim(0), cols = scores.dim(1);
    if (static_cast<std::int64_t>(keep.size()) != rows * cols) {
        throw shape_error("masked_softmax_rows: mask size mismatch");
    }
    for (double v : scores.values())
        if (std::isnan(v)) throw numeric_error("masked_softmax_rows: NaN input");
    std::vector<double> out(static_cast<std::size_t>(rows * cols), 0.0);
    for (std::int64_t r = 0; r < rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::int64_t c = 0; c < cols; ++c) {
            if (keep[r * cols + c]) {
                any = true;
                mx = std::max(mx, scores.values()[r * cols + c]);
            }
        }
        if (!any) {
            throw contract_error("masked_softmax_rows: row " + std::to_string(r) +
                                 " has no attendable key");
        }
        double total = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) {
            if (keep[r * cols + c]) {
                double e = std::exp(scores.values()[r * cols + c] - mx);
                out[r * cols + c] = e;
                total += e;
            }
        }
        for (std::int64_t c = 0; c < cols; ++c) out[r * cols + c] /= total;
    }
    Tensor ts = scores;
    auto mask = keep;
    return make_op(scores.shape(), std::move(out), {scores},
                   [ts, mask, rows, cols](detail::Node& self) mutable {
                       auto& g = ts.grad_buffer();
                       for (std::int64_t r = 0; r < rows; ++r) {
                           double dot = 0.0;
                           for (std::int64_t c = 0; c < cols; ++c)
                               dot += self.grad[r * cols + c] * self.value[r * cols + c];
                           for (std::int64_t c = 0; c < cols; ++c) {
                               if (!mask[r * cols + c]) continue;
                               const std::int64_t idx = r * cols + c;
                               g[idx] += self.value[idx] * (self.grad[idx] - dot);
                           }
                       }
                   });
}

/// Row-wise log-softmax of [T,V]; rows of the result exp-sum to 1.
inline Tensor log_softmax_rows(const Tensor& x) {
    if (x.rank() != 2) throw shape_error("log_softmax_rows: needs rank 2");
    const std::int64_t rows = x.dim(0), cols = x.dim(1);
    std::vector<double> out(x.values());
    for (std::int64_t r = 0; r < rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t c = 0; c < cols; ++c) mx = std::max(mx, out[r * cols + c]);
        double total = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) total += std::exp(out[r * cols + c] - mx);
        const double lse = mx + std::log(total);
        for (std::int64_t c = 0; c < cols; ++c) out[r * cols + c] -= lse;
    }
    Tensor tx = x;
    return make_op(x.shape(), std::move(out), {x}, [tx, rows, cols](detail::Node& self) mutable {
        auto& g = tx.grad_buffer();
        for (std::int64_t r = 0; r < rows; ++r) {
            double gsum = 0.0;
            for (std::int64_t c = 0; c < cols; ++c) gsum += self.grad[r * cols + c];
            for (std::int64_t c = 0; c < cols; ++c) {
                const std::int64_t idx = r * cols + c;
                g[idx] += self.grad[idx] - std::exp(self.value[idx]) * gsum;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace detail {

// 'same' zero padding, left-biased for even kernels: output length equals T.
inline std::int64_t conv_pad_left(std::int64_t k) { return k / 2; }

}  // namespace detail

/// Per-channel 1-D convolution of x[T,d] with kernel[k,d], 'same' zero padding
/// (left-biased for even k).
inline Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel) {
    if (x.rank() != 2 || kernel.rank() != 2 || x.dim(1) != kernel.dim(1)) {
        throw shape_error("depthwise_conv1d: " + shape_str(x.shape()) + " with kernel " +
                          shape_str(kernel.shape()));
    }
    const std::int64_t T = x.dim(0), d = x.dim(1), k = kernel.dim(0);
    if (k < 1) throw shape_error("depthwise_conv1d: empty kernel");
    // 'same' padding adds k-1 zeros, so any kernel fits once T >= 1; the
    // kernel-exceeds-padded-input case is exactly the empty input, which
    // tensor construction already rejects.
    const std::int64_t pl = detail::conv_pad_left(k);
    std::vector<double> out(static_cast<std::size_t>(T * d), 0.0);
    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t j = 0; j < k; ++j) {
            const std::int64_t s = t + j - pl;
            if (s < 0 || s >= T) continue;
            for (std::int64_t c = 0; c < d; ++c)
                out[t * d + c] += kernel.values()[j * d + c] * x.values()[s * d + c];
        }
    }
    mac::add(static_cast<std::uint64_t>(T) * k * d);
    Tensor tx = x, tk = kernel;
    return make_op(x.shape(), std::move(out), {x, kernel},
                   [tx, tk, T, d, k, pl](detail::Node& self) mutable {
                       for (std::int64_t t = 0; t < T; ++t) {
                           for (std::int64_t j = 0; j < k; ++j) {
                               const std::int64_t s = t + j - pl;
                               if (s < 0 || s >= T) continue;
                               if (tx.requires_grad()) {
                                   auto& g = tx.grad_buffer();
                                   for (std::int64_t c = 0; c < d; ++c)
                                       g[s * d + c] += self.grad[t * d + c] * tk.values()[j * d + c];
                               }
                               if (tk.requires_grad()) {
                                   auto& g = tk.grad_buffer();
                                   for (std::int64_t c = 0; c < d; ++c)
                                       g[j * d + c] += self.grad[t * d + c] * tx.values()[s * d + c];
                               }
                           }
                       }
                   });
}

/// Depthwise conv followed by a 1x1 pointwise mix across channels.
inline Tensor depthwise_separable_conv1d(const Tensor& x, const Tensor& depthwise_kernel,
                                         const Tensor& pointwise) {
    if (pointwise.rank() != 2 || pointwise.dim(0) != x.dim(1) || pointwise.dim(1) != x.dim(1)) {
        throw shape_error("depthwise_separable_conv1d: pointwise " + shape_str(pointwise.shape()) +
                          " does not match channels of " + shape_str(x.shape()));
    }
    return matmul(depthwise_conv1d(x, depthwise_kernel), pointwise);
}

// ---------------------------------------------------------------------------
// Layer normalization
// ---------------------------------------------------------------------------

/// Row-wise layer norm of x[T,d] with learnable gain and bias [d].
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    if (x.rank() != 2 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.dim(1) ||
        bias.dim(0) != x.dim(1)) {
        throw shape_error("layer_norm: " + shape_str(x.shape()) + " with gain " +
                          shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
    }
    const std::int64_t T = x.dim(0), d = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(T * d));
    std::vector<double> xhat(static_cast<std::size_t>(T * d));
    std::vector<double> rstd(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t) {
        double mu = 0.0;
        for (std::int64_t c = 0; c < d; ++c) mu += x.values()[t * d + c];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t c = 0; c < d; ++c) {
            const double diff = x.values()[t * d + c] - mu;
            var += diff * diff;
        }
        var /= static_cast<double>(d);
        const double r = 1.0 / std::sqrt(var + eps);
        rstd[t] = r;
        for (std::int64_t c = 0; c < d; ++c) {
            const double xh = (x.values()[t * d + c] - mu) * r;
            xhat[t * d + c] = xh;
            out[t * d + c] = gain.values()[c] * xh + bias.values()[c];
        }
    }
    Tensor tx = x, tg = gain, tb = bias;
    return make_op(x.shape(), std::move(out), {x, gain, bias},
                   [tx, tg, tb, T, d, xhat = std::move(xhat),
                    rstd = std::move(rstd)](detail::Node& self) mutable {
                       for (std::int64_t t = 0; t < T; ++t) {
                           if (tg.requires_grad()) {
                               auto& gg = tg.grad_buffer();
                               for (std::int64_t c = 0; c < d; ++c)
                                   gg[c] += self.grad[t * d + c] * xhat[t * d + c];
                           }
                           if (tb.requires_grad()) {
                               auto& gb = tb.grad_buffer();
                               for (std::int64_t c = 0; c < d; ++c) gb[c] += self.grad[t * d + c];
                           }
                           if (tx.requires_grad()) {
                               auto& gx = tx.grad_buffer();
                               double m1 = 0.0, m2 = 0.0;
                               for (std::int64_t c = 0; c < d; ++c) {
                                   const double gxh =
                                       self.grad[t * d + c] * tg.values()[c];
                                   m1 += gxh;
                                   m2 += gxh * xhat[t * d + c];
                               }
                               m1 /= static_cast<double>(d);
                               m2 /= static_cast<double>(d);
                               for (std::int64_t c = 0; c < d; ++c) {
                                   const double gxh =
                                       self.grad[t * d + c] * tg.values()[c];
                                   gx[t * d + c] +=
                                       (gxh - m1 - xhat[t * d + c] * m2) * rstd[t];
                               }
                           }
                       }
                   });
}

}  // namespace echo
