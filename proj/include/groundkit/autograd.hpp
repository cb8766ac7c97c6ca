#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every tensor is 2D (rows x cols); scalars are 1x1.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace groundkit::ag {

template <typename T>
struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    // Set on leaves when a backward pass deposits gradient into them.
    bool touched = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    size_t size() const { return value.size(); }
    T* grad_buffer() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
        return grad.data();
    }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

inline bool grad_enabled() { return detail::grad_enabled; }

class NoGradGuard {
  public:
    NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

template <typename T>
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    static Tensor constant(int rows, int cols, std::vector<T> values) {
        if (values.size() != static_cast<size_t>(rows) * cols) throw std::invalid_argument("tensor size mismatch");
        auto n = std::make_shared<Node<T>>();
        n->rows = rows;
        n->cols = cols;
        n->value = std::move(values);
        return Tensor(std::move(n));
    }
    static Tensor zeros(int rows, int cols) {
        return constant(rows, cols, std::vector<T>(static_cast<size_t>(rows) * cols, T(0)));
    }
    static Tensor full(int rows, int cols, T v) {
        return constant(rows, cols, std::vector<T>(static_cast<size_t>(rows) * cols, v));
    }
    static Tensor scalar(T v) { return constant(1, 1, {v}); }
    // Trainable leaf.
    static Tensor parameter(int rows, int cols, std::vector<T> values) {
        Tensor t = constant(rows, cols, std::move(values));
        t.node_->requires_grad = true;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    int rows() const { return node_->rows; }
    int cols() const { return node_->cols; }
    size_t size() const { return node_->value.size(); }
    const std::vector<T>& values() const { return node_->value; }
    std::vector<T>& mutable_values() { return node_->value; }
    const T* data() const { return node_->value.data(); }
    T operator()(int r, int c) const { return node_->value[static_cast<size_t>(r) * node_->cols + c]; }
    T item() const {
        if (size() != 1) throw std::logic_error("item() on a non-scalar tensor");
        return node_->value[0];
    }
    const std::vector<T>& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    bool touched() const { return node_->touched; }
    void zero_grad() {
        node_->grad.clear();
        node_->touched = false;
    }
    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& ptr() const { return node_; }

  private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_result(int rows, int cols, std::vector<T> value, std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward) {
    auto n = std::make_shared<Node<T>>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(value);
    if (detail::grad_enabled) {
        const bool any = std::any_of(parents.begin(), parents.end(), [](const Tensor<T>& p) {
            return p.requires_grad();
        });
        if (any) {
            n->requires_grad = true;
            n->parents.reserve(parents.size());
            for (auto& p : parents) n->parents.push_back(p.ptr());
            n->backward_fn = std::move(backward);
        }
    }
    return Tensor<T>(std::move(n));
}

// Gradient buffer of parent i, or nullptr when it does not need one.
template <typename T>
T* pgrad(Node<T>& self, size_t i) {
    Node<T>& p = *self.parents[i];
    if (!p.requires_grad) return nullptr;
    if (p.parents.empty()) p.touched = true;
    return p.grad_buffer();
}

inline void check(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace detail

// Backpropagates d(root)/d(.) into every reachable node with requires_grad.
// `seed` scales the root gradient (used to average over a batch).
template <typename T>
void backward(const Tensor<T>& root, T seed = T(1)) {
    if (!root.requires_grad()) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, size_t>> stack{{root.node(), 0}};
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node<T>* p = n->parents[idx++].get();
            if (p->requires_grad && !p->parents.empty() && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    T* g = root.node()->grad_buffer();
    for (size_t i = 0; i < root.size(); ++i) g[i] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
    }
    // Interior gradients are no longer needed once propagated.
    for (Node<T>* n : order) {
        if (n != root.node()) n->grad.clear();
    }
}

// C = A B, A: m x k, B: k x n
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check(a.cols() == b.rows(), "matmul shape mismatch");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<T> out(static_cast<size_t>(m) * n, T(0));
    const T* A = a.data();
    const T* B = b.data();
    for (int i = 0; i < m; ++i) {
        T* crow = out.data() + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = A[static_cast<size_t>(i) * k + p];
            const T* brow = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return detail::make_result<T>(m, n, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
        const T* G = self.grad.data();
        const T* A = self.parents[0]->value.data();
        const T* B = self.parents[1]->value.data();
        if (T* gA = detail::pgrad(self, 0)) {
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    T acc = 0;
                    const T* grow = G + static_cast<size_t>(i) * n;
                    const T* brow = B + static_cast<size_t>(p) * n;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    gA[static_cast<size_t>(i) * k + p] += acc;
                }
        }
        if (T* gB = detail::pgrad(self, 1)) {
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    const T av = A[static_cast<size_t>(i) * k + p];
                    const T* grow = G + static_cast<size_t>(i) * n;
                    T* gbrow = gB + static_cast<size_t>(p) * n;
                    for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
        }
    });
}

// C = A B^T, A: m x k, B: n x k
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check(a.cols() == b.cols(), "matmul_nt shape mismatch");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<T> out(static_cast<size_t>(m) * n);
    const T* A = a.data();
    const T* B = b.data();
    for (int i = 0; i < m; ++i) {
        const T* arow = A + static_cast<size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const T* brow = B + static_cast<size_t>(j) * k;
            T acc = 0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            out[static_cast<size_t>(i) * n + j] = acc;
        }
    }
    return detail::make_result<T>(m, n, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
        const T* G = self.grad.data();
        const T* A = self.parents[0]->value.data();
        const T* B = self.parents[1]->value.data();
        if (T* gA = detail::pgrad(self, 0)) {
            for (int i = 0; i < m; ++i) {
                T* garow = gA + static_cast<size_t>(i) * k;
                for (int j = 0; j < n; ++j) {
                    const T g = G[static_cast<size_t>(i) * n + j];
                    if (g == T(0)) continue;
                    const T* brow = B + static_cast<size_t>(j) * k;
                    for (int p = 0; p < k; ++p) garow[p] += g * brow[p];
                }
            }
        }
        if (T* gB = detail::pgrad(self, 1)) {
            for (int i = 0; i < m; ++i) {
                const T* arow = A + static_cast<size_t>(i) * k;
                for (int j = 0; j < n; ++j) {
                    const T g = G[static_cast<size_t>(i) * n + j];
                    if (g == T(0)) continue;
                    T* gbrow = gB + static_cast<size_t>(j) * k;
                    for (int p = 0; p < k; ++p) gbrow[p] += g * arow[p];
                }
            }
        }
    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add shape mismatch");
    std::vector<T> out(a.values());
    for (size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
    return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {a, b}, [](Node<T>& self) {
        for (size_t p = 0; p < 2; ++p)
            if (T* g = detail::pgrad(self, p))
                for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "sub shape mismatch");
    std::vector<T> out(a.values());
    for (size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i];
    return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {a, b}, [](Node<T>& self) {
        if (T* g = detail::pgrad(self, 0))
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (T* g = detail::pgrad(self, 1))
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    });
}

// a (m x n) + row vector b (1 x n) broadcast over rows
template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check(b.rows() == 1 && b.cols() == a.cols(), "add_row shape mismatch");
    const int m = a.rows(), n = a.cols();
    std::vector<T> out(a.values());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += b.values()[static_cast<size_t>(j)];
    return detail::make_result<T>(m, n, std::move(out), {a, b}, [m, n](Node<T>& self) {
        if (T* g = detail::pgrad(self, 0))
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (T* g = detail::pgrad(self, 1))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) g[j] += self.grad[static_cast<size_t>(i) * n + j];
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "mul shape mismatch");
    std::vector<T> out(a.values());
    for (size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
    return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {a, b}, [](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (T* g = detail::pgrad(self, 0))
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
        if (T* g = detail::pgrad(self, 1))
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    std::vector<T> out(a.values());
    for (auto& v : out) v *= s;
    return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {a}, [s](Node<T>& self) {
        if (T* g = detail::pgrad(self, 0))
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.values());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {a}, [](Node<T>& self) {
        if (T* g = detail::pgrad(self, 0)) {
            const auto& x = self.parents[0]->value;
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (x[i] > T(0)) g[i] += self.grad[i];
        }
    });
}

// tanh approximation of GELU
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T c = T(0.7978845608028654);
    constexpr T k = T(0.044715);
    std::vector<T> out(a.size());
    const auto& x = a.values();
    for (size_t i = 0; i < out.size(); ++i) {
        const T u = c * (x[i] + k * x[i] * x[i] * x[i]);
        out[i] = T(0.5) * x[i] * (T(1) + std::tanh(u));
    }
    return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {a}, [](Node<T>& self) {
        if (T* g = detail::pgrad(self, 0)) {
            const auto& x = self.parents[0]->value;
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const T u = c * (x[i] + k * x[i] * x[i] * x[i]);
                const T t = std::tanh(u);
                const T du = c * (T(1) + T(3) * k * x[i] * x[i]);
                const T d = T(0.5) * (T(1) + t) + T(0.5) * x[i] * (T(1) - t * t) * du;
                g[i] += self.grad[i] * d;
            }
        }
    });
}

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(a.values()[i]);
    return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {a}, [](Node<T>& self) {
        if (T* g = detail::pgrad(self, 0))
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const T s = self.value[i];
                g[i] += self.grad[i] * s * (T(1) - s);
            }
    });
}

// Row-wise layer normalization with learned gain and bias (1 x n each).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    const int m = x.rows(), n = x.cols();
    detail::check(gamma.cols() == n && beta.cols() == n && gamma.rows() == 1 && beta.rows() == 1,
                  "layer_norm parameter shape mismatch");
    std::vector<T> out(x.size());
    std::vector<T> xhat(x.size());
    std::vector<T> inv_std(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        const T* row = x.data() + static_cast<size_t>(i) * n;
        T mean = 0;
        for (int j = 0; j < n; ++j) mean += row[j];
        mean /= T(n);
        T var = 0;
        for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= T(n);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = is;
        for (int j = 0; j < n; ++j) {
            const size_t idx = static_cast<size_t>(i) * n + j;
            xhat[idx] = (row[j] - mean) * is;
            out[idx] = xhat[idx] * gamma.values()[static_cast<size_t>(j)] + beta.values()[static_cast<size_t>(j)];
        }
    }
    return detail::make_result<T>(
        m, n, std::move(out), {x, gamma, beta},
        [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            const T* G = self.grad.data();
            const auto& gam = self.parents[1]->value;
            if (T* gg = detail::pgrad(self, 1))
                for (size_t idx = 0; idx < self.grad.size(); ++idx) gg[idx % static_cast<size_t>(n)] += G[idx] * xhat[idx];
            if (T* gb = detail::pgrad(self, 2))
                for (size_t idx = 0; idx < self.grad.size(); ++idx) gb[idx % static_cast<size_t>(n)] += G[idx];
            if (T* gx = detail::pgrad(self, 0)) {
                for (int i = 0; i < m; ++i) {
                    const size_t base = static_cast<size_t>(i) * n;
                    T sum_dy = 0, sum_dy_xhat = 0;
                    for (int j = 0; j < n; ++j) {
                        const T dy = G[base + j] * gam[static_cast<size_t>(j)];
                        sum_dy += dy;
                        sum_dy_xhat += dy * xhat[base + j];
                    }
                    const T is = inv_std[static_cast<size_t>(i)];
                    for (int j = 0; j < n; ++j) {
                        const T dy = G[base + j] * gam[static_cast<size_t>(j)];
                        gx[base + j] += is * (dy - sum_dy / T(n) - xhat[base + j] * sum_dy_xhat / T(n));
                    }
                }
            }
        });
}

// Row-wise softmax. With `causal`, entry (i, j) is masked out for j > i + offset.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, bool causal = false, int offset = 0) {
    const int m = x.rows(), n = x.cols();
    std::vector<T> out(x.size(), T(0));
    for (int i = 0; i < m; ++i) {
        const T* row = x.data() + static_cast<size_t>(i) * n;
        T* orow = out.data() + static_cast<size_t>(i) * n;
        const int limit = causal ? std::min(n, i + offset + 1) : n;
        if (limit <= 0) continue;
        T mx = row[0];
        for (int j = 1; j < limit; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (int j = 0; j < limit; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < limit; ++j) orow[j] /= sum;
    }
    return detail::make_result<T>(m, n, std::move(out), {x}, [m, n](Node<T>& self) {
        if (T* g = detail::pgrad(self, 0)) {
            for (int i = 0; i < m; ++i) {
                const size_t base = static_cast<size_t>(i) * n;
                T dot = 0;
                for (int j = 0; j < n; ++j) dot += self.grad[base + j] * self.value[base + j];
                for (int j = 0; j < n; ++j) g[base + j] += self.value[base + j] * (self.grad[base + j] - dot);
            }
        }
    });
}

// Rows of `table` selected by `ids`.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> ids) {
    const int n = table.cols();
    std::vector<T> out(ids.size() * static_cast<size_t>(n));
    for (size_t r = 0; r < ids.size(); ++r) {
        detail::check(ids[r] >= 0 && ids[r] < table.rows(), "gather_rows id out of range");
        std::copy_n(table.data() + static_cast<size_t>(ids[r]) * n, n, out.data() + r * n);
    }
    std::vector<int> idv(ids.begin(), ids.end());
    return detail::make_result<T>(static_cast<int>(ids.size()), n, std::move(out), {table},
                                  [n, idv = std::move(idv)](Node<T>& self) {
                                      if (T* g = detail::pgrad(self, 0))
                                          for (size_t r = 0; r < idv.size(); ++r)
                                              for (int j = 0; j < n; ++j)
                                                  g[static_cast<size_t>(idv[r]) * n + j] += self.grad[r * n + j];
                                  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    detail::check(!parts.empty(), "concat_rows of nothing");
    const int n = parts[0].cols();
    int m = 0;
    for (const auto& p : parts) {
        detail::check(p.cols() == n, "concat_rows column mismatch");
        m += p.rows();
    }
    std::vector<T> out;
    out.reserve(static_cast<size_t>(m) * n);
    std::vector<size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(out.size());
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    return detail::make_result<T>(m, n, std::move(out), parts, [offsets = std::move(offsets)](Node<T>& self) {
        for (size_t p = 0; p < self.parents.size(); ++p)
            if (T* g = detail::pgrad(self, p)) {
                const size_t len = self.parents[p]->value.size();
                for (size_t i = 0; i < len; ++i) g[i] += self.grad[offsets[p] + i];
            }
    });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, int r0, int r1) {
    detail::check(0 <= r0 && r0 <= r1 && r1 <= a.rows(), "slice_rows out of range");
    const int n = a.cols();
    std::vector<T> out(a.values().begin() + static_cast<std::ptrdiff_t>(r0) * n,
                       a.values().begin() + static_cast<std::ptrdiff_t>(r1) * n);
    return detail::make_result<T>(r1 - r0, n, std::move(out), {a}, [r0, n](Node<T>& self) {
        if (T* g = detail::pgrad(self, 0))
            for (size_t i = 0; i < self.grad.size(); ++i) g[static_cast<size_t>(r0) * n + i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
    detail::check(0 <= c0 && c0 <= c1 && c1 <= a.cols(), "slice_cols out of range");
    const int m = a.rows(), n = a.cols(), w = c1 - c0;
    std::vector<T> out(static_cast<size_t>(m) * w);
    for (int i = 0; i < m; ++i)
        std::copy_n(a.data() + static_cast<size_t>(i) * n + c0, w, out.data() + static_cast<size_t>(i) * w);
    return detail::make_result<T>(m, w, std::move(out), {a}, [m, n, w, c0](Node<T>& self) {
        if (T* g = detail::pgrad(self, 0))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    g[static_cast<size_t>(i) * n + c0 + j] += self.grad[static_cast<size_t>(i) * w + j];
    });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    detail::check(!parts.empty(), "concat_cols of nothing");
    const int m = parts[0].rows();
    int n = 0;
    std::vector<int> offsets;
    for (const auto& p : parts) {
        detail::check(p.rows() == m, "concat_cols row mismatch");
        offsets.push_back(n);
        n += p.cols();
    }
    std::vector<T> out(static_cast<size_t>(m) * n);
    for (size_t p = 0; p < parts.size(); ++p) {
        const int w = parts[p].cols();
        for (int i = 0; i < m; ++i)
            std::copy_n(parts[p].data() + static_cast<size_t>(i) * w, w,
                        out.data() + static_cast<size_t>(i) * n + offsets[p]);
    }
    return detail::make_result<T>(m, n, std::move(out), parts, [m, n, offsets = std::move(offsets)](Node<T>& self) {
        for (size_t p = 0; p < self.parents.size(); ++p)
            if (T* g = detail::pgrad(self, p)) {
                const int w = self.parents[p]->cols;
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j)
                        g[static_cast<size_t>(i) * w + j] += self.grad[static_cast<size_t>(i) * n + offsets[p] + j];
            }
    });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T s = 0;
    for (T v : a.values()) s += v;
    return detail::make_result<T>(1, 1, {s}, {a}, [](Node<T>& self) {
        if (T* g = detail::pgrad(self, 0))
            for (size_t i = 0; i < self.parents[0]->value.size(); ++i) g[i] += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a.size()));
}

// Mean token-level negative log-likelihood of `targets` under row-wise
// softmax(logits). Rows whose target equals `ignore_index` are skipped.
// Throws std::invalid_argument("no supervised positions") when nothing is left.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, int ignore_index) {
    detail::check(static_cast<int>(targets.size()) == logits.rows(), "cross_entropy length mismatch");
    const int m = logits.rows(), v = logits.cols();
    std::vector<T> probs(logits.size(), T(0));
    T total = 0;
    int count = 0;
    for (int i = 0; i < m; ++i) {
        const int t = targets[static_cast<size_t>(i)];
        if (t == ignore_index) continue;
        detail::check(t >= 0 && t < v, "cross_entropy target out of range");
        const T* row = logits.data() + static_cast<size_t>(i) * v;
        T* prow = probs.data() + static_cast<size_t>(i) * v;
        const T mx = *std::max_element(row, row + v);
        T sum = 0;
        for (int j = 0; j < v; ++j) {
            prow[j] = std::exp(row[j] - mx);
            sum += prow[j];
        }
        for (int j = 0; j < v; ++j) prow[j] /= sum;
        total += -(row[t] - mx - std::log(sum));
        ++count;
    }
    if (count == 0) throw std::invalid_argument("no supervised positions");
    std::vector<int> tv(targets.begin(), targets.end());
    return detail::make_result<T>(
        1, 1, {total / T(count)}, {logits},
        [m, v, count, ignore_index, probs = std::move(probs), tv = std::move(tv)](Node<T>& self) {
            if (T* g = detail::pgrad(self, 0)) {
                const T s = self.grad[0] / T(count);
                for (int i = 0; i < m; ++i) {
                    const int t = tv[static_cast<size_t>(i)];
                    if (t == ignore_index) continue;
                    const size_t base = static_cast<size_t>(i) * v;
                    for (int j = 0; j < v; ++j) g[base + j] += s * (probs[base + j] - (j == t ? T(1) : T(0)));
                }
            }
        });
}

}  // namespace groundkit::ag
