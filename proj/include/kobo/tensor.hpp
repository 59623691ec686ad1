#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <utility>
#include <vector>

#include "kobo/common.hpp"
#include "kobo/rng.hpp"

namespace kobo {

// Dense double-precision tensor with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node. Arithmetic results always own
// fresh storage (value semantics for results); handles may share a node so
// parameters can accumulate gradients across a step. The graph is rebuilt on
// every forward pass and torn down when the handles drop. Rank 1 and rank 2
// shapes cover everything the losses need; a scalar is shape {1}.
class Tensor {
public:
    struct Node {
        std::vector<std::size_t> shape;
        std::vector<double> value;
        std::vector<double> grad;  // sized lazily; always value-sized once touched
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void()> backprop;  // pulls this->grad into parents' grads
    };

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value.assign(numel_of(n->shape), 0.0);
        n->requires_grad = requires_grad;
        if (requires_grad) n->grad.assign(n->value.size(), 0.0);
        return Tensor(std::move(n));
    }

    static Tensor from(std::vector<std::size_t> shape, std::vector<double> data,
                       bool requires_grad = false) {
        if (numel_of(shape) != data.size())
            throw shape_error("data length " + std::to_string(data.size()) +
                              " does not fill shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        if (requires_grad) n->grad.assign(n->value.size(), 0.0);
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    bool defined() const { return static_cast<bool>(n_); }
    const std::vector<std::size_t>& shape() const { return node().shape; }
    std::size_t numel() const { return node().value.size(); }
    std::size_t rank() const { return node().shape.size(); }
    std::size_t rows() const { return rank() == 2 ? shape()[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape()[1] : shape()[0]; }

    std::vector<double>& data() { return node().value; }
    const std::vector<double>& data() const { return node().value; }

    double value() const {
        if (numel() != 1) throw contract_error("value() on non-scalar tensor " + shape_str(shape()));
        return node().value[0];
    }

    double at(std::size_t i) const { return node().value[i]; }
    double at(std::size_t r, std::size_t c) const { return node().value[r * cols() + c]; }
    double& at(std::size_t i) { return node().value[i]; }
    double& at(std::size_t r, std::size_t c) { return node().value[r * cols() + c]; }

    bool requires_grad() const { return node().requires_grad; }

    const std::vector<double>& grad() const {
        if (!node().requires_grad) throw contract_error("grad() on tensor without requires_grad");
        return node().grad;
    }

    void zero_grad() {
        auto& n = node();
        if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
    }

    // Fresh constant copy of the values; drops graph history and grad flag.
    Tensor detach() const { return Tensor::from(shape(), data()); }

    Node& node() const {
        if (!n_) throw contract_error("use of empty tensor handle");
        return *n_;
    }
    const std::shared_ptr<Node>& handle() const { return n_; }

    static std::size_t numel_of(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               std::multiplies<std::size_t>());
    }

private:
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}
    std::shared_ptr<Node> n_;

    friend Tensor make_op_result(std::vector<std::size_t> shape,
                                 std::vector<double> value,
                                 std::vector<Tensor> parents,
                                 std::function<void(Tensor::Node&)> backprop);
};

namespace detail {
inline void ensure_grad_buffer(Tensor::Node& n) {
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}
}  // namespace detail

// Builds an op result node. Parent links and the backward closure are only
// recorded when some parent participates in differentiation; pure-constant
// arithmetic stays graph-free.
inline Tensor make_op_result(std::vector<std::size_t> shape,
                             std::vector<double> value,
                             std::vector<Tensor> parents,
                             std::function<void(Tensor::Node&)> backprop) {
    auto n = std::make_shared<Tensor::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool track = false;
    for (const auto& p : parents) track = track || p.requires_grad();
    n->requires_grad = track;
    if (track) {
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.handle());
        Tensor::Node* self = n.get();
        n->backprop = [self, fn = std::move(backprop)]() { fn(*self); };
    }
    return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// Elementwise and structural operations
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(op) + ": shapes disagree: " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
    return make_op_result(a.shape(), std::move(out), {a, b}, [](Tensor::Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            detail::ensure_grad_buffer(*p);
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
    return make_op_result(a.shape(), std::move(out), {a, b}, [](Tensor::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            detail::ensure_grad_buffer(pa);
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            detail::ensure_grad_buffer(pb);
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
    return make_op_result(a.shape(), std::move(out), {a, b}, [](Tensor::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            detail::ensure_grad_buffer(pa);
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pa.grad[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            detail::ensure_grad_buffer(pb);
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pb.grad[i] += self.grad[i] * pa.value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
    return make_op_result(a.shape(), std::move(out), {a}, [c](Tensor::Node& self) {
        auto& p = *self.parents[0];
        detail::ensure_grad_buffer(p);
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += c * self.grad[i];
    });
}

inline Tensor add_n(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw contract_error("add_n: empty operand list");
    for (const auto& x : xs) check_same_shape(xs[0], x, "add_n");
    std::vector<double> out(xs[0].numel(), 0.0);
    for (const auto& x : xs)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += x.at(i);
    return make_op_result(xs[0].shape(), std::move(out), xs, [](Tensor::Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            detail::ensure_grad_buffer(*p);
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    });
}

inline Tensor tanh(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.at(i));
    return make_op_result(a.shape(), std::move(out), {a}, [](Tensor::Node& self) {
        auto& p = *self.parents[0];
        detail::ensure_grad_buffer(p);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            p.grad[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
    });
}

// Adds a length-m bias row to every row of an n x m matrix.
inline Tensor add_rowbias(const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.numel() != x.cols())
        throw shape_error("add_rowbias: " + shape_str(x.shape()) + " vs bias " +
                          shape_str(b.shape()));
    const std::size_t n = x.rows(), m = x.cols();
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) out[r * m + c] = x.at(r, c) + b.at(c);
    return make_op_result(x.shape(), std::move(out), {x, b}, [n, m](Tensor::Node& self) {
        auto& px = *self.parents[0];
        auto& pb = *self.parents[1];
        if (px.requires_grad) {
            detail::ensure_grad_buffer(px);
            for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            detail::ensure_grad_buffer(pb);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < m; ++c) pb.grad[c] += self.grad[r * m + c];
        }
    });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw shape_error("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b.at(p, j);
        }
    return make_op_result({m, n}, std::move(out), {a, b}, [m, k, n](Tensor::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            detail::ensure_grad_buffer(pa);
            // dA = dC * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = self.grad[i * n + j];
                    if (g == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p)
                        pa.grad[i * k + p] += g * pb.value[p * n + j];
                }
        }
        if (pb.requires_grad) {
            detail::ensure_grad_buffer(pb);
            // dB = A^T * dC
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = pa.value[i * k + p];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j)
                        pb.grad[p * n + j] += av * self.grad[i * n + j];
                }
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw shape_error("transpose: rank-2 required, got " + shape_str(a.shape()));
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.at(i, j);
    return make_op_result({c, r}, std::move(out), {a}, [r, c](Tensor::Node& self) {
        auto& p = *self.parents[0];
        detail::ensure_grad_buffer(p);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[j * r + i];
    });
}

inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i);
    return make_op_result({1}, {s}, {a}, [](Tensor::Node& self) {
        auto& p = *self.parents[0];
        detail::ensure_grad_buffer(p);
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[0];
    });
}

// Mean over consecutive groups of `group` rows: (n x m) -> (n/group x m).
inline Tensor row_group_mean(const Tensor& x, std::size_t group) {
    if (x.rank() != 2 || group == 0 || x.rows() % group != 0)
        throw shape_error("row_group_mean: " + shape_str(x.shape()) + " with group " +
                          std::to_string(group));
    const std::size_t n = x.rows() / group, m = x.cols();
    std::vector<double> out(n * m, 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < m; ++c) out[(r / group) * m + c] += x.at(r, c);
    const double inv = 1.0 / static_cast<double>(group);
    for (auto& v : out) v *= inv;
    return make_op_result({n, m}, std::move(out), {x}, [group, m, inv](Tensor::Node& self) {
        auto& p = *self.parents[0];
        detail::ensure_grad_buffer(p);
        for (std::size_t r = 0; r < p.shape[0]; ++r)
            for (std::size_t c = 0; c < m; ++c)
                p.grad[r * m + c] += inv * self.grad[(r / group) * m + c];
    });
}

inline Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
    if (x.rank() != 2 || start + count > x.rows())
        throw shape_error("slice_rows: rows " + std::to_string(start) + "+" +
                          std::to_string(count) + " out of " + shape_str(x.shape()));
    const std::size_t m = x.cols();
    std::vector<double> out(count * m);
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(start * m), count * m, out.begin());
    return make_op_result({count, m}, std::move(out), {x}, [start, m](Tensor::Node& self) {
        auto& p = *self.parents[0];
        detail::ensure_grad_buffer(p);
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[start * m + i] += self.grad[i];
    });
}

// Stacks equal-width pieces (rank-1 {m} or rank-2 {r x m}) into one matrix.
inline Tensor stack_rows(const std::vector<Tensor>& pieces) {
    if (pieces.empty()) throw contract_error("stack_rows: empty list");
    const std::size_t m = pieces[0].cols();
    std::size_t total = 0;
    for (const auto& p : pieces) {
        if (p.cols() != m)
            throw shape_error("stack_rows: width mismatch: " + shape_str(p.shape()));
        total += p.rows();
    }
    std::vector<double> out;
    out.reserve(total * m);
    for (const auto& p : pieces) out.insert(out.end(), p.data().begin(), p.data().end());
    return make_op_result({total, m}, std::move(out), pieces, [](Tensor::Node& self) {
        std::size_t off = 0;
        for (auto& p : self.parents) {
            const std::size_t len = p->value.size();
            if (p->requires_grad) {
                detail::ensure_grad_buffer(*p);
                for (std::size_t i = 0; i < len; ++i) p->grad[i] += self.grad[off + i];
            }
            off += len;
        }
    });
}

// Collects scalar tensors into a rank-1 vector.
inline Tensor stack_scalars(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw contract_error("stack_scalars: empty list");
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i].value();
    return make_op_result({xs.size()}, std::move(out), xs, [](Tensor::Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            auto& p = *self.parents[i];
            if (!p.requires_grad) continue;
            detail::ensure_grad_buffer(p);
            p.grad[0] += self.grad[i];
        }
    });
}

// Row lookup into a table; backward scatter-adds (embedding gather).
inline Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
    if (table.rank() != 2) throw shape_error("gather_rows: table must be rank-2");
    const std::size_t m = table.cols();
    for (std::size_t id : ids)
        if (id >= table.rows())
            throw contract_error("gather_rows: row id " + std::to_string(id) +
                                 " out of range [0, " + std::to_string(table.rows()) + ")");
    std::vector<double> out(ids.size() * m);
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * m), m,
                    out.begin() + static_cast<std::ptrdiff_t>(i * m));
    return make_op_result({ids.size(), m}, std::move(out), {table},
                          [ids, m](Tensor::Node& self) {
                              auto& p = *self.parents[0];
                              detail::ensure_grad_buffer(p);
                              for (std::size_t i = 0; i < ids.size(); ++i)
                                  for (std::size_t c = 0; c < m; ++c)
                                      p.grad[ids[i] * m + c] += self.grad[i * m + c];
                          });
}

inline Tensor take_diag(const Tensor& s) {
    if (s.rank() != 2 || s.rows() != s.cols())
        throw shape_error("take_diag: square matrix required, got " + shape_str(s.shape()));
    const std::size_t n = s.rows();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = s.at(i, i);
    return make_op_result({n}, std::move(out), {s}, [n](Tensor::Node& self) {
        auto& p = *self.parents[0];
        detail::ensure_grad_buffer(p);
        for (std::size_t i = 0; i < n; ++i) p.grad[i * n + i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Normalization and contrastive primitives
// ---------------------------------------------------------------------------

// Row-wise softmax of x / temperature with max-subtraction. A rank-1 input is
// treated as a single row.
inline Tensor softmax_rows(const Tensor& x, double temperature) {
    if (temperature <= 0.0)
        throw parameter_error("softmax_rows: temperature must be positive, got " +
                              std::to_string(temperature));
    const std::size_t n = x.rank() == 2 ? x.rows() : 1;
    const std::size_t m = x.cols();
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < n; ++r) {
        double mx = x.at(r * m);
        for (std::size_t c = 1; c < m; ++c) mx = std::max(mx, x.at(r * m + c));
        double z = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            out[r * m + c] = std::exp((x.at(r * m + c) - mx) / temperature);
            z += out[r * m + c];
        }
        for (std::size_t c = 0; c < m; ++c) out[r * m + c] /= z;
    }
    return make_op_result(x.shape(), std::move(out), {x},
                          [n, m, temperature](Tensor::Node& self) {
                              auto& p = *self.parents[0];
                              detail::ensure_grad_buffer(p);
                              for (std::size_t r = 0; r < n; ++r) {
                                  double dot = 0.0;
                                  for (std::size_t c = 0; c < m; ++c)
                                      dot += self.grad[r * m + c] * self.value[r * m + c];
                                  for (std::size_t c = 0; c < m; ++c)
                                      p.grad[r * m + c] += self.value[r * m + c] *
                                                           (self.grad[r * m + c] - dot) /
                                                           temperature;
                              }
                          });
}

// Row-wise L2 normalization; zero rows stay zero (epsilon-guarded denominator).
inline Tensor l2_normalize(const Tensor& x) {
    constexpr double kEps = 1e-12;
    const std::size_t n = x.rank() == 2 ? x.rows() : 1;
    const std::size_t m = x.cols();
    std::vector<double> out(x.numel());
    std::vector<double> norms(n);
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < m; ++c) s += x.at(r * m + c) * x.at(r * m + c);
        const double nrm = std::sqrt(s);
        norms[r] = nrm;
        const double inv = 1.0 / (nrm + kEps);
        for (std::size_t c = 0; c < m; ++c) out[r * m + c] = x.at(r * m + c) * inv;
    }
    return make_op_result(x.shape(), std::move(out), {x},
                          [n, m, norms = std::move(norms)](Tensor::Node& self) {
                              auto& p = *self.parents[0];
                              detail::ensure_grad_buffer(p);
                              for (std::size_t r = 0; r < n; ++r) {
                                  const double nrm = norms[r];
                                  const double inv = 1.0 / (nrm + kEps);
                                  double gy_dot_x = 0.0;
                                  for (std::size_t c = 0; c < m; ++c)
                                      gy_dot_x += self.grad[r * m + c] * p.value[r * m + c];
                                  for (std::size_t c = 0; c < m; ++c) {
                                      double g = self.grad[r * m + c] * inv;
                                      if (nrm > 0.0)
                                          g -= p.value[r * m + c] * gy_dot_x * inv * inv / nrm;
                                      p.grad[r * m + c] += g;
                                  }
                              }
                          });
}

// Per-row weighted log-sum-exp: out_i = log sum_j W_ij exp(S_ij / tau).
// W is a constant weight matrix (no gradient flows into it); pass an empty
// tensor for all-ones weights. Every row needs positive weight mass.
inline Tensor weighted_row_lse(const Tensor& s, const Tensor& w, double tau) {
    if (tau <= 0.0) throw parameter_error("weighted_row_lse: temperature must be positive");
    const std::size_t n = s.rank() == 2 ? s.rows() : 1;
    const std::size_t m = s.cols();
    const bool has_w = w.defined();
    if (has_w && w.numel() != s.numel())
        throw shape_error("weighted_row_lse: weight shape " + shape_str(w.shape()) +
                          " vs scores " + shape_str(s.shape()));
    std::vector<double> out(n);
    std::vector<double> softw(n * m);  // saved p_ij for backward
    for (std::size_t r = 0; r < n; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < m; ++c) {
            const double wv = has_w ? w.at(r * m + c) : 1.0;
            if (wv > 0.0) mx = std::max(mx, s.at(r * m + c));
        }
        if (!std::isfinite(mx))
            throw contract_error("weighted_row_lse: row " + std::to_string(r) +
                                 " has no positive weight");
        double z = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            const double wv = has_w ? w.at(r * m + c) : 1.0;
            const double e = wv > 0.0 ? wv * std::exp((s.at(r * m + c) - mx) / tau) : 0.0;
            softw[r * m + c] = e;
            z += e;
        }
        out[r] = mx / tau + std::log(z);
        const double invz = 1.0 / z;
        for (std::size_t c = 0; c < m; ++c) softw[r * m + c] *= invz;
    }
    return make_op_result({n}, std::move(out), {s},
                          [n, m, tau, softw = std::move(softw)](Tensor::Node& self) {
                              auto& p = *self.parents[0];
                              detail::ensure_grad_buffer(p);
                              for (std::size_t r = 0; r < n; ++r)
                                  for (std::size_t c = 0; c < m; ++c)
                                      p.grad[r * m + c] +=
                                          self.grad[r] * softw[r * m + c] / tau;
                          });
}

inline Tensor row_lse(const Tensor& s, double tau) { return weighted_row_lse(s, Tensor(), tau); }

// ---------------------------------------------------------------------------
// Reverse-mode pass
// ---------------------------------------------------------------------------

// Populates grad on every parameter reachable from the scalar loss. The graph
// is walked once in topological order; leaf gradients accumulate.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw contract_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;  // nothing reachable requires grad

    std::vector<Tensor::Node*> order;
    std::unordered_set<Tensor::Node*> seen;
    std::vector<std::pair<Tensor::Node*, std::size_t>> stack;
    stack.emplace_back(&loss.node(), 0);
    seen.insert(&loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior nodes get fresh zero grads; leaves keep accumulating.
    for (Tensor::Node* n : order)
        if (n->backprop) n->grad.assign(n->value.size(), 0.0);
        else detail::ensure_grad_buffer(*n);

    loss.node().grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop();
}

// Central finite differences, the independent gradient oracle. Evaluates f at
// x +- h e_i per coordinate; f sees a detached copy it may build graphs on.
inline Tensor finite_diff_grad(const std::function<double(Tensor&)>& f, const Tensor& x,
                               double h = 1e-5) {
    Tensor probe = x.detach();
    std::vector<double> g(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + h;
        const double fp = f(probe);
        probe.data()[i] = orig - h;
        const double fm = f(probe);
        probe.data()[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return Tensor::from(x.shape(), std::move(g));
}

// Xavier-uniform initialized parameter tensor.
inline Tensor xavier_param(std::vector<std::size_t> shape, std::size_t fan_in,
                           std::size_t fan_out, Rng& rng) {
    const double bound = xavier_bound(fan_in, fan_out);
    std::vector<double> data(Tensor::numel_of(shape));
    for (auto& v : data) v = rng.uniform(-bound, bound);
    return Tensor::from(std::move(shape), std::move(data), true);
}

}  // namespace kobo
