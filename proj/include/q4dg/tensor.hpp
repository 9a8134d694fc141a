#pragma once

// Differentiable dense tensor core. Double precision throughout; reverse-mode
// gradients over a fixed primitive set. Graph nodes are reference counted and
// freed when the last Tensor handle to a computation goes away.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace q4dg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Accumulates this node's grad into the parents' grad buffers.
    std::function<void(Node&)> backprop;

    std::size_t numel() const { return value.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const {
        if (shape.size() < 2) return shape.empty() ? 1 : 1;
        std::size_t c = 1;
        for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
        return c;
    }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline CMatMap as_mat(const Node& n) {
    return CMatMap(n.value.data(), static_cast<Eigen::Index>(n.rows()),
                   static_cast<Eigen::Index>(n.cols()));
}
inline MatMap grad_mat(Node& n) {
    n.ensure_grad();
    return MatMap(n.grad.data(), static_cast<Eigen::Index>(n.rows()),
                  static_cast<Eigen::Index>(n.cols()));
}
inline CMatMap grad_cmat(const Node& n) {
    return CMatMap(n.grad.data(), static_cast<Eigen::Index>(n.rows()),
                   static_cast<Eigen::Index>(n.cols()));
}

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) +
                                        " does not match data length " + std::to_string(data.size()));
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }
    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> d(shape_numel(shape), 0.0);
        return from(std::move(shape), std::move(d), requires_grad);
    }
    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        std::vector<double> d(shape_numel(shape), v);
        return from(std::move(shape), std::move(d), requires_grad);
    }
    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1, 1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->numel(); }
    std::size_t rows() const { return node_->rows(); }
    std::size_t cols() const { return node_->cols(); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<double>& value() const { return node_->value; }
    std::vector<double>& mutable_value() { return node_->value; }
    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    std::vector<double>& mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    double item() const {
        if (numel() != 1) throw std::logic_error("Tensor::item on non-scalar " + shape_str(shape()));
        return node_->value[0];
    }
    double at(std::size_t i, std::size_t j) const { return node_->value[i * cols() + j]; }

    std::shared_ptr<detail::Node> node() const { return node_; }

    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void check_finite(const Node& n, const char* op) {
    for (double v : n.value)
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
}

inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<Tensor> parents,
                      std::function<void(Node&)> backprop, const char* opname) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    check_finite(*n, opname);
    bool need = false;
    for (const auto& p : parents) need = need || p.requires_grad();
    n->requires_grad = need;
    if (need) {
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and shape primitives
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
    return detail::make_op(a.shape(), std::move(v), {a, b}, [](detail::Node& n) {
        for (auto& p : n.parents) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
        }
    }, "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
    return detail::make_op(a.shape(), std::move(v), {a, b}, [](detail::Node& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
        }
    }, "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
    return detail::make_op(a.shape(), std::move(v), {a, b}, [](detail::Node& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->value[i];
        }
    }, "mul");
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * c;
    return detail::make_op(a.shape(), std::move(v), {a}, [c](detail::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i] * c;
    }, "scale");
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor add_const(const Tensor& a, double c) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + c;
    return detail::make_op(a.shape(), std::move(v), {a}, [](detail::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }, "add_const");
}

// Elementwise product with a fixed (non-differentiated) coefficient matrix.
inline Tensor mul_coeff(const Tensor& a, const std::vector<double>& coeff) {
    if (coeff.size() != a.numel()) throw std::invalid_argument("mul_coeff: size mismatch");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * coeff[i];
    return detail::make_op(a.shape(), std::move(v), {a}, [coeff](detail::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i] * coeff[i];
    }, "mul_coeff");
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                                    shape_str(shape));
    std::vector<double> v = a.value();
    return detail::make_op(std::move(shape), std::move(v), {a}, [](detail::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }, "reshape");
}

#define Q4DG_UNARY(NAME, FWD, BWD)                                                        \
    inline Tensor NAME(const Tensor& a) {                                                 \
        std::vector<double> v(a.numel());                                                 \
        for (std::size_t i = 0; i < v.size(); ++i) {                                      \
            double x = a.value()[i];                                                      \
            v[i] = (FWD);                                                                 \
        }                                                                                 \
        return detail::make_op(a.shape(), std::move(v), {a}, [](detail::Node& n) {        \
            auto& p = n.parents[0];                                                       \
            p->ensure_grad();                                                             \
            for (std::size_t i = 0; i < n.grad.size(); ++i) {                             \
                double x = p->value[i];                                                   \
                double y = n.value[i];                                                    \
                (void)x; (void)y;                                                         \
                p->grad[i] += n.grad[i] * (BWD);                                          \
            }                                                                             \
        }, #NAME);                                                                        \
    }

Q4DG_UNARY(sigmoid, 1.0 / (1.0 + std::exp(-x)), y * (1.0 - y))
Q4DG_UNARY(tanh_t, std::tanh(x), 1.0 - y * y)
Q4DG_UNARY(exp_t, std::exp(x), y)
Q4DG_UNARY(log_t, std::log(x), 1.0 / x)
// softplus with overflow guard; floored at the smallest normal double so the
// output stays strictly positive even when exp(x) underflows
Q4DG_UNARY(softplus,
           (x > 30.0 ? x
                     : std::max(std::log1p(std::exp(x)), std::numeric_limits<double>::min())),
           1.0 / (1.0 + std::exp(-x)))
Q4DG_UNARY(abs_t, std::abs(x), (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0)))
Q4DG_UNARY(gelu, 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))),
           0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) +
               x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI))

#undef Q4DG_UNARY

inline Tensor pow_scalar(const Tensor& a, double p) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::pow(a.value()[i], p);
    return detail::make_op(a.shape(), std::move(v), {a}, [p](detail::Node& n) {
        auto& pa = n.parents[0];
        pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            pa->grad[i] += n.grad[i] * p * std::pow(pa->value[i], p - 1.0);
    }, "pow_scalar");
}

// ---------------------------------------------------------------------------
// Matrix primitives
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b, bool ta = false, bool tb = false) {
    const std::size_t am = ta ? a.cols() : a.rows();
    const std::size_t ak = ta ? a.rows() : a.cols();
    const std::size_t bk = tb ? b.cols() : b.rows();
    const std::size_t bn = tb ? b.rows() : b.cols();
    if (ak != bk)
        throw std::invalid_argument("matmul: inner dims mismatch " + shape_str(a.shape()) + " " +
                                    shape_str(b.shape()));
    std::vector<double> v(am * bn);
    {
        detail::CMatMap A(a.value().data(), a.rows(), a.cols());
        detail::CMatMap B(b.value().data(), b.rows(), b.cols());
        detail::MatMap C(v.data(), am, bn);
        if (!ta && !tb) C.noalias() = A * B;
        else if (!ta && tb) C.noalias() = A * B.transpose();
        else if (ta && !tb) C.noalias() = A.transpose() * B;
        else C.noalias() = A.transpose() * B.transpose();
    }
    return detail::make_op({am, bn}, std::move(v), {a, b}, [ta, tb](detail::Node& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        detail::CMatMap A = detail::as_mat(*pa);
        detail::CMatMap B = detail::as_mat(*pb);
        detail::CMatMap G(n.grad.data(), static_cast<Eigen::Index>(n.rows()),
                          static_cast<Eigen::Index>(n.cols()));
        if (pa->requires_grad) {
            auto dA = detail::grad_mat(*pa);
            if (!ta && !tb) dA.noalias() += G * B.transpose();
            else if (!ta && tb) dA.noalias() += G * B;
            else if (ta && !tb) dA.noalias() += B * G.transpose();
            else dA.noalias() += B.transpose() * G.transpose();
        }
        if (pb->requires_grad) {
            auto dB = detail::grad_mat(*pb);
            if (!ta && !tb) dB.noalias() += A.transpose() * G;
            else if (!ta && tb) dB.noalias() += G.transpose() * A;
            else if (ta && !tb) dB.noalias() += A * G;
            else dB.noalias() += G.transpose() * A.transpose();
        }
    }, "matmul");
}

inline Tensor add_rowvec(const Tensor& a, const Tensor& b) {
    if (b.rows() != 1 || b.cols() != a.cols())
        throw std::invalid_argument("add_rowvec: expected [1x" + std::to_string(a.cols()) + "], got " +
                                    shape_str(b.shape()));
    std::vector<double> v(a.numel());
    const std::size_t c = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j) v[i * c + j] = a.value()[i * c + j] + b.value()[j];
    return detail::make_op(a.shape(), std::move(v), {a, b}, [](detail::Node& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        const std::size_t c = n.cols();
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.rows(); ++i)
                for (std::size_t j = 0; j < c; ++j) pb->grad[j] += n.grad[i * c + j];
        }
    }, "add_rowvec");
}

// Per-row scaling: out[i,:] = a[i,:] * s[i]. s has shape [m x 1].
inline Tensor scale_rows(const Tensor& a, const Tensor& s) {
    if (s.rows() != a.rows() || s.cols() != 1)
        throw std::invalid_argument("scale_rows: expected [" + std::to_string(a.rows()) + "x1]");
    std::vector<double> v(a.numel());
    const std::size_t c = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j) v[i * c + j] = a.value()[i * c + j] * s.value()[i];
    return detail::make_op(a.shape(), std::move(v), {a, s}, [](detail::Node& n) {
        auto& pa = n.parents[0];
        auto& ps = n.parents[1];
        const std::size_t c = n.cols();
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.rows(); ++i)
                for (std::size_t j = 0; j < c; ++j)
                    pa->grad[i * c + j] += n.grad[i * c + j] * ps->value[i];
        }
        if (ps->requires_grad) {
            ps->ensure_grad();
            for (std::size_t i = 0; i < n.rows(); ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < c; ++j) acc += n.grad[i * c + j] * pa->value[i * c + j];
                ps->grad[i] += acc;
            }
        }
    }, "scale_rows");
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& a) {
    double s = std::accumulate(a.value().begin(), a.value().end(), 0.0);
    return detail::make_op({1, 1}, {s}, {a}, [](detail::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (auto& g : p->grad) g += n.grad[0];
    }, "sum_all");
}

inline Tensor mean_all(const Tensor& a) {
    double s = std::accumulate(a.value().begin(), a.value().end(), 0.0);
    const double inv = 1.0 / static_cast<double>(a.numel());
    return detail::make_op({1, 1}, {s * inv}, {a}, [inv](detail::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (auto& g : p->grad) g += n.grad[0] * inv;
    }, "mean_all");
}

inline Tensor mean_rows(const Tensor& a) {
    const std::size_t m = a.rows(), c = a.cols();
    std::vector<double> v(c, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) v[j] += a.value()[i * c + j];
    for (auto& x : v) x /= static_cast<double>(m);
    return detail::make_op({1, c}, std::move(v), {a}, [](detail::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        const std::size_t m = p->rows(), c = p->cols();
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += n.grad[j] * inv;
    }, "mean_rows");
}

inline Tensor row_sum(const Tensor& a) {
    const std::size_t m = a.rows(), c = a.cols();
    std::vector<double> v(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) v[i] += a.value()[i * c + j];
    return detail::make_op({m, 1}, std::move(v), {a}, [](detail::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        const std::size_t m = p->rows(), c = p->cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += n.grad[i];
    }, "row_sum");
}

// ---------------------------------------------------------------------------
// Indexing / layout primitives
// ---------------------------------------------------------------------------

inline Tensor gather_rows(const Tensor& a, std::vector<std::size_t> idx) {
    const std::size_t c = a.cols();
    for (auto i : idx)
        if (i >= a.rows()) throw std::out_of_range("gather_rows: index " + std::to_string(i));
    std::vector<double> v(idx.size() * c);
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy_n(a.value().begin() + static_cast<std::ptrdiff_t>(idx[r] * c), c, v.begin() + static_cast<std::ptrdiff_t>(r * c));
    return detail::make_op({idx.size(), c}, std::move(v), {a}, [idx](detail::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        const std::size_t c = p->cols();
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < c; ++j) p->grad[idx[r] * c + j] += n.grad[r * c + j];
    }, "gather_rows");
}

inline Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    return gather_rows(a, std::move(idx));
}

inline Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
    const std::size_t m = a.rows(), c = a.cols();
    if (start + count > c) throw std::out_of_range("slice_cols");
    std::vector<double> v(m * count);
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(a.value().begin() + static_cast<std::ptrdiff_t>(i * c + start), count,
                    v.begin() + static_cast<std::ptrdiff_t>(i * count));
    return detail::make_op({m, count}, std::move(v), {a}, [start, count](detail::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        const std::size_t m = p->rows(), c = p->cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < count; ++j)
                p->grad[i * c + start + j] += n.grad[i * count + j];
    }, "slice_cols");
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    const std::size_t c = parts[0].cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw std::invalid_argument("concat_rows: col mismatch");
        m += p.rows();
    }
    std::vector<double> v;
    v.reserve(m * c);
    for (const auto& p : parts) v.insert(v.end(), p.value().begin(), p.value().end());
    return detail::make_op({m, c}, std::move(v), parts, [](detail::Node& n) {
        std::size_t off = 0;
        for (auto& p : n.parents) {
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += n.grad[off + i];
            }
            off += p->value.size();
        }
    }, "concat_rows");
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const std::size_t m = parts[0].rows();
    std::size_t c = 0;
    for (const auto& p : parts) {
        if (p.rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
        c += p.cols();
    }
    std::vector<double> v(m * c);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(p.value().begin() + static_cast<std::ptrdiff_t>(i * pc), pc,
                        v.begin() + static_cast<std::ptrdiff_t>(i * c + off));
        off += pc;
    }
    return detail::make_op({m, c}, std::move(v), parts, [](detail::Node& n) {
        const std::size_t m = n.rows(), c = n.cols();
        std::size_t off = 0;
        for (auto& p : n.parents) {
            const std::size_t pc = p->cols();
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < pc; ++j)
                        p->grad[i * pc + j] += n.grad[i * c + off + j];
            }
            off += pc;
        }
    }, "concat_cols");
}

// Sparse linear row mixing: out[r,:] = sum over (idx, w) in plan[r] of w * a[idx,:].
// Covers nearest/bilinear upsampling and bilinear point sampling.
using RowMixPlan = std::vector<std::vector<std::pair<std::size_t, double>>>;

inline Tensor row_mix(const Tensor& a, const RowMixPlan& plan) {
    const std::size_t c = a.cols();
    std::vector<double> v(plan.size() * c, 0.0);
    for (std::size_t r = 0; r < plan.size(); ++r)
        for (const auto& [idx, w] : plan[r]) {
            if (idx >= a.rows()) throw std::out_of_range("row_mix: index");
            for (std::size_t j = 0; j < c; ++j) v[r * c + j] += w * a.value()[idx * c + j];
        }
    return detail::make_op({plan.size(), c}, std::move(v), {a}, [plan](detail::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        const std::size_t c = p->cols();
        for (std::size_t r = 0; r < plan.size(); ++r)
            for (const auto& [idx, w] : plan[r])
                for (std::size_t j = 0; j < c; ++j) p->grad[idx * c + j] += w * n.grad[r * c + j];
    }, "row_mix");
}

// 3x3 im2col with zero padding over a [H*W x c] pixel-major feature map.
// Output is [H*W x 9c]; convolution is then a plain matmul with a [9c x cout] kernel.
inline Tensor im2col3x3(const Tensor& a, std::size_t h, std::size_t w) {
    if (a.rows() != h * w) throw std::invalid_argument("im2col3x3: rows != H*W");
    const std::size_t c = a.cols();
    std::vector<double> v(h * w * 9 * c, 0.0);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t p = y * w + x;
            std::size_t k = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx, ++k) {
                    const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
                    if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) continue;
                    const std::size_t q = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
                    std::copy_n(a.value().begin() + static_cast<std::ptrdiff_t>(q * c), c,
                                v.begin() + static_cast<std::ptrdiff_t>((p * 9 + k) * c));
                }
        }
    return detail::make_op({h * w, 9 * c}, std::move(v), {a}, [h, w](detail::Node& n) {
        auto& pa = n.parents[0];
        pa->ensure_grad();
        const std::size_t c = pa->cols();
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t p = y * w + x;
                std::size_t k = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx, ++k) {
                        const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
                        if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) continue;
                        const std::size_t q = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
                        for (std::size_t j = 0; j < c; ++j)
                            pa->grad[q * c + j] += n.grad[(p * 9 + k) * c + j];
                    }
            }
    }, "im2col3x3");
}

// ---------------------------------------------------------------------------
// Softmax and normalization
// ---------------------------------------------------------------------------

// Row-wise softmax over admissible entries. Inadmissible entries receive an
// additive -inf before exponentiation, so their weight is exactly 0.0.
inline Tensor masked_softmax(const Tensor& scores, const std::vector<std::uint8_t>& mask) {
    if (mask.size() != scores.numel())
        throw std::invalid_argument("masked_softmax: mask size mismatch");
    const std::size_t m = scores.rows(), c = scores.cols();
    std::vector<double> v(m * c, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j)
            if (mask[i * c + j]) mx = std::max(mx, scores.value()[i * c + j]);
        if (!std::isfinite(mx)) throw std::runtime_error("degenerate attention row");
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j)
            if (mask[i * c + j]) {
                const double e = std::exp(scores.value()[i * c + j] - mx);
                v[i * c + j] = e;
                z += e;
            }
        for (std::size_t j = 0; j < c; ++j) v[i * c + j] /= z;
    }
    return detail::make_op(scores.shape(), std::move(v), {scores}, [](detail::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        const std::size_t m = n.rows(), c = n.cols();
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += n.value[i * c + j] * n.grad[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                p->grad[i * c + j] += n.value[i * c + j] * (n.grad[i * c + j] - dot);
        }
    }, "masked_softmax");
}

inline Tensor softmax_rows(const Tensor& scores) {
    return masked_softmax(scores, std::vector<std::uint8_t>(scores.numel(), 1));
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    const std::size_t m = x.rows(), c = x.cols();
    if (gain.cols() != c || bias.cols() != c || gain.rows() != 1 || bias.rows() != 1)
        throw std::invalid_argument("layer_norm: gain/bias must be [1x" + std::to_string(c) + "]");
    std::vector<double> v(m * c);
    std::vector<double> mu(m), istd(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += x.value()[i * c + j];
        mu[i] = s / static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = x.value()[i * c + j] - mu[i];
            var += d * d;
        }
        var /= static_cast<double>(c);
        istd[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j)
            v[i * c + j] = (x.value()[i * c + j] - mu[i]) * istd[i] * gain.value()[j] + bias.value()[j];
    }
    return detail::make_op(x.shape(), std::move(v), {x, gain, bias},
                           [mu, istd](detail::Node& n) {
        auto& px = n.parents[0];
        auto& pg = n.parents[1];
        auto& pb = n.parents[2];
        const std::size_t m = n.rows(), c = n.cols();
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        if (px->requires_grad) px->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            // xhat and per-row reductions
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            std::vector<double> xhat(c), dxhat(c);
            for (std::size_t j = 0; j < c; ++j) {
                xhat[j] = (px->value[i * c + j] - mu[i]) * istd[i];
                dxhat[j] = n.grad[i * c + j] * pg->value[j];
                sum_dxhat += dxhat[j];
                sum_dxhat_xhat += dxhat[j] * xhat[j];
                if (pg->requires_grad) pg->grad[j] += n.grad[i * c + j] * xhat[j];
                if (pb->requires_grad) pb->grad[j] += n.grad[i * c + j];
            }
            if (px->requires_grad) {
                const double inv_c = 1.0 / static_cast<double>(c);
                for (std::size_t j = 0; j < c; ++j)
                    px->grad[i * c + j] += istd[i] * (dxhat[j] - inv_c * sum_dxhat -
                                                     xhat[j] * inv_c * sum_dxhat_xhat);
            }
        }
    }, "layer_norm");
}

inline Tensor div(const Tensor& a, const Tensor& b) { return mul(a, pow_scalar(b, -1.0)); }

// Bilinear sampling of a [H*W x c] pixel-major map at continuous positions
// pos = [n x 2] holding (u, v) = (x, y). Differentiable in both the map and
// the positions; positions are clamped to the valid interpolation range, and
// the position gradient is zero in the clamped regime.
inline Tensor bilinear_sample(const Tensor& map, std::size_t h, std::size_t w, const Tensor& pos) {
    if (map.rows() != h * w) throw std::invalid_argument("bilinear_sample: rows != H*W");
    if (pos.cols() != 2) throw std::invalid_argument("bilinear_sample: pos must be [n x 2]");
    const std::size_t c = map.cols(), n = pos.rows();
    struct Corner { std::size_t p00, p01, p10, p11; double fu, fv; bool cu, cv; };
    std::vector<Corner> corners(n);
    std::vector<double> v(n * c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double u = pos.value()[i * 2 + 0];
        double vv = pos.value()[i * 2 + 1];
        const double u_cl = std::clamp(u, 0.0, static_cast<double>(w - 1));
        const double v_cl = std::clamp(vv, 0.0, static_cast<double>(h - 1));
        Corner co;
        co.cu = (u != u_cl);
        co.cv = (vv != v_cl);
        const std::size_t x0 = std::min(static_cast<std::size_t>(u_cl), w - (w > 1 ? 2 : 1));
        const std::size_t y0 = std::min(static_cast<std::size_t>(v_cl), h - (h > 1 ? 2 : 1));
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        co.fu = u_cl - static_cast<double>(x0);
        co.fv = v_cl - static_cast<double>(y0);
        co.p00 = y0 * w + x0; co.p01 = y0 * w + x1;
        co.p10 = y1 * w + x0; co.p11 = y1 * w + x1;
        corners[i] = co;
        const double w00 = (1 - co.fu) * (1 - co.fv), w01 = co.fu * (1 - co.fv);
        const double w10 = (1 - co.fu) * co.fv, w11 = co.fu * co.fv;
        for (std::size_t j = 0; j < c; ++j)
            v[i * c + j] = w00 * map.value()[co.p00 * c + j] + w01 * map.value()[co.p01 * c + j] +
                           w10 * map.value()[co.p10 * c + j] + w11 * map.value()[co.p11 * c + j];
    }
    return detail::make_op({n, c}, std::move(v), {map, pos}, [corners](detail::Node& nd) {
        auto& pm = nd.parents[0];
        auto& pp = nd.parents[1];
        const std::size_t c = pm->cols();
        if (pm->requires_grad) pm->ensure_grad();
        if (pp->requires_grad) pp->ensure_grad();
        for (std::size_t i = 0; i < corners.size(); ++i) {
            const auto& co = corners[i];
            const double w00 = (1 - co.fu) * (1 - co.fv), w01 = co.fu * (1 - co.fv);
            const double w10 = (1 - co.fu) * co.fv, w11 = co.fu * co.fv;
            double du = 0.0, dv = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                const double g = nd.grad[i * c + j];
                if (pm->requires_grad) {
                    pm->grad[co.p00 * c + j] += w00 * g;
                    pm->grad[co.p01 * c + j] += w01 * g;
                    pm->grad[co.p10 * c + j] += w10 * g;
                    pm->grad[co.p11 * c + j] += w11 * g;
                }
                const double m00 = pm->value[co.p00 * c + j], m01 = pm->value[co.p01 * c + j];
                const double m10 = pm->value[co.p10 * c + j], m11 = pm->value[co.p11 * c + j];
                du += g * ((1 - co.fv) * (m01 - m00) + co.fv * (m11 - m10));
                dv += g * ((1 - co.fu) * (m10 - m00) + co.fu * (m11 - m01));
            }
            if (pp->requires_grad) {
                if (!co.cu) pp->grad[i * 2 + 0] += du;
                if (!co.cv) pp->grad[i * 2 + 1] += dv;
            }
        }
    }, "bilinear_sample");
}

// ---------------------------------------------------------------------------
// Loss primitives
// ---------------------------------------------------------------------------

// Sum of Huber penalties over all entries: r^2/2 for |r| <= delta, delta*(|r|-delta/2) otherwise.
inline Tensor huber_sum(const Tensor& r, double delta) {
    if (delta <= 0.0) throw std::invalid_argument("huber_sum: delta must be > 0");
    double s = 0.0;
    for (double x : r.value()) {
        const double a = std::abs(x);
        s += (a <= delta) ? 0.5 * x * x : delta * (a - 0.5 * delta);
    }
    return detail::make_op({1, 1}, {s}, {r}, [delta](detail::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double x = p->value[i];
            p->grad[i] += n.grad[0] * std::clamp(x, -delta, delta);
        }
    }, "huber_sum");
}

// Mean binary cross-entropy with probability clamped to [clamp, 1-clamp].
inline Tensor bce_mean(const Tensor& p, const std::vector<double>& y, double clamp = 1e-7) {
    if (y.size() != p.numel()) throw std::invalid_argument("bce_mean: target size mismatch");
    for (double t : y)
        if (t != 0.0 && t != 1.0) throw std::invalid_argument("bce_mean: target not in {0,1}");
    const double n_inv = 1.0 / static_cast<double>(p.numel());
    double s = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        const double q = std::clamp(p.value()[i], clamp, 1.0 - clamp);
        s -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
    }
    return detail::make_op({1, 1}, {s * n_inv}, {p}, [y, clamp, n_inv](detail::Node& n) {
        auto& pp = n.parents[0];
        pp->ensure_grad();
        for (std::size_t i = 0; i < pp->value.size(); ++i) {
            const double q = pp->value[i];
            if (q <= clamp || q >= 1.0 - clamp) continue;  // clamped region: flat
            pp->grad[i] += n.grad[0] * n_inv * (-y[i] / q + (1.0 - y[i]) / (1.0 - q));
        }
    }, "bce_mean");
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

// Runs reverse-mode accumulation from a scalar root. Each recorded op's
// backward rule fires exactly once, in reverse topological order.
inline void backward(const Tensor& root) {
    if (root.numel() != 1) throw std::logic_error("backward: root must be scalar");
    if (!root.requires_grad()) return;
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->ensure_grad();
    root.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backprop) {
            n->ensure_grad();
            n->backprop(*n);
        }
    }
}

}  // namespace q4dg
