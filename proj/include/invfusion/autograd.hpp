#ifndef INVFUSION_AUTOGRAD_HPP
#define INVFUSION_AUTOGRAD_HPP

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "invfusion/common.hpp"
#include "invfusion/linop.hpp"

// Small reverse-mode tape over flat Eigen arrays. Values are 2-D (rows x
// cols); images and vectors are single-row or single-column as convenient.
// Gradients are accumulated into a per-call map rather than into the nodes,
// so concurrent backward passes over shared weights are safe.
namespace invfusion::ag {

template <class S>
struct Node;
template <class S>
using Var = std::shared_ptr<Node<S>>;

template <class S>
struct GradMap {
    std::unordered_map<const Node<S>*, Mat<S>> g;

    void add(const Node<S>* n, const Mat<S>& v) {
        auto it = g.find(n);
        if (it == g.end())
            g.emplace(n, v);
        else
            it->second += v;
    }
    const Mat<S>* find(const Node<S>* n) const {
        auto it = g.find(n);
        return it == g.end() ? nullptr : &it->second;
    }
};

template <class S>
struct Node {
    Mat<S> val;
    bool needs_grad = false;
    std::vector<Var<S>> parents;
    // propagates the accumulated gradient of this node into the parents
    std::function<void(const Mat<S>&, GradMap<S>&)> backward;

    int64_t rows() const { return val.rows(); }
    int64_t cols() const { return val.cols(); }
};

template <class S>
Var<S> constant(Mat<S> v) {
    auto n = std::make_shared<Node<S>>();
    n->val = std::move(v);
    return n;
}

template <class S>
Var<S> leaf(Mat<S> v) {
    auto n = std::make_shared<Node<S>>();
    n->val = std::move(v);
    n->needs_grad = true;
    return n;
}

template <class S>
bool any_grad(const std::initializer_list<Var<S>>& vs) {
    for (const auto& v : vs)
        if (v && v->needs_grad) return true;
    return false;
}

template <class S>
Var<S> make_op(Mat<S> val, std::vector<Var<S>> parents,
               std::function<void(const Mat<S>&, GradMap<S>&)> bwd) {
    auto n = std::make_shared<Node<S>>();
    n->val = std::move(val);
    bool ng = false;
    for (const auto& p : parents) ng = ng || p->needs_grad;
    n->needs_grad = ng;
    if (ng) {
        n->parents = std::move(parents);
        n->backward = std::move(bwd);
    }
    return n;
}

// --- graph traversal ---------------------------------------------------

template <class S>
void topo_collect(const Var<S>& root, std::vector<const Node<S>*>& order) {
    std::unordered_set<const Node<S>*> seen;
    std::vector<std::pair<const Node<S>*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            const Node<S>* p = node->parents[idx].get();
            ++idx;
            if (p->needs_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

// Reverse-mode sweep from a scalar (or any) root; returns gradients for every
// node that needs them. Root gradient defaults to ones.
template <class S>
GradMap<S> backward(const Var<S>& root) {
    GradMap<S> grads;
    if (!root->needs_grad) return grads;
    std::vector<const Node<S>*> order;
    topo_collect(root, order);  // parents before children
    grads.add(root.get(), Mat<S>::Ones(root->rows(), root->cols()));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Node<S>* n = *it;
        if (!n->backward) continue;
        const Mat<S>* g = grads.find(n);
        if (!g) continue;
        n->backward(*g, grads);
    }
    return grads;
}

// --- elementwise and scalar ops -----------------------------------------

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    require_shape(a->rows() == b->rows() && a->cols() == b->cols(), "add: shape mismatch");
    return make_op<S>(a->val + b->val, {a, b}, [a, b](const Mat<S>& g, GradMap<S>& m) {
        if (a->needs_grad) m.add(a.get(), g);
        if (b->needs_grad) m.add(b.get(), g);
    });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
    require_shape(a->rows() == b->rows() && a->cols() == b->cols(), "sub: shape mismatch");
    return make_op<S>(a->val - b->val, {a, b}, [a, b](const Mat<S>& g, GradMap<S>& m) {
        if (a->needs_grad) m.add(a.get(), g);
        if (b->needs_grad) m.add(b.get(), Mat<S>(-g));
    });
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
    require_shape(a->rows() == b->rows() && a->cols() == b->cols(), "mul: shape mismatch");
    return make_op<S>(a->val.cwiseProduct(b->val), {a, b},
                      [a, b](const Mat<S>& g, GradMap<S>& m) {
                          if (a->needs_grad) m.add(a.get(), g.cwiseProduct(b->val));
                          if (b->needs_grad) m.add(b.get(), g.cwiseProduct(a->val));
                      });
}

template <class S>
Var<S> scale(const Var<S>& a, S s) {
    return make_op<S>(a->val * s, {a}, [a, s](const Mat<S>& g, GradMap<S>& m) {
        m.add(a.get(), Mat<S>(g * s));
    });
}

template <class S>
Var<S> add_scalar(const Var<S>& a, S s) {
    return make_op<S>(a->val.array() + s, {a},
                      [a](const Mat<S>& g, GradMap<S>& m) { m.add(a.get(), g); });
}

// product with a scalar-valued (1x1) variable
template <class S>
Var<S> scale_by(const Var<S>& a, const Var<S>& s) {
    require_shape(s->rows() == 1 && s->cols() == 1, "scale_by: scalar must be 1x1");
    return make_op<S>(a->val * s->val(0, 0), {a, s}, [a, s](const Mat<S>& g, GradMap<S>& m) {
        if (a->needs_grad) m.add(a.get(), Mat<S>(g * s->val(0, 0)));
        if (s->needs_grad) {
            Mat<S> gs(1, 1);
            gs(0, 0) = (g.array() * a->val.array()).sum();
            m.add(s.get(), gs);
        }
    });
}

template <class S>
Var<S> gelu(const Var<S>& a) {
    const S inv_sqrt2 = S(0.70710678118654752440);
    const S inv_sqrt2pi = S(0.39894228040143267794);
    Mat<S> y = a->val.unaryExpr([=](S x) { return S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2)); });
    return make_op<S>(std::move(y), {a}, [a, inv_sqrt2, inv_sqrt2pi](const Mat<S>& g, GradMap<S>& m) {
        Mat<S> d = a->val.unaryExpr([=](S x) {
            const S cdf = S(0.5) * (S(1) + std::erf(x * inv_sqrt2));
            const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * x * x);
            return cdf + x * pdf;
        });
        m.add(a.get(), g.cwiseProduct(d));
    });
}

template <class S>
Var<S> softplus(const Var<S>& a) {
    Mat<S> y = a->val.unaryExpr([](S x) {
        return x > S(20) ? x : std::log1p(std::exp(x));
    });
    return make_op<S>(std::move(y), {a}, [a](const Mat<S>& g, GradMap<S>& m) {
        Mat<S> d = a->val.unaryExpr([](S x) { return S(1) / (S(1) + std::exp(-x)); });
        m.add(a.get(), g.cwiseProduct(d));
    });
}

template <class S>
Var<S> square(const Var<S>& a) {
    return mul(a, a);
}

// --- matrix ops ----------------------------------------------------------

template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
    require_shape(a->cols() == b->rows(), "matmul: inner dimensions differ");
    return make_op<S>(a->val * b->val, {a, b}, [a, b](const Mat<S>& g, GradMap<S>& m) {
        if (a->needs_grad) m.add(a.get(), Mat<S>(g * b->val.transpose()));
        if (b->needs_grad) m.add(b.get(), Mat<S>(a->val.transpose() * g));
    });
}

template <class S>
Var<S> transpose(const Var<S>& a) {
    return make_op<S>(a->val.transpose(), {a}, [a](const Mat<S>& g, GradMap<S>& m) {
        m.add(a.get(), Mat<S>(g.transpose()));
    });
}

// x[r,c] + v[1,c] broadcast over rows
template <class S>
Var<S> add_rowvec(const Var<S>& x, const Var<S>& v) {
    require_shape(v->rows() == 1 && v->cols() == x->cols(), "add_rowvec: bad shapes");
    Mat<S> y = x->val;
    y.rowwise() += v->val.row(0);
    return make_op<S>(std::move(y), {x, v}, [x, v](const Mat<S>& g, GradMap<S>& m) {
        if (x->needs_grad) m.add(x.get(), g);
        if (v->needs_grad) m.add(v.get(), Mat<S>(g.colwise().sum()));
    });
}

template <class S>
Var<S> mul_rowvec(const Var<S>& x, const Var<S>& v) {
    require_shape(v->rows() == 1 && v->cols() == x->cols(), "mul_rowvec: bad shapes");
    Mat<S> y = x->val.array().rowwise() * v->val.row(0).array();
    return make_op<S>(std::move(y), {x, v}, [x, v](const Mat<S>& g, GradMap<S>& m) {
        if (x->needs_grad) m.add(x.get(), Mat<S>(g.array().rowwise() * v->val.row(0).array()));
        if (v->needs_grad)
            m.add(v.get(), Mat<S>((g.array() * x->val.array()).colwise().sum()));
    });
}

// x[r,c] + u[r,1] broadcast over columns
template <class S>
Var<S> add_colvec(const Var<S>& x, const Var<S>& u) {
    require_shape(u->cols() == 1 && u->rows() == x->rows(), "add_colvec: bad shapes");
    Mat<S> y = x->val;
    y.colwise() += Vec<S>(u->val.col(0));
    return make_op<S>(std::move(y), {x, u}, [x, u](const Mat<S>& g, GradMap<S>& m) {
        if (x->needs_grad) m.add(x.get(), g);
        if (u->needs_grad) m.add(u.get(), Mat<S>(g.rowwise().sum()));
    });
}

template <class S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b = nullptr) {
    Var<S> y = matmul(x, w);
    if (b) y = add_rowvec(y, b);
    return y;
}

template <class S>
Var<S> concat_cols(const Var<S>& a, const Var<S>& b) {
    require_shape(a->rows() == b->rows(), "concat_cols: row mismatch");
    Mat<S> y(a->rows(), a->cols() + b->cols());
    y << a->val, b->val;
    auto ac = a->cols();
    return make_op<S>(std::move(y), {a, b}, [a, b, ac](const Mat<S>& g, GradMap<S>& m) {
        if (a->needs_grad) m.add(a.get(), Mat<S>(g.leftCols(ac)));
        if (b->needs_grad) m.add(b.get(), Mat<S>(g.rightCols(g.cols() - ac)));
    });
}

template <class S>
Var<S> concat_rows(const Var<S>& a, const Var<S>& b) {
    require_shape(a->cols() == b->cols(), "concat_rows: col mismatch");
    Mat<S> y(a->rows() + b->rows(), a->cols());
    y << a->val, b->val;
    auto ar = a->rows();
    return make_op<S>(std::move(y), {a, b}, [a, b, ar](const Mat<S>& g, GradMap<S>& m) {
        if (a->needs_grad) m.add(a.get(), Mat<S>(g.topRows(ar)));
        if (b->needs_grad) m.add(b.get(), Mat<S>(g.bottomRows(g.rows() - ar)));
    });
}

template <class S>
Var<S> slice_cols(const Var<S>& a, int64_t c0, int64_t n) {
    require_shape(c0 >= 0 && c0 + n <= a->cols(), "slice_cols: out of range");
    return make_op<S>(a->val.middleCols(c0, n), {a}, [a, c0, n](const Mat<S>& g, GradMap<S>& m) {
        Mat<S> full = Mat<S>::Zero(a->rows(), a->cols());
        full.middleCols(c0, n) = g;
        m.add(a.get(), full);
    });
}

template <class S>
Var<S> slice_rows(const Var<S>& a, int64_t r0, int64_t n) {
    require_shape(r0 >= 0 && r0 + n <= a->rows(), "slice_rows: out of range");
    return make_op<S>(a->val.middleRows(r0, n), {a}, [a, r0, n](const Mat<S>& g, GradMap<S>& m) {
        Mat<S> full = Mat<S>::Zero(a->rows(), a->cols());
        full.middleRows(r0, n) = g;
        m.add(a.get(), full);
    });
}

// Reinterpret the flat storage with a new (rows, cols) shape. Both layouts
// are visited in row-major element order.
template <class S>
Var<S> reshape(const Var<S>& a, int64_t rows, int64_t cols) {
    require_shape(rows * cols == a->rows() * a->cols(), "reshape: size mismatch");
    RowMat<S> rm = a->val;  // row-major copy
    RowMat<S> out = Eigen::Map<RowMat<S>>(rm.data(), rows, cols);
    auto ar = a->rows(), ac = a->cols();
    return make_op<S>(Mat<S>(out), {a}, [a, ar, ac](const Mat<S>& g, GradMap<S>& m) {
        RowMat<S> gr = g;
        Mat<S> back = Eigen::Map<RowMat<S>>(gr.data(), ar, ac);
        m.add(a.get(), back);
    });
}

using IndexMap = std::shared_ptr<const std::vector<int64_t>>;

inline IndexMap make_index_map(std::vector<int64_t> idx) {
    return std::make_shared<const std::vector<int64_t>>(std::move(idx));
}

// out.data[i] = in.data[idx[i]] over row-major flattened storage. idx need
// not be a bijection; backward scatter-adds.
template <class S>
Var<S> gather_flat(const Var<S>& a, const IndexMap& idx, int64_t rows, int64_t cols) {
    require_shape(int64_t(idx->size()) == rows * cols, "gather_flat: index length mismatch");
    RowMat<S> src = a->val;
    const S* sp = src.data();
    RowMat<S> out(rows, cols);
    S* op = out.data();
    for (size_t i = 0; i < idx->size(); ++i) op[i] = sp[size_t((*idx)[i])];
    auto ar = a->rows(), ac = a->cols();
    return make_op<S>(Mat<S>(out), {a}, [a, idx, ar, ac](const Mat<S>& g, GradMap<S>& m) {
        RowMat<S> gr = g;
        const S* gp = gr.data();
        RowMat<S> back = RowMat<S>::Zero(ar, ac);
        S* bp = back.data();
        for (size_t i = 0; i < idx->size(); ++i) bp[size_t((*idx)[i])] += gp[i];
        m.add(a.get(), Mat<S>(back));
    });
}

// mean over the row axis -> [1, c]
template <class S>
Var<S> mean_over_rows(const Var<S>& a) {
    const S inv = S(1) / S(a->rows());
    Mat<S> y = a->val.colwise().sum() * inv;
    return make_op<S>(std::move(y), {a}, [a, inv](const Mat<S>& g, GradMap<S>& m) {
        Mat<S> out = (g * inv).replicate(a->rows(), 1);
        m.add(a.get(), out);
    });
}

// --- reductions and norms --------------------------------------------------

template <class S>
Var<S> sum(const Var<S>& a) {
    Mat<S> y(1, 1);
    y(0, 0) = a->val.sum();
    return make_op<S>(std::move(y), {a}, [a](const Mat<S>& g, GradMap<S>& m) {
        m.add(a.get(), Mat<S>(Mat<S>::Constant(a->rows(), a->cols(), g(0, 0))));
    });
}

template <class S>
Var<S> mean(const Var<S>& a) {
    const S n = S(a->rows() * a->cols());
    return scale(sum(a), S(1) / n);
}

template <class S>
Var<S> dot(const Var<S>& a, const Var<S>& b) {
    return sum(mul(a, b));
}

template <class S>
Var<S> mse(const Var<S>& a, const Var<S>& b) {
    Var<S> d = sub(a, b);
    return mean(mul(d, d));
}

// sqrt of a positive scalar (1x1)
template <class S>
Var<S> sqrt_scalar(const Var<S>& a, S eps = S(0)) {
    require_shape(a->rows() == 1 && a->cols() == 1, "sqrt_scalar: not scalar");
    Mat<S> y(1, 1);
    y(0, 0) = std::sqrt(a->val(0, 0) + eps);
    const S inv = S(0.5) / y(0, 0);
    return make_op<S>(std::move(y), {a}, [a, inv](const Mat<S>& g, GradMap<S>& m) {
        Mat<S> gg(1, 1);
        gg(0, 0) = g(0, 0) * inv;
        m.add(a.get(), gg);
    });
}

template <class S>
Var<S> reciprocal_scalar(const Var<S>& a) {
    require_shape(a->rows() == 1 && a->cols() == 1, "reciprocal_scalar: not scalar");
    const S v = a->val(0, 0);
    Mat<S> y(1, 1);
    y(0, 0) = S(1) / v;
    return make_op<S>(std::move(y), {a}, [a, v](const Mat<S>& g, GradMap<S>& m) {
        Mat<S> gg(1, 1);
        gg(0, 0) = -g(0, 0) / (v * v);
        m.add(a.get(), gg);
    });
}

// stop-gradient: value passes, gradient does not
template <class S>
Var<S> detach(const Var<S>& a) {
    return constant<S>(a->val);
}

// --- normalization ----------------------------------------------------------

// Row-wise RMS normalization: y_i = x_i / sqrt(mean(x_i^2) + eps).
template <class S>
Var<S> rms_norm_rows(const Var<S>& x, S eps) {
    const int64_t r = x->rows(), c = x->cols();
    Vec<S> inv(r);
    for (int64_t i = 0; i < r; ++i)
        inv[i] = S(1) / std::sqrt(x->val.row(i).squaredNorm() / S(c) + eps);
    Mat<S> y = x->val.array().colwise() * inv.array();
    return make_op<S>(std::move(y), {x}, [x, inv, c](const Mat<S>& g, GradMap<S>& m) {
        // dy/dx = inv * (I - (inv^2/c) x x^T) per row
        Mat<S> out(x->rows(), x->cols());
        for (int64_t i = 0; i < x->rows(); ++i) {
            const S gi_dot_x = g.row(i).dot(x->val.row(i));
            out.row(i) = inv[i] * g.row(i) -
                         (inv[i] * inv[i] * inv[i] / S(c)) * gi_dot_x * x->val.row(i);
        }
        m.add(x.get(), out);
    });
}

// Row-wise L2 normalization: y_i = x_i / sqrt(||x_i||^2 + eps).
template <class S>
Var<S> l2_norm_rows(const Var<S>& x, S eps) {
    const int64_t r = x->rows();
    Vec<S> inv(r);
    for (int64_t i = 0; i < r; ++i)
        inv[i] = S(1) / std::sqrt(x->val.row(i).squaredNorm() + eps);
    Mat<S> y = x->val.array().colwise() * inv.array();
    return make_op<S>(std::move(y), {x}, [x, inv](const Mat<S>& g, GradMap<S>& m) {
        Mat<S> out(x->rows(), x->cols());
        for (int64_t i = 0; i < x->rows(); ++i) {
            const S gi_dot_x = g.row(i).dot(x->val.row(i));
            out.row(i) = inv[i] * g.row(i) - (inv[i] * inv[i] * inv[i]) * gi_dot_x * x->val.row(i);
        }
        m.add(x.get(), out);
    });
}

template <class S>
Var<S> softmax_rows(const Var<S>& x) {
    Mat<S> y(x->rows(), x->cols());
    for (int64_t i = 0; i < x->rows(); ++i) {
        Vec<S> row = x->val.row(i).transpose();
        const S mx = row.maxCoeff();
        Vec<S> e = (row.array() - mx).exp();
        y.row(i) = (e / e.sum()).transpose();
    }
    return make_op<S>(std::move(y), {x}, [x, y](const Mat<S>& g, GradMap<S>& m) {
        Mat<S> out(x->rows(), x->cols());
        for (int64_t i = 0; i < x->rows(); ++i) {
            const S dot = g.row(i).dot(y.row(i));
            out.row(i) = y.row(i).array() * (g.row(i).array() - dot);
        }
        m.add(x.get(), out);
    });
}

// --- rotary position encoding -----------------------------------------------

// Rotates consecutive column pairs by per-(row, pair) angles. cos/sin have
// shape [rows, cols/2]. Orthogonal, so backward is rotation by the negated
// angles.
template <class S>
Var<S> rotary(const Var<S>& x, const Mat<S>& cosv, const Mat<S>& sinv) {
    require_shape(x->cols() % 2 == 0, "rotary: odd column count");
    require_shape(cosv.rows() == x->rows() && cosv.cols() == x->cols() / 2, "rotary: bad angles");
    Mat<S> y(x->rows(), x->cols());
    for (int64_t i = 0; i < x->rows(); ++i)
        for (int64_t p = 0; p < x->cols() / 2; ++p) {
            const S c = cosv(i, p), s = sinv(i, p);
            const S a = x->val(i, 2 * p), b = x->val(i, 2 * p + 1);
            y(i, 2 * p) = c * a - s * b;
            y(i, 2 * p + 1) = s * a + c * b;
        }
    return make_op<S>(std::move(y), {x}, [x, cosv, sinv](const Mat<S>& g, GradMap<S>& m) {
        Mat<S> out(x->rows(), x->cols());
        for (int64_t i = 0; i < x->rows(); ++i)
            for (int64_t p = 0; p < x->cols() / 2; ++p) {
                const S c = cosv(i, p), s = sinv(i, p);
                const S a = g(i, 2 * p), b = g(i, 2 * p + 1);
                out(i, 2 * p) = c * a + s * b;
                out(i, 2 * p + 1) = -s * a + c * b;
            }
        m.add(x.get(), out);
    });
}

// --- degradation operator hooks ----------------------------------------------

// Applies H to each row of a [k, D] stack, giving [k, d_pad]. Backward uses
// the exact adjoint H^T.
template <class S>
Var<S> op_apply_rows(const Var<S>& a, const LinearDegradation<S>& op) {
    require_shape(a->cols() == op.shape_in().dim(), "op_apply_rows: bad stack width");
    Mat<S> y(a->rows(), op.d_pad());
    for (int64_t i = 0; i < a->rows(); ++i)
        y.row(i) = op.apply(Vec<S>(a->val.row(i).transpose())).transpose();
    const auto* p = &op;
    return make_op<S>(std::move(y), {a}, [a, p](const Mat<S>& g, GradMap<S>& m) {
        Mat<S> out(a->rows(), a->cols());
        for (int64_t i = 0; i < a->rows(); ++i)
            out.row(i) = p->apply_transpose(Vec<S>(g.row(i).transpose())).transpose();
        m.add(a.get(), out);
    });
}

// Applies H^+ to each row of a [k, d_pad] stack, giving [k, D]. Backward
// uses (H^+)^T.
template <class S>
Var<S> op_pinv_rows(const Var<S>& a, const LinearDegradation<S>& op) {
    require_shape(a->cols() == op.d_pad(), "op_pinv_rows: bad measurement width");
    Mat<S> y(a->rows(), op.shape_in().dim());
    for (int64_t i = 0; i < a->rows(); ++i)
        y.row(i) = op.apply_pinv(Vec<S>(a->val.row(i).transpose())).transpose();
    const auto* p = &op;
    return make_op<S>(std::move(y), {a}, [a, p](const Mat<S>& g, GradMap<S>& m) {
        Mat<S> out(a->rows(), a->cols());
        for (int64_t i = 0; i < a->rows(); ++i)
            out.row(i) = p->apply_pinv_transpose(Vec<S>(g.row(i).transpose())).transpose();
        m.add(a.get(), out);
    });
}

}  // namespace invfusion::ag

#endif
