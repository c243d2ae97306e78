#ifndef INVFUSION_NN_HPP
#define INVFUSION_NN_HPP

#include <string>
#include <utility>
#include <vector>

#include "invfusion/autograd.hpp"
#include "invfusion/rng.hpp"

namespace invfusion::nn {

template <class S>
struct ParamStore {
    std::vector<std::pair<std::string, ag::Var<S>>> items;

    ag::Var<S> add(const std::string& name, Mat<S> init) {
        for (const auto& [n, v] : items)
            require_config(n != name, "duplicate parameter name: " + name);
        auto v = ag::leaf<S>(std::move(init));
        items.push_back({name, v});
        return v;
    }

    ag::Var<S> find(const std::string& name) const {
        for (const auto& [n, v] : items)
            if (n == name) return v;
        throw std::runtime_error("parameter not found: " + name);
    }

    int64_t scalar_count() const {
        int64_t n = 0;
        for (const auto& [_, v] : items) n += v->val.size();
        return n;
    }
};

template <class S>
Mat<S> normal_init(Rng& rng, int64_t rows, int64_t cols, S std_dev) {
    Mat<S> m(rows, cols);
    for (int64_t i = 0; i < m.size(); ++i) m.data()[i] = S(rng.normal()) * std_dev;
    return m;
}

// fan-in scaled init for a [in, out] weight used as x*W
template <class S>
Mat<S> linear_init(Rng& rng, int64_t in, int64_t out) {
    return normal_init<S>(rng, in, out, S(1) / S(std::sqrt(double(in))));
}

template <class S>
struct Adam {
    S lr = S(5e-5);
    S beta1 = S(0.9);
    S beta2 = S(0.99);
    S eps = S(1e-8);
    int64_t warmup = 0;  // linear LR ramp steps
    int64_t t = 0;
    std::vector<Mat<S>> m1, m2;  // aligned with ParamStore::items

    void ensure_state(const ParamStore<S>& ps) {
        if (!m1.empty()) return;
        for (const auto& [_, v] : ps.items) {
            m1.push_back(Mat<S>::Zero(v->val.rows(), v->val.cols()));
            m2.push_back(Mat<S>::Zero(v->val.rows(), v->val.cols()));
        }
    }

    void step(ParamStore<S>& ps, const std::vector<Mat<S>>& grads) {
        ensure_state(ps);
        ++t;
        S lr_t = lr;
        if (warmup > 0 && t < warmup) lr_t = lr * S(t) / S(warmup);
        const S bc1 = S(1) - S(std::pow(double(beta1), double(t)));
        const S bc2 = S(1) - S(std::pow(double(beta2), double(t)));
        for (size_t i = 0; i < ps.items.size(); ++i) {
            auto& p = ps.items[i].second->val;
            const Mat<S>& g = grads[i];
            m1[i] = beta1 * m1[i] + (S(1) - beta1) * g;
            m2[i] = beta2 * m2[i].array().matrix() +
                    (S(1) - beta2) * g.cwiseProduct(g);
            Mat<S> mhat = m1[i] / bc1;
            Mat<S> vhat = m2[i] / bc2;
            p.array() -= lr_t * mhat.array() / (vhat.array().sqrt() + eps);
        }
    }
};

// Collects this graph's gradients for every parameter, in registry order
// (missing entries are zero). Deterministic regardless of threading.
template <class S>
std::vector<Mat<S>> param_grads(const ParamStore<S>& ps, const ag::GradMap<S>& grads) {
    std::vector<Mat<S>> out;
    out.reserve(ps.items.size());
    for (const auto& [_, v] : ps.items) {
        const Mat<S>* g = grads.find(v.get());
        out.push_back(g ? *g : Mat<S>::Zero(v->val.rows(), v->val.cols()));
    }
    return out;
}

}  // namespace invfusion::nn

#endif
