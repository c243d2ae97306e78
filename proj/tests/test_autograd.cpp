#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "invfusion/autograd.hpp"
#include "invfusion/degradations.hpp"
#include "invfusion/rng.hpp"

using namespace invfusion;
namespace agd = invfusion::ag;
using V = agd::Var<double>;

namespace {

Mat<double> random_mat(Rng& rng, int64_t r, int64_t c) {
    Mat<double> m(r, c);
    for (int64_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

// Central-difference check of d(scalar_fn)/d(leaf) against the tape.
// Returns the worst per-leaf relative L2 error ||g_fd - g_ad|| / (||g_fd|| + eps).
double grad_check(const std::function<V(const std::vector<V>&)>& fn, std::vector<V> leaves,
                  double h = 1e-6) {
    V out = fn(leaves);
    auto grads = agd::backward(out);
    double worst = 0.0;
    for (auto& leaf : leaves) {
        const Mat<double>* g = grads.find(leaf.get());
        REQUIRE(g != nullptr);
        Mat<double> fd(leaf->val.rows(), leaf->val.cols());
        for (int64_t i = 0; i < leaf->val.size(); ++i) {
            const double orig = leaf->val.data()[i];
            leaf->val.data()[i] = orig + h;
            const double fp = fn(leaves)->val(0, 0);
            leaf->val.data()[i] = orig - h;
            const double fm = fn(leaves)->val(0, 0);
            leaf->val.data()[i] = orig;
            fd.data()[i] = (fp - fm) / (2 * h);
        }
        worst = std::max(worst, (fd - *g).norm() / (fd.norm() + 1e-10));
    }
    return worst;
}

}  // namespace

TEST_CASE("elementwise / broadcast / reduction gradients match finite differences") {
    Rng rng(1);
    auto leaves = std::vector<V>{agd::leaf<double>(random_mat(rng, 3, 4)),
                                 agd::leaf<double>(random_mat(rng, 3, 4)),
                                 agd::leaf<double>(random_mat(rng, 1, 4))};
    auto fn = [](const std::vector<V>& L) {
        V x = agd::mul(agd::add(L[0], L[1]), agd::sub(L[0], agd::scale(L[1], 0.7)));
        x = agd::add_rowvec(x, L[2]);
        x = agd::mul_rowvec(x, L[2]);
        x = agd::gelu(x);
        return agd::mean(x);
    };
    CHECK(grad_check(fn, leaves) < 1e-6);
}

TEST_CASE("matmul / transpose / concat / slice gradients") {
    Rng rng(2);
    auto leaves = std::vector<V>{agd::leaf<double>(random_mat(rng, 3, 5)),
                                 agd::leaf<double>(random_mat(rng, 5, 4)),
                                 agd::leaf<double>(random_mat(rng, 3, 4))};
    auto fn = [](const std::vector<V>& L) {
        V y = agd::matmul(L[0], L[1]);    // 3x4
        V z = agd::concat_rows(y, L[2]);  // 6x4
        z = agd::slice_rows(z, 1, 4);
        V w = agd::concat_cols(z, agd::slice_cols(z, 0, 2));
        V t = agd::matmul(agd::transpose(w), w);
        return agd::mean(agd::mul(t, t));
    };
    CHECK(grad_check(fn, leaves) < 1e-5);
}

TEST_CASE("softmax, rms-norm, l2-norm gradients") {
    Rng rng(3);
    auto leaves = std::vector<V>{agd::leaf<double>(random_mat(rng, 4, 6))};
    auto fn = [](const std::vector<V>& L) {
        V s = agd::softmax_rows(L[0]);
        V r = agd::rms_norm_rows(L[0], 1e-6);
        V l = agd::l2_norm_rows(L[0], 1e-6);
        return agd::sum(agd::mul(s, agd::add(r, l)));
    };
    CHECK(grad_check(fn, leaves) < 1e-6);
}

TEST_CASE("reshape and gather are exact permutations with exact adjoints") {
    Rng rng(4);
    auto x = agd::leaf<double>(random_mat(rng, 4, 6));
    V r = agd::reshape(x, 3, 8);
    CHECK(r->val(0, 7) == x->val(1, 1));  // row-major order preserved

    std::vector<int64_t> perm(24);
    for (int i = 0; i < 24; ++i) perm[i] = (i * 7) % 24;  // bijection
    auto idx = agd::make_index_map(perm);
    auto fn = [idx](const std::vector<V>& L) {
        V g = agd::gather_flat(L[0], idx, 6, 4);
        return agd::mean(agd::mul(g, g));
    };
    CHECK(grad_check(fn, {x}) < 1e-6);

    // round trip through the inverse permutation is the identity
    std::vector<int64_t> inv(24);
    for (int i = 0; i < 24; ++i) inv[size_t(perm[i])] = i;
    V fwd = agd::gather_flat(x, idx, 6, 4);
    V back = agd::gather_flat(fwd, agd::make_index_map(inv), 4, 6);
    CHECK((back->val - x->val).norm() == 0.0);
}

TEST_CASE("rotary rotation is orthogonal and differentiates exactly") {
    Rng rng(5);
    Mat<double> ang = random_mat(rng, 4, 3);
    Mat<double> cosv = ang.array().cos();
    Mat<double> sinv = ang.array().sin();
    auto x = agd::leaf<double>(random_mat(rng, 4, 6));
    V y = agd::rotary(x, cosv, sinv);
    for (int i = 0; i < 4; ++i)
        CHECK(y->val.row(i).norm() == doctest::Approx(x->val.row(i).norm()).epsilon(1e-12));
    auto fn = [&](const std::vector<V>& L) {
        return agd::mean(agd::mul(agd::rotary(L[0], cosv, sinv), L[0]));
    };
    CHECK(grad_check(fn, {x}) < 1e-6);
}

TEST_CASE("scalar helpers: sqrt, reciprocal, scale_by, softplus, detach") {
    Rng rng(6);
    auto a = agd::leaf<double>(Mat<double>::Constant(1, 1, 2.37));
    auto x = agd::leaf<double>(random_mat(rng, 2, 3));
    auto fn = [](const std::vector<V>& L) {
        V s = agd::sqrt_scalar(agd::add_scalar(agd::mul(L[0], L[0]), 0.5));
        V r = agd::reciprocal_scalar(s);
        V y = agd::scale_by(L[1], r);
        return agd::sum(agd::softplus(y));
    };
    CHECK(grad_check(fn, {a, x}) < 1e-6);

    // detach blocks the gradient path
    V out = agd::sum(agd::mul(agd::detach(x), x));
    auto grads = agd::backward(out);
    const Mat<double>* g = grads.find(x.get());
    REQUIRE(g != nullptr);
    CHECK((*g - x->val).norm() == 0.0);
}

TEST_CASE("operator hooks backpropagate through H and H+ exactly") {
    ImageShape shape{3, 4, 4};
    Rng rng(7);
    auto op = sample_matrix<double>(17, shape);
    auto stack = agd::leaf<double>(random_mat(rng, 2, shape.dim()));
    Mat<double> target = random_mat(rng, 2, op->d_pad());

    auto fn = [&](const std::vector<V>& L) {
        V y = agd::op_apply_rows(L[0], *op);
        V d = agd::sub(y, agd::constant<double>(target));
        V back = agd::op_pinv_rows(d, *op);
        return agd::mean(agd::mul(back, back));
    };
    CHECK(grad_check(fn, {stack}) < 1e-6);

    // blur operator too (FFT path with nontrivial adjoints)
    auto blur = sample_motion_blur<double>(23, ImageShape{3, 8, 8});
    auto st2 = agd::leaf<double>(random_mat(rng, 1, 192));
    Mat<double> t2 = random_mat(rng, 1, blur->d_pad());
    auto fn2 = [&](const std::vector<V>& L) {
        V y = agd::op_apply_rows(L[0], *blur);
        V d = agd::sub(y, agd::constant<double>(t2));
        V back = agd::op_pinv_rows(d, *blur);
        return agd::mean(agd::mul(back, back));
    };
    CHECK(grad_check(fn2, {st2}, 1e-5) < 1e-5);
}

TEST_CASE("shared subexpressions accumulate gradients once per path") {
    // f(x) = sum((x + x) .* x) = 2*sum(x^2); df/dx = 4x
    Rng rng(8);
    auto x = agd::leaf<double>(random_mat(rng, 3, 3));
    V out = agd::sum(agd::mul(agd::add(x, x), x));
    auto grads = agd::backward(out);
    const Mat<double>* g = grads.find(x.get());
    REQUIRE(g != nullptr);
    CHECK((*g - 4.0 * x->val).norm() < 1e-12);
}

TEST_CASE("constants do not appear in the gradient map") {
    auto c = agd::constant<double>(Mat<double>::Ones(2, 2));
    auto x = agd::leaf<double>(Mat<double>::Ones(2, 2));
    V out = agd::sum(agd::mul(c, x));
    auto grads = agd::backward(out);
    CHECK(grads.find(c.get()) == nullptr);
    CHECK(grads.find(x.get()) != nullptr);
}

TEST_CASE("mean_over_rows") {
    Rng rng(9);
    auto x = agd::leaf<double>(random_mat(rng, 5, 3));
    auto fn = [](const std::vector<V>& L) {
        V m = agd::mean_over_rows(L[0]);
        return agd::sum(agd::mul(m, m));
    };
    CHECK(grad_check(fn, {x}) < 1e-6);
}
