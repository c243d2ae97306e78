#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "invfusion/degradations.hpp"
#include "invfusion/linop.hpp"
#include "invfusion/rng.hpp"

using namespace invfusion;

namespace {

template <class S>
Vec<S> random_image(Rng& rng, const ImageShape& shape, double scale = 1.0) {
    Vec<S> x(shape.dim());
    for (int64_t i = 0; i < x.size(); ++i) x[i] = S(scale * rng.normal());
    return x;
}

// Independent oracle: Moore-Penrose pinv of the materialized matrix via SVD.
Mat<double> svd_pinv(const Mat<double>& H) {
    Eigen::JacobiSVD<Mat<double>> svd(H, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double cutoff = sv.size() ? sv(0) * 1e-10 : 0.0;
    Vec<double> inv = Vec<double>::Zero(sv.size());
    for (int i = 0; i < sv.size(); ++i) inv[i] = sv(i) > cutoff ? 1.0 / sv(i) : 0.0;
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace

TEST_CASE("identity mask applies as flatten") {
    ImageShape shape{3, 4, 4};
    auto op = make_identity_mask<double>(shape);
    Rng rng(1);
    Vec<double> x = random_image<double>(rng, shape);
    Vec<double> y = op->apply(x);
    CHECK(y.size() == shape.dim());
    CHECK((y - x).norm() == doctest::Approx(0.0));
    // masks are self-pseudo-inverse
    CHECK((op->apply_pinv(y) - x).norm() == doctest::Approx(0.0));
}

TEST_CASE("zero operator maps everything to nothing") {
    ImageShape shape{3, 4, 4};
    auto op = zero_operator<double>(shape);
    CHECK(op->d() == 0);
    Rng rng(2);
    Vec<double> x = random_image<double>(rng, shape);
    CHECK(op->apply(x).size() == 0);
    CHECK(op->apply_pinv(Vec<double>()).isZero());
    CHECK(range_mse<double>(*op, x, Vec<double>()) == 0.0);
    // padded variant: measurements stay exactly zero
    auto padded = zero_operator<double>(shape, 16);
    Vec<double> y = padded->apply(x);
    CHECK(y.size() == 16);
    CHECK(y.isZero(0.0));
}

TEST_CASE("apply is linear (superposition)") {
    ImageShape shape{3, 8, 8};
    Rng rng(3);
    std::vector<OperatorPtr<double>> ops = {
        sample_patch_inpaint<double>(11, shape),
        sample_box_outpaint<double>(12, shape),
        sample_motion_blur<double>(13, shape),
        sample_matrix<double>(14, shape),
    };
    for (const auto& op : ops) {
        for (int t = 0; t < 5; ++t) {
            Vec<double> a = random_image<double>(rng, shape);
            Vec<double> b = random_image<double>(rng, shape);
            const double al = rng.uniform(-2, 2), be = rng.uniform(-2, 2);
            Vec<double> lhs = op->apply(al * a + be * b);
            Vec<double> rhs = al * op->apply(a) + be * op->apply(b);
            CHECK((lhs - rhs).norm() <= 1e-8 * (rhs.norm() + 1.0));
        }
    }
}

TEST_CASE("zero image maps to zero measurement") {
    ImageShape shape{3, 8, 8};
    auto op = sample_motion_blur<double>(5, shape);
    Vec<double> x = Vec<double>::Zero(shape.dim());
    CHECK(op->apply(x).isZero(1e-12));
}

TEST_CASE("random 4x12 matrix operator matches dense SVD pinv oracle") {
    ImageShape shape{3, 2, 2};  // D = 12
    Rng rng(7);
    Mat<double> H(4, 12);
    for (int i = 0; i < H.size(); ++i) H.data()[i] = rng.normal();
    auto op = std::make_shared<MatrixOperator<double>>(shape, H, 0.0);
    Mat<double> P = svd_pinv(H);
    for (int t = 0; t < 20; ++t) {
        Vec<double> x = random_image<double>(rng, shape);
        Vec<double> lhs = op->apply_pinv(op->apply(x));
        Vec<double> rhs = P * (H * x);
        CHECK((lhs - rhs).norm() <= 1e-9 * (rhs.norm() + 1.0));
    }
}

TEST_CASE("materialize matches apply on all families (8x8x3)") {
    ImageShape shape{3, 8, 8};
    Rng rng(9);
    std::vector<OperatorPtr<double>> ops = {
        sample_patch_inpaint<double>(21, shape),
        sample_box_outpaint<double>(22, shape),
        sample_motion_blur<double>(23, shape),
        sample_matrix<double>(24, shape),
        zero_operator<double>(shape),
    };
    for (const auto& op : ops) {
        Mat<double> H = materialize<double>(*op);
        CHECK(H.rows() == op->d_pad());
        for (int t = 0; t < 5; ++t) {
            Vec<double> x = random_image<double>(rng, shape);
            Vec<double> direct = op->apply(x);
            Vec<double> dense = op->d_pad() > 0 ? Vec<double>(H * x) : Vec<double>();
            CHECK((direct - dense).norm() <= 1e-8 * (dense.norm() + 1.0));
        }
        // pinv agrees with the dense oracle as a full matrix
        if (op->d() > 0) {
            Mat<double> P_direct = materialize_pinv<double>(*op);
            Mat<double> P_oracle = svd_pinv(H);
            CHECK((P_direct - P_oracle).norm() <= 1e-6 * (P_oracle.norm() + 1.0));
        }
    }
}

TEST_CASE("materialize refuses oversized problems") {
    ImageShape shape{3, 128, 128};
    auto op = zero_operator<double>(shape, 1);
    CHECK_THROWS(materialize<double>(*op));
}

TEST_CASE("Moore-Penrose identities across families") {
    ImageShape shape{3, 8, 8};
    Rng rng(31);
    for (int draw = 0; draw < 10; ++draw) {
        std::vector<OperatorPtr<double>> ops = {
            sample_patch_inpaint<double>(100 + draw, shape),
            sample_box_outpaint<double>(200 + draw, shape),
            sample_motion_blur<double>(300 + draw, shape),
            sample_matrix<double>(400 + draw, shape),
        };
        for (const auto& op : ops) {
            Vec<double> x = random_image<double>(rng, shape);
            Vec<double> y(op->d_pad());
            for (int64_t i = 0; i < op->d(); ++i) y[i] = rng.normal();
            auto err = moore_penrose_errors<double>(*op, x, y);
            CHECK(err.hph < 1e-8);
            CHECK(err.php < 1e-8);
        }
    }
}

TEST_CASE("project_consistent: fixed point, mask algebra, dense oracle") {
    ImageShape shape{3, 8, 8};
    Rng rng(41);

    SUBCASE("consistent input is unchanged") {
        auto op = sample_patch_inpaint<double>(51, shape);
        Vec<double> x = random_image<double>(rng, shape);
        Vec<double> y = op->apply(x);
        Vec<double> p = project_consistent<double>(*op, x, y);
        CHECK((p - x).norm() <= 1e-10);
    }

    SUBCASE("mask projection replaces kept pixels") {
        auto op = sample_patch_inpaint<double>(52, shape);
        Vec<double> xprime = random_image<double>(rng, shape);
        Vec<double> y = op->apply(xprime);
        Vec<double> x = random_image<double>(rng, shape);
        Vec<double> p = project_consistent<double>(*op, x, y);
        auto* mask = dynamic_cast<const MaskOperator<double>*>(op.get());
        REQUIRE(mask != nullptr);
        std::vector<bool> kept(size_t(shape.pixels()), false);
        for (int32_t k : mask->kept_positions()) kept[size_t(k)] = true;
        for (int c = 0; c < shape.c; ++c)
            for (int64_t pos = 0; pos < shape.pixels(); ++pos) {
                const int64_t idx = c * shape.pixels() + pos;
                const double expect = kept[size_t(pos)] ? xprime[idx] : x[idx];
                CHECK(p[idx] == doctest::Approx(expect).epsilon(1e-9));
            }
    }

    SUBCASE("random matrix: projected point satisfies the measurements") {
        auto op = sample_matrix<double>(53, shape);
        Vec<double> xprime = random_image<double>(rng, shape);
        Vec<double> y = op->apply(xprime);
        Vec<double> x = random_image<double>(rng, shape);
        Vec<double> p = project_consistent<double>(*op, x, y);
        CHECK((op->apply(p) - y).norm() <= 1e-8 * (y.norm() + 1.0));
        // idempotent
        Vec<double> pp = project_consistent<double>(*op, p, y);
        CHECK((pp - p).norm() <= 1e-9 * (p.norm() + 1.0));
    }
}

TEST_CASE("range_mse") {
    ImageShape shape{3, 8, 8};
    Rng rng(61);
    auto op = sample_patch_inpaint<double>(71, shape);
    Vec<double> x = random_image<double>(rng, shape);
    Vec<double> y = op->apply(x);
    CHECK(range_mse<double>(*op, x, y) == doctest::Approx(0.0));
    // shifting x changes the mse by a predictable amount on an identity mask
    auto id = make_identity_mask<double>(shape);
    Vec<double> y2 = id->apply(x);
    Vec<double> x2 = x + Vec<double>::Constant(shape.dim(), 0.1);
    CHECK(range_mse<double>(*id, x2, y2) == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("zero-padded coordinates never influence apply_pinv") {
    ImageShape shape{3, 8, 8};
    Rng rng(81);
    auto op = sample_patch_inpaint<double>(91, shape, 0.0, /*d_pad=*/shape.dim());
    CHECK(op->d_pad() == shape.dim());
    CHECK(op->d() < op->d_pad());
    Vec<double> y = Vec<double>::Zero(op->d_pad());
    for (int64_t i = 0; i < op->d(); ++i) y[i] = rng.normal();
    Vec<double> base = op->apply_pinv(y);
    Vec<double> y2 = y;
    for (int64_t i = op->d(); i < op->d_pad(); ++i) y2[i] = rng.normal();
    Vec<double> with_noise = op->apply_pinv(y2);
    CHECK((base - with_noise).norm() == 0.0);
    // and apply writes exact zeros into the padding
    Vec<double> x = random_image<double>(rng, shape);
    Vec<double> ya = op->apply(x);
    for (int64_t i = op->d(); i < op->d_pad(); ++i) CHECK(ya[i] == 0.0);
}

TEST_CASE("apply rejects wrong shapes") {
    ImageShape shape{3, 8, 8};
    auto op = sample_patch_inpaint<double>(101, shape);
    Vec<double> bad = Vec<double>::Zero(7);
    CHECK_THROWS_AS(op->apply(bad), shape_error);
    CHECK_THROWS_AS(op->apply_pinv(bad), shape_error);
}

TEST_CASE("float instantiation meets 32-bit tolerances") {
    ImageShape shape{3, 8, 8};
    Rng rng(111);
    std::vector<OperatorPtr<float>> ops = {
        sample_patch_inpaint<float>(121, shape),
        sample_box_outpaint<float>(122, shape),
        sample_motion_blur<float>(123, shape),
        sample_matrix<float>(124, shape),
    };
    for (const auto& op : ops) {
        Vec<float> x = random_image<float>(rng, shape);
        Vec<float> y(op->d_pad());
        y.setZero();
        for (int64_t i = 0; i < op->d(); ++i) y[i] = float(rng.normal());
        auto err = moore_penrose_errors<float>(*op, x, y);
        CHECK(err.hph < 1e-4f);
        CHECK(err.php < 1e-4f);
    }
}
