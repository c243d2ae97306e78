#ifndef INVFUSION_LINOP_HPP
#define INVFUSION_LINOP_HPP

#include <json.hpp>
#include <memory>

#include "invfusion/common.hpp"

namespace invfusion {

// A linear degradation y = Hx. Measurements are length-d_pad vectors whose
// first d entries are real and whose tail is zero padding; apply_pinv and
// the transpose maps ignore padded coordinates entirely.
//
// Operators are immutable after construction and all four maps are pure,
// so they are safe to share across threads.
template <class S>
class LinearDegradation {
public:
    virtual ~LinearDegradation() = default;

    const ImageShape& shape_in() const { return shape_; }
    S sigma_n() const { return sigma_n_; }
    int64_t d() const { return d_; }
    int64_t d_pad() const { return d_pad_; }

    Vec<S> apply(const Vec<S>& x) const {
        require_shape(x.size() == shape_.dim(),
                      "apply: input has size " + std::to_string(x.size()) + ", operator expects " +
                          std::to_string(shape_.dim()) + " (" + shape_.str() + ")");
        Vec<S> y = Vec<S>::Zero(d_pad_);
        if (d_ > 0) apply_impl(x, y);
        return y;
    }

    Vec<S> apply_transpose(const Vec<S>& y) const {
        check_measurement(y);
        Vec<S> x = Vec<S>::Zero(shape_.dim());
        if (d_ > 0) apply_transpose_impl(y, x);
        return x;
    }

    Vec<S> apply_pinv(const Vec<S>& y) const {
        check_measurement(y);
        Vec<S> x = Vec<S>::Zero(shape_.dim());
        if (d_ > 0) apply_pinv_impl(y, x);
        return x;
    }

    Vec<S> apply_pinv_transpose(const Vec<S>& x) const {
        require_shape(x.size() == shape_.dim(), "apply_pinv_transpose: bad input size");
        Vec<S> y = Vec<S>::Zero(d_pad_);
        if (d_ > 0) apply_pinv_transpose_impl(x, y);
        return y;
    }

    // Serializable record (family tag + parameters + seed) that reconstructs
    // the operator bit-exactly; see degradations.hpp for the factory.
    virtual nlohmann::json descriptor() const = 0;

protected:
    LinearDegradation(ImageShape shape, int64_t d, S sigma_n, int64_t d_pad = -1)
        : shape_(shape), d_(d), d_pad_(d_pad < 0 ? d : d_pad), sigma_n_(sigma_n) {
        require_config(d_ >= 0, "operator rank d must be >= 0");
        require_config(d_pad_ >= d_, "d_pad must be >= d");
        require_config(sigma_n_ >= S(0), "sigma_n must be >= 0");
    }

    virtual void apply_impl(const Vec<S>& x, Vec<S>& y) const = 0;
    virtual void apply_transpose_impl(const Vec<S>& y, Vec<S>& x) const = 0;
    virtual void apply_pinv_impl(const Vec<S>& y, Vec<S>& x) const = 0;
    virtual void apply_pinv_transpose_impl(const Vec<S>& x, Vec<S>& y) const = 0;

    void check_measurement(const Vec<S>& y) const {
        require_shape(y.size() == d_pad_,
                      "measurement has length " + std::to_string(y.size()) + ", expected d_pad=" +
                          std::to_string(d_pad_));
    }

    ImageShape shape_;
    int64_t d_;
    int64_t d_pad_;
    S sigma_n_;
};

template <class S>
using OperatorPtr = std::shared_ptr<const LinearDegradation<S>>;

// Observation y together with the operator that produced it. Entries at
// indices >= valid_len are exactly zero.
template <class S>
struct Measurement {
    Vec<S> y;
    OperatorPtr<S> op;
    int64_t valid_len = 0;
};

// Dense realization of the operator, row i = H applied to the i-th basis
// image. Test oracle; guarded so nobody materializes a full-size problem.
template <class S>
Mat<S> materialize(const LinearDegradation<S>& op, int64_t guard = 16384) {
    const int64_t dim = op.shape_in().dim();
    require(dim <= guard, "materialize: input dimension " + std::to_string(dim) +
                              " exceeds guard " + std::to_string(guard));
    Mat<S> H(op.d_pad(), dim);
    Vec<S> e = Vec<S>::Zero(dim);
    for (int64_t j = 0; j < dim; ++j) {
        e[j] = S(1);
        H.col(j) = op.apply(e);
        e[j] = S(0);
    }
    return H;
}

template <class S>
Mat<S> materialize_pinv(const LinearDegradation<S>& op, int64_t guard = 16384) {
    const int64_t dim = op.shape_in().dim();
    require(dim <= guard, "materialize_pinv: dimension over guard");
    Mat<S> P(dim, op.d_pad());
    Vec<S> e = Vec<S>::Zero(op.d_pad());
    for (int64_t j = 0; j < op.d_pad(); ++j) {
        e[j] = S(1);
        P.col(j) = op.apply_pinv(e);
        e[j] = S(0);
    }
    return P;
}

// x - H^+(Hx - y): the orthogonal projection of x onto the affine subspace
// of measurement-consistent images. Defined for noiseless operators.
template <class S>
Vec<S> project_consistent(const LinearDegradation<S>& op, const Vec<S>& x, const Vec<S>& y) {
    Vec<S> r = op.apply(x) - y;
    return x - op.apply_pinv(r);
}

// ||Hx - y||^2 / max(d, 1) over the valid coordinates only.
template <class S>
S range_mse(const LinearDegradation<S>& op, const Vec<S>& x, const Vec<S>& y) {
    Vec<S> r = op.apply(x) - y;
    const int64_t d = op.d();
    if (d == 0) return S(0);
    return r.head(d).squaredNorm() / S(d);
}

// Relative Moore-Penrose residuals, used by the identity test suites.
template <class S>
struct MoorePenroseErrors {
    S hph;   // ||H H+ H x - H x|| / (||H x|| + eps)
    S php;   // ||H+ H H+ y - H+ y|| / (||H+ y|| + eps)
};

template <class S>
MoorePenroseErrors<S> moore_penrose_errors(const LinearDegradation<S>& op, const Vec<S>& x,
                                           const Vec<S>& y, S eps = S(1e-12)) {
    Vec<S> hx = op.apply(x);
    Vec<S> hph = op.apply(op.apply_pinv(hx));
    Vec<S> py = op.apply_pinv(y);
    Vec<S> php = op.apply_pinv(op.apply(py));
    MoorePenroseErrors<S> e;
    e.hph = (hph - hx).norm() / (hx.norm() + eps);
    e.php = (php - py).norm() / (py.norm() + eps);
    return e;
}

}  // namespace invfusion

#endif
