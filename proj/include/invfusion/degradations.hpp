#ifndef INVFUSION_DEGRADATIONS_HPP
#define INVFUSION_DEGRADATIONS_HPP

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "invfusion/fft2.hpp"
#include "invfusion/linop.hpp"
#include "invfusion/rng.hpp"

namespace invfusion {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Masks (patch in-painting, box out-painting, identity). A mask keeps a set
// of spatial positions across all channels; its pseudo-inverse is its
// transpose because the rows are orthonormal.
// ---------------------------------------------------------------------------
template <class S>
class MaskOperator final : public LinearDegradation<S> {
public:
    MaskOperator(ImageShape shape, std::vector<int32_t> kept_positions, S sigma_n,
                 std::string family, json params, int64_t d_pad = -1)
        : LinearDegradation<S>(shape, int64_t(kept_positions.size()) * shape.c, sigma_n, d_pad),
          kept_(std::move(kept_positions)),
          family_(std::move(family)),
          params_(std::move(params)) {
        for (int32_t p : kept_)
            require_config(p >= 0 && p < shape.pixels(), "mask position out of range");
    }

    const std::vector<int32_t>& kept_positions() const { return kept_; }

    json descriptor() const override {
        json d;
        d["family"] = family_;
        d["shape"] = {this->shape_.c, this->shape_.h, this->shape_.w};
        d["sigma_n"] = double(this->sigma_n_);
        d["d_pad"] = this->d_pad_;
        d["params"] = params_;
        d["params"]["kept_positions"] = kept_;
        return d;
    }

protected:
    void apply_impl(const Vec<S>& x, Vec<S>& y) const override {
        const int64_t np = int64_t(kept_.size()), hw = this->shape_.pixels();
        for (int c = 0; c < this->shape_.c; ++c)
            for (int64_t i = 0; i < np; ++i) y[c * np + i] = x[c * hw + kept_[i]];
    }
    void apply_transpose_impl(const Vec<S>& y, Vec<S>& x) const override {
        const int64_t np = int64_t(kept_.size()), hw = this->shape_.pixels();
        for (int c = 0; c < this->shape_.c; ++c)
            for (int64_t i = 0; i < np; ++i) x[c * hw + kept_[i]] = y[c * np + i];
    }
    void apply_pinv_impl(const Vec<S>& y, Vec<S>& x) const override {
        apply_transpose_impl(y, x);
    }
    void apply_pinv_transpose_impl(const Vec<S>& x, Vec<S>& y) const override {
        apply_impl(x, y);
    }

private:
    std::vector<int32_t> kept_;
    std::string family_;
    json params_;
};

// ---------------------------------------------------------------------------
// Strided motion blur: circular convolution with an image-sized kernel
// followed by subsampling with stride s, both executed in frequency space.
// Frequencies alias in groups of s*s; each group is a 1 x s^2 block whose
// pseudo-inverse is formed per group with a magnitude threshold.
// ---------------------------------------------------------------------------
template <class S>
class StridedBlurOperator final : public LinearDegradation<S> {
public:
    StridedBlurOperator(ImageShape shape, const Mat<S>& kernel, int stride, S sigma_n,
                        S pinv_threshold = S(1e-6), int64_t d_pad = -1,
                        json sample_params = json())
        : LinearDegradation<S>(shape,
                               int64_t(shape.c) * (shape.h / stride) * (shape.w / stride),
                               sigma_n, d_pad),
          stride_(stride),
          tau_(pinv_threshold),
          sample_params_(std::move(sample_params)) {
        require_config(stride >= 1, "stride must be >= 1");
        require_config(shape.h % stride == 0 && shape.w % stride == 0,
                       "image dims must be divisible by the stride");
        require_config(kernel.rows() == shape.h && kernel.cols() == shape.w,
                       "kernel must be image-sized");
        kernel_ = kernel;
        khat_ = fft2<S>(kernel);
        mh_ = shape.h / stride;
        mw_ = shape.w / stride;
        // Unitary per-group norms: ||w_g||^2 = sum_a |Khat_a|^2 / s^2.
        group_norm2_ = Mat<S>::Zero(mh_, mw_);
        const S s2 = S(stride) * S(stride);
        for (int u = 0; u < mh_; ++u)
            for (int v = 0; v < mw_; ++v) {
                S acc = S(0);
                for (int a = 0; a < stride; ++a)
                    for (int b = 0; b < stride; ++b)
                        acc += std::norm(khat_(u + a * mh_, v + b * mw_));
                group_norm2_(u, v) = acc / s2;
            }
    }

    int stride() const { return stride_; }
    const Mat<S>& kernel() const { return kernel_; }

    json descriptor() const override {
        json d;
        d["family"] = "strided_motion_blur";
        d["shape"] = {this->shape_.c, this->shape_.h, this->shape_.w};
        d["sigma_n"] = double(this->sigma_n_);
        d["d_pad"] = this->d_pad_;
        json p = sample_params_;
        p["stride"] = stride_;
        p["pinv_threshold"] = double(tau_);
        if (!p.contains("seed")) {
            std::vector<double> k(kernel_.data(), kernel_.data() + kernel_.size());
            p["kernel"] = k;
        }
        d["params"] = p;
        return d;
    }

protected:
    void apply_impl(const Vec<S>& x, Vec<S>& y) const override {
        const S s2 = S(stride_) * S(stride_);
        for (int c = 0; c < this->shape_.c; ++c) {
            CMat<S> X = fft2<S>(channel(x, c));
            CMat<S> Z = CMat<S>::Zero(mh_, mw_);
            for (int u = 0; u < mh_; ++u)
                for (int v = 0; v < mw_; ++v) {
                    std::complex<S> acc(0, 0);
                    for (int a = 0; a < stride_; ++a)
                        for (int b = 0; b < stride_; ++b) {
                            const int uu = u + a * mh_, vv = v + b * mw_;
                            acc += khat_(uu, vv) * X(uu, vv);
                        }
                    Z(u, v) = acc / s2;
                }
            write_channel(y, c, ifft2_real<S>(Z), mh_, mw_);
        }
    }

    void apply_transpose_impl(const Vec<S>& y, Vec<S>& x) const override {
        scatter(y, x, /*divide_by_group_norm=*/false);
    }
    void apply_pinv_impl(const Vec<S>& y, Vec<S>& x) const override {
        scatter(y, x, /*divide_by_group_norm=*/true);
    }
    void apply_pinv_transpose_impl(const Vec<S>& x, Vec<S>& y) const override {
        const S s2 = S(stride_) * S(stride_);
        for (int c = 0; c < this->shape_.c; ++c) {
            CMat<S> X = fft2<S>(channel(x, c));
            CMat<S> Z = CMat<S>::Zero(mh_, mw_);
            for (int u = 0; u < mh_; ++u)
                for (int v = 0; v < mw_; ++v) {
                    if (!active(u, v)) continue;
                    std::complex<S> acc(0, 0);
                    for (int a = 0; a < stride_; ++a)
                        for (int b = 0; b < stride_; ++b) {
                            const int uu = u + a * mh_, vv = v + b * mw_;
                            acc += khat_(uu, vv) * X(uu, vv);
                        }
                    Z(u, v) = acc / (s2 * group_norm2_(u, v));
                }
            write_channel(y, c, ifft2_real<S>(Z), mh_, mw_);
        }
    }

private:
    bool active(int u, int v) const { return std::sqrt(group_norm2_(u, v)) > tau_; }

    Mat<S> channel(const Vec<S>& x, int c) const {
        Mat<S> m(this->shape_.h, this->shape_.w);
        const int64_t off = int64_t(c) * this->shape_.pixels();
        for (int i = 0; i < this->shape_.h; ++i)
            for (int j = 0; j < this->shape_.w; ++j) m(i, j) = x[off + i * this->shape_.w + j];
        return m;
    }
    static void write_channel(Vec<S>& out, int c, const Mat<S>& m, int h, int w) {
        const int64_t off = int64_t(c) * h * w;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) out[off + i * w + j] = m(i, j);
    }

    // Shared by H^T (no group normalization) and H^+ (with it): both scatter
    // low-res frequencies back to their alias group with conj weights.
    void scatter(const Vec<S>& y, Vec<S>& x, bool divide_by_group_norm) const {
        for (int c = 0; c < this->shape_.c; ++c) {
            Mat<S> ym(mh_, mw_);
            const int64_t off = int64_t(c) * mh_ * mw_;
            for (int i = 0; i < mh_; ++i)
                for (int j = 0; j < mw_; ++j) ym(i, j) = y[off + i * mw_ + j];
            CMat<S> Z = fft2<S>(ym);
            CMat<S> X = CMat<S>::Zero(this->shape_.h, this->shape_.w);
            for (int u = 0; u < mh_; ++u)
                for (int v = 0; v < mw_; ++v) {
                    std::complex<S> zg = Z(u, v);
                    if (divide_by_group_norm) {
                        if (!active(u, v)) continue;
                        zg /= group_norm2_(u, v);
                    }
                    for (int a = 0; a < stride_; ++a)
                        for (int b = 0; b < stride_; ++b) {
                            const int uu = u + a * mh_, vv = v + b * mw_;
                            X(uu, vv) = std::conj(khat_(uu, vv)) * zg;
                        }
                }
            Mat<S> xm = ifft2_real<S>(X);
            const int64_t xoff = int64_t(c) * this->shape_.pixels();
            for (int i = 0; i < this->shape_.h; ++i)
                for (int j = 0; j < this->shape_.w; ++j)
                    x[xoff + i * this->shape_.w + j] = xm(i, j);
        }
    }

    int stride_, mh_, mw_;
    S tau_;
    Mat<S> kernel_;
    CMat<S> khat_;
    Mat<S> group_norm2_;
    json sample_params_;
};

// ---------------------------------------------------------------------------
// Dense random-matrix operator; pseudo-inverse computed once at construction
// via SVD.
// ---------------------------------------------------------------------------
template <class S>
class MatrixOperator final : public LinearDegradation<S> {
public:
    MatrixOperator(ImageShape shape, Mat<S> H, S sigma_n, int64_t d_pad = -1,
                   json sample_params = json())
        : LinearDegradation<S>(shape, H.rows(), sigma_n, d_pad),
          H_(std::move(H)),
          sample_params_(std::move(sample_params)) {
        require_config(H_.cols() == shape.dim(), "matrix columns must equal image dim");
        Eigen::JacobiSVD<Mat<S>> svd(H_, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        const S cutoff = sv.size() ? sv(0) * S(std::numeric_limits<S>::epsilon()) * S(H_.cols())
                                   : S(0);
        Vec<S> inv = Vec<S>::Zero(sv.size());
        for (int i = 0; i < sv.size(); ++i) inv[i] = sv(i) > cutoff ? S(1) / sv(i) : S(0);
        P_ = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
    }

    const Mat<S>& matrix() const { return H_; }

    json descriptor() const override {
        json d;
        d["family"] = "random_matrix";
        d["shape"] = {this->shape_.c, this->shape_.h, this->shape_.w};
        d["sigma_n"] = double(this->sigma_n_);
        d["d_pad"] = this->d_pad_;
        json p = sample_params_;
        if (!p.contains("seed")) {
            std::vector<double> rows(H_.data(), H_.data() + H_.size());
            p["matrix"] = rows;
            p["rows"] = H_.rows();
        }
        d["params"] = p;
        return d;
    }

protected:
    void apply_impl(const Vec<S>& x, Vec<S>& y) const override {
        y.head(this->d_) = H_ * x;
    }
    void apply_transpose_impl(const Vec<S>& y, Vec<S>& x) const override {
        x = H_.transpose() * y.head(this->d_);
    }
    void apply_pinv_impl(const Vec<S>& y, Vec<S>& x) const override {
        x = P_ * y.head(this->d_);
    }
    void apply_pinv_transpose_impl(const Vec<S>& x, Vec<S>& y) const override {
        y.head(this->d_) = P_.transpose() * x;
    }

private:
    Mat<S> H_;  // d x D
    Mat<S> P_;  // D x d
    json sample_params_;
};

// ---------------------------------------------------------------------------
// H in R^{0 x D}: the degenerate operator used for unconditional training.
// ---------------------------------------------------------------------------
template <class S>
class ZeroOperator final : public LinearDegradation<S> {
public:
    explicit ZeroOperator(ImageShape shape, int64_t d_pad = 0)
        : LinearDegradation<S>(shape, 0, S(0), d_pad) {}

    json descriptor() const override {
        json d;
        d["family"] = "zero";
        d["shape"] = {this->shape_.c, this->shape_.h, this->shape_.w};
        d["sigma_n"] = 0.0;
        d["d_pad"] = this->d_pad_;
        d["params"] = json::object();
        return d;
    }

protected:
    void apply_impl(const Vec<S>&, Vec<S>&) const override {}
    void apply_transpose_impl(const Vec<S>&, Vec<S>&) const override {}
    void apply_pinv_impl(const Vec<S>&, Vec<S>&) const override {}
    void apply_pinv_transpose_impl(const Vec<S>&, Vec<S>&) const override {}
};

// ---------------------------------------------------------------------------
// Family samplers. All take explicit seeds; construction is pure.
// ---------------------------------------------------------------------------

inline std::vector<int> patch_size_candidates(const ImageShape& shape) {
    std::vector<int> out;
    const int n = std::min(shape.h, shape.w);
    for (int p = 2; p <= n / 2; p *= 2)
        if (shape.h % p == 0 && shape.w % p == 0) out.push_back(p);
    if (out.empty()) out.push_back(n);  // tiny images: one cell
    return out;
}

// Keeps a fraction p in (0, 0.1) of fixed-size patches; resampled until at
// least one patch is visible (capped rejection loop).
template <class S>
OperatorPtr<S> sample_patch_inpaint(uint64_t seed, ImageShape shape, S sigma_n = S(0),
                                    int64_t d_pad = -1) {
    Rng rng(seed);
    const auto sizes = patch_size_candidates(shape);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const int ps = sizes[size_t(rng.uniform_int(0, int64_t(sizes.size()) - 1))];
        const double p = rng.uniform(0.0, 0.1);
        const int gh = shape.h / ps, gw = shape.w / ps;
        std::vector<int32_t> kept;
        for (int gi = 0; gi < gh; ++gi)
            for (int gj = 0; gj < gw; ++gj)
                if (rng.uniform() < p)
                    for (int i = 0; i < ps; ++i)
                        for (int j = 0; j < ps; ++j)
                            kept.push_back(int32_t((gi * ps + i) * shape.w + (gj * ps + j)));
        if (!kept.empty()) {
            std::sort(kept.begin(), kept.end());
            json params{{"seed", seed}, {"patch_size", ps}, {"p", p}};
            return std::make_shared<MaskOperator<S>>(shape, std::move(kept), sigma_n,
                                                     "patch_inpaint", params, d_pad);
        }
    }
    throw std::runtime_error("sample_patch_inpaint: no visible patch after 1000 rejections");
}

// Keeps a single rectangle spanned by two distinct uniformly sampled corners.
template <class S>
OperatorPtr<S> sample_box_outpaint(uint64_t seed, ImageShape shape, S sigma_n = S(0),
                                   int64_t d_pad = -1) {
    Rng rng(seed);
    int r1, c1, r2, c2;
    do {
        r1 = int(rng.uniform_int(0, shape.h - 1));
        c1 = int(rng.uniform_int(0, shape.w - 1));
        r2 = int(rng.uniform_int(0, shape.h - 1));
        c2 = int(rng.uniform_int(0, shape.w - 1));
    } while (r1 == r2 && c1 == c2);
    std::vector<int32_t> kept;
    for (int i = std::min(r1, r2); i <= std::max(r1, r2); ++i)
        for (int j = std::min(c1, c2); j <= std::max(c1, c2); ++j)
            kept.push_back(int32_t(i * shape.w + j));
    json params{{"seed", seed}, {"corners", {r1, c1, r2, c2}}};
    return std::make_shared<MaskOperator<S>>(shape, std::move(kept), sigma_n, "box_outpaint",
                                             params, d_pad);
}

template <class S>
OperatorPtr<S> make_box_outpaint(ImageShape shape, int r0, int c0, int r1, int c1,
                                 S sigma_n = S(0), int64_t d_pad = -1) {
    std::vector<int32_t> kept;
    for (int i = r0; i <= r1; ++i)
        for (int j = c0; j <= c1; ++j) kept.push_back(int32_t(i * shape.w + j));
    json params{{"corners", {r0, c0, r1, c1}}};
    return std::make_shared<MaskOperator<S>>(shape, std::move(kept), sigma_n, "box_outpaint",
                                             params, d_pad);
}

template <class S>
OperatorPtr<S> make_identity_mask(ImageShape shape, S sigma_n = S(0)) {
    std::vector<int32_t> kept(size_t(shape.pixels()));
    for (size_t i = 0; i < kept.size(); ++i) kept[i] = int32_t(i);
    return std::make_shared<MaskOperator<S>>(shape, std::move(kept), sigma_n, "patch_inpaint",
                                             json{{"identity", true}});
}

// Random-walk motion kernel smoothed by an isometric Gaussian with std equal
// to the stride, normalized to sum one. Substitute for the external kernel
// library; seed-reproducible.
template <class S>
Mat<S> sample_motion_kernel(Rng& rng, ImageShape shape, int stride) {
    Mat<double> k = Mat<double>::Zero(shape.h, shape.w);
    const int steps = 2 * std::max(shape.h, shape.w);
    double theta = rng.uniform(0.0, 6.283185307179586);
    const double jitter = rng.uniform(0.25, 1.0);
    double pi = shape.h / 2.0, pj = shape.w / 2.0;
    for (int t = 0; t < steps; ++t) {
        // bilinear deposit with circular wrap
        const int i0 = int(std::floor(pi)), j0 = int(std::floor(pj));
        const double fi = pi - i0, fj = pj - j0;
        auto wrap = [](int a, int n) { return ((a % n) + n) % n; };
        k(wrap(i0, shape.h), wrap(j0, shape.w)) += (1 - fi) * (1 - fj);
        k(wrap(i0 + 1, shape.h), wrap(j0, shape.w)) += fi * (1 - fj);
        k(wrap(i0, shape.h), wrap(j0 + 1, shape.w)) += (1 - fi) * fj;
        k(wrap(i0 + 1, shape.h), wrap(j0 + 1, shape.w)) += fi * fj;
        pi += 0.5 * std::cos(theta);
        pj += 0.5 * std::sin(theta);
        theta += jitter * rng.normal();
    }
    k /= k.sum();
    // circular Gaussian, std = stride
    Mat<double> g(shape.h, shape.w);
    for (int i = 0; i < shape.h; ++i)
        for (int j = 0; j < shape.w; ++j) {
            const double di = std::min(i, shape.h - i), dj = std::min(j, shape.w - j);
            g(i, j) = std::exp(-(di * di + dj * dj) / (2.0 * stride * stride));
        }
    g /= g.sum();
    Mat<double> smooth = ifft2_real<double>(fft2<double>(k).cwiseProduct(fft2<double>(g)));
    smooth = smooth.cwiseMax(0.0);
    smooth /= smooth.sum();
    return smooth.template cast<S>();
}

template <class S>
OperatorPtr<S> sample_motion_blur(uint64_t seed, ImageShape shape, S sigma_n = S(0),
                                  S pinv_threshold = S(1e-6), int64_t d_pad = -1) {
    require_config(shape.h % 8 == 0 && shape.w % 8 == 0,
                   "motion blur requires dims divisible by 8");
    Rng rng(seed);
    static const int strides[3] = {2, 4, 8};
    const int stride = strides[rng.uniform_int(0, 2)];
    Mat<S> kernel = sample_motion_kernel<S>(rng, shape, stride);
    json params{{"seed", seed}};
    return std::make_shared<StridedBlurOperator<S>>(shape, kernel, stride, sigma_n,
                                                    pinv_threshold, d_pad, params);
}

template <class S>
OperatorPtr<S> sample_matrix(uint64_t seed, ImageShape shape, S sigma_n = S(0),
                             int64_t d_pad = -1, int min_rows = 2, int max_rows = 128) {
    Rng rng(seed);
    const int rows = int(rng.uniform_int(min_rows, max_rows));
    Mat<S> H(rows, shape.dim());
    for (int i = 0; i < rows; ++i) {
        for (int64_t j = 0; j < shape.dim(); ++j) H(i, j) = S(rng.normal());
        H.row(i).normalize();
    }
    json params{{"seed", seed}, {"min_rows", min_rows}, {"max_rows", max_rows}};
    return std::make_shared<MatrixOperator<S>>(shape, std::move(H), sigma_n, d_pad, params);
}

template <class S>
OperatorPtr<S> zero_operator(ImageShape shape, int64_t d_pad = 0) {
    return std::make_shared<ZeroOperator<S>>(shape, d_pad);
}

// ---------------------------------------------------------------------------
// Noise wrapper: y = Hx + sigma_n * g on the valid coordinates only.
// ---------------------------------------------------------------------------
template <class S>
Measurement<S> corrupt(const OperatorPtr<S>& op, const Vec<S>& x, uint64_t noise_seed) {
    Measurement<S> m;
    m.op = op;
    m.valid_len = op->d();
    m.y = op->apply(x);
    if (op->sigma_n() > S(0)) {
        Rng rng(noise_seed);
        for (int64_t i = 0; i < op->d(); ++i) m.y[i] += op->sigma_n() * S(rng.normal());
    }
    return m;
}

// ---------------------------------------------------------------------------
// Training-time family mix.
// ---------------------------------------------------------------------------
struct FamilyMix {
    // weights must sum to 1
    double patch_inpaint = 0.0;
    double box_outpaint = 0.0;
    double motion_blur = 0.0;
    double random_matrix = 0.0;
    double zero = 0.0;
    double sigma_n = 0.0;

    void validate() const {
        const double s = patch_inpaint + box_outpaint + motion_blur + random_matrix + zero;
        require_config(std::abs(s - 1.0) < 1e-6, "family mix weights must sum to 1");
        require_config(patch_inpaint >= 0 && box_outpaint >= 0 && motion_blur >= 0 &&
                           random_matrix >= 0 && zero >= 0,
                       "family mix weights must be non-negative");
        require_config(sigma_n >= 0, "sigma_n must be >= 0");
    }
};

// Family selection is separate from construction so callers can check the
// mix distribution without paying for operator setup.
inline std::string pick_family(Rng& rng, const FamilyMix& mix) {
    mix.validate();
    const double u = rng.uniform();
    double acc = mix.patch_inpaint;
    if (u < acc) return "patch_inpaint";
    acc += mix.box_outpaint;
    if (u < acc) return "box_outpaint";
    acc += mix.motion_blur;
    if (u < acc) return "strided_motion_blur";
    acc += mix.random_matrix;
    if (u < acc) return "random_matrix";
    return "zero";
}

// Named-family sampler used by the CLI (`--degradation family=...,seed=...`).
template <class S>
OperatorPtr<S> sample_family(const std::string& family, uint64_t seed, ImageShape shape,
                             S sigma_n = S(0)) {
    if (family == "patch_inpaint" || family == "inpaint")
        return sample_patch_inpaint<S>(seed, shape, sigma_n);
    if (family == "box_outpaint" || family == "outpaint")
        return sample_box_outpaint<S>(seed, shape, sigma_n);
    if (family == "strided_motion_blur" || family == "motion_blur" || family == "blur")
        return sample_motion_blur<S>(seed, shape, sigma_n);
    if (family == "random_matrix" || family == "matrix")
        return sample_matrix<S>(seed, shape, sigma_n);
    if (family == "zero") return zero_operator<S>(shape);
    throw config_error("unknown degradation family: " + family);
}

template <class S>
OperatorPtr<S> sample_training_operator(Rng& rng, const FamilyMix& mix, ImageShape shape) {
    const std::string family = pick_family(rng, mix);
    const uint64_t seed = rng.next_u64();
    return sample_family<S>(family, seed, shape, S(mix.sigma_n));
}

// Reconstructs an operator from its descriptor record, bit-exactly.
template <class S>
OperatorPtr<S> operator_from_descriptor(const json& d) {
    const std::string family = d.at("family").get<std::string>();
    const auto sh = d.at("shape");
    ImageShape shape{sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>()};
    const S sigma_n = S(d.value("sigma_n", 0.0));
    const int64_t d_pad = d.value("d_pad", int64_t(-1));
    const json params = d.value("params", json::object());

    if (family == "zero") return zero_operator<S>(shape, std::max<int64_t>(d_pad, 0));
    if (family == "patch_inpaint" || family == "box_outpaint") {
        if (params.contains("kept_positions")) {
            auto kept = params.at("kept_positions").get<std::vector<int32_t>>();
            return std::make_shared<MaskOperator<S>>(shape, std::move(kept), sigma_n, family,
                                                     params, d_pad);
        }
        return sample_family<S>(family, params.at("seed").get<uint64_t>(), shape, sigma_n);
    }
    if (family == "strided_motion_blur") {
        const S tau = S(params.value("pinv_threshold", 1e-6));
        if (params.contains("seed"))
            return sample_motion_blur<S>(params.at("seed").get<uint64_t>(), shape, sigma_n, tau,
                                         d_pad);
        const int stride = params.at("stride").get<int>();
        auto kv = params.at("kernel").get<std::vector<double>>();
        require_config(int64_t(kv.size()) == shape.pixels(), "bad kernel length in descriptor");
        Mat<S> kernel(shape.h, shape.w);
        for (int i = 0; i < shape.h; ++i)
            for (int j = 0; j < shape.w; ++j) kernel(i, j) = S(kv[size_t(i) * shape.w + j]);
        return std::make_shared<StridedBlurOperator<S>>(shape, kernel, stride, sigma_n, tau,
                                                        d_pad);
    }
    if (family == "random_matrix") {
        if (params.contains("seed"))
            return sample_matrix<S>(params.at("seed").get<uint64_t>(), shape, sigma_n, d_pad,
                                    params.value("min_rows", 2), params.value("max_rows", 128));
        const int rows = params.at("rows").get<int>();
        auto mv = params.at("matrix").get<std::vector<double>>();
        require_config(int64_t(mv.size()) == rows * shape.dim(), "bad matrix length");
        Mat<S> H(rows, shape.dim());
        for (int64_t i = 0; i < int64_t(H.size()); ++i) H.data()[i] = S(mv[size_t(i)]);
        return std::make_shared<MatrixOperator<S>>(shape, std::move(H), sigma_n, d_pad);
    }
    throw config_error("unknown family in operator descriptor: " + family);
}

}  // namespace invfusion

#endif
