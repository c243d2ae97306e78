#ifndef INVFUSION_FFT2_HPP
#define INVFUSION_FFT2_HPP

#include <unsupported/Eigen/FFT>
#include <complex>

#include "invfusion/common.hpp"

namespace invfusion {

template <class S>
using CMat = Eigen::Matrix<std::complex<S>, Eigen::Dynamic, Eigen::Dynamic>;

// Unnormalized forward 2-D DFT (rows then columns). Length-1 transforms are
// the identity; kissfft cannot handle them.
template <class S>
CMat<S> fft2(const Mat<S>& x) {
    Eigen::FFT<S> fft;
    const int h = int(x.rows()), w = int(x.cols());
    CMat<S> tmp(h, w);
    if (w == 1) {
        for (int i = 0; i < h; ++i) tmp(i, 0) = std::complex<S>(x(i, 0), S(0));
    } else {
        std::vector<std::complex<S>> in(w), out(w);
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) in[j] = std::complex<S>(x(i, j), S(0));
            fft.fwd(out, in);
            for (int j = 0; j < w; ++j) tmp(i, j) = out[j];
        }
    }
    if (h == 1) return tmp;
    CMat<S> X(h, w);
    std::vector<std::complex<S>> cin(h), cout(h);
    for (int j = 0; j < w; ++j) {
        for (int i = 0; i < h; ++i) cin[i] = tmp(i, j);
        fft.fwd(cout, cin);
        for (int i = 0; i < h; ++i) X(i, j) = cout[i];
    }
    return X;
}

// Inverse of fft2 (includes the 1/(h*w) scaling); returns the real part.
template <class S>
Mat<S> ifft2_real(const CMat<S>& X) {
    Eigen::FFT<S> fft;
    const int h = int(X.rows()), w = int(X.cols());
    CMat<S> tmp(h, w);
    if (h == 1) {
        tmp = X;
    } else {
        std::vector<std::complex<S>> cin(h), cout(h);
        for (int j = 0; j < w; ++j) {
            for (int i = 0; i < h; ++i) cin[i] = X(i, j);
            fft.inv(cout, cin);
            for (int i = 0; i < h; ++i) tmp(i, j) = cout[i];
        }
    }
    Mat<S> x(h, w);
    if (w == 1) {
        for (int i = 0; i < h; ++i) x(i, 0) = tmp(i, 0).real();
        return x;
    }
    std::vector<std::complex<S>> in(w), out(w);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) in[j] = tmp(i, j);
        fft.inv(out, in);
        for (int j = 0; j < w; ++j) x(i, j) = out[j].real();
    }
    return x;
}

}  // namespace invfusion

#endif
