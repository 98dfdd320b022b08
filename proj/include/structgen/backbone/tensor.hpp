// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

namespace structgen {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// y = x W + b, W stored d_in x d_out.
template <class T>
struct Linear {
    Mat<T> w;
    RowVec<T> b;

    int in() const { return static_cast<int>(w.rows()); }
    int out() const { return static_cast<int>(w.cols()); }

    Mat<T> operator()(const Mat<T>& x) const {
        Mat<T> y = x * w;
        y.rowwise() += b;
        return y;
    }

    template <class U>
    Linear<U> cast() const {
        return {w.template cast<U>(), b.template cast<U>()};
    }
};

namespace nn {

inline constexpr double kNormEps = 1e-5;

/// Row-wise layer norm without affine parameters; returns the inverse std per row.
template <class T>
Mat<T> layer_norm(const Mat<T>& x, Eigen::Matrix<T, Eigen::Dynamic, 1>* rstd_out = nullptr) {
    const auto d = x.cols();
    Mat<T> y(x.rows(), d);
    if (rstd_out) rstd_out->resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const T mean = x.row(i).mean();
        const T var = (x.row(i).array() - mean).square().mean();
        const T rstd = T(1) / std::sqrt(var + T(kNormEps));
        y.row(i) = (x.row(i).array() - mean) * rstd;
        if (rstd_out) (*rstd_out)(i) = rstd;
    }
    return y;
}

/// Backward of layer_norm for one row block given the normalized output and its inverse std.
template <class T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& y, const Eigen::Matrix<T, Eigen::Dynamic, 1>& rstd) {
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const T mdy = dy.row(i).mean();
        const T mdyy = (dy.row(i).array() * y.row(i).array()).mean();
        dx.row(i) = rstd(i) * (dy.row(i).array() - mdy - y.row(i).array() * mdyy);
    }
    return dx;
}

template <class T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
    const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    return cdf + x * pdf;
}

/// Row-wise softmax in place.
template <class T>
void softmax_rows(Mat<T>& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const T m = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - m).exp();
        s.row(i) /= s.row(i).sum();
    }
}

}  // namespace nn
}  // namespace structgen
