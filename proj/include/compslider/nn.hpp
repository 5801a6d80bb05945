// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Minimal dense layers with hand-written backward passes. Activations are
// row-major (rows = samples or tokens).

#include <cmath>

#include "compslider/common.hpp"
#include "compslider/rng.hpp"

namespace compslider::nn {

/// y = x W + b   (W: in x out, b: 1 x out)
template <typename S>
Mat<S> linear(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b) {
    Mat<S> y = x * w;
    y.rowwise() += b.row(0);
    return y;
}

/// Accumulates dW, db and returns dx.
template <typename S>
Mat<S> linear_backward(const Mat<S>& x, const Mat<S>& w, const Mat<S>& dy, Mat<S>& dw, Mat<S>& db) {
    dw.noalias() += x.transpose() * dy;
    db += dy.colwise().sum();
    return dy * w.transpose();
}

template <typename S>
void linear_backward_params(const Mat<S>& x, const Mat<S>& dy, Mat<S>& dw, Mat<S>& db) {
    dw.noalias() += x.transpose() * dy;
    db += dy.colwise().sum();
}

template <typename S>
constexpr S layer_norm_eps() {
    return static_cast<S>(1e-6);
}

/// Affine-free layer norm over each row. Stores the normalized rows and 1/sigma.
template <typename S>
void layer_norm(const Mat<S>& x, Mat<S>& xhat, Vec<S>& rstd) {
    const auto n = static_cast<S>(x.cols());
    xhat.resize(x.rows(), x.cols());
    rstd.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const S mean = x.row(r).sum() / n;
        auto centered = x.row(r).array() - mean;
        const S var = centered.square().sum() / n;
        const S inv = S(1) / std::sqrt(var + layer_norm_eps<S>());
        rstd(r) = inv;
        xhat.row(r) = centered * inv;
    }
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dxhat, const Mat<S>& xhat, const Vec<S>& rstd) {
    const auto n = static_cast<S>(xhat.cols());
    Mat<S> dx(xhat.rows(), xhat.cols());
    for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
        const S mean_d = dxhat.row(r).sum() / n;
        const S mean_dx = dxhat.row(r).dot(xhat.row(r)) / n;
        dx.row(r) = rstd(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
    }
    return dx;
}

// tanh-approximated GELU
template <typename S>
Mat<S> gelu(const Mat<S>& x) {
    const S k = static_cast<S>(0.7978845608028654);
    const S c = static_cast<S>(0.044715);
    auto v = x.array();
    Mat<S> out = (S(0.5) * v * (S(1) + (k * (v + c * v.cube())).tanh())).matrix();
    return out;
}

template <typename S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& dy) {
    const S k = static_cast<S>(0.7978845608028654);
    const S c = static_cast<S>(0.044715);
    auto v = x.array();
    Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> th = (k * (v + c * v.cube())).tanh();
    Mat<S> out = (dy.array() * (S(0.5) * (S(1) + th) +
                                S(0.5) * v * (S(1) - th.square()) * k * (S(1) + S(3) * c * v.square())))
                     .matrix();
    return out;
}

template <typename S>
Mat<S> silu(const Mat<S>& x) {
    return x.unaryExpr([](S v) { return v / (S(1) + std::exp(-v)); });
}

template <typename S>
Mat<S> silu_backward(const Mat<S>& x, const Mat<S>& dy) {
    return dy.binaryExpr(x, [](S d, S v) {
        const S sig = S(1) / (S(1) + std::exp(-v));
        return d * sig * (S(1) + v * (S(1) - sig));
    });
}

/// In-place row softmax.
template <typename Derived>
void softmax_rows(Eigen::MatrixBase<Derived>& m) {
    using S = typename Derived::Scalar;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const S mx = m.row(r).maxCoeff();
        m.row(r) = (m.row(r).array() - mx).exp();
        m.row(r) /= m.row(r).sum();
    }
}

/// N(0, std^2) fill.
template <typename S>
void fill_normal(Mat<S>& m, Rng& rng, double std) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = static_cast<S>(std * rng.normal());
}

} // namespace compslider::nn
