// Copyright (C) 2026 The CompSlider Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Diffusion, disentanglement and structure losses. Single-sample forms
// follow the definitions directly; the batched forms also return the
// gradient with respect to their inputs, averaged over the batch.

#include <cmath>
#include <vector>

#include "compslider/common.hpp"
#include "compslider/embedding.hpp"

namespace compslider {

/// Mean squared error over the latent components.
template <typename DA, typename DB>
double diffusion_loss(const Eigen::MatrixBase<DA>& pred, const Eigen::MatrixBase<DB>& truth) {
    require(pred.size() == truth.size(), "diffusion_loss: length mismatch");
    require(pred.size() > 0, "diffusion_loss: empty input");
    return (pred.template cast<double>() - truth.template cast<double>()).squaredNorm() /
           static_cast<double>(pred.size());
}

/// Mean cross-entropy over attributes, `logits` is N x B.
template <typename D>
double disentanglement_loss(const Eigen::MatrixBase<D>& logits, const std::vector<int>& labels) {
    require(logits.rows() == static_cast<Eigen::Index>(labels.size()), "disentanglement_loss: attribute count mismatch");
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<size_t>(i)];
        require(y >= 0 && y < logits.cols(), "disentanglement_loss: label out of range", "labels");
        Eigen::RowVectorXd row = logits.row(i).template cast<double>();
        const double mx = row.maxCoeff();
        const double lse = mx + std::log((row.array() - mx).exp().sum());
        total += lse - row(y);
    }
    return total / static_cast<double>(logits.rows());
}

/// Labels of each attribute difference v - v_star.
inline std::vector<int> bucket_labels(const Eigen::VectorXd& v, const Eigen::VectorXd& v_star, int buckets) {
    require(v.size() == v_star.size(), "bucket_labels: length mismatch");
    std::vector<int> out(static_cast<size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i)
        out[static_cast<size_t>(i)] = bucketize(v(i) - v_star(i), buckets);
    return out;
}

inline bool structure_gate(const Eigen::VectorXd& delta_v, double threshold) {
    return delta_v.size() == 0 || delta_v.cwiseAbs().maxCoeff() <= threshold;
}

/// Mean squared difference of the two predictions when every |delta_v_i| <= threshold, else 0.
template <typename DA, typename DB>
double structure_loss(const Eigen::MatrixBase<DA>& out_orig, const Eigen::MatrixBase<DB>& out_rand,
                      const Eigen::VectorXd& delta_v, double threshold) {
    require(out_orig.size() == out_rand.size(), "structure_loss: length mismatch");
    if (!structure_gate(delta_v, threshold))
        return 0.0;
    return diffusion_loss(out_orig, out_rand);
}

// ---------------------------------------------------------------------------
// Batched forms

template <typename S>
struct LossGrad {
    double value = 0.0;
    Mat<S> grad;
};

/// Mean over batch and components of (pred - truth)^2.
template <typename S>
LossGrad<S> diffusion_loss_batch(const Mat<S>& pred, const Mat<S>& truth) {
    require(pred.rows() == truth.rows() && pred.cols() == truth.cols(), "diffusion_loss_batch: shape mismatch");
    const double n = static_cast<double>(pred.size());
    Mat<S> diff = pred - truth;
    LossGrad<S> out;
    out.value = diff.template cast<double>().squaredNorm() / n;
    out.grad = diff * static_cast<S>(2.0 / n);
    return out;
}

/// `logits` is B x (N*nb); `labels` is B x N. Mean over batch and attributes.
template <typename S>
LossGrad<S> disentanglement_loss_batch(const Mat<S>& logits, const Eigen::MatrixXi& labels, int buckets) {
    const Eigen::Index B = logits.rows(), N = labels.cols();
    require(labels.rows() == B && logits.cols() == N * buckets, "disentanglement_loss_batch: shape mismatch");
    LossGrad<S> out;
    out.grad.resize(B, N * buckets);
    const double scale = 1.0 / static_cast<double>(B * N);
    double total = 0.0;
    for (Eigen::Index b = 0; b < B; ++b) {
        for (Eigen::Index i = 0; i < N; ++i) {
            const int y = labels(b, i);
            require(y >= 0 && y < buckets, "disentanglement_loss_batch: label out of range", "labels");
            Eigen::RowVectorXd row = logits.row(b).segment(i * buckets, buckets).template cast<double>();
            const double mx = row.maxCoeff();
            Eigen::RowVectorXd e = (row.array() - mx).exp();
            const double z = e.sum();
            total += mx + std::log(z) - row(y);
            e /= z;
            e(y) -= 1.0;
            out.grad.row(b).segment(i * buckets, buckets) = (e * scale).template cast<S>();
        }
    }
    out.value = total * scale;
    return out;
}

template <typename S>
struct StructureLossGrad {
    double value = 0.0;
    double gate_rate = 0.0;
    Mat<S> grad_orig; // grad_rand = -grad_orig
};

/// Per-sample gated MSE, averaged over the whole batch (gated-off samples count as 0).
template <typename S>
StructureLossGrad<S> structure_loss_batch(const Mat<S>& out_orig, const Mat<S>& out_rand,
                                          const Eigen::MatrixXd& delta_v, double threshold) {
    const Eigen::Index B = out_orig.rows(), D = out_orig.cols();
    require(out_rand.rows() == B && out_rand.cols() == D && delta_v.rows() == B,
            "structure_loss_batch: shape mismatch");
    StructureLossGrad<S> out;
    out.grad_orig = Mat<S>::Zero(B, D);
    const double inv = 1.0 / static_cast<double>(B * D);
    int active = 0;
    double total = 0.0;
    for (Eigen::Index b = 0; b < B; ++b) {
        if (delta_v.row(b).cwiseAbs().maxCoeff() > threshold)
            continue;
        ++active;
        auto diff = (out_orig.row(b) - out_rand.row(b)).eval();
        total += diff.template cast<double>().squaredNorm();
        out.grad_orig.row(b) = diff * static_cast<S>(2.0 * inv);
    }
    out.value = total * inv;
    out.gate_rate = static_cast<double>(active) / static_cast<double>(B);
    return out;
}

} // namespace compslider
