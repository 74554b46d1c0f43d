#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "svsa/derivatives.hpp"

namespace svsa::verify {

// Central finite-difference oracles. These stay independent of the analytic
// sweeps in derivatives.hpp: they only re-evaluate losses, outputs, or the
// assembled gradient at shifted arguments.

inline GradientVector fd_grad_mean_loss(const Network& net, const Dataset& data,
                                        const std::vector<Index>& indices, double step_scale = 1e-5) {
    Vector w = flatten(net);
    Vector g(w.size());
    for (Index j = 0; j < w.size(); ++j) {
        const double h = step_scale * (1.0 + std::abs(w[j]));
        Vector wp = w, wm = w;
        wp[j] += h;
        wm[j] -= h;
        const double lp = mean_loss(unflatten(wp, net), data, indices);
        const double lm = mean_loss(unflatten(wm, net), data, indices);
        g[j] = (lp - lm) / (2.0 * h);
    }
    return g;
}

inline Matrix fd_layer_jacobian(const Network& net, const Vector& x, Index h, double step_scale = 1e-5) {
    if (h < 1 || h > net.depth()) throw InvalidInputError("fd_layer_jacobian: layer index out of range");
    const Matrix& W = net.layers[static_cast<std::size_t>(h - 1)];
    Matrix jac(W.rows(), W.cols());
    for (Index r = 0; r < W.rows(); ++r) {
        for (Index c = 0; c < W.cols(); ++c) {
            const double step = step_scale * (1.0 + std::abs(W(r, c)));
            Network np = net, nm = net;
            np.layers[static_cast<std::size_t>(h - 1)](r, c) += step;
            nm.layers[static_cast<std::size_t>(h - 1)](r, c) -= step;
            jac(r, c) = (forward(np, x).output - forward(nm, x).output) / (2.0 * step);
        }
    }
    return jac;
}

inline Vector fd_input_jacobian(const Network& net, const Vector& x, double step_scale = 1e-5) {
    Vector jac(x.size());
    for (Index j = 0; j < x.size(); ++j) {
        const double step = step_scale * (1.0 + std::abs(x[j]));
        Vector xp = x, xm = x;
        xp[j] += step;
        xm[j] -= step;
        jac[j] = (forward(net, xp).output - forward(net, xm).output) / (2.0 * step);
    }
    return jac;
}

// (grad(w + e v) - grad(w - e v)) / 2e along a weight direction.
inline Vector fd_hvp(const Network& net, const Dataset& data, const std::vector<Index>& indices,
                     const Vector& v, double eps = 1e-5) {
    const Vector w = flatten(net);
    const double vnorm = v.norm();
    if (vnorm == 0.0) return Vector::Zero(w.size());
    const double step = eps * (1.0 + w.norm()) / vnorm;
    const Vector gp = grad_w_mean_loss(unflatten(w + step * v, net), data, indices);
    const Vector gm = grad_w_mean_loss(unflatten(w - step * v, net), data, indices);
    return (gp - gm) / (2.0 * step);
}

// (grad at shifted features - grad at unshifted) via central differences;
// tangents follow the mixed_jvp convention (one raw d-vector per K entry).
inline Vector fd_mixed_jvp(const Network& net, const Dataset& data, const std::vector<Index>& K,
                           const std::vector<Vector>& tangents, double eps = 1e-5) {
    if (K.size() != tangents.size())
        throw InvalidInputError("fd_mixed_jvp: one tangent per perturbed index required");
    std::vector<Vector> plus(tangents.size()), minus(tangents.size());
    for (std::size_t j = 0; j < tangents.size(); ++j) {
        plus[j] = eps * tangents[j];
        minus[j] = -eps * tangents[j];
    }
    const Dataset dp = perturb_dataset(data, K, plus);
    const Dataset dm = perturb_dataset(data, K, minus);
    // mixed_jvp normalizes by |K|; the gradient here is over K with the same
    // normalization so the two sides are directly comparable.
    const Vector gp = grad_w_mean_loss(net, dp, K);
    const Vector gm = grad_w_mean_loss(net, dm, K);
    return (gp - gm) / (2.0 * eps);
}

// Smallest |pre-activation| across layers; finite-difference checks are only
// meaningful when this margin comfortably exceeds the step size (ReLU kink
// guard).
inline double min_preactivation_abs(const Network& net, const Vector& x) {
    double margin = std::numeric_limits<double>::infinity();
    Vector cur = x;
    for (const auto& w : net.layers) {
        Vector z = w * cur;
        margin = std::min(margin, z.cwiseAbs().minCoeff());
        cur = (z.array() > 0.0).cast<double>().matrix().cwiseProduct(z);
    }
    return margin;
}

inline double min_preactivation_abs(const Network& net, const Dataset& data) {
    double margin = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < data.size(); ++i)
        margin = std::min(margin, min_preactivation_abs(net, data.features.row(i).transpose()));
    return margin;
}

}  // namespace svsa::verify
