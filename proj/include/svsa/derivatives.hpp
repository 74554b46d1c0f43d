#pragma once

#include <vector>

#include "svsa/network.hpp"

namespace svsa {

// Flat gradient vectors follow the network's flattening convention; the
// length always equals weight_dim() of the network they were taken from.
using GradientVector = Vector;

namespace detail {

// Backward pass for f at a recorded forward state. g[h-1] holds
// df/dz^(h) = mask_h .* (W^(h+1)^T ... a); the input sensitivity df/dx is
// W^(1)^T g_1.
struct BackpropState {
    std::vector<Vector> g;
    Vector input_sensitivity;
};

inline BackpropState backprop(const Network& net, const ForwardResult& fwd) {
    const Index H = net.depth();
    BackpropState bp;
    bp.g.assign(static_cast<std::size_t>(H), Vector());
    Vector u = net.output_vector;  // df/dx^(h), starting at h = H
    for (Index h = H; h >= 1; --h) {
        const auto& mask = fwd.pattern.masks[static_cast<std::size_t>(h - 1)];
        bp.g[static_cast<std::size_t>(h - 1)] = mask.cwiseProduct(u);
        u = net.layers[static_cast<std::size_t>(h - 1)].transpose() * bp.g[static_cast<std::size_t>(h - 1)];
    }
    bp.input_sensitivity = u;
    return bp;
}

// out += scale * flatten(df/dW) given the per-layer dz sensitivities.
inline void accumulate_flat_f_gradient(const Network& net, const ForwardResult& fwd,
                                       const BackpropState& bp, double scale, Vector& out) {
    Index off = 0;
    for (Index h = 1; h <= net.depth(); ++h) {
        const Vector& g = bp.g[static_cast<std::size_t>(h - 1)];
        const Vector& xprev = fwd.hidden[static_cast<std::size_t>(h - 1)];
        const Index cols = xprev.size();
        for (Index r = 0; r < g.size(); ++r) {
            out.segment(off, cols) += (scale * g[r]) * xprev;
            off += cols;
        }
    }
}

// Directional derivative of the per-point loss gradient. With weight tangent
// V (nullptr = zero) and input tangent dx (nullptr = zero), accumulates
//   scale * d/de [ grad_w L(x + e dx, y, w + e V) ] at e = 0
// into out. Activation masks are treated as locally constant, which is the
// almost-everywhere derivative of the ReLU network.
inline void accumulate_rop_gradient(const Network& net, const Vector& x, double y,
                                    const std::vector<Matrix>* V, const Vector* dx, double scale,
                                    Vector& out) {
    const Index H = net.depth();
    const ForwardResult fwd = forward(net, x);

    // Tangent forward sweep: Rx[h] = d/de x^(h).
    std::vector<Vector> Rx(static_cast<std::size_t>(H + 1));
    Rx[0] = dx ? *dx : Vector::Zero(x.size());
    for (Index h = 1; h <= H; ++h) {
        const auto& W = net.layers[static_cast<std::size_t>(h - 1)];
        Vector Rz = W * Rx[static_cast<std::size_t>(h - 1)];
        if (V) Rz.noalias() += (*V)[static_cast<std::size_t>(h - 1)] * fwd.hidden[static_cast<std::size_t>(h - 1)];
        Rx[static_cast<std::size_t>(h)] = fwd.pattern.masks[static_cast<std::size_t>(h - 1)].cwiseProduct(Rz);
    }
    const double r = fwd.output - y;
    const double Rf = net.output_vector.dot(Rx[static_cast<std::size_t>(H)]);

    // Joint backward sweep for g_h and its tangent Rg_h.
    Vector u = net.output_vector;
    Vector Ru = Vector::Zero(u.size());
    std::vector<Vector> g(static_cast<std::size_t>(H)), Rg(static_cast<std::size_t>(H));
    for (Index h = H; h >= 1; --h) {
        const auto& mask = fwd.pattern.masks[static_cast<std::size_t>(h - 1)];
        g[static_cast<std::size_t>(h - 1)] = mask.cwiseProduct(u);
        Rg[static_cast<std::size_t>(h - 1)] = mask.cwiseProduct(Ru);
        if (h > 1) {
            const auto& W = net.layers[static_cast<std::size_t>(h - 1)];
            Vector u_next = W.transpose() * g[static_cast<std::size_t>(h - 1)];
            Vector Ru_next = W.transpose() * Rg[static_cast<std::size_t>(h - 1)];
            if (V) Ru_next.noalias() += (*V)[static_cast<std::size_t>(h - 1)].transpose() * g[static_cast<std::size_t>(h - 1)];
            u = std::move(u_next);
            Ru = std::move(Ru_next);
        }
    }

    // d/de [ r * g_h x^(h-1)^T ] = Rf g x^T + r (Rg x^T + g Rx^T), flattened.
    Index off = 0;
    for (Index h = 1; h <= H; ++h) {
        const Vector& gh = g[static_cast<std::size_t>(h - 1)];
        const Vector& Rgh = Rg[static_cast<std::size_t>(h - 1)];
        const Vector& xprev = fwd.hidden[static_cast<std::size_t>(h - 1)];
        const Vector& Rxprev = Rx[static_cast<std::size_t>(h - 1)];
        const Index cols = xprev.size();
        for (Index row = 0; row < gh.size(); ++row) {
            out.segment(off, cols) += scale * ((Rf * gh[row] + r * Rgh[row]) * xprev + (r * gh[row]) * Rxprev);
            off += cols;
        }
    }
}

}  // namespace detail

// d f / d W^(h) = diag(mask_h) [prod_{k>h} W^(k)^T diag(mask_k)] a x^(h-1)^T.
inline Matrix layer_jacobian(const Network& net, const ForwardResult& fwd, Index h) {
    if (h < 1 || h > net.depth()) throw InvalidInputError("layer_jacobian: layer index out of range");
    const auto bp = detail::backprop(net, fwd);
    return bp.g[static_cast<std::size_t>(h - 1)] * fwd.hidden[static_cast<std::size_t>(h - 1)].transpose();
}

inline Matrix layer_jacobian(const Network& net, const Vector& x, Index h) {
    return layer_jacobian(net, forward(net, x), h);
}

// d f / d x = [prod_{k=1..H} W^(k)^T diag(mask_k)] a.
inline Vector input_jacobian(const Network& net, const ForwardResult& fwd) {
    return detail::backprop(net, fwd).input_sensitivity;
}

inline Vector input_jacobian(const Network& net, const Vector& x) {
    return input_jacobian(net, forward(net, x));
}

// Flat d f / d w for one input.
inline Vector flat_f_gradient(const Network& net, const Vector& x) {
    const ForwardResult fwd = forward(net, x);
    const auto bp = detail::backprop(net, fwd);
    Vector out = Vector::Zero(net.weight_dim());
    detail::accumulate_flat_f_gradient(net, fwd, bp, 1.0, out);
    return out;
}

// (1/|indices|) sum_i (f(x_i) - y_i) df/dw, the stationarity residual R.
inline GradientVector grad_w_mean_loss(const Network& net, const Dataset& data,
                                       const std::vector<Index>& indices) {
    if (indices.empty()) throw InvalidInputError("grad_w_mean_loss: empty index set");
    Vector out = Vector::Zero(net.weight_dim());
    const double scale = 1.0 / static_cast<double>(indices.size());
    for (Index i : indices) {
        if (i < 0 || i >= data.size()) throw InvalidInputError("grad_w_mean_loss: index out of range");
        const ForwardResult fwd = forward(net, data.features.row(i).transpose());
        const auto bp = detail::backprop(net, fwd);
        detail::accumulate_flat_f_gradient(net, fwd, bp, scale * (fwd.output - data.labels[i]), out);
    }
    return out;
}

inline GradientVector grad_w_mean_loss(const Network& net, const Dataset& data) {
    return grad_w_mean_loss(net, data, data.all_indices());
}

// Mean loss and its gradient in a single pass; grad_out is overwritten.
inline double mean_loss_and_gradient(const Network& net, const Dataset& data,
                                     const std::vector<Index>& indices, Vector& grad_out) {
    if (indices.empty()) throw InvalidInputError("mean_loss_and_gradient: empty index set");
    grad_out = Vector::Zero(net.weight_dim());
    const double scale = 1.0 / static_cast<double>(indices.size());
    double loss = 0.0;
    for (Index i : indices) {
        if (i < 0 || i >= data.size()) throw InvalidInputError("mean_loss_and_gradient: index out of range");
        const ForwardResult fwd = forward(net, data.features.row(i).transpose());
        const double r = fwd.output - data.labels[i];
        loss += 0.5 * r * r;
        const auto bp = detail::backprop(net, fwd);
        detail::accumulate_flat_f_gradient(net, fwd, bp, scale * r, grad_out);
    }
    return loss * scale;
}

namespace detail {

inline void require_stationary(const Network& net, const Dataset& data, double tol) {
    const double gnorm = grad_w_mean_loss(net, data).norm();
    const double bound = tol * (1.0 + flatten(net).norm());
    if (gnorm > bound)
        throw PreconditionError("weights are not stationary: gradient norm " + std::to_string(gnorm) +
                                " exceeds " + std::to_string(bound));
}

}  // namespace detail

// Matrix-free Hessian of the mean loss over a fixed index set. Applying the
// operator costs one forward/backward tangent sweep per point; the Hessian is
// never materialized.
class HvpOperator {
public:
    HvpOperator(const Network& net, const Dataset& data, std::vector<Index> indices)
        : net_(&net), data_(&data), indices_(std::move(indices)) {
        if (indices_.empty()) throw InvalidInputError("HvpOperator: empty index set");
        for (Index i : indices_)
            if (i < 0 || i >= data.size()) throw InvalidInputError("HvpOperator: index out of range");
    }

    HvpOperator(const Network& net, const Dataset& data)
        : HvpOperator(net, data, data.all_indices()) {}

    // The operator only references the network and dataset; temporaries would
    // dangle.
    HvpOperator(Network&&, const Dataset&, std::vector<Index> = {}) = delete;
    HvpOperator(const Network&, Dataset&&, std::vector<Index> = {}) = delete;
    HvpOperator(Network&&, Dataset&&, std::vector<Index> = {}) = delete;

    Index dim() const { return net_->weight_dim(); }
    const Network& net() const { return *net_; }
    const Dataset& dataset() const { return *data_; }

    Vector operator()(const Vector& v) const {
        if (v.size() != dim())
            throw InvalidInputError("hvp: direction has length " + std::to_string(v.size()) +
                                    ", expected " + std::to_string(dim()));
        const Network tangent = unflatten(v, *net_);
        Vector out = Vector::Zero(dim());
        const double scale = 1.0 / static_cast<double>(indices_.size());
        for (Index i : indices_) {
            detail::accumulate_rop_gradient(*net_, data_->features.row(i).transpose(), data_->labels[i],
                                            &tangent.layers, nullptr, scale, out);
        }
        return out;
    }

private:
    const Network* net_;
    const Dataset* data_;
    std::vector<Index> indices_;
};

inline Vector hvp(const HvpOperator& op, const Vector& v) { return op(v); }

// Mixed data/weight second derivative applied to per-point data tangents:
//   (1/|K|) sum_{i in K} d_x d_w L(x_i, y_i, w) t_i.
// Tangents are raw d-vectors (any magnitude); points outside K are untouched.
inline Vector mixed_jvp(const Network& net, const Dataset& data, const std::vector<Index>& K,
                        const std::vector<Vector>& tangents) {
    if (K.empty()) throw InvalidInputError("mixed_jvp: empty index set");
    if (K.size() != tangents.size())
        throw InvalidInputError("mixed_jvp: one tangent per perturbed index required");
    Vector out = Vector::Zero(net.weight_dim());
    const double scale = 1.0 / static_cast<double>(K.size());
    for (std::size_t j = 0; j < K.size(); ++j) {
        const Index i = K[j];
        if (i < 0 || i >= data.size()) throw InvalidInputError("mixed_jvp: index out of range");
        if (tangents[j].size() != data.dim())
            throw InvalidInputError("mixed_jvp: tangent dimension mismatch");
        detail::accumulate_rop_gradient(net, data.features.row(i).transpose(), data.labels[i],
                                        nullptr, &tangents[j], scale, out);
    }
    return out;
}

}  // namespace svsa
