#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "svsa/derivatives.hpp"

namespace svsa {

struct TrainConfig {
    double learning_rate = 1e-2;
    long max_epochs = 100000;
    Index batch_size = 0;  // 0 -> full batch
    double tolerance = 1e-8;
    std::uint64_t seed = 0;
    double divergence_threshold = 1e6;
    double trust_radius = 0.0;  // > 0 -> stop once ||w - w_init|| exceeds it

    void validate() const {
        if (learning_rate < 0.0) throw InvalidInputError("train config: learning rate must be nonnegative");
        if (tolerance <= 0.0) throw InvalidInputError("train config: tolerance must be positive");
        if (max_epochs < 0) throw InvalidInputError("train config: max epochs must be nonnegative");
        if (batch_size < 0) throw InvalidInputError("train config: batch size must be nonnegative");
    }
};

struct TrainResult {
    Network net;
    bool reached_tolerance = false;
    bool left_trust_region = false;
    long epochs = 0;
    double final_grad_norm = 0.0;
    double final_loss = 0.0;
};

// Gradient descent on the mean quadratic loss; full batch by default,
// seeded mini-batches when batch_size > 0. Stops once the full gradient norm
// drops to cfg.tolerance. Deterministic for a fixed config and seed.
inline TrainResult sgd_train(const Network& init, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    init.validate();
    data.validate();
    if (data.dim() != init.input_dim()) throw InvalidInputError("sgd_train: dataset/network dimension mismatch");

    TrainResult res;
    res.net = init;
    const Vector w0 = flatten(init);
    const auto all = data.all_indices();
    std::vector<Index> order = all;
    Rng rng(cfg.seed);
    Vector grad(res.net.weight_dim());

    for (long epoch = 0; epoch <= cfg.max_epochs; ++epoch) {
        res.final_loss = mean_loss_and_gradient(res.net, data, all, grad);
        res.final_grad_norm = grad.norm();
        res.epochs = epoch;
        if (res.final_loss > cfg.divergence_threshold)
            throw DivergenceError("sgd_train: loss " + std::to_string(res.final_loss) +
                                  " exceeded the divergence threshold");
        if (res.final_grad_norm <= cfg.tolerance) {
            res.reached_tolerance = true;
            return res;
        }
        if (cfg.trust_radius > 0.0 && (flatten(res.net) - w0).norm() > cfg.trust_radius) {
            res.left_trust_region = true;
            return res;
        }
        if (epoch == cfg.max_epochs) break;

        if (cfg.batch_size <= 0 || cfg.batch_size >= data.size()) {
            res.net = unflatten(flatten(res.net) - cfg.learning_rate * grad, res.net);
        } else {
            std::shuffle(order.begin(), order.end(), rng);
            Vector batch_grad(res.net.weight_dim());
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
                std::vector<Index> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
                mean_loss_and_gradient(res.net, data, batch, batch_grad);
                res.net = unflatten(flatten(res.net) - cfg.learning_rate * batch_grad, res.net);
            }
        }
    }
    return res;
}

// Warm-start retraining, the oracle against which estimated solutions are
// compared.
inline TrainResult retrain_from(const Network& wbar, const Dataset& perturbed, const TrainConfig& cfg) {
    return sgd_train(wbar, perturbed, cfg);
}

struct GridSpec {
    double alpha_min = -1.0;
    double alpha_max = 1.0;
    Index alpha_count = 21;
    double beta_min = -1.0;
    double beta_max = 1.0;
    Index beta_count = 21;

    void validate() const {
        if (alpha_count < 1 || beta_count < 1) throw InvalidInputError("grid: counts must be >= 1");
        if (!std::isfinite(alpha_min) || !std::isfinite(alpha_max) || !std::isfinite(beta_min) ||
            !std::isfinite(beta_max))
            throw InvalidInputError("grid: bounds must be finite");
    }

    Vector alphas() const { return ticks(alpha_min, alpha_max, alpha_count); }
    Vector betas() const { return ticks(beta_min, beta_max, beta_count); }

private:
    static Vector ticks(double lo, double hi, Index count) {
        Vector t(count);
        if (count == 1) {
            t[0] = lo;
            return t;
        }
        const double step = (hi - lo) / static_cast<double>(count - 1);
        for (Index i = 0; i < count; ++i) t[i] = lo + step * static_cast<double>(i);
        return t;
    }
};

// Mean loss over a 2-D slice w = center + alpha dir1 + beta dir2. Entry
// (bi, ai) corresponds to (betas[bi], alphas[ai]). Cells are independent and
// evaluated concurrently.
inline Matrix landscape_slice(const Network& center, const Dataset& data, const Vector& dir1,
                              const Vector& dir2, const GridSpec& grid) {
    grid.validate();
    const Index p = center.weight_dim();
    if (dir1.size() != p || dir2.size() != p)
        throw InvalidInputError("landscape_slice: direction dimension mismatch");
    const Vector w0 = flatten(center);
    const Vector alphas = grid.alphas();
    const Vector betas = grid.betas();
    Matrix losses(grid.beta_count, grid.alpha_count);
    parallel_for(grid.alpha_count * grid.beta_count, [&](Index cell) {
        const Index bi = cell / grid.alpha_count;
        const Index ai = cell % grid.alpha_count;
        const Network net = unflatten(w0 + alphas[ai] * dir1 + betas[bi] * dir2, center);
        losses(bi, ai) = mean_loss(net, data);
    });
    return losses;
}

// Random slice directions: Gaussian, orthonormalized as a pair, then rescaled
// row-by-row so each neuron's direction block matches the norm of the
// corresponding weight row (filter normalization).
inline std::pair<Vector, Vector> filter_normalized_directions(const Network& net, std::uint64_t seed) {
    const Index p = net.weight_dim();
    Rng rng(seed);
    Vector d1 = gaussian_vector(p, rng);
    Vector d2 = gaussian_vector(p, rng);
    d1.normalize();
    d2 -= d1.dot(d2) * d1;
    double norm2 = d2.norm();
    while (norm2 < 1e-12) {
        d2 = gaussian_vector(p, rng);
        d2 -= d1.dot(d2) * d1;
        norm2 = d2.norm();
    }
    d2 /= norm2;

    auto filter_normalize = [&net](Vector& dir) {
        Index off = 0;
        for (const auto& layer : net.layers) {
            for (Index r = 0; r < layer.rows(); ++r) {
                const double wnorm = layer.row(r).norm();
                auto block = dir.segment(off, layer.cols());
                const double dnorm = block.norm();
                if (dnorm > 0.0) block *= (wnorm / dnorm);
                off += layer.cols();
            }
        }
    };
    filter_normalize(d1);
    filter_normalize(d2);
    return {d1, d2};
}

}  // namespace svsa
