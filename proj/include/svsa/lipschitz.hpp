#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "svsa/derivatives.hpp"
#include "svsa/set_metrics.hpp"
#include "svsa/trainer.hpp"

namespace svsa {

// Per-layer modulus kappa_h = ||df/dx|| / ||df/dW^(h)||_F at one data point.
// The denominator is zero exactly when every path through layer h is masked
// off, i.e. the point is degenerate for that layer.
inline double kappa_layer(const Network& net, const Vector& x, Index h) {
    if (h < 1 || h > net.depth()) throw InvalidInputError("kappa_layer: layer index out of range");
    const ForwardResult fwd = forward(net, x);
    const double denom = layer_jacobian(net, fwd, h).norm();
    if (denom == 0.0)
        throw DegeneratePointError("kappa_layer: layer " + std::to_string(h) +
                                   " has zero output sensitivity at this point (dead layer)");
    return input_jacobian(net, fwd).norm() / denom;
}

inline std::vector<double> kappa_layers(const Network& net, const Vector& x) {
    std::vector<double> out(static_cast<std::size_t>(net.depth()));
    for (Index h = 1; h <= net.depth(); ++h) out[static_cast<std::size_t>(h - 1)] = kappa_layer(net, x, h);
    return out;
}

// Moduli at one layer across a dataset with the multi-point aggregate
// sqrt(n) * max_i kappa_i, plus the neighborhood radii used by empirical
// checks once they are known.
struct LipschitzCertificate {
    Index layer = 1;
    std::vector<double> per_point;
    double aggregate = 0.0;
    double delta = 0.0;
    double rho = 0.0;

    double max_per_point() const {
        double worst = 0.0;
        for (double k : per_point) worst = std::max(worst, k);
        return worst;
    }
};

inline LipschitzCertificate kappa_global(const Network& net, const Dataset& data, Index layer = 1) {
    data.validate();
    LipschitzCertificate cert;
    cert.layer = layer;
    cert.per_point.reserve(static_cast<std::size_t>(data.size()));
    for (Index i = 0; i < data.size(); ++i) {
        try {
            cert.per_point.push_back(kappa_layer(net, data.features.row(i).transpose(), layer));
        } catch (const DegeneratePointError& e) {
            throw DegeneratePointError(std::string(e.what()) + " (data point " + std::to_string(i) + ")");
        }
    }
    cert.aggregate = std::sqrt(static_cast<double>(data.size())) * cert.max_per_point();
    return cert;
}

struct InclusionOptions {
    double delta = 1e-3;
    Index trials = 20;
    std::uint64_t seed = 0;
    Index set_samples = 6;       // pristine retrains sampling the original set
    double jitter_scale = -1.0;  // < 0 -> rho / 2
    double rho = -1.0;           // < 0 -> 10 * kappa * delta
    double tol_abs = 1e-9;
    double stationarity_tol = 1e-6;
    TrainConfig retrain{.learning_rate = 0.05, .max_epochs = 200000, .tolerance = 1e-8};
};

struct InclusionTrial {
    Index point = 0;
    double delta = 0.0;
    bool converged = false;  // retraining reached tolerance inside the neighborhood
    bool passed = false;
    double margin = 0.0;  // min over layers of kappa_h * delta - distance
    double grad_norm = 0.0;
    std::string note;
};

struct InclusionReport {
    std::vector<double> kappa_per_layer;  // aggregate per layer
    double kappa_global = 0.0;
    double delta = 0.0;
    double rho = 0.0;
    std::vector<InclusionTrial> trials;
    Index evaluated = 0;
    double pass_fraction = 0.0;
    double worst_margin = 0.0;
};

namespace detail {

inline Vector layer_slice(const Vector& w, const Network& like, Index h) {
    return w.segment(layer_offset(like, h), layer_size(like, h));
}

// Candidate solutions whose layer-h block comes as close as possible to a
// target: move w along the null space of the stacked per-point f-gradients
// (the first-order solution manifold), minimizing the layer-h mismatch. The
// candidates are only first-order solutions; callers must re-project them
// onto the exact set (by retraining) before using them as witnesses.
inline std::vector<Vector> tangent_witness_starts(const Network& net, const Dataset& data,
                                                  const Vector& wbar, const Vector& target_full) {
    std::vector<Vector> starts;
    const Index p = net.weight_dim();
    if (p > 256) return starts;  // dense kernel computation only at desk scale
    Matrix jac(data.size(), p);
    for (Index i = 0; i < data.size(); ++i)
        jac.row(i) = flat_f_gradient(net, data.features.row(i).transpose()).transpose();
    Eigen::FullPivLU<Matrix> lu(jac);
    lu.setThreshold(1e-10);
    const Matrix kernel = lu.kernel();
    if (kernel.cols() == 0) return starts;
    for (Index h = 1; h <= net.depth(); ++h) {
        const Index off = layer_offset(net, h);
        const Index len = layer_size(net, h);
        const Matrix kernel_h = kernel.middleRows(off, len);
        const Vector d = target_full.segment(off, len) - wbar.segment(off, len);
        const Vector y = kernel_h.completeOrthogonalDecomposition().solve(d);
        const Vector z = kernel * y;
        if (z.norm() > 0.0) starts.push_back(wbar + z);
    }
    return starts;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 step, so per-trial streams are decorrelated and stable.
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace detail

// Empirical check of the inclusion F_h(x') cap U subset F_h(x) + kappa_h
// ||x - x'|| B: each trial perturbs one point, retrains from the center
// inside a trust region, and tests the per-layer distance bound against a
// sampled original solution set. Non-convergent trials are reported but
// excluded from the pass statistic.
inline InclusionReport verify_inclusion(const Network& net, const Dataset& data,
                                        const InclusionOptions& opts = {}) {
    if (opts.trials < 1) throw InvalidInputError("verify_inclusion: trials must be >= 1");
    detail::require_stationary(net, data, opts.stationarity_tol);

    const Index H = net.depth();
    InclusionReport report;
    report.delta = opts.delta;
    report.kappa_per_layer.resize(static_cast<std::size_t>(H));
    for (Index h = 1; h <= H; ++h)
        report.kappa_per_layer[static_cast<std::size_t>(h - 1)] = kappa_global(net, data, h).aggregate;
    report.kappa_global = 0.0;
    for (double k : report.kappa_per_layer) report.kappa_global = std::max(report.kappa_global, k);
    report.rho = opts.rho > 0.0 ? opts.rho : 10.0 * report.kappa_global * opts.delta;

    const Vector wbar = flatten(net);
    const double jitter =
        opts.jitter_scale >= 0.0 ? opts.jitter_scale : 0.5 * std::max(report.rho, 1e-12);

    // Sample the original solution set near the center: the center itself
    // plus pristine retrains from jittered starts.
    std::vector<Vector> original_samples{wbar};
    {
        TrainConfig cfg = opts.retrain;
        for (Index j = 0; j < opts.set_samples; ++j) {
            Rng rng(detail::mix_seed(opts.seed, 0xA11CEULL + static_cast<std::uint64_t>(j)));
            const Vector start = wbar + jitter * random_unit_vector(wbar.size(), rng);
            const auto trained = sgd_train(unflatten(start, net), data, cfg);
            if (trained.reached_tolerance) original_samples.push_back(flatten(trained.net));
        }
    }
    std::vector<SolutionSet> original_by_layer(static_cast<std::size_t>(H));
    for (Index h = 1; h <= H; ++h) {
        auto& set = original_by_layer[static_cast<std::size_t>(h - 1)];
        set.provenance = "original";
        for (const auto& s : original_samples) set.samples.push_back(detail::layer_slice(s, net, h));
    }

    report.trials.resize(static_cast<std::size_t>(opts.trials));
    parallel_for(opts.trials, [&](Index t) {
        InclusionTrial trial;
        trial.delta = opts.delta;
        Rng rng(detail::mix_seed(opts.seed, static_cast<std::uint64_t>(t)));
        trial.point = static_cast<Index>(rng() % static_cast<std::uint64_t>(data.size()));
        const Vector direction = random_unit_vector(data.dim(), rng);

        const Dataset perturbed = perturb_dataset(data, {trial.point}, {opts.delta * direction});
        TrainConfig cfg = opts.retrain;
        cfg.trust_radius = report.rho;
        const auto retrained = sgd_train(net, perturbed, cfg);
        trial.grad_norm = retrained.final_grad_norm;
        if (!retrained.reached_tolerance) {
            trial.note = retrained.left_trust_region ? "left trust region" : "max epochs";
            report.trials[static_cast<std::size_t>(t)] = trial;
            return;
        }
        const Vector wprime = flatten(retrained.net);
        if ((wprime - wbar).norm() > report.rho) {
            trial.note = "outside neighborhood";
            report.trials[static_cast<std::size_t>(t)] = trial;
            return;
        }
        trial.converged = true;

        // Sharpen the sampled original set near this trial: project the
        // retrained point back by pristine retraining, and do the same for
        // tangent-space candidates that match the retrained point layer by
        // layer. Sparse global samples alone badly overestimate the distance
        // to the set.
        std::vector<SolutionSet> originals = original_by_layer;
        std::vector<Vector> starts{wprime};
        for (auto& s : detail::tangent_witness_starts(net, data, wbar, wprime)) starts.push_back(std::move(s));
        for (const auto& start : starts) {
            const auto projected = sgd_train(unflatten(start, net), data, opts.retrain);
            if (!projected.reached_tolerance) continue;
            const Vector proj = flatten(projected.net);
            for (Index h = 1; h <= H; ++h)
                originals[static_cast<std::size_t>(h - 1)].samples.push_back(
                    detail::layer_slice(proj, net, h));
        }

        const Vector xk = data.features.row(trial.point).transpose();
        double margin = std::numeric_limits<double>::infinity();
        try {
            for (Index h = 1; h <= H; ++h) {
                const double bound = kappa_layer(net, xk, h) * opts.delta;
                const Vector slice = detail::layer_slice(wprime, net, h);
                double dist = std::numeric_limits<double>::infinity();
                for (const auto& sample : originals[static_cast<std::size_t>(h - 1)].samples) {
                    dist = std::min(dist, (slice - sample).norm());
                    // Positive rescaling of one layer, compensated in another,
                    // maps solutions to solutions; the rescaled sample is a
                    // closer member of the same layer-h solution set.
                    if (H >= 2) {
                        const double sq = sample.squaredNorm();
                        if (sq > 0.0) {
                            const double c = slice.dot(sample) / sq;
                            if (c > 0.0) dist = std::min(dist, (slice - c * sample).norm());
                        }
                    }
                }
                margin = std::min(margin, bound - dist);
            }
        } catch (const DegeneratePointError&) {
            trial.converged = false;
            trial.note = "degenerate point";
            report.trials[static_cast<std::size_t>(t)] = trial;
            return;
        }
        trial.margin = margin;
        trial.passed = margin >= -opts.tol_abs;
        report.trials[static_cast<std::size_t>(t)] = trial;
    });

    Index passed = 0;
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& trial : report.trials) {
        if (!trial.converged) continue;
        ++report.evaluated;
        if (trial.passed) ++passed;
        worst = std::min(worst, trial.margin);
    }
    report.pass_fraction =
        report.evaluated > 0 ? static_cast<double>(passed) / static_cast<double>(report.evaluated) : 0.0;
    report.worst_margin = report.evaluated > 0 ? worst : 0.0;
    return report;
}

}  // namespace svsa
