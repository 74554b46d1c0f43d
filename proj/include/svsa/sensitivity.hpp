#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "svsa/derivatives.hpp"
#include "svsa/set_metrics.hpp"
#include "svsa/solvers.hpp"

namespace svsa {

// Feature perturbation x_i -> x_i + delta * direction_i for i in K, with unit
// directions and one shared magnitude. Core operations below also accept raw
// per-point tangents directly, which covers perturbations whose magnitude
// differs across points.
struct PerturbationSpec {
    std::vector<Index> indices;      // K
    std::vector<Vector> directions;  // unit vectors, one per K entry
    double delta = 0.0;

    void validate(Index data_dim, Index data_size) const {
        if (indices.empty()) throw InvalidInputError("perturbation spec: K must be nonempty");
        if (indices.size() != directions.size())
            throw InvalidInputError("perturbation spec: one direction per index required");
        if (delta < 0.0) throw InvalidInputError("perturbation spec: delta must be nonnegative");
        for (std::size_t j = 0; j < indices.size(); ++j) {
            if (indices[j] < 0 || indices[j] >= data_size)
                throw InvalidInputError("perturbation spec: index out of range");
            for (std::size_t l = j + 1; l < indices.size(); ++l)
                if (indices[l] == indices[j])
                    throw InvalidInputError("perturbation spec: duplicate index in K");
            if (directions[j].size() != data_dim)
                throw InvalidInputError("perturbation spec: direction dimension mismatch");
            if (std::abs(directions[j].norm() - 1.0) > 1e-12)
                throw InvalidInputError("perturbation spec: directions must be unit vectors");
        }
    }

    // delta * direction_i, the raw tangents entering the linear system.
    std::vector<Vector> tangents() const {
        std::vector<Vector> t(directions.size());
        for (std::size_t j = 0; j < directions.size(); ++j) t[j] = delta * directions[j];
        return t;
    }

    // Norm of the stacked data displacement, sqrt(sum ||delta dir_i||^2).
    double displacement_norm() const {
        return delta * std::sqrt(static_cast<double>(indices.size()));
    }
};

inline Dataset apply_perturbation(const Dataset& data, const PerturbationSpec& spec) {
    spec.validate(data.dim(), data.size());
    return perturb_dataset(data, spec.indices, spec.tangents());
}

struct GraphicalDerivativeOptions {
    Index n_samples = 1;
    double tol = 1e-6;
    Index max_iterations = 0;       // 0 -> solver default 50*sqrt(p)
    std::uint64_t seed = 0;
    double init_scale = -1.0;       // < 0 -> 0.01 * (1 + ||w||)
    double stationarity_tol = 1e-6; // scaled by (1 + ||w||)
};

// Sampled elements of DS(x|w)(mu): each v solves the least-squares form of
//   H v + b = 0,  H = d2_w mean loss over I,  b = mixed term over K.
struct GraphicalDerivativeResult {
    std::vector<Vector> v_samples;
    std::vector<double> residuals;  // ||H v + b|| per sample
    std::vector<Index> iterations;
    std::vector<bool> converged;
    std::vector<bool> min_norm_flag;
    double b_norm = 0.0;
    std::uint64_t seed = 0;

    bool all_converged() const {
        for (bool c : converged)
            if (!c) return false;
        return true;
    }
};

namespace detail {

// Shared sampling core for the two least-squares systems (forward and
// adjoint): sample 0 starts at zero (minimum norm), the rest at seeded
// Gaussian points whose null-space components survive.
inline GraphicalDerivativeResult sample_least_squares(const HvpOperator& hessian, const Vector& rhs_b,
                                                      const GraphicalDerivativeOptions& opts,
                                                      double init_scale) {
    if (opts.n_samples < 1) throw InvalidInputError("n_samples must be >= 1");
    GraphicalDerivativeResult result;
    result.seed = opts.seed;
    result.b_norm = rhs_b.norm();
    const Index p = hessian.dim();
    const Index count = opts.n_samples;
    result.v_samples.assign(static_cast<std::size_t>(count), Vector());
    result.residuals.assign(static_cast<std::size_t>(count), 0.0);
    result.iterations.assign(static_cast<std::size_t>(count), 0);
    result.converged.assign(static_cast<std::size_t>(count), true);
    result.min_norm_flag.assign(static_cast<std::size_t>(count), false);
    result.min_norm_flag[0] = true;

    if (result.b_norm == 0.0) {
        // d S(x|w)(0) sampling degenerates to the zero estimate for every
        // start; report the exact zero solution.
        for (Index s = 0; s < count; ++s) result.v_samples[static_cast<std::size_t>(s)] = Vector::Zero(p);
        return result;
    }

    // Starts are generated sequentially (deterministic), solves run in
    // parallel into private slots, and the merge is by sample index.
    std::vector<Vector> starts(static_cast<std::size_t>(count));
    starts[0] = Vector::Zero(p);
    Rng rng(opts.seed);
    for (Index s = 1; s < count; ++s) starts[static_cast<std::size_t>(s)] = init_scale * gaussian_vector(p, rng);

    LstsqOptions solver_opts;
    solver_opts.tol = opts.tol;
    solver_opts.max_iterations = opts.max_iterations;
    std::vector<LstsqResult> solves(static_cast<std::size_t>(count));
    parallel_for(count, [&](Index s) {
        solves[static_cast<std::size_t>(s)] =
            symmetric_least_squares([&hessian](const Vector& u) { return hessian(u); }, rhs_b,
                                    starts[static_cast<std::size_t>(s)], solver_opts);
    });
    for (Index s = 0; s < count; ++s) {
        const auto& sol = solves[static_cast<std::size_t>(s)];
        result.v_samples[static_cast<std::size_t>(s)] = sol.x;
        result.residuals[static_cast<std::size_t>(s)] = sol.residual_norm;
        result.iterations[static_cast<std::size_t>(s)] = sol.iterations;
        result.converged[static_cast<std::size_t>(s)] = sol.converged;
    }
    return result;
}

}  // namespace detail

// The x-block of the stationarity map's derivative applied to the tangents:
// grad_x R mu = (1/n) sum_{i in K} d_x d_w L_i t_i. Both blocks of the linear
// system share the 1/n of R; scaling the mixed side by 1/|K| instead inflates
// every sampled v by n/|K| and wrecks the estimate whenever K is small.
inline Vector stationarity_mixed_term(const Network& net, const Dataset& data,
                                      const std::vector<Index>& K, const std::vector<Vector>& tangents) {
    const double scale = static_cast<double>(K.size()) / static_cast<double>(data.size());
    return scale * mixed_jvp(net, data, K, tangents);
}

// Graphical derivative of the solution mapping at (x, w) applied to the data
// tangent {t_i}: solves argmin_v 1/2 || H v + b ||^2 with H the mean-loss
// Hessian over all of I (matrix-free) and b the mixed stationarity term.
inline GraphicalDerivativeResult graphical_derivative(const Network& net, const Dataset& data,
                                                      const std::vector<Index>& K,
                                                      const std::vector<Vector>& tangents,
                                                      const GraphicalDerivativeOptions& opts = {}) {
    detail::require_stationary(net, data, opts.stationarity_tol);
    const Vector b = stationarity_mixed_term(net, data, K, tangents);
    const HvpOperator hessian(net, data);
    const double init_scale =
        opts.init_scale >= 0.0 ? opts.init_scale : 0.01 * (1.0 + flatten(net).norm());
    return detail::sample_least_squares(hessian, b, opts, init_scale);
}

inline GraphicalDerivativeResult graphical_derivative(const Network& net, const Dataset& data,
                                                      const PerturbationSpec& spec,
                                                      const GraphicalDerivativeOptions& opts = {}) {
    spec.validate(data.dim(), data.size());
    return graphical_derivative(net, data, spec.indices, spec.tangents(), opts);
}

// S(x^p) ~ w + DS(x|w)(dx): shifts the center by every sampled v.
inline SolutionSet estimate_solution_set(const Vector& wbar, const GraphicalDerivativeResult& gd) {
    SolutionSet set;
    set.provenance = "estimated";
    set.samples.reserve(gd.v_samples.size());
    for (const auto& v : gd.v_samples) {
        if (v.size() != wbar.size())
            throw InvalidInputError("estimate_solution_set: sample dimension mismatch");
        set.samples.push_back(wbar + v);
    }
    set.validate();
    return set;
}

// Dense Hessian assembled column-by-column through the matrix-free operator.
// Intended for small instances (oracles, the influence special case).
inline Matrix dense_hessian(const HvpOperator& op) {
    const Index p = op.dim();
    Matrix h(p, p);
    for (Index j = 0; j < p; ++j) h.col(j) = op(Vector::Unit(p, j));
    return 0.5 * (h + h.transpose());  // symmetrize away accumulation noise
}

inline constexpr Index kInfluenceMaxDim = 200;

// Influence-function special case -H^{-1} b, valid only when the mean-loss
// Hessian is (numerically) nonsingular, i.e. around an isolated minimum.
inline Vector influence_function(const Network& net, const Dataset& data, const std::vector<Index>& K,
                                 const std::vector<Vector>& tangents, double min_singular_value = 1e-8) {
    const Index p = net.weight_dim();
    if (p > kInfluenceMaxDim)
        throw InvalidInputError("influence_function: dense solve limited to weight dimension <= " +
                                std::to_string(kInfluenceMaxDim));
    const Vector b = stationarity_mixed_term(net, data, K, tangents);
    const Matrix h = dense_hessian(HvpOperator(net, data));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(h);
    const Vector evals = eig.eigenvalues();
    if (evals.cwiseAbs().minCoeff() < min_singular_value)
        throw SingularHessianError(
            "influence_function: Hessian is numerically singular (smallest singular value " +
            std::to_string(evals.cwiseAbs().minCoeff()) + "); use graphical_derivative instead");
    const Vector proj = eig.eigenvectors().transpose() * b;
    return -(eig.eigenvectors() * proj.cwiseQuotient(evals));
}

inline Vector influence_function(const Network& net, const Dataset& data, const PerturbationSpec& spec,
                                 double min_singular_value = 1e-8) {
    spec.validate(data.dim(), data.size());
    return influence_function(net, data, spec.indices, spec.tangents(), min_singular_value);
}

// Coderivative of the solution mapping at (x_k, w) applied to p_vec:
//   { grad_{x_k} R^T y  :  H y = -p_vec }.
// The adjoint system is sampled like the forward one; an inconsistent system
// yields an empty element list with the residual reported.
struct CoderivativeResult {
    std::vector<Vector> elements;       // q vectors in R^d
    std::vector<Vector> multipliers;    // the y solving the adjoint system
    double residual = 0.0;              // ||H y + p_vec|| at the minimum-norm y
    bool consistent = false;
};

inline CoderivativeResult coderivative_apply(const Network& net, const Dataset& data, Index k,
                                             const Vector& p_vec,
                                             const GraphicalDerivativeOptions& opts = {}) {
    if (k < 0 || k >= data.size()) throw InvalidInputError("coderivative_apply: point index out of range");
    if (p_vec.size() != net.weight_dim())
        throw InvalidInputError("coderivative_apply: p has length " + std::to_string(p_vec.size()) +
                                ", expected " + std::to_string(net.weight_dim()));
    detail::require_stationary(net, data, opts.stationarity_tol);

    const HvpOperator hessian(net, data);
    const double init_scale =
        opts.init_scale >= 0.0 ? opts.init_scale : 0.01 * (1.0 + flatten(net).norm());
    const auto adjoint = detail::sample_least_squares(hessian, p_vec, opts, init_scale);

    CoderivativeResult result;
    result.residual = adjoint.residuals.empty() ? 0.0 : adjoint.residuals[0];
    result.consistent = result.residual <= opts.tol * (1.0 + p_vec.norm());
    if (!result.consistent) return result;

    // grad_{x_k} R = (1/n) d_x d_w L_k; assemble its columns once through the
    // mixed product and contract with every sampled multiplier.
    const Index d = data.dim();
    Matrix mixed_cols(net.weight_dim(), d);
    for (Index j = 0; j < d; ++j)
        mixed_cols.col(j) = mixed_jvp(net, data, {k}, {Vector::Unit(d, j)});
    const double inv_n = 1.0 / static_cast<double>(data.size());

    result.multipliers = adjoint.v_samples;
    result.elements.reserve(adjoint.v_samples.size());
    for (const auto& y : adjoint.v_samples)
        result.elements.push_back(inv_n * (mixed_cols.transpose() * y));
    return result;
}

// Report produced by the end-to-end estimation pipeline (graphical derivative
// -> estimated set -> distance), plus the before/after losses on the
// perturbed points.
struct SensitivityReport {
    std::uint64_t seed = 0;
    std::vector<Index> perturbed_indices;
    double delta = 0.0;
    double hausdorff_to_wbar = 0.0;
    std::optional<double> kappa;
    struct Sample {
        double residual = 0.0;
        double norm = 0.0;       // ||v||
        double loss_before = 0.0;
        double loss_after = 0.0;
        bool converged = true;
        bool min_norm = false;
    };
    std::vector<Sample> per_sample;
    SolutionSet estimated;

    double loss_before() const { return per_sample.empty() ? 0.0 : per_sample.front().loss_before; }
};

// Steps: graphical derivative, estimated set, Pompeiu-Hausdorff distance of
// the estimated set from the original weights. Losses are mean losses on the
// perturbed points, evaluated on the perturbed data.
inline SensitivityReport run_estimation(const Network& net, const Dataset& data,
                                        const std::vector<Index>& K, const std::vector<Vector>& tangents,
                                        double delta, const GraphicalDerivativeOptions& opts = {}) {
    const auto gd = graphical_derivative(net, data, K, tangents, opts);
    const Vector wbar = flatten(net);
    SensitivityReport report;
    report.seed = opts.seed;
    report.perturbed_indices = K;
    report.delta = delta;
    report.estimated = estimate_solution_set(wbar, gd);

    SolutionSet center;
    center.provenance = "original";
    center.samples.push_back(wbar);
    report.hausdorff_to_wbar = hausdorff(report.estimated, center);

    const Dataset poisoned = perturb_dataset(data, K, tangents);
    const double before = mean_loss(net, poisoned, K);
    report.per_sample.resize(gd.v_samples.size());
    for (std::size_t s = 0; s < gd.v_samples.size(); ++s) {
        auto& entry = report.per_sample[s];
        entry.residual = gd.residuals[s];
        entry.norm = gd.v_samples[s].norm();
        entry.loss_before = before;
        entry.loss_after = mean_loss(unflatten(report.estimated.samples[s], net), poisoned, K);
        entry.converged = gd.converged[s];
        entry.min_norm = gd.min_norm_flag[s];
    }
    return report;
}

inline SensitivityReport run_estimation(const Network& net, const Dataset& data,
                                        const PerturbationSpec& spec,
                                        const GraphicalDerivativeOptions& opts = {}) {
    spec.validate(data.dim(), data.size());
    return run_estimation(net, data, spec.indices, spec.tangents(), spec.delta, opts);
}

}  // namespace svsa
