#pragma once

#include <cmath>
#include <functional>

#include "svsa/common.hpp"

namespace svsa {

struct LstsqOptions {
    double tol = 1e-6;
    Index max_iterations = 0;  // 0 -> ceil(50 * sqrt(dim))
};

struct LstsqResult {
    Vector x;
    double residual_norm = 0.0;         // ||A x + b||
    double normal_residual_norm = 0.0;  // ||A (A x + b)||
    Index iterations = 0;
    bool converged = false;
};

// Largest-magnitude eigenvalue of a symmetric operator by power iteration;
// used to pick stable gradient-descent step sizes.
inline double power_iteration_max_eigenvalue(const std::function<Vector(const Vector&)>& apply,
                                             Index dim, std::uint64_t seed, Index iterations = 40) {
    Rng rng(seed);
    Vector v = random_unit_vector(dim, rng);
    double lambda = 0.0;
    for (Index k = 0; k < iterations; ++k) {
        const Vector av = apply(v);
        lambda = av.norm();
        if (lambda <= 0.0) return 0.0;
        v = av / lambda;
    }
    return lambda;
}

// min_x 1/2 ||A x + b||^2 for symmetric A available only through `apply`.
// Conjugate gradient on the normal equations in the CGLS form, which tracks
// the true residual s = A x + b alongside the normal residual A s; A is
// applied twice per iteration. Stops when the system is solved to tolerance
// (consistent case) or when the least-squares optimality condition ||A s||
// is met (inconsistent case). Started from x0 = 0 this converges to the
// minimum-norm least-squares solution -pinv(A) b; a nonzero x0 keeps its
// null-space component, so distinct starts give distinct minimizers exactly
// when A is singular.
inline LstsqResult symmetric_least_squares(const std::function<Vector(const Vector&)>& apply,
                                           const Vector& b, const Vector& x0,
                                           const LstsqOptions& opts = {}) {
    const Index n = b.size();
    if (x0.size() != n) throw InvalidInputError("symmetric_least_squares: x0 dimension mismatch");

    LstsqResult res;
    res.x = x0;

    const Index max_iter =
        opts.max_iterations > 0
            ? opts.max_iterations
            : static_cast<Index>(std::ceil(50.0 * std::sqrt(static_cast<double>(std::max<Index>(n, 1)))));

    Vector s = b;  // A x + b
    if (x0.squaredNorm() > 0.0) s += apply(res.x);
    Vector z = apply(s);  // normal residual up to sign
    const double residual_threshold = opts.tol * (1.0 + b.norm());
    const double normal_threshold = opts.tol * (1.0 + apply(b).norm());
    double zs = z.squaredNorm();

    if (s.norm() > residual_threshold && std::sqrt(zs) > normal_threshold) {
        Vector p = -z;
        for (Index k = 0; k < max_iter; ++k) {
            const Vector q = apply(p);
            const double qq = q.squaredNorm();
            if (!(qq > 0.0)) break;  // p fell into the null space
            const double alpha = zs / qq;
            res.x += alpha * p;
            s += alpha * q;
            ++res.iterations;
            z = apply(s);
            const double zs_next = z.squaredNorm();
            if (s.norm() <= residual_threshold || std::sqrt(zs_next) <= normal_threshold) {
                zs = zs_next;
                break;
            }
            p = -z + (zs_next / zs) * p;
            zs = zs_next;
        }
    }

    res.residual_norm = s.norm();
    res.normal_residual_norm = std::sqrt(zs);
    res.converged =
        res.residual_norm <= residual_threshold || res.normal_residual_norm <= normal_threshold;
    return res;
}

}  // namespace svsa
