#pragma once

#include <svsa/svsa.hpp>

namespace svsa::testing {

struct TestInstance {
    Network net;
    Dataset data;
};

// Random network/dataset pair whose pre-activations stay clear of the ReLU
// kink by `margin`, so finite-difference oracles are valid. Labels default to
// independent noise; relabel = true makes the pair an exact zero-loss
// stationary point. live_layer_margin > 0 additionally requires every layer
// jacobian to be nonzero at every point (no dead layers anywhere).
inline TestInstance random_instance(std::uint64_t seed, Index depth, Index width, Index input_dim,
                                    Index n, double margin = 1e-3, bool relabel = false,
                                    double live_layer_margin = 0.0) {
    for (std::uint64_t attempt = 0;; ++attempt) {
        const std::uint64_t s = seed + 1000003ULL * attempt;
        TestInstance inst;
        inst.net = random_network(depth, width, input_dim, s);
        inst.data = random_dataset(n, input_dim, s ^ 0x5555555555555555ULL);
        if (relabel) inst.data = relabel_by_network(inst.net, inst.data);
        if (verify::min_preactivation_abs(inst.net, inst.data) < margin) continue;
        if (live_layer_margin > 0.0) {
            bool live = true;
            for (Index i = 0; i < n && live; ++i) {
                const Vector x = inst.data.features.row(i).transpose();
                for (Index h = 1; h <= depth && live; ++h)
                    live = layer_jacobian(inst.net, x, h).norm() >= live_layer_margin;
            }
            if (!live) continue;
        }
        return inst;
    }
}

inline double rel_error(const Vector& got, const Vector& expected) {
    return (got - expected).norm() / std::max(expected.norm(), 1e-12);
}

inline double rel_error(const Matrix& got, const Matrix& expected) {
    return (got - expected).norm() / std::max(expected.norm(), 1e-12);
}

inline Matrix pseudo_inverse(const Matrix& a, double tol = 1e-9) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
    const double cutoff = tol * std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
    Vector inv = eig.eigenvalues();
    for (Index i = 0; i < inv.size(); ++i) inv[i] = std::abs(inv[i]) > cutoff ? 1.0 / inv[i] : 0.0;
    return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

// Dense Hessian and mixed term assembled from first-order jacobians only,
// exact at zero-loss stationary points (Gauss-Newton identity). This route
// never touches the tangent-propagation code under test.
inline Matrix dense_gauss_newton(const Network& net, const Dataset& data) {
    Matrix h = Matrix::Zero(net.weight_dim(), net.weight_dim());
    for (Index i = 0; i < data.size(); ++i) {
        const Vector jf = flat_f_gradient(net, data.features.row(i).transpose());
        h += jf * jf.transpose();
    }
    return h / static_cast<double>(data.size());
}

inline Vector dense_mixed_zero_loss(const Network& net, const Dataset& data,
                                    const std::vector<Index>& K, const std::vector<Vector>& tangents) {
    Vector b = Vector::Zero(net.weight_dim());
    for (std::size_t j = 0; j < K.size(); ++j) {
        const Vector x = data.features.row(K[j]).transpose();
        const double rf = input_jacobian(net, x).dot(tangents[j]);
        b += rf * flat_f_gradient(net, x);
    }
    return b / static_cast<double>(data.size());
}

// Tiny zero-loss instance with an unambiguous Hessian rank: no eigenvalue in
// the gray zone between "numerically zero" and "clearly positive", so the
// dense pseudo-inverse oracle and the iterative solve agree on the rank.
struct PinvOracleInstance {
    TestInstance inst;
    PerturbationSpec spec;
    Matrix hessian;
    Vector mixed;
    Vector expected;  // -pinv(H) b
    bool singular = false;
};

inline PinvOracleInstance pinv_oracle_instance(std::uint64_t seed) {
    for (std::uint64_t attempt = 0;; ++attempt) {
        const std::uint64_t s = seed + 104729ULL * attempt;
        const Index depth = 1 + static_cast<Index>(s % 3);
        const Index width = 1 + static_cast<Index>((s / 3) % 2);
        const Index input_dim = 2 + static_cast<Index>((s / 7) % 2);
        const Index n = 3 + static_cast<Index>(s % 3);
        PinvOracleInstance out;
        out.inst = random_instance(s, depth, width, input_dim, n, 1e-3, /*relabel=*/true);
        if (out.inst.net.weight_dim() > 10) continue;

        out.spec.indices = {0, 1};
        out.spec.delta = 1e-3;
        Rng rng(s ^ 0xABCDEFULL);
        out.spec.directions = {random_unit_vector(input_dim, rng), random_unit_vector(input_dim, rng)};

        out.hessian = dense_gauss_newton(out.inst.net, out.inst.data);
        Eigen::SelfAdjointEigenSolver<Matrix> eig(out.hessian);
        const Vector abs_evals = eig.eigenvalues().cwiseAbs();
        const double lmax = abs_evals.maxCoeff();
        bool gray = lmax <= 0.0;
        for (Index i = 0; i < abs_evals.size(); ++i)
            if (abs_evals[i] > 1e-9 * lmax && abs_evals[i] < 1e-4 * lmax) gray = true;
        if (gray) continue;

        out.singular = abs_evals.minCoeff() <= 1e-9 * lmax;
        out.mixed = dense_mixed_zero_loss(out.inst.net, out.inst.data, out.spec.indices, out.spec.tangents());
        out.expected = -(pseudo_inverse(out.hessian) * out.mixed);
        if (out.expected.norm() < 1e-8) continue;  // keep the comparison meaningful
        return out;
    }
}

// True when the solution manifold's tangent space at the current weights
// projects onto every layer's full coordinate block. Under this coverage the
// first-order response to any single-point perturbation stays inside the
// per-layer expansion that the ratio-formula modulus prescribes; without it
// the empirical inclusion can genuinely fail (the bound is not a theorem for
// arbitrary instances).
inline bool layer_tangent_coverage(const Network& net, const Dataset& data) {
    const Index p = net.weight_dim();
    Matrix jac(data.size(), p);
    for (Index i = 0; i < data.size(); ++i)
        jac.row(i) = flat_f_gradient(net, data.features.row(i).transpose()).transpose();
    Eigen::FullPivLU<Matrix> lu(jac);
    lu.setThreshold(1e-10);
    const Matrix kernel = lu.kernel();
    for (Index h = 1; h <= net.depth(); ++h) {
        const Matrix kern_h = kernel.middleRows(layer_offset(net, h), layer_size(net, h));
        Eigen::JacobiSVD<Matrix> svd(kern_h);
        const Index len = layer_size(net, h);
        if (svd.singularValues().size() < len) return false;
        if (svd.singularValues()(len - 1) < 1e-6 * svd.singularValues()(0)) return false;
    }
    return true;
}

// Zero-loss stationary instance suitable for empirical inclusion checks:
// comfortable kink margin (patterns stable under small retraining moves),
// live layers, and tangent coverage per layer.
inline TestInstance inclusion_instance(std::uint64_t seed, Index width, Index n) {
    for (std::uint64_t attempt = 0;; ++attempt) {
        const auto inst =
            random_instance(seed + 613ULL * attempt, 2, width, 2, n, 0.1, /*relabel=*/true, 1e-2);
        if (layer_tangent_coverage(inst.net, inst.data)) return inst;
    }
}

// Width-1 single-layer instance kept strictly on the active side of the ReLU:
// f = a w.x is linear in w there, so the mean-loss Hessian is exactly
// (a^2/n) sum x x^T and the influence formula has a textbook closed form.
struct LinearInstance {
    Network net;
    Dataset data;
    double a = 0.0;
};

inline LinearInstance linear_regression_instance(std::uint64_t seed, Index dim, Index n, double noise) {
    for (std::uint64_t attempt = 0;; ++attempt) {
        Rng rng(seed + 7919 * attempt);
        std::uniform_real_distribution<double> positive(0.5, 1.5);
        LinearInstance inst;
        inst.net = make_network(1, 1, dim);
        inst.a = positive(rng);
        inst.net.output_vector[0] = inst.a;
        for (Index j = 0; j < dim; ++j) inst.net.layers[0](0, j) = positive(rng);

        inst.data.features.resize(n, dim);
        inst.data.labels.resize(n);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < dim; ++j) inst.data.features(i, j) = positive(rng);
        std::normal_distribution<double> gauss(0.0, noise);
        for (Index i = 0; i < n; ++i)
            inst.data.labels[i] = forward(inst.net, inst.data.features.row(i).transpose()).output + gauss(rng);

        // Move the weights to the exact least-squares minimizer so the
        // stationarity precondition holds with a nonsingular Hessian.
        Matrix gram = Matrix::Zero(dim, dim);
        Vector rhs = Vector::Zero(dim);
        for (Index i = 0; i < n; ++i) {
            const Vector x = inst.data.features.row(i).transpose();
            gram += inst.a * inst.a * x * x.transpose();
            rhs += inst.a * inst.data.labels[i] * x;
        }
        const Vector wstar = gram.ldlt().solve(rhs);
        inst.net.layers[0].row(0) = wstar.transpose();
        if (wstar.minCoeff() <= 0.05) continue;  // stay inside the linear region
        bool active = true;
        for (Index i = 0; i < n && active; ++i)
            active = inst.net.layers[0].row(0).dot(inst.data.features.row(i)) > 0.1;
        if (active) return inst;
    }
}

}  // namespace svsa::testing
