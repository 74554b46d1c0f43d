#include <catch2/catch_amalgamated.hpp>

#include "test_helpers.hpp"

using namespace svsa;
using svsa::testing::linear_regression_instance;
using svsa::testing::pinv_oracle_instance;
using svsa::testing::random_instance;
using svsa::testing::rel_error;
using svsa::testing::TestInstance;

namespace {

PerturbationSpec unit_spec(const TestInstance& inst, std::uint64_t seed, double delta,
                           std::vector<Index> K) {
    PerturbationSpec spec;
    spec.indices = std::move(K);
    spec.delta = delta;
    Rng rng(seed);
    for (std::size_t j = 0; j < spec.indices.size(); ++j)
        spec.directions.push_back(random_unit_vector(inst.data.dim(), rng));
    return spec;
}

// Same code path, tight stopping threshold: oracle comparisons should test
// the algorithm, not the default stopping heuristic.
GraphicalDerivativeOptions tight_opts() {
    GraphicalDerivativeOptions opts;
    opts.tol = 1e-12;
    opts.stationarity_tol = 1e-9;
    return opts;
}

}  // namespace

TEST_CASE("perturbation spec validation") {
    const Dataset data = toy_dataset();
    PerturbationSpec spec;
    CHECK_THROWS_AS(spec.validate(1, 2), InvalidInputError);  // empty K

    spec.indices = {0};
    spec.directions = {Vector::Constant(1, 0.5)};
    spec.delta = 0.1;
    CHECK_THROWS_AS(spec.validate(1, 2), InvalidInputError);  // not unit

    spec.directions = {Vector::Constant(1, 1.0)};
    CHECK_NOTHROW(spec.validate(1, 2));

    spec.delta = -0.1;
    CHECK_THROWS_AS(spec.validate(1, 2), InvalidInputError);
    spec.delta = 0.1;

    spec.indices = {5};
    CHECK_THROWS_AS(spec.validate(1, 2), InvalidInputError);

    spec.indices = {0, 0};
    spec.directions = {Vector::Constant(1, 1.0), Vector::Constant(1, 1.0)};
    CHECK_THROWS_AS(spec.validate(1, 2), InvalidInputError);  // duplicate

    PerturbationSpec ok;
    ok.indices = {1};
    ok.directions = {Vector::Constant(1, -1.0)};
    ok.delta = 0.25;
    const Dataset shifted = apply_perturbation(data, ok);
    CHECK(shifted.features(1, 0) == Catch::Approx(1.75));
    CHECK(ok.displacement_norm() == Catch::Approx(0.25));
}

TEST_CASE("graphical derivative minimum-norm sample on the scenario") {
    const Network net = toy_network();
    const Dataset data = toy_dataset();
    GraphicalDerivativeOptions opts;
    opts.n_samples = 1;
    const auto gd = graphical_derivative(net, data, toy_indices(), toy_tangents(), opts);
    REQUIRE(gd.v_samples.size() == 1);
    CHECK(gd.min_norm_flag[0]);
    CHECK(gd.converged[0]);
    // Hand solve of [[10,5],[5,2.5]] v = (2,1) restricted to the range: t(2,1)
    // with 25 t = 2.
    CHECK(gd.v_samples[0][0] == Catch::Approx(0.16).margin(1e-9));
    CHECK(gd.v_samples[0][1] == Catch::Approx(0.08).margin(1e-9));
    CHECK(gd.residuals[0] <= 1e-6 * (1.0 + gd.b_norm));
}

TEST_CASE("graphical derivative scales linearly in delta") {
    const auto inst = random_instance(42, 2, 3, 2, 4, 1e-3, /*relabel=*/true, 1e-2);
    const auto spec1 = unit_spec(inst, 5, 1e-4, {0, 2});
    auto spec2 = spec1;
    spec2.delta = 2e-4;
    const auto opts = tight_opts();
    const auto gd1 = graphical_derivative(inst.net, inst.data, spec1, opts);
    const auto gd2 = graphical_derivative(inst.net, inst.data, spec2, opts);
    const double ratio = gd2.v_samples[0].norm() / gd1.v_samples[0].norm();
    CHECK(ratio == Catch::Approx(2.0).margin(1e-3));
}

TEST_CASE("graphical derivative with zero perturbation is identically zero") {
    const Network net = toy_network();
    const Dataset data = toy_dataset();
    GraphicalDerivativeOptions opts;
    opts.n_samples = 4;
    const auto gd = graphical_derivative(net, data, toy_indices(), toy_tangents(0.0), opts);
    for (const auto& v : gd.v_samples) CHECK(v.norm() == 0.0);

    const auto report = run_estimation(net, data, toy_indices(), toy_tangents(0.0), 0.0, opts);
    CHECK(report.hausdorff_to_wbar == 0.0);
}

TEST_CASE("graphical derivative requires a stationary center") {
    const Network net = toy_network(1.3, 2.0);
    const Dataset data = toy_dataset();
    CHECK_THROWS_AS(graphical_derivative(net, data, toy_indices(), toy_tangents()), PreconditionError);
}

TEST_CASE("iterative minimum norm matches the dense pseudo-inverse oracle") {
    // Zero-loss stationary instances; width-1 layers give collinear per-point
    // gradients, so a good share of the Hessians is singular.
    int singular_seen = 0;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const auto oracle = pinv_oracle_instance(2000 + seed);
        if (oracle.singular) ++singular_seen;
        const auto gd =
            graphical_derivative(oracle.inst.net, oracle.inst.data, oracle.spec, tight_opts());
        CHECK(rel_error(gd.v_samples[0], oracle.expected) < 1e-6);
    }
    CHECK(singular_seen >= 3);
}

TEST_CASE("repeated solves differ exactly when the Hessian is singular") {
    GraphicalDerivativeOptions opts;
    opts.n_samples = 4;
    opts.seed = 77;

    // Singular: the scenario Hessian has rank 1.
    const Network net = toy_network();
    const Dataset data = toy_dataset();
    const auto gd = graphical_derivative(net, data, toy_indices(), toy_tangents(), opts);
    REQUIRE(gd.v_samples.size() == 4);
    for (std::size_t s = 1; s < gd.v_samples.size(); ++s) {
        CHECK((gd.v_samples[s] - gd.v_samples[0]).norm() > 1e-8);
        CHECK(gd.residuals[s] <= 1e-6 * (1.0 + gd.b_norm));
    }

    // Nonsingular: a strongly convex regression instance collapses every
    // start to the same solution.
    const auto lin = linear_regression_instance(3, 3, 12, 0.05);
    const std::vector<Index> K{0, 5};
    Rng rng(4);
    const std::vector<Vector> tangents{0.01 * random_unit_vector(3, rng),
                                       0.01 * random_unit_vector(3, rng)};
    auto lopts = tight_opts();
    lopts.n_samples = 3;
    const auto lgd = graphical_derivative(lin.net, lin.data, K, tangents, lopts);
    for (std::size_t s = 1; s < lgd.v_samples.size(); ++s)
        CHECK((lgd.v_samples[s] - lgd.v_samples[0]).norm() < 1e-8 * (1.0 + lgd.v_samples[0].norm()));
}

TEST_CASE("estimate_solution_set shifts the center by each sample") {
    const Network net = toy_network();
    const Dataset data = toy_dataset();
    GraphicalDerivativeOptions opts;
    opts.n_samples = 3;
    const auto gd = graphical_derivative(net, data, toy_indices(), toy_tangents(), opts);
    const Vector wbar = flatten(net);
    const auto set = estimate_solution_set(wbar, gd);
    CHECK(set.provenance == "estimated");
    REQUIRE(set.size() == 3);
    for (Index s = 0; s < set.size(); ++s)
        CHECK((set.samples[static_cast<std::size_t>(s)] - wbar -
               gd.v_samples[static_cast<std::size_t>(s)])
                  .norm() < 1e-12);

    // Zero perturbation collapses the estimate onto the center.
    const auto zero = graphical_derivative(net, data, toy_indices(), toy_tangents(0.0), opts);
    const auto zset = estimate_solution_set(wbar, zero);
    for (const auto& s : zset.samples) CHECK((s - wbar).norm() == 0.0);
}

TEST_CASE("influence function matches the closed-form regression oracle") {
    const auto lin = linear_regression_instance(11, 4, 15, 0.1);
    const Index dim = 4;
    const std::vector<Index> K{2, 7};
    Rng rng(12);
    std::vector<Vector> tangents{random_unit_vector(dim, rng), random_unit_vector(dim, rng)};

    // Textbook assembly: H = (a^2/n) sum x x^T (f is linear in w on the
    // active region), mixed term per point (a w.t)(a x) + r a t.
    const Index n = lin.data.size();
    Matrix h = Matrix::Zero(dim, dim);
    for (Index i = 0; i < n; ++i) {
        const Vector x = lin.data.features.row(i).transpose();
        h += lin.a * lin.a * x * x.transpose();
    }
    h /= static_cast<double>(n);
    Vector b = Vector::Zero(dim);
    const Vector w = lin.net.layers[0].row(0).transpose();
    for (std::size_t j = 0; j < K.size(); ++j) {
        const Vector x = lin.data.features.row(K[j]).transpose();
        const double r = lin.a * w.dot(x) - lin.data.labels[K[j]];
        b += (lin.a * w.dot(tangents[j])) * (lin.a * x) + r * lin.a * tangents[j];
    }
    b /= static_cast<double>(n);
    const Vector expected = -h.ldlt().solve(b);

    const Vector got = influence_function(lin.net, lin.data, K, tangents);
    CHECK((got - expected).norm() < 1e-8 * (1.0 + expected.norm()));

    // Agreement with the minimum-norm graphical-derivative sample.
    const auto gd = graphical_derivative(lin.net, lin.data, K, tangents, tight_opts());
    CHECK(rel_error(gd.v_samples[0], got) < 1e-6);

    // Zero mixed term maps to zero.
    const std::vector<Vector> zero_t{Vector::Zero(dim), Vector::Zero(dim)};
    CHECK(influence_function(lin.net, lin.data, K, zero_t).norm() == 0.0);
}

TEST_CASE("influence function refuses singular Hessians and big instances") {
    const Network net = toy_network();
    const Dataset data = toy_dataset();
    CHECK_THROWS_AS(influence_function(net, data, toy_indices(), toy_tangents()),
                    SingularHessianError);

    const Network big = random_network(2, 16, 8, 1);  // p = 384 > 200
    const Dataset bigdata = relabel_by_network(big, random_dataset(4, 8, 2));
    Rng rng(3);
    CHECK_THROWS_AS(influence_function(big, bigdata, {0}, {random_unit_vector(8, rng)}),
                    InvalidInputError);
}

TEST_CASE("coderivative at zero covector is zero when the Hessian is nonsingular") {
    const auto lin = linear_regression_instance(21, 3, 10, 0.05);
    auto opts = tight_opts();
    opts.n_samples = 3;
    const auto res = coderivative_apply(lin.net, lin.data, 1, Vector::Zero(lin.net.weight_dim()), opts);
    CHECK(res.consistent);
    for (const auto& q : res.elements) CHECK(q.norm() < 1e-10);
}

TEST_CASE("coderivative matches a dense adjoint oracle") {
    const auto lin = linear_regression_instance(31, 3, 9, 0.05);
    const Index p = lin.net.weight_dim();
    const Index k = 4;
    Rng rng(5);
    const Vector p_vec = random_unit_vector(p, rng);

    const auto res = coderivative_apply(lin.net, lin.data, k, p_vec, tight_opts());
    REQUIRE(res.consistent);
    REQUIRE(res.elements.size() == 1);

    // Dense oracle: solve H y = -p directly, then contract with the mixed
    // block assembled from finite differences.
    const Matrix h = dense_hessian(HvpOperator(lin.net, lin.data));
    const Vector y = h.ldlt().solve(-p_vec);
    Matrix mixed(p, lin.data.dim());
    for (Index j = 0; j < lin.data.dim(); ++j)
        mixed.col(j) = verify::fd_mixed_jvp(lin.net, lin.data, {k}, {Vector::Unit(lin.data.dim(), j)});
    const Vector expected = (mixed.transpose() * y) / static_cast<double>(lin.data.size());
    CHECK((res.elements[0] - expected).norm() < 1e-6 * (1.0 + expected.norm()));
}

TEST_CASE("coderivative reports inconsistent adjoint systems as empty") {
    const Network net = toy_network();
    const Dataset data = toy_dataset();
    // Null direction of the rank-1 scenario Hessian [[10,5],[5,2.5]].
    Vector p_vec(2);
    p_vec << 1.0, -2.0;
    const auto res = coderivative_apply(net, data, 0, p_vec);
    CHECK_FALSE(res.consistent);
    CHECK(res.elements.empty());
    CHECK(res.residual > 0.1);
}

TEST_CASE("every sample satisfies the linear-system residual bound") {
    GraphicalDerivativeOptions opts;
    opts.n_samples = 3;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const auto inst = random_instance(7000 + seed, 2, 2 + seed % 2, 2, 4, 1e-3, true, 1e-2);
        opts.seed = seed;
        const auto spec = unit_spec(inst, seed * 13 + 1, 1e-3, {0, 2});
        const auto gd = graphical_derivative(inst.net, inst.data, spec, opts);
        for (std::size_t s = 0; s < gd.v_samples.size(); ++s) {
            CHECK(gd.converged[s]);
            CHECK(gd.residuals[s] <= 1e-6 * (1.0 + gd.b_norm));
        }
    }
}

TEST_CASE("estimation report: distance equals the largest sample norm") {
    const Network net = toy_network();
    const Dataset data = toy_dataset();
    GraphicalDerivativeOptions opts;
    opts.n_samples = 4;
    opts.seed = 3;
    const auto report = run_estimation(net, data, toy_indices(), toy_tangents(), 0.2, opts);
    double max_norm = 0.0;
    for (const auto& s : report.per_sample) max_norm = std::max(max_norm, s.norm);
    CHECK(report.hausdorff_to_wbar == Catch::Approx(max_norm).margin(1e-12));
    CHECK(report.per_sample[0].loss_before == Catch::Approx(0.2).margin(1e-12));
    for (const auto& s : report.per_sample) CHECK(s.loss_after < s.loss_before);
}
