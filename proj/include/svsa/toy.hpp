#pragma once

#include <string>
#include <vector>

#include "svsa/io.hpp"
#include "svsa/lipschitz.hpp"
#include "svsa/sensitivity.hpp"
#include "svsa/trainer.hpp"

namespace svsa {

// Built-in two-parameter scenario: a depth-2, width-1 network with fixed unit
// read-out, so f(x) = w1 w2 x on the positive orthant, and the two data
// points (1, 2), (2, 4). Its solution set is the hyperbola w1 w2 = 2. The
// canonical feature perturbation is x -> x + 0.2 * (-1, -2), which rescales
// both inputs by 0.8 and shifts the solution hyperbola to w1 w2 = 2.5.

inline Network toy_network(double w1 = 1.0, double w2 = 2.0) {
    Network net = make_network(2, 1, 1);
    net.layers[0](0, 0) = w1;
    net.layers[1](0, 0) = w2;
    net.output_vector[0] = 1.0;
    return net;
}

inline Dataset toy_dataset() {
    Dataset data;
    data.features.resize(2, 1);
    data.features << 1.0, 2.0;
    data.labels.resize(2);
    data.labels << 2.0, 4.0;
    return data;
}

inline std::vector<Index> toy_indices() { return {0, 1}; }

// 0.2 * (-1, -2), split per point: the two points carry different magnitudes,
// so this scenario uses the raw-tangent interface rather than a single-delta
// PerturbationSpec.
inline std::vector<Vector> toy_tangents(double scale = 0.2) {
    Vector t1(1), t2(1);
    t1 << -scale;
    t2 << -2.0 * scale;
    return {t1, t2};
}

inline Dataset toy_poisoned(double scale = 0.2) {
    return perturb_dataset(toy_dataset(), toy_indices(), toy_tangents(scale));
}

// Sum-of-losses empirical risk used by this scenario's reporting,
// sum_i 1/2 (f(x_i) - y_i)^2, i.e. n times the mean loss.
inline double toy_empirical_risk(const Network& net, const Dataset& data) {
    return static_cast<double>(data.size()) * mean_loss(net, data);
}

struct ToyOptions {
    Index n_samples = 5;
    std::uint64_t seed = 7;
    double scale = 0.2;
};

struct ToyReport {
    double risk_at_center = 0.0;  // empirical risk of the poisoned data at (1, 2)
    std::vector<double> risk_at_estimates;
    SensitivityReport sensitivity;
    std::vector<std::vector<double>> oracle_kappa_per_point;  // [point][layer]
    std::vector<double> oracle_kappa_aggregate;               // per layer
    double reference_kappa = 0.2;       // scenario's published modulus, unverified
    double reference_radius = 0.178;    // scenario's published expansion radius
    std::string kappa_note;
};

inline ToyReport run_toy(const ToyOptions& opts = {}) {
    const Network net = toy_network();
    const Dataset data = toy_dataset();
    const Dataset poisoned = toy_poisoned(opts.scale);

    GraphicalDerivativeOptions gd_opts;
    gd_opts.n_samples = opts.n_samples;
    gd_opts.seed = opts.seed;

    ToyReport report;
    report.sensitivity =
        run_estimation(net, data, toy_indices(), toy_tangents(opts.scale), opts.scale, gd_opts);
    report.risk_at_center = toy_empirical_risk(net, poisoned);
    report.risk_at_estimates.reserve(report.sensitivity.estimated.samples.size());
    for (const auto& w : report.sensitivity.estimated.samples)
        report.risk_at_estimates.push_back(toy_empirical_risk(unflatten(w, net), poisoned));

    for (Index i = 0; i < data.size(); ++i)
        report.oracle_kappa_per_point.push_back(kappa_layers(net, data.features.row(i).transpose()));
    for (Index h = 1; h <= net.depth(); ++h)
        report.oracle_kappa_aggregate.push_back(kappa_global(net, data, h).aggregate);

    report.kappa_note =
        "reference modulus 0.2 (expansion radius ~0.178) is not reproduced by the "
        "layer-ratio formula; the oracle values above are the computed ones and the "
        "reference figures are reported unverified";
    return report;
}

inline io::json toy_report_to_json(const ToyReport& report) {
    io::json j;
    j["risk_at_center"] = report.risk_at_center;
    j["risk_at_estimates"] = report.risk_at_estimates;
    j["sensitivity"] = io::sensitivity_report_to_json(report.sensitivity);
    j["oracle_kappa_per_point"] = report.oracle_kappa_per_point;
    j["oracle_kappa_aggregate"] = report.oracle_kappa_aggregate;
    j["reference_kappa"] = report.reference_kappa;
    j["reference_radius"] = report.reference_radius;
    j["kappa_note"] = report.kappa_note;
    return j;
}

// Samples of the hyperbola w1 w2 = product over a w1 range, for plotting the
// scenario's solution sets.
inline SolutionSet toy_solution_curve(double product, double w1_min, double w1_max, Index count,
                                      const std::string& provenance) {
    if (count < 2 || w1_min <= 0.0 || w1_max <= w1_min)
        throw InvalidInputError("toy_solution_curve: need count >= 2 and 0 < w1_min < w1_max");
    SolutionSet set;
    set.provenance = provenance;
    const double step = (w1_max - w1_min) / static_cast<double>(count - 1);
    for (Index i = 0; i < count; ++i) {
        const double w1 = w1_min + step * static_cast<double>(i);
        Vector w(2);
        w << w1, product / w1;
        set.samples.push_back(w);
    }
    return set;
}

}  // namespace svsa
