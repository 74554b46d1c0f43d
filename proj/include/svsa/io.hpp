#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "svsa/lipschitz.hpp"
#include "svsa/network.hpp"
#include "svsa/sensitivity.hpp"
#include "svsa/set_metrics.hpp"

namespace svsa::io {

using nlohmann::json;

// All numeric output goes through the JSON serializer, which emits the
// shortest decimal that round-trips the exact double. Report bodies are
// therefore byte-stable across runs.
inline std::string format_double(double v) { return json(v).dump(); }

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    out << body;
    if (!out) throw IoError("write failed: " + path);
}

inline json parse_json(const std::string& text, const std::string& what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw IoError("invalid JSON in " + what);
    return j;
}

// ---- vectors and matrices ----

inline json vector_to_json(const Vector& v) {
    json arr = json::array();
    for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

inline Vector vector_from_json(const json& arr, const std::string& what) {
    if (!arr.is_array()) throw IoError(what + ": expected an array of numbers");
    Vector v(static_cast<Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number()) throw IoError(what + ": expected an array of numbers");
        v[static_cast<Index>(i)] = arr[i].get<double>();
    }
    return v;
}

// ---- checkpoint: {depth, width, input_dim, layers (row-major), output_vector} ----

inline json checkpoint_to_json(const Network& net) {
    net.validate();
    json j;
    j["depth"] = net.depth();
    j["width"] = net.width();
    j["input_dim"] = net.input_dim();
    json layers = json::array();
    for (const auto& layer : net.layers) {
        json rowmajor = json::array();
        for (Index r = 0; r < layer.rows(); ++r)
            for (Index c = 0; c < layer.cols(); ++c) rowmajor.push_back(layer(r, c));
        layers.push_back(std::move(rowmajor));
    }
    j["layers"] = std::move(layers);
    j["output_vector"] = vector_to_json(net.output_vector);
    return j;
}

inline Network checkpoint_from_json(const json& j) {
    for (const char* key : {"depth", "width", "input_dim", "layers", "output_vector"})
        if (!j.contains(key)) throw IoError(std::string("checkpoint: missing field '") + key + "'");
    const Index depth = j["depth"].get<Index>();
    const Index width = j["width"].get<Index>();
    const Index input_dim = j["input_dim"].get<Index>();
    if (depth < 1 || width < 1 || input_dim < 1) throw IoError("checkpoint: invalid dimensions");
    Network net = make_network(depth, width, input_dim);
    const json& layers = j["layers"];
    if (!layers.is_array() || static_cast<Index>(layers.size()) != depth)
        throw IoError("checkpoint: expected one layer array per layer");
    for (Index h = 0; h < depth; ++h) {
        Matrix& w = net.layers[static_cast<std::size_t>(h)];
        const Vector flat = vector_from_json(layers[static_cast<std::size_t>(h)], "checkpoint layer");
        if (flat.size() != w.size()) throw IoError("checkpoint: layer size mismatch");
        Index k = 0;
        for (Index r = 0; r < w.rows(); ++r)
            for (Index c = 0; c < w.cols(); ++c) w(r, c) = flat[k++];
    }
    net.output_vector = vector_from_json(j["output_vector"], "checkpoint output_vector");
    net.validate();
    return net;
}

inline void save_checkpoint(const std::string& path, const Network& net) {
    write_text_file(path, checkpoint_to_json(net).dump(2) + "\n");
}

inline Network load_checkpoint(const std::string& path) {
    return checkpoint_from_json(parse_json(read_text_file(path), path));
}

// ---- dataset: CSV with a required header x_1,...,x_d,y ----

inline std::string dataset_to_csv(const Dataset& data) {
    data.validate();
    std::ostringstream out;
    for (Index j = 0; j < data.dim(); ++j) out << "x_" << (j + 1) << ",";
    out << "y\n";
    for (Index i = 0; i < data.size(); ++i) {
        for (Index j = 0; j < data.dim(); ++j) out << format_double(data.features(i, j)) << ",";
        out << format_double(data.labels[i]) << "\n";
    }
    return out.str();
}

inline Dataset dataset_from_csv(const std::string& text, const std::string& what) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IoError(what + ": empty dataset file");
    auto split = [](const std::string& s) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream row(s);
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        return cells;
    };
    const auto header = split(line);
    if (header.size() < 2 || header.back() != "y")
        throw IoError(what + ": expected header x_1,...,x_d,y");
    const Index d = static_cast<Index>(header.size()) - 1;

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split(line);
        if (static_cast<Index>(cells.size()) != d + 1)
            throw IoError(what + ": row with wrong column count");
        std::vector<double> values;
        values.reserve(cells.size());
        for (const auto& cell : cells) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(cell, &used));
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw IoError(what + ": cannot parse number '" + cell + "'");
            }
        }
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw IoError(what + ": dataset has no rows");
    Dataset data;
    data.features.resize(static_cast<Index>(rows.size()), d);
    data.labels.resize(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (Index j = 0; j < d; ++j) data.features(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
        data.labels[static_cast<Index>(i)] = rows[i].back();
    }
    return data;
}

inline void save_dataset(const std::string& path, const Dataset& data) {
    write_text_file(path, dataset_to_csv(data));
}

inline Dataset load_dataset(const std::string& path) {
    return dataset_from_csv(read_text_file(path), path);
}

// ---- solution set: {dim, provenance, samples} ----

inline json solution_set_to_json(const SolutionSet& set) {
    set.validate();
    json j;
    j["dim"] = set.dim();
    j["provenance"] = set.provenance;
    json samples = json::array();
    for (const auto& s : set.samples) samples.push_back(vector_to_json(s));
    j["samples"] = std::move(samples);
    return j;
}

inline SolutionSet solution_set_from_json(const json& j) {
    for (const char* key : {"dim", "provenance", "samples"})
        if (!j.contains(key)) throw IoError(std::string("solution set: missing field '") + key + "'");
    SolutionSet set;
    set.provenance = j["provenance"].get<std::string>();
    const Index dim = j["dim"].get<Index>();
    for (const auto& sample : j["samples"]) {
        set.samples.push_back(vector_from_json(sample, "solution set sample"));
        if (set.samples.back().size() != dim) throw IoError("solution set: sample dimension mismatch");
    }
    set.validate();
    return set;
}

inline void save_solution_set(const std::string& path, const SolutionSet& set) {
    write_text_file(path, solution_set_to_json(set).dump(2) + "\n");
}

inline SolutionSet load_solution_set(const std::string& path) {
    return solution_set_from_json(parse_json(read_text_file(path), path));
}

// ---- perturbation spec: {delta, indices, directions} ----

inline json perturbation_to_json(const PerturbationSpec& spec) {
    json j;
    j["delta"] = spec.delta;
    j["indices"] = spec.indices;
    json dirs = json::array();
    for (const auto& dir : spec.directions) dirs.push_back(vector_to_json(dir));
    j["directions"] = std::move(dirs);
    return j;
}

inline PerturbationSpec perturbation_from_json(const json& j) {
    for (const char* key : {"delta", "indices", "directions"})
        if (!j.contains(key)) throw IoError(std::string("perturbation spec: missing field '") + key + "'");
    PerturbationSpec spec;
    spec.delta = j["delta"].get<double>();
    spec.indices = j["indices"].get<std::vector<Index>>();
    for (const auto& dir : j["directions"])
        spec.directions.push_back(vector_from_json(dir, "perturbation direction"));
    return spec;
}

inline PerturbationSpec load_perturbation(const std::string& path) {
    return perturbation_from_json(parse_json(read_text_file(path), path));
}

// ---- sensitivity report ----

inline json sensitivity_report_to_json(const SensitivityReport& report) {
    json j;
    j["seed"] = report.seed;
    j["spec"] = {{"delta", report.delta}, {"indices", report.perturbed_indices}};
    if (report.kappa) j["kappa"] = *report.kappa;
    j["hausdorff_to_wbar"] = report.hausdorff_to_wbar;
    json samples = json::array();
    for (const auto& s : report.per_sample) {
        samples.push_back({{"residual", s.residual},
                           {"norm", s.norm},
                           {"loss_before", s.loss_before},
                           {"loss_after", s.loss_after},
                           {"converged", s.converged},
                           {"min_norm", s.min_norm}});
    }
    j["per_sample"] = std::move(samples);
    j["estimates"] = solution_set_to_json(report.estimated)["samples"];
    return j;
}

// ---- Lipschitz certificate and inclusion report ----

inline json certificate_to_json(const LipschitzCertificate& cert) {
    json j;
    j["layer"] = cert.layer;
    j["per_point"] = cert.per_point;
    j["aggregate"] = cert.aggregate;
    j["delta"] = cert.delta;
    j["rho"] = cert.rho;
    return j;
}

inline json inclusion_report_to_json(const InclusionReport& report) {
    json j;
    j["kappa_per_layer"] = report.kappa_per_layer;
    j["kappa_global"] = report.kappa_global;
    j["delta"] = report.delta;
    j["rho"] = report.rho;
    json trials = json::array();
    for (const auto& t : report.trials) {
        trials.push_back({{"point", t.point},
                          {"delta", t.delta},
                          {"converged", t.converged},
                          {"passed", t.passed},
                          {"margin", t.margin},
                          {"grad_norm", t.grad_norm},
                          {"note", t.note}});
    }
    j["trials"] = std::move(trials);
    j["evaluated"] = report.evaluated;
    j["pass_fraction"] = report.pass_fraction;
    j["worst_margin"] = report.worst_margin;
    return j;
}

// ---- landscape grid: header row of alpha values, then beta + losses ----

inline std::string landscape_to_csv(const Vector& alphas, const Vector& betas, const Matrix& losses) {
    if (losses.rows() != betas.size() || losses.cols() != alphas.size())
        throw InvalidInputError("landscape_to_csv: grid shape mismatch");
    std::ostringstream out;
    for (Index a = 0; a < alphas.size(); ++a) {
        if (a) out << ",";
        out << format_double(alphas[a]);
    }
    out << "\n";
    for (Index b = 0; b < betas.size(); ++b) {
        out << format_double(betas[b]);
        for (Index a = 0; a < alphas.size(); ++a) out << "," << format_double(losses(b, a));
        out << "\n";
    }
    return out.str();
}

}  // namespace svsa::io
