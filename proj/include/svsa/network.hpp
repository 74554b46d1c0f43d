#pragma once

#include <string>
#include <utility>
#include <vector>

#include "svsa/common.hpp"

namespace svsa {

// Per-layer ReLU activity masks, entries in {0,1}. An entry is 1 exactly when
// the pre-activation is strictly positive; a pre-activation of 0 masks to 0.
struct ActivationPattern {
    std::vector<Vector> masks;

    Index depth() const { return static_cast<Index>(masks.size()); }
};

// Deep fully-connected ReLU network with a fixed linear read-out:
//   x^(0) = x,  x^(h) = relu(W^(h) x^(h-1)),  f(x) = a . x^(H).
// layers[0] is m x d, layers[1..H-1] are m x m, output_vector is a in R^m.
// The read-out vector a is fixed; it is not part of the flattened weights.
struct Network {
    std::vector<Matrix> layers;
    Vector output_vector;

    Index depth() const { return static_cast<Index>(layers.size()); }
    Index width() const { return layers.empty() ? 0 : layers.front().rows(); }
    Index input_dim() const { return layers.empty() ? 0 : layers.front().cols(); }

    Index weight_dim() const {
        Index p = 0;
        for (const auto& w : layers) p += w.size();
        return p;
    }

    void validate() const {
        if (layers.empty()) throw InvalidInputError("network needs depth >= 1");
        const Index m = layers.front().rows();
        const Index d = layers.front().cols();
        if (m < 1 || d < 1) throw InvalidInputError("network needs width >= 1 and input_dim >= 1");
        for (std::size_t h = 1; h < layers.size(); ++h) {
            if (layers[h].rows() != m || layers[h].cols() != m)
                throw InvalidInputError("hidden layer " + std::to_string(h + 1) + " must be width x width");
        }
        if (output_vector.size() != m)
            throw InvalidInputError("output vector length must equal network width");
    }

    bool operator==(const Network& other) const {
        if (layers.size() != other.layers.size()) return false;
        for (std::size_t h = 0; h < layers.size(); ++h)
            if (layers[h] != other.layers[h]) return false;
        return output_vector == other.output_vector;
    }
};

// Training points: features row i is x_i, labels[i] = y_i.
struct Dataset {
    Matrix features;
    Vector labels;

    Index size() const { return features.rows(); }
    Index dim() const { return features.cols(); }

    void validate() const {
        if (features.rows() < 1) throw InvalidInputError("dataset needs at least one point");
        if (labels.size() != features.rows())
            throw InvalidInputError("dataset labels must match feature rows");
    }

    std::vector<Index> all_indices() const {
        std::vector<Index> idx(static_cast<std::size_t>(size()));
        for (Index i = 0; i < size(); ++i) idx[static_cast<std::size_t>(i)] = i;
        return idx;
    }
};

struct ForwardResult {
    double output = 0.0;
    ActivationPattern pattern;
    // hidden[0] is the input x, hidden[h] is x^(h); size depth()+1.
    std::vector<Vector> hidden;
};

inline ForwardResult forward(const Network& net, const Vector& x) {
    if (x.size() != net.input_dim())
        throw InvalidInputError("forward: input has dimension " + std::to_string(x.size()) +
                                ", network expects " + std::to_string(net.input_dim()));
    ForwardResult res;
    res.hidden.reserve(net.layers.size() + 1);
    res.hidden.push_back(x);
    res.pattern.masks.reserve(net.layers.size());
    for (const auto& w : net.layers) {
        Vector z = w * res.hidden.back();
        Vector mask = (z.array() > 0.0).cast<double>();
        res.pattern.masks.push_back(mask);
        res.hidden.push_back(mask.cwiseProduct(z));
    }
    res.output = net.output_vector.dot(res.hidden.back());
    return res;
}

inline double quadratic_loss(const Network& net, const Vector& x, double y) {
    const double r = forward(net, x).output - y;
    return 0.5 * r * r;
}

inline double mean_loss(const Network& net, const Dataset& data, const std::vector<Index>& indices) {
    if (indices.empty()) throw InvalidInputError("mean_loss: empty index set");
    double total = 0.0;
    for (Index i : indices) {
        if (i < 0 || i >= data.size()) throw InvalidInputError("mean_loss: index out of range");
        total += quadratic_loss(net, data.features.row(i).transpose(), data.labels[i]);
    }
    return total / static_cast<double>(indices.size());
}

inline double mean_loss(const Network& net, const Dataset& data) {
    return mean_loss(net, data, data.all_indices());
}

// Flattening convention: layers in order 1..H, each row-major.
inline Index layer_size(const Network& net, Index h) {
    if (h < 1 || h > net.depth()) throw InvalidInputError("layer index out of range");
    return net.layers[static_cast<std::size_t>(h - 1)].size();
}

inline Index layer_offset(const Network& net, Index h) {
    if (h < 1 || h > net.depth()) throw InvalidInputError("layer index out of range");
    Index off = 0;
    for (Index k = 1; k < h; ++k) off += layer_size(net, k);
    return off;
}

inline Vector flatten(const Network& net) {
    Vector w(net.weight_dim());
    Index off = 0;
    for (const auto& layer : net.layers) {
        for (Index r = 0; r < layer.rows(); ++r) {
            w.segment(off, layer.cols()) = layer.row(r).transpose();
            off += layer.cols();
        }
    }
    return w;
}

// Rebuilds a network with the same shape and read-out as `like` from a flat
// weight vector.
inline Network unflatten(const Vector& w, const Network& like) {
    if (w.size() != like.weight_dim())
        throw InvalidInputError("unflatten: weight vector has length " + std::to_string(w.size()) +
                                ", network expects " + std::to_string(like.weight_dim()));
    Network net = like;
    Index off = 0;
    for (auto& layer : net.layers) {
        for (Index r = 0; r < layer.rows(); ++r) {
            layer.row(r) = w.segment(off, layer.cols()).transpose();
            off += layer.cols();
        }
    }
    return net;
}

inline Network make_network(Index depth, Index width, Index input_dim) {
    if (depth < 1 || width < 1 || input_dim < 1)
        throw InvalidInputError("network needs depth, width, input_dim >= 1");
    Network net;
    net.layers.reserve(static_cast<std::size_t>(depth));
    net.layers.emplace_back(Matrix::Zero(width, input_dim));
    for (Index h = 2; h <= depth; ++h) net.layers.emplace_back(Matrix::Zero(width, width));
    net.output_vector = Vector::Zero(width);
    return net;
}

// Gaussian weights scaled by 1/sqrt(fan-in); read-out scaled by 1/sqrt(width).
inline Network random_network(Index depth, Index width, Index input_dim, std::uint64_t seed,
                              double scale = 1.0) {
    Network net = make_network(depth, width, input_dim);
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& layer : net.layers) {
        const double s = scale / std::sqrt(static_cast<double>(layer.cols()));
        for (Index r = 0; r < layer.rows(); ++r)
            for (Index c = 0; c < layer.cols(); ++c) layer(r, c) = s * dist(rng);
    }
    const double sa = scale / std::sqrt(static_cast<double>(width));
    for (Index i = 0; i < width; ++i) net.output_vector[i] = sa * dist(rng);
    return net;
}

inline Dataset random_dataset(Index n, Index dim, std::uint64_t seed, double feature_scale = 1.0,
                              double label_scale = 1.0) {
    if (n < 1 || dim < 1) throw InvalidInputError("dataset needs n >= 1 and dim >= 1");
    Dataset data;
    data.features.resize(n, dim);
    data.labels.resize(n);
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < dim; ++j) data.features(i, j) = feature_scale * dist(rng);
        data.labels[i] = label_scale * dist(rng);
    }
    return data;
}

// Replaces every label with the network's own output, making (net, data) an
// exact zero-loss stationary pair.
inline Dataset relabel_by_network(const Network& net, Dataset data) {
    for (Index i = 0; i < data.size(); ++i)
        data.labels[i] = forward(net, data.features.row(i).transpose()).output;
    return data;
}

// Shifts x_i by tangents[j] for each listed index; labels are unchanged.
inline Dataset perturb_dataset(const Dataset& data, const std::vector<Index>& indices,
                               const std::vector<Vector>& tangents) {
    if (indices.size() != tangents.size())
        throw InvalidInputError("perturb_dataset: one tangent per index required");
    Dataset out = data;
    for (std::size_t j = 0; j < indices.size(); ++j) {
        const Index i = indices[j];
        if (i < 0 || i >= data.size()) throw InvalidInputError("perturb_dataset: index out of range");
        if (tangents[j].size() != data.dim())
            throw InvalidInputError("perturb_dataset: tangent dimension mismatch");
        out.features.row(i) += tangents[j].transpose();
    }
    return out;
}

}  // namespace svsa
