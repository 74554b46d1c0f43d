#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "svsa/common.hpp"

namespace svsa {

// Finite sample standing in for a solution set S(x) (or a layer slice of
// one). Infinite sets are always represented by samples here; every set
// statement below is a statement about the sample points.
struct SolutionSet {
    std::vector<Vector> samples;
    std::string provenance;

    Index dim() const { return samples.empty() ? 0 : samples.front().size(); }
    Index size() const { return static_cast<Index>(samples.size()); }

    void validate() const {
        if (samples.empty()) throw InvalidInputError("solution set must be nonempty");
        const Index d = samples.front().size();
        for (const auto& s : samples)
            if (s.size() != d) throw InvalidInputError("solution set samples must share one dimension");
    }
};

inline double point_to_set(const Vector& w, const SolutionSet& set) {
    set.validate();
    if (w.size() != set.dim())
        throw InvalidInputError("point_to_set: point dimension " + std::to_string(w.size()) +
                                " does not match set dimension " + std::to_string(set.dim()));
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : set.samples) best = std::min(best, (w - s).norm());
    return best;
}

// One-sided excess e(C, D) = max_{w in C} d(w, D).
inline double excess(const SolutionSet& c, const SolutionSet& d) {
    c.validate();
    double worst = 0.0;
    for (const auto& w : c.samples) worst = std::max(worst, point_to_set(w, d));
    return worst;
}

// Pompeiu-Hausdorff distance h(C, D) = max{e(C, D), e(D, C)}.
inline double hausdorff(const SolutionSet& c, const SolutionSet& d) {
    return std::max(excess(c, d), excess(d, c));
}

// True iff C is inside D expanded by a closed ball of radius r, up to an
// absolute slack for sampled sets.
inline bool contained_in_expansion(const SolutionSet& c, const SolutionSet& d, double r,
                                   double tol_abs = 1e-9) {
    if (r < 0.0) throw InvalidInputError("contained_in_expansion: radius must be nonnegative");
    for (const auto& w : c.samples)
        if (point_to_set(w, d) > r + tol_abs) return false;
    return true;
}

}  // namespace svsa
