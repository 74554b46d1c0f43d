#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace svsa {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Error hierarchy. The CLI maps these onto exit codes and a JSON error
// object, so keep the categories stable.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InvalidInputError : Error {
    using Error::Error;
};
struct PreconditionError : Error {
    using Error::Error;
};
struct DegeneratePointError : Error {
    using Error::Error;
};
struct SingularHessianError : Error {
    using Error::Error;
};
struct DivergenceError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

using Rng = std::mt19937_64;

inline Vector gaussian_vector(Index n, Rng& rng, double stddev = 1.0) {
    std::normal_distribution<double> dist(0.0, stddev);
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = dist(rng);
    return v;
}

inline Vector random_unit_vector(Index n, Rng& rng) {
    Vector v = gaussian_vector(n, rng);
    double norm = v.norm();
    while (norm < 1e-12) {
        v = gaussian_vector(n, rng);
        norm = v.norm();
    }
    return v / norm;
}

// Worker count for parallel sections: SVSA_THREADS if set, else hardware
// concurrency. Never required to be > 1.
inline unsigned thread_count() {
    if (const char* env = std::getenv("SVSA_THREADS")) {
        long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

// Runs fn(i) for i in [0, count). Tasks must write only to their own slots;
// results are then deterministic regardless of scheduling.
inline void parallel_for(Index count, const std::function<void(Index)>& fn) {
    if (count <= 0) return;
    unsigned workers = thread_count();
    if (workers <= 1 || count == 1) {
        for (Index i = 0; i < count; ++i) fn(i);
        return;
    }
    if (static_cast<Index>(workers) > count) workers = static_cast<unsigned>(count);
    std::atomic<Index> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (Index i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace svsa
