// SPDX-License-Identifier: Apache-2.0
//
// Shared error types, seeded RNG streams, and hashing helpers.

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace cap {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Exit code 1. Malformed caller input (bad token ids, empty datasets, ...).
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Exit code 1. An operation was called in a state that cannot serve it.
class StateError : public std::runtime_error {
public:
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Exit code 1. A run failed mid-flight (divergence, non-finite loss, IO).
class RunError : public std::runtime_error {
public:
    explicit RunError(const std::string& msg) : std::runtime_error(msg) {}
};

// Exit code 1. Numerical degeneracy (zero-vector similarity and friends).
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), seed);
}

// Derives an independent RNG stream from a run seed and a stream tag, so that
// e.g. batch shuffling and bank sampling never share state.
inline Rng make_rng(std::uint64_t seed, std::string_view stream) {
    return Rng(splitmix64(seed ^ fnv1a64(stream)));
}

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

inline std::uint64_t hash_matrix(const Mat& m, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    return fnv1a64(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), seed);
}

}  // namespace cap
