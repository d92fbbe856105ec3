#pragma once

#include <cstdint>
#include <random>

#include "deepred/tensor.hpp"

namespace deepred {

/// All stochastic pieces (seed tensor, per-iteration perturbations, AWGN,
/// parameter init) draw from an explicitly seeded engine so a run is
/// reproducible from its seed alone.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(eng_);
    }
    double normal(double mean, double std) {
        std::normal_distribution<double> d(mean, std);
        return d(eng_);
    }
    std::uint64_t next_u64() { return eng_(); }

    /// Derive an independent stream, e.g. one per averaged run.
    Rng fork() { return Rng(eng_() ^ 0x9e3779b97f4a7c15ull); }

    template <class T>
    void fill_uniform(TensorT<T>& t, double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        for (auto& v : t.vec()) v = static_cast<T>(d(eng_));
    }
    template <class T>
    void fill_normal(TensorT<T>& t, double mean, double std) {
        std::normal_distribution<double> d(mean, std);
        for (auto& v : t.vec()) v = static_cast<T>(d(eng_));
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace deepred
