#pragma once

#include <Eigen/Dense>
#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

#include <cstdint>
#include <random>

namespace statfem {

/// Seed-derived normal generator. Each (seed, stream) pair yields an
/// independent sequence, so particle n always sees the same variates no
/// matter how particles are scheduled.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                          0x5eedu};
        engine_.seed(seq);
    }

    double normal() { return normal_(engine_); }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

    template <class Derived>
    void fill_normal(Eigen::DenseBase<Derived>& out) {
        for (Eigen::Index j = 0; j < out.cols(); ++j)
            for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = normal_(engine_);
    }

    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd z(n);
        fill_normal(z);
        return z;
    }

    boost::random::mt19937_64& engine() { return engine_; }

private:
    boost::random::mt19937_64 engine_;
    boost::random::normal_distribution<double> normal_;
};

/// Stream ids reserved for the parameter chain; particles use 1..N.
inline constexpr std::uint64_t kParamStream = 0;
inline constexpr std::uint64_t particle_stream(std::uint64_t n) { return n + 1; }

} // namespace statfem
