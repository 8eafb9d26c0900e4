#pragma once

#include "statfem/errors.hpp"
#include "statfem/random.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace statfem {

/// Multivariate normal with a cached Cholesky factor of the covariance.
class GaussianDist {
public:
    GaussianDist() = default;

    GaussianDist(Eigen::VectorXd mean, Eigen::MatrixXd cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
        STATFEM_REQUIRE(cov_.rows() == cov_.cols() && cov_.rows() == mean_.size(), "mean/covariance size mismatch");
        const double scale = std::max(cov_.cwiseAbs().maxCoeff(), 1e-300);
        if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
            throw std::invalid_argument("covariance is not symmetric");
        cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
        llt_.compute(cov_);
        if (llt_.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
    }

    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::MatrixXd& cov() const { return cov_; }
    Eigen::Index dim() const { return mean_.size(); }
    const Eigen::LLT<Eigen::MatrixXd>& llt() const { return llt_; }
    Eigen::MatrixXd factor() const { return llt_.matrixL(); }

    Eigen::MatrixXd precision() const {
        return llt_.solve(Eigen::MatrixXd::Identity(dim(), dim()));
    }

    Eigen::VectorXd sample(Rng& rng) const { return mean_ + llt_.matrixL() * rng.normal_vector(dim()); }

    Eigen::VectorXd variance() const { return cov_.diagonal(); }

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd cov_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

} // namespace statfem
