#pragma once

#include "statfem/errors.hpp"
#include "statfem/fem.hpp"
#include "statfem/gaussian.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <ostream>
#include <vector>

namespace statfem {

/// k(x,x') = σ² exp(-|x-x'|²/(2ℓ²)) on a D-dimensional domain.
struct SeKernel {
    double amplitude = 1.0;
    double length_scale = 0.1;
    int dim = 1;

    void validate() const {
        STATFEM_REQUIRE(amplitude > 0.0, "kernel amplitude must be positive");
        STATFEM_REQUIRE(length_scale > 0.0, "kernel length scale must be positive");
        STATFEM_REQUIRE(dim == 1 || dim == 2, "kernel dimension must be 1 or 2");
    }

    double operator()(const Point& a, const Point& b) const {
        const double dx = a.x - b.x, dy = a.y - b.y;
        return amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * length_scale * length_scale));
    }
};

inline double spectral_density_se(double omega, const SeKernel& k) {
    STATFEM_REQUIRE(omega >= 0.0, "frequency must be nonnegative");
    const double l2 = k.length_scale * k.length_scale;
    return k.amplitude * std::pow(2.0 * std::numbers::pi * l2, 0.5 * k.dim) * std::exp(-0.5 * omega * omega * l2);
}

/// Discrete Dirichlet-Laplacian eigenpairs; coefficient vectors have zero
/// boundary entries and unit L2 norm (g^T M g = 1).
struct LaplacianEigs {
    Eigen::VectorXd eigenvalues;    // ascending
    Eigen::MatrixXd coeff_vectors;  // n_u x m, column l is g_l
    Index rank() const { return eigenvalues.size(); }
};

inline Index default_rank(const Mesh& mesh) {
    const Index n_free = mesh.num_nodes() - static_cast<Index>(mesh.boundary_nodes.size());
    return std::min<Index>(n_free, mesh.dim == 1 ? 64 : 128);
}

namespace detail {

inline Eigen::MatrixXd restrict(const Eigen::MatrixXd& K, const std::vector<Index>& idx) {
    const Index n = static_cast<Index>(idx.size());
    Eigen::MatrixXd out(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) out(i, j) = K(idx[i], idx[j]);
    return out;
}

} // namespace detail

/// m smallest pairs of A g = λ M g on the free nodes, via Cholesky reduction of M.
inline LaplacianEigs solve_laplacian_eigs(const FemSystem& sys, Index m) {
    const std::vector<Index> free = sys.mesh.free_nodes();
    const Index nf = static_cast<Index>(free.size());
    STATFEM_REQUIRE(m >= 1 && m <= nf, "eigen rank must lie in [1, number of free nodes]");
    const Eigen::MatrixXd Aff = detail::restrict(sys.A, free);
    const Eigen::MatrixXd Mff = detail::restrict(sys.M, free);
    Eigen::LLT<Eigen::MatrixXd> llt(Mff);
    if (llt.info() != Eigen::Success) throw NumericalError("mass matrix is not positive definite");
    const auto L = llt.matrixL();
    Eigen::MatrixXd C = L.solve(Aff);
    C = L.solve(C.transpose()).eval();
    C = 0.5 * (C + C.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
    if (es.info() != Eigen::Success) throw NumericalError("Laplacian eigensolver did not converge");
    const Eigen::MatrixXd W = es.eigenvectors().leftCols(m);
    const Eigen::MatrixXd Gf = llt.matrixU().solve(W);

    LaplacianEigs out;
    out.eigenvalues = es.eigenvalues().head(m);
    out.coeff_vectors = Eigen::MatrixXd::Zero(sys.n_u, m);
    for (Index l = 0; l < m; ++l) {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(sys.n_u);
        for (Index i = 0; i < nf; ++i) g(free[i]) = Gf(i, l);
        g /= std::sqrt(g.dot(sys.M * g));
        if (g(free[0]) < 0.0 || (std::abs(g(free[0])) < 1e-14 && g.sum() < 0.0)) g = -g;
        out.coeff_vectors.col(l) = g;
        if (!(out.eigenvalues(l) > 0.0)) throw NumericalError("non-positive Laplacian eigenvalue");
    }
    return out;
}

/// Boundary rows and columns of a covariance are zeroed and the diagonal set to
/// `boundary_variance`; a non-positive value falls back to the jitter (or 1e-12).
struct CovarianceOptions {
    double jitter = 0.0;
    double boundary_variance = -1.0;
};

/// Σ_l S(√λ_l)(M g_l)(M g_l)^T + jitter·M with boundary rows/columns constrained.
inline Eigen::MatrixXd assemble_error_covariance(const FemSystem& sys, const LaplacianEigs& eigs,
                                                 const SeKernel& kernel, const CovarianceOptions& opts) {
    kernel.validate();
    STATFEM_REQUIRE(opts.jitter >= 0.0, "jitter must be nonnegative");
    STATFEM_REQUIRE(eigs.coeff_vectors.rows() == sys.n_u || eigs.rank() == 0, "eigenpairs do not match the mesh");
    Eigen::MatrixXd Gm = Eigen::MatrixXd::Zero(sys.n_u, sys.n_u);
    if (eigs.rank() > 0) {
        const Eigen::MatrixXd MG = sys.M * eigs.coeff_vectors;
        Eigen::VectorXd s(eigs.rank());
        for (Index l = 0; l < eigs.rank(); ++l) s(l) = spectral_density_se(std::sqrt(eigs.eigenvalues(l)), kernel);
        Gm.noalias() = MG * s.asDiagonal() * MG.transpose();
    }
    Gm += opts.jitter * sys.M;
    Gm = 0.5 * (Gm + Gm.transpose()).eval();
    double diag = opts.boundary_variance > 0.0 ? opts.boundary_variance : opts.jitter;
    if (diag <= 0.0) diag = 1e-12;
    for (Index b : sys.mesh.boundary_nodes) {
        Gm.row(b).setZero();
        Gm.col(b).setZero();
        Gm(b, b) = diag;
    }
    return Gm;
}

inline Eigen::MatrixXd assemble_error_covariance(const FemSystem& sys, const LaplacianEigs& eigs,
                                                 const SeKernel& kernel, double jitter) {
    return assemble_error_covariance(sys, eigs, kernel, CovarianceOptions{jitter, -1.0});
}

/// Load of the prior mean (zero on boundary rows) with covariance built like G.
inline GaussianDist assemble_forcing_prior(const FemSystem& sys, const ScalarField& mean_fn, const SeKernel& kernel,
                                           const LaplacianEigs& eigs, const CovarianceOptions& opts) {
    Eigen::VectorXd mu = assemble_load(sys.mesh, mean_fn);
    for (Index b : sys.mesh.boundary_nodes) mu(b) = 0.0;
    return GaussianDist(std::move(mu), assemble_error_covariance(sys, eigs, kernel, opts));
}

inline GaussianDist assemble_forcing_prior(const FemSystem& sys, const ScalarField& mean_fn, const SeKernel& kernel,
                                           const LaplacianEigs& eigs, double jitter) {
    return assemble_forcing_prior(sys, mean_fn, kernel, eigs, CovarianceOptions{jitter, -1.0});
}

/// Pointwise variance of the reduced-rank field, Σ_l S(√λ_l) g_l(x)².
inline double field_variance(const FemSystem& sys, const LaplacianEigs& eigs, const SeKernel& kernel,
                             const Point& x, Index m = -1) {
    if (m < 0 || m > eigs.rank()) m = eigs.rank();
    const Location loc = locate_point(sys.mesh, x);
    const auto& el = sys.mesh.elements[static_cast<std::size_t>(loc.element)];
    double v = 0.0;
    for (Index l = 0; l < m; ++l) {
        double g = 0.0;
        for (int k = 0; k < sys.mesh.nodes_per_element(); ++k) g += loc.weights[k] * eigs.coeff_vectors(el[k], l);
        v += spectral_density_se(std::sqrt(eigs.eigenvalues(l)), kernel) * g * g;
    }
    return v;
}

/// CSV rows `l,lambda,c_0,...,c_{n-1}` with a header line.
inline void write_eigs_csv(std::ostream& out, const LaplacianEigs& eigs) {
    out.precision(17);
    out << "l,lambda";
    for (Index i = 0; i < eigs.coeff_vectors.rows(); ++i) out << ",c_" << i;
    out << "\n";
    for (Index l = 0; l < eigs.rank(); ++l) {
        out << (l + 1) << "," << eigs.eigenvalues(l);
        for (Index i = 0; i < eigs.coeff_vectors.rows(); ++i) out << "," << eigs.coeff_vectors(i, l);
        out << "\n";
    }
}

} // namespace statfem
