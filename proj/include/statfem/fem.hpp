#pragma once

#include "statfem/errors.hpp"
#include "statfem/mesh.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <vector>

namespace statfem {

using ScalarField = std::function<double(const Point&)>;

/// Prescribed nodal values on part of the boundary.
struct DirichletSpec {
    std::map<Index, double> values;

    static DirichletSpec homogeneous(const Mesh& mesh) {
        DirichletSpec bc;
        for (Index b : mesh.boundary_nodes) bc.values[b] = 0.0;
        return bc;
    }
};

/// Assembled P1 system. A and b carry the Dirichlet treatment once
/// apply_dirichlet has run; M is always the unconstrained mass matrix.
struct FemSystem {
    Mesh mesh;
    Eigen::MatrixXd A;
    Eigen::MatrixXd M;
    Eigen::VectorXd b;
    Eigen::MatrixXd H;
    std::vector<Index> bc_nodes;
    Index n_u = 0;
    Index n_y = 0;
};

/// Element-local data of a P1 element: measure and constant basis gradients.
struct ElementGeometry {
    int n = 0;
    double measure = 0.0;
    std::array<Eigen::Vector2d, 3> grad;
};

/// Equal-weight quadrature on an element; weights sum to the element measure.
struct ElementQuadrature {
    int n_points = 0;
    std::array<std::array<double, 3>, 3> shape{}; // shape[g][a] = phi_a at point g
    double weight = 0.0;                          // per point
};

inline constexpr double kLocateTolerance = 1e-10;

namespace detail {

inline constexpr double kMinMeasure = 1e-14;

inline const std::array<Index, 3>& elem(const Mesh& mesh, Index e) {
    return mesh.elements[static_cast<std::size_t>(e)];
}

} // namespace detail

inline ElementGeometry element_geometry(const Mesh& mesh, Index e) {
    const auto& el = detail::elem(mesh, e);
    ElementGeometry g;
    g.n = mesh.nodes_per_element();
    if (mesh.dim == 1) {
        const double h = mesh.nodes[el[1]].x - mesh.nodes[el[0]].x;
        if (!(h > detail::kMinMeasure))
            throw AssemblyError("degenerate interval element " + std::to_string(e));
        g.measure = h;
        g.grad[0] = {-1.0 / h, 0.0};
        g.grad[1] = {1.0 / h, 0.0};
        return g;
    }
    const Point& p0 = mesh.nodes[el[0]];
    const Point& p1 = mesh.nodes[el[1]];
    const Point& p2 = mesh.nodes[el[2]];
    const double two_a = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
    if (!(two_a > 2.0 * detail::kMinMeasure))
        throw AssemblyError("degenerate or inverted triangle " + std::to_string(e));
    g.measure = 0.5 * two_a;
    g.grad[0] = {(p1.y - p2.y) / two_a, (p2.x - p1.x) / two_a};
    g.grad[1] = {(p2.y - p0.y) / two_a, (p0.x - p2.x) / two_a};
    g.grad[2] = {(p0.y - p1.y) / two_a, (p1.x - p0.x) / two_a};
    return g;
}

/// 2-point Gauss on intervals, 3-point interior rule on triangles.
inline ElementQuadrature element_quadrature(int dim, double measure) {
    ElementQuadrature q;
    if (dim == 1) {
        const double s = 0.5 / std::sqrt(3.0);
        q.n_points = 2;
        q.shape[0] = {0.5 + s, 0.5 - s, 0.0};
        q.shape[1] = {0.5 - s, 0.5 + s, 0.0};
        q.weight = 0.5 * measure;
    } else {
        q.n_points = 3;
        q.shape[0] = {2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0};
        q.shape[1] = {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0};
        q.shape[2] = {1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0};
        q.weight = measure / 3.0;
    }
    return q;
}

inline Point quadrature_point(const Mesh& mesh, Index e, const ElementQuadrature& q, int g) {
    const auto& el = detail::elem(mesh, e);
    Point p;
    for (int a = 0; a < mesh.nodes_per_element(); ++a) {
        p.x += q.shape[g][a] * mesh.nodes[el[a]].x;
        p.y += q.shape[g][a] * mesh.nodes[el[a]].y;
    }
    return p;
}

/// Element stiffness scaled by `coeff`.
inline void add_element_stiffness(const Mesh& mesh, Index e, const ElementGeometry& geo, double coeff,
                                  Eigen::MatrixXd& K) {
    const auto& el = detail::elem(mesh, e);
    for (int a = 0; a < geo.n; ++a)
        for (int c = 0; c < geo.n; ++c)
            K(el[a], el[c]) += coeff * (geo.measure * geo.grad[a].dot(geo.grad[c]));
}

/// ∫∇φ_i·∇φ_j over the mesh, no boundary treatment.
inline Eigen::MatrixXd assemble_stiffness(const Mesh& mesh) {
    const Index n = mesh.num_nodes();
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
    for (Index e = 0; e < mesh.num_elements(); ++e) add_element_stiffness(mesh, e, element_geometry(mesh, e), 1.0, K);
    return K;
}

/// ∫φ_iφ_j, exact for P1.
inline Eigen::MatrixXd assemble_mass(const Mesh& mesh) {
    const Index n = mesh.num_nodes();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
    const double denom = mesh.dim == 1 ? 6.0 : 12.0;
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        const ElementGeometry geo = element_geometry(mesh, e);
        const auto& el = detail::elem(mesh, e);
        for (int a = 0; a < geo.n; ++a)
            for (int c = 0; c < geo.n; ++c) M(el[a], el[c]) += geo.measure * (a == c ? 2.0 : 1.0) / denom;
    }
    return M;
}

/// ∫fφ_i by element quadrature.
inline Eigen::VectorXd assemble_load(const Mesh& mesh, const ScalarField& f) {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(mesh.num_nodes());
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        const ElementGeometry geo = element_geometry(mesh, e);
        const ElementQuadrature q = element_quadrature(mesh.dim, geo.measure);
        const auto& el = detail::elem(mesh, e);
        for (int g = 0; g < q.n_points; ++g) {
            const double fg = f(quadrature_point(mesh, e, q, g));
            for (int a = 0; a < geo.n; ++a) b(el[a]) += q.weight * fg * q.shape[g][a];
        }
    }
    return b;
}

namespace detail {

/// Zero boundary rows and columns, unit diagonal.
inline void constrain_matrix(Eigen::MatrixXd& K, const std::vector<Index>& nodes) {
    for (Index i : nodes) {
        K.row(i).setZero();
        K.col(i).setZero();
        K(i, i) = 1.0;
    }
}

} // namespace detail

/// Identity rows at constrained nodes with symmetric lifting into the load.
inline FemSystem apply_dirichlet(FemSystem sys, const DirichletSpec& bc) {
    for (const auto& [node, value] : bc.values)
        STATFEM_REQUIRE(sys.mesh.is_boundary(node), "Dirichlet node " + std::to_string(node) + " is not on the boundary");
    for (const auto& [node, value] : bc.values) {
        for (Index j = 0; j < sys.A.rows(); ++j)
            if (j != node) sys.b(j) -= sys.A(j, node) * value;
        sys.A.row(node).setZero();
        sys.A.col(node).setZero();
        sys.A(node, node) = 1.0;
        sys.b(node) = value;
    }
    sys.bc_nodes.clear();
    for (const auto& [node, value] : bc.values) sys.bc_nodes.push_back(node);
    return sys;
}

/// Element containing p and the barycentric weights of p in it.
struct Location {
    Index element = -1;
    std::array<double, 3> weights{};
};

inline bool try_locate(const Mesh& mesh, const Point& p, Location& loc) {
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        const auto& el = detail::elem(mesh, e);
        std::array<double, 3> w{};
        if (mesh.dim == 1) {
            const double xa = mesh.nodes[el[0]].x;
            const double xb = mesh.nodes[el[1]].x;
            if (p.x < xa - kLocateTolerance || p.x > xb + kLocateTolerance) continue;
            w[1] = (p.x - xa) / (xb - xa);
            w[0] = 1.0 - w[1];
        } else {
            const Point& a = mesh.nodes[el[0]];
            const Point& b = mesh.nodes[el[1]];
            const Point& c = mesh.nodes[el[2]];
            const double area = detail::signed_area(a, b, c);
            w[0] = detail::signed_area(p, b, c) / area;
            w[1] = detail::signed_area(a, p, c) / area;
            w[2] = 1.0 - w[0] - w[1];
            if (w[0] < -kLocateTolerance || w[1] < -kLocateTolerance || w[2] < -kLocateTolerance) continue;
        }
        double sum = 0.0;
        for (int k = 0; k < mesh.nodes_per_element(); ++k) {
            w[k] = std::clamp(w[k], 0.0, 1.0);
            sum += w[k];
        }
        for (int k = 0; k < mesh.nodes_per_element(); ++k) w[k] /= sum;
        loc.element = e;
        loc.weights = w;
        return true;
    }
    return false;
}

inline Location locate_point(const Mesh& mesh, const Point& p) {
    Location loc;
    if (!try_locate(mesh, p, loc))
        throw LocationError("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") lies outside the mesh");
    return loc;
}

/// Rows of barycentric interpolation weights, one per point.
inline Eigen::MatrixXd build_observation_operator(const Mesh& mesh, const std::vector<Point>& points) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Index>(points.size()), mesh.num_nodes());
    for (std::size_t j = 0; j < points.size(); ++j) {
        const Location loc = locate_point(mesh, points[j]);
        const auto& el = detail::elem(mesh, loc.element);
        for (int k = 0; k < mesh.nodes_per_element(); ++k) H(static_cast<Index>(j), el[k]) += loc.weights[k];
    }
    return H;
}

/// Value of the P1 function with nodal coefficients u at p.
inline double evaluate_p1(const Mesh& mesh, const Eigen::VectorXd& u, const Point& p) {
    const Location loc = locate_point(mesh, p);
    const auto& el = detail::elem(mesh, loc.element);
    double v = 0.0;
    for (int k = 0; k < mesh.nodes_per_element(); ++k) v += loc.weights[k] * u(el[k]);
    return v;
}

inline Eigen::VectorXd interpolate(const Mesh& mesh, const ScalarField& f) {
    Eigen::VectorXd v(mesh.num_nodes());
    for (Index i = 0; i < mesh.num_nodes(); ++i) v(i) = f(mesh.nodes[static_cast<std::size_t>(i)]);
    return v;
}

/// Assembles A, M, b for forcing f, applies the boundary conditions and builds H.
inline FemSystem build_fem_system(const Mesh& mesh, const ScalarField& f, const std::vector<Point>& obs_points,
                                  const DirichletSpec& bc) {
    validate_mesh(mesh);
    FemSystem sys;
    sys.mesh = mesh;
    sys.A = assemble_stiffness(mesh);
    sys.M = assemble_mass(mesh);
    sys.b = assemble_load(mesh, f);
    sys.H = build_observation_operator(mesh, obs_points);
    sys.n_u = mesh.num_nodes();
    sys.n_y = static_cast<Index>(obs_points.size());
    return apply_dirichlet(std::move(sys), bc);
}

inline FemSystem build_fem_system(const Mesh& mesh, const ScalarField& f, const std::vector<Point>& obs_points) {
    return build_fem_system(mesh, f, obs_points, DirichletSpec::homogeneous(mesh));
}

/// x_j = (j+1)/(n+1), j = 0..n-1.
inline std::vector<Point> interval_observation_points(Index n_y) {
    std::vector<Point> pts(static_cast<std::size_t>(n_y));
    for (Index j = 0; j < n_y; ++j) pts[static_cast<std::size_t>(j)].x = static_cast<double>(j + 1) / static_cast<double>(n_y + 1);
    return pts;
}

/// Sunflower spiral inside the disc of radius r_max.
inline std::vector<Point> disc_observation_points(Index n_y, double r_max = 0.9) {
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    std::vector<Point> pts(static_cast<std::size_t>(n_y));
    for (Index j = 0; j < n_y; ++j) {
        const double r = r_max * std::sqrt((static_cast<double>(j) + 0.5) / static_cast<double>(n_y));
        const double a = golden * static_cast<double>(j);
        pts[static_cast<std::size_t>(j)] = {r * std::cos(a), r * std::sin(a)};
    }
    return pts;
}

/// L2 norm of the function whose load vector is db, restricted to free nodes:
/// sqrt(db_f^T M_ff^{-1} db_f).
inline double load_l2_norm(const FemSystem& sys, const Eigen::VectorXd& db) {
    const std::vector<Index> free = sys.mesh.free_nodes();
    const Index nf = static_cast<Index>(free.size());
    Eigen::MatrixXd Mff(nf, nf);
    Eigen::VectorXd v(nf);
    for (Index i = 0; i < nf; ++i) {
        v(i) = db(free[i]);
        for (Index j = 0; j < nf; ++j) Mff(i, j) = sys.M(free[i], free[j]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(Mff);
    if (llt.info() != Eigen::Success) throw NumericalError("mass matrix not positive definite");
    return std::sqrt(std::max(0.0, v.dot(llt.solve(v))));
}

/// L2 norm of the P1 function with coefficients u.
inline double p1_l2_norm(const FemSystem& sys, const Eigen::VectorXd& u) {
    return std::sqrt(std::max(0.0, u.dot(sys.M * u)));
}

} // namespace statfem
