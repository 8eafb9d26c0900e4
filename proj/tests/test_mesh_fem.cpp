#include "test_util.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

using namespace statfem;

TEST(IntervalMesh, SmallestMesh) {
    const Mesh m = build_interval_mesh(2);
    ASSERT_EQ(m.num_nodes(), 2);
    EXPECT_EQ(m.num_elements(), 1);
    EXPECT_DOUBLE_EQ(m.nodes[0].x, 0.0);
    EXPECT_DOUBLE_EQ(m.nodes[1].x, 1.0);
    EXPECT_EQ(m.boundary_nodes, (std::vector<Index>{0, 1}));
    EXPECT_TRUE(m.free_nodes().empty());
}

TEST(IntervalMesh, SpacingAndBoundary) {
    const Mesh m = build_interval_mesh(5);
    for (Index i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(m.nodes[i].x, 0.25 * static_cast<double>(i));
    EXPECT_EQ(m.boundary_nodes, (std::vector<Index>{0, 4}));
}

TEST(IntervalMesh, Counts) {
    const Mesh m = build_interval_mesh(33);
    EXPECT_EQ(m.num_elements(), 32);
    EXPECT_EQ(m.free_nodes().size(), 31u);
}

TEST(IntervalMesh, RejectsTooFewNodes) {
    EXPECT_THROW(build_interval_mesh(1), std::invalid_argument);
    EXPECT_THROW(build_interval_mesh(0), std::invalid_argument);
}

TEST(DiscMesh, SingleRing) {
    const Mesh m = build_disc_mesh(1);
    EXPECT_EQ(m.num_nodes(), 7);
    EXPECT_EQ(m.num_elements(), 6);
    EXPECT_EQ(m.boundary_nodes.size(), 6u);
    EXPECT_FALSE(m.is_boundary(0));
}

TEST(DiscMesh, AreaAndOrientation) {
    for (int r : {1, 2, 4, 8, 12}) {
        const Mesh m = build_disc_mesh(r);
        double area = 0.0;
        for (Index e = 0; e < m.num_elements(); ++e) {
            const double a = element_measure(m, e);
            EXPECT_GT(a, 0.0);
            area += a;
        }
        const double tol = 10.0 / (static_cast<double>(r) * r);
        EXPECT_LT(std::abs(area - std::numbers::pi) / std::numbers::pi, tol) << "n_rings=" << r;
    }
}

TEST(DiscMesh, BoundaryNodesOnUnitCircle) {
    const Mesh m = build_disc_mesh(6);
    for (Index i = 0; i < m.num_nodes(); ++i) {
        const double r = std::hypot(m.nodes[i].x, m.nodes[i].y);
        EXPECT_EQ(m.is_boundary(i), std::abs(r - 1.0) < 1e-12) << "node " << i;
    }
}

TEST(MeshIo, RoundTrip) {
    const Mesh m = build_disc_mesh(3);
    std::stringstream ss;
    write_mesh(ss, m);
    const Mesh back = read_mesh(ss);
    ASSERT_EQ(back.num_nodes(), m.num_nodes());
    ASSERT_EQ(back.num_elements(), m.num_elements());
    EXPECT_EQ(back.boundary_nodes, m.boundary_nodes);
    for (Index i = 0; i < m.num_nodes(); ++i) {
        EXPECT_DOUBLE_EQ(back.nodes[i].x, m.nodes[i].x);
        EXPECT_DOUBLE_EQ(back.nodes[i].y, m.nodes[i].y);
    }
}

TEST(MeshIo, CommentsAndReorientation) {
    std::istringstream in("# reference triangle, clockwise\n"
                          "dim 2\n"
                          "node 0 0\nnode 0 1   # top\nnode 1 0\n"
                          "elem 0 1 2\n"
                          "boundary 2\nboundary 0\nboundary 1\n");
    const Mesh m = read_mesh(in);
    EXPECT_GT(element_measure(m, 0), 0.0);
    EXPECT_EQ(m.boundary_nodes, (std::vector<Index>{0, 1, 2}));
}

TEST(MeshIo, Errors) {
    std::istringstream no_dim("node 0\n");
    EXPECT_THROW(read_mesh(no_dim), std::invalid_argument);
    std::istringstream bad_key("dim 1\nvertex 0\n");
    EXPECT_THROW(read_mesh(bad_key), std::invalid_argument);
    std::istringstream bad_index("dim 1\nnode 0\nnode 1\nelem 0 5\n");
    EXPECT_THROW(read_mesh(bad_index), std::invalid_argument);
}

TEST(Stiffness, Interval) {
    const Index n = 11;
    const double h = 0.1;
    const Eigen::MatrixXd A = assemble_stiffness(build_interval_mesh(n));
    EXPECT_LT((A - A.transpose()).cwiseAbs().maxCoeff(), 1e-14);
    for (Index i = 1; i + 1 < n; ++i) {
        EXPECT_NEAR(A(i, i), 2.0 / h, 1e-10);
        EXPECT_NEAR(A(i, i - 1), -1.0 / h, 1e-10);
        EXPECT_NEAR(A(i, i + 1), -1.0 / h, 1e-10);
        EXPECT_NEAR(A.row(i).sum(), 0.0, 1e-10);
    }
}

TEST(Stiffness, ReferenceTriangle) {
    Mesh m;
    m.dim = 2;
    m.nodes = {{0, 0}, {1, 0}, {0, 1}};
    m.elements = {{0, 1, 2}};
    m.boundary_nodes = {0, 1, 2};
    Eigen::Matrix3d expected;
    expected << 2, -1, -1, -1, 1, 0, -1, 0, 1;
    EXPECT_LT((assemble_stiffness(m) - 0.5 * expected).cwiseAbs().maxCoeff(), 1e-14);
    Eigen::Matrix3d mass;
    mass << 2, 1, 1, 1, 2, 1, 1, 1, 2;
    EXPECT_LT((assemble_mass(m) - (0.5 / 12.0) * mass).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Stiffness, ConstantNullspace) {
    for (const Mesh& m : {build_interval_mesh(9), build_disc_mesh(3)}) {
        const Eigen::MatrixXd A = assemble_stiffness(m);
        EXPECT_LT((A * Eigen::VectorXd::Ones(m.num_nodes())).cwiseAbs().maxCoeff(), 1e-10);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
        EXPECT_LT(std::abs(es.eigenvalues()(0)), 1e-9);
        EXPECT_GT(es.eigenvalues()(1), 1e-6);
    }
}

TEST(Stiffness, DegenerateElement) {
    Mesh m;
    m.dim = 2;
    m.nodes = {{0, 0}, {1, 0}, {2, 0}};
    m.elements = {{0, 1, 2}};
    m.boundary_nodes = {0, 1, 2};
    EXPECT_THROW(assemble_stiffness(m), AssemblyError);
    Mesh d = build_interval_mesh(3);
    d.nodes[1].x = 0.0;
    EXPECT_THROW(assemble_mass(d), AssemblyError);
}

TEST(Mass, Interval) {
    const double h = 0.125;
    const Eigen::MatrixXd M = assemble_mass(build_interval_mesh(9));
    for (Index i = 1; i < 8; ++i) {
        EXPECT_NEAR(M(i, i), 2.0 * h / 3.0, 1e-14);
        EXPECT_NEAR(M(i, i + 1), h / 6.0, 1e-14);
    }
    EXPECT_NEAR(M.sum(), 1.0, 1e-12);
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    EXPECT_EQ(llt.info(), Eigen::Success);
}

TEST(Mass, DiscPartitionOfUnity) {
    const Mesh m = build_disc_mesh(5);
    double area = 0.0;
    for (Index e = 0; e < m.num_elements(); ++e) area += element_measure(m, e);
    EXPECT_NEAR(assemble_mass(m).sum(), area, 1e-12);
}

TEST(Load, ZeroAndConstant) {
    for (const Mesh& m : {build_interval_mesh(7), build_disc_mesh(3)}) {
        EXPECT_EQ(assemble_load(m, [](const Point&) { return 0.0; }).cwiseAbs().maxCoeff(), 0.0);
        const Eigen::VectorXd b1 = assemble_load(m, [](const Point&) { return 1.0; });
        const Eigen::VectorXd rows = assemble_mass(m).rowwise().sum();
        EXPECT_LT((b1 - rows).cwiseAbs().maxCoeff(), 1e-13);
    }
}

TEST(Load, SineMatchesNodalRule) {
    const Index n = 513;
    const double h = 1.0 / static_cast<double>(n - 1);
    const Mesh m = build_interval_mesh(n);
    auto f = [](const Point& p) { return 5.0 * std::sin(6.0 * std::numbers::pi * p.x); };
    const Eigen::VectorXd b = assemble_load(m, f);
    double worst = 0.0;
    for (Index i = 1; i + 1 < n; ++i) worst = std::max(worst, std::abs(b(i) - h * f(m.nodes[i])));
    const double f2 = 5.0 * 36.0 * std::numbers::pi * std::numbers::pi;
    EXPECT_LT(worst, h * h * h * f2);
}

TEST(Dirichlet, HomogeneousForcesZero) {
    const Mesh m = build_interval_mesh(11);
    const FemSystem sys = build_fem_system(m, [](const Point&) { return 1.0; }, {});
    const Eigen::VectorXd u = sys.A.lu().solve(sys.b);
    EXPECT_EQ(u(0), 0.0);
    EXPECT_EQ(u(10), 0.0);
    for (Index b : sys.bc_nodes) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(11);
        e(b) = 1.0;
        EXPECT_EQ((sys.A.row(b).transpose() - e).cwiseAbs().maxCoeff(), 0.0);
    }
    EXPECT_LT((sys.A - sys.A.transpose()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Dirichlet, LiftedLinearSolution) {
    const Mesh m = build_interval_mesh(9);
    DirichletSpec bc;
    bc.values[0] = 0.0;
    bc.values[8] = 1.0;
    const FemSystem sys = build_fem_system(m, [](const Point&) { return 0.0; }, {}, bc);
    const Eigen::VectorXd u = sys.A.lu().solve(sys.b);
    for (Index i = 0; i < 9; ++i) EXPECT_NEAR(u(i), m.nodes[i].x, 1e-13);
}

TEST(Dirichlet, Idempotent) {
    const Mesh m = build_disc_mesh(3);
    const FemSystem once = build_fem_system(m, [](const Point& p) { return p.x + 2.0; }, {});
    const FemSystem twice = apply_dirichlet(once, DirichletSpec::homogeneous(m));
    EXPECT_EQ((once.A - twice.A).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((once.b - twice.b).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Dirichlet, RejectsInteriorNode) {
    const Mesh m = build_interval_mesh(5);
    DirichletSpec bc;
    bc.values[2] = 1.0;
    EXPECT_THROW(build_fem_system(m, [](const Point&) { return 0.0; }, {}, bc), std::invalid_argument);
}

TEST(Observation, NodeAndMidpoint) {
    const Mesh m = build_interval_mesh(5);
    const Eigen::MatrixXd H = build_observation_operator(m, {Point{0.5, 0.0}, Point{0.125, 0.0}});
    Eigen::VectorXd e2 = Eigen::VectorXd::Zero(5);
    e2(2) = 1.0;
    EXPECT_LT((H.row(0).transpose() - e2).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(H(1, 0), 0.5, 1e-14);
    EXPECT_NEAR(H(1, 1), 0.5, 1e-14);
}

TEST(Observation, BarycentricRowsOnRandomPoints) {
    const Mesh m = build_disc_mesh(5);
    Rng rng(3);
    std::vector<Point> pts;
    while (pts.size() < 200) {
        const Point p{2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0};
        if (std::hypot(p.x, p.y) < 0.95) pts.push_back(p);
    }
    const Eigen::MatrixXd H = build_observation_operator(m, pts);
    for (Index j = 0; j < H.rows(); ++j) {
        EXPECT_NEAR(H.row(j).sum(), 1.0, 1e-12);
        EXPECT_GE(H.row(j).minCoeff(), 0.0);
        EXPECT_LE((H.row(j).array() != 0.0).count(), 3);
    }
    Eigen::VectorXd u(m.num_nodes());
    rng.fill_normal(u);
    const Eigen::VectorXd Hu = H * u;
    for (std::size_t j = 0; j < pts.size(); ++j) {
        // direct basis evaluation on the containing triangle
        const Location loc = locate_point(m, pts[j]);
        const auto& el = m.elements[loc.element];
        const Point& a = m.nodes[el[0]];
        const Point& b = m.nodes[el[1]];
        const Point& c = m.nodes[el[2]];
        Eigen::Matrix3d T;
        T << 1, 1, 1, a.x, b.x, c.x, a.y, b.y, c.y;
        const Eigen::Vector3d w = T.lu().solve(Eigen::Vector3d(1.0, pts[j].x, pts[j].y));
        EXPECT_NEAR(Hu(static_cast<Index>(j)), w(0) * u(el[0]) + w(1) * u(el[1]) + w(2) * u(el[2]), 1e-12);
    }
}

TEST(Observation, EdgePointsAndOutside) {
    const Mesh m = build_disc_mesh(2);
    EXPECT_NO_THROW(build_observation_operator(m, {Point{1.0, 0.0}, Point{0.25, 0.0}}));
    EXPECT_THROW(build_observation_operator(m, {Point{1.1, 0.0}}), LocationError);
    EXPECT_THROW(build_observation_operator(build_interval_mesh(4), {Point{-0.01, 0.0}}), LocationError);
}

TEST(ObservationPoints, IntervalAndSpiral) {
    const auto p = interval_observation_points(3);
    ASSERT_EQ(p.size(), 3u);
    EXPECT_DOUBLE_EQ(p[0].x, 0.25);
    EXPECT_DOUBLE_EQ(p[2].x, 0.75);
    for (const Point& q : disc_observation_points(50)) EXPECT_LE(std::hypot(q.x, q.y), 0.9 + 1e-12);
}

namespace {

double manufactured_max_error(Index n) {
    const Mesh m = build_interval_mesh(n);
    const double c = 5.0 / (36.0 * std::numbers::pi * std::numbers::pi);
    const FemSystem sys = build_fem_system(m, [](const Point& p) { return 5.0 * std::sin(6.0 * std::numbers::pi * p.x); }, {});
    const Eigen::VectorXd u = sys.A.lu().solve(sys.b);
    double err = 0.0;
    for (Index i = 0; i < n; ++i) err = std::max(err, std::abs(u(i) - c * std::sin(6.0 * std::numbers::pi * m.nodes[i].x)));
    return err;
}

} // namespace

TEST(ManufacturedSolution, SecondOrderNodalConvergence) {
    const std::vector<Index> ns{17, 33, 65};
    std::vector<double> errs;
    for (Index n : ns) errs.push_back(manufactured_max_error(n));
    for (std::size_t i = 1; i < ns.size(); ++i) {
        const double order = std::log(errs[i - 1] / errs[i]) / std::log(2.0);
        EXPECT_GE(order, 1.9) << "between n=" << ns[i - 1] << " and n=" << ns[i];
    }
}

TEST(Assembly, Deterministic) {
    const Mesh m = build_disc_mesh(4);
    const Eigen::MatrixXd A1 = assemble_stiffness(m), A2 = assemble_stiffness(m);
    const Eigen::MatrixXd M1 = assemble_mass(m), M2 = assemble_mass(m);
    EXPECT_EQ((A1 - A2).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((M1 - M2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Norms, SineL2Norm) {
    const Mesh m = build_interval_mesh(65);
    const FemSystem sys = build_fem_system(m, [](const Point&) { return 0.0; }, {});
    auto f = [](const Point& p) { return std::sin(std::numbers::pi * p.x); };
    const Eigen::VectorXd db = forcing_load(sys, f);
    EXPECT_NEAR(load_l2_norm(sys, db), std::sqrt(0.5), 1e-3);
    EXPECT_NEAR(p1_l2_norm(sys, interpolate(m, f)), std::sqrt(0.5), 1e-3);
}
