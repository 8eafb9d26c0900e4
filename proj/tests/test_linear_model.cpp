#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace statfem;
using statfem::testing::fd_gradient;
using statfem::testing::rel_error;
using statfem::testing::small_linear_model;
using statfem::testing::three_dof_model;

namespace {

Eigen::MatrixXd inv(const Eigen::MatrixXd& A) { return A.inverse(); }

/// -log p(b | y) up to a constant, with u integrated out (explicit inverses).
double neg_log_marginal(const LinearModel& m, const Eigen::VectorXd& b, const Eigen::VectorXd& y) {
    const Eigen::MatrixXd Ai = inv(m.A_theta());
    const Eigen::MatrixXd C = m.H() * Ai * m.G() * Ai.transpose() * m.H().transpose() + m.R();
    const Eigen::VectorXd d = y - m.H() * Ai * b;
    const Eigen::VectorXd db = b - m.forcing_prior().mean();
    return 0.5 * d.dot(inv(C) * d) + 0.5 * db.dot(inv(m.forcing_prior().cov()) * db);
}

Eigen::VectorXd random_vector(Index n, Rng& rng, double scale = 1.0) { return scale * rng.normal_vector(n); }

} // namespace

TEST(StatfemPrior, IdentityCase) {
    const Mesh mesh = build_interval_mesh(3);
    FemSystem sys = build_fem_system(mesh, [](const Point&) { return 0.0; }, {});
    sys.A = Eigen::MatrixXd::Identity(3, 3);
    const LinearModel m(sys, Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd(0, 0),
                        GaussianDist(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3)));
    const Eigen::VectorXd b = Eigen::Vector3d(1.0, -2.0, 0.5);
    const GaussianDist p = statfem_prior(m, b);
    EXPECT_LT((p.mean() - b).norm(), 1e-15);
    EXPECT_LT((p.cov() - Eigen::MatrixXd::Identity(3, 3)).norm(), 1e-15);
}

TEST(StatfemPrior, MatchesExplicitInverse) {
    const LinearModel m = three_dof_model(0.3);
    const Eigen::VectorXd b = Eigen::Vector3d(0.4, 1.0, -0.2);
    const GaussianDist p = statfem_prior(m, b);
    const Eigen::MatrixXd Ai = inv(m.A_theta());
    EXPECT_LT((p.mean() - Ai * b).norm(), 1e-12);
    EXPECT_LT((p.cov() - Ai * m.G() * Ai.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((m.A_theta() * p.mean() - b).norm(), 1e-12);
}

TEST(Gradients, MatchFiniteDifferences) {
    Rng rng(21);
    for (int model_id = 0; model_id < 2; ++model_id) {
        const LinearModel m = model_id == 0 ? three_dof_model(0.2) : small_linear_model();
        const Index n = m.n_u();
        for (int trial = 0; trial < 10; ++trial) {
            const Eigen::VectorXd u = random_vector(n, rng, 0.1);
            const Eigen::VectorXd b = random_vector(n, rng);
            const Eigen::VectorXd y = random_vector(m.n_y(), rng, 0.1);
            const Eigen::VectorXd gu = grad_u_potential(m, u, b, y);
            const Eigen::VectorXd gu_fd = fd_gradient([&](const Eigen::VectorXd& x) { return potential(m, x, b, y); }, u);
            EXPECT_LT(rel_error(gu, gu_fd), 1e-6) << "model " << model_id << " trial " << trial;
            const Eigen::VectorXd gb = grad_b_potential(m, u, b);
            const Eigen::VectorXd gb_fd = fd_gradient([&](const Eigen::VectorXd& x) { return potential(m, u, x, y); }, b);
            EXPECT_LT(rel_error(gb, gb_fd), 1e-6) << "model " << model_id << " trial " << trial;
            const double th = m.theta() + 0.3 * rng.normal();
            const LinearModel mt = m.with_theta(th);
            const double h = 1e-5;
            const double gt_fd =
                (potential(m.with_theta(th + h), u, b, y) - potential(m.with_theta(th - h), u, b, y)) / (2.0 * h);
            const double gt = grad_theta_potential(mt, u, b);
            EXPECT_LT(std::abs(gt - gt_fd), 1e-6 * std::max(1.0, std::abs(gt))) << "trial " << trial;
        }
    }
}

TEST(Gradients, SimpleValues) {
    const LinearModel m = three_dof_model();
    const Eigen::VectorXd z = Eigen::VectorXd::Zero(3);
    EXPECT_EQ(grad_u_potential(m, z, z, Eigen::VectorXd::Zero(2)).norm(), 0.0);
    const Eigen::VectorXd& mu = m.forcing_prior().mean();
    const Eigen::VectorXd u_mu = m.A_theta().lu().solve(mu);
    EXPECT_LT(grad_b_potential(m, u_mu, mu).norm(), 1e-12);
    const Eigen::VectorXd b = Eigen::Vector3d(1.0, 2.0, 3.0);
    const Eigen::VectorXd u_b = m.A_theta().lu().solve(b);
    EXPECT_LT((grad_b_potential(m, u_b, b) - m.forcing_prior().precision() * (b - mu)).norm(), 1e-10);
}

TEST(Gradients, ThetaAtPriorMean) {
    const LinearModel m = three_dof_model(0.1);
    const Eigen::VectorXd z = Eigen::VectorXd::Zero(3);
    EXPECT_DOUBLE_EQ(grad_theta_potential(m, z, z), -3.0);
}

TEST(Gradients, ThetaIndependentOfGAtZeroState) {
    const LinearModel m = three_dof_model(0.7);
    const LinearModel m2(m.system(), 5.0 * m.G(), m.R(), m.forcing_prior(), m.theta_prior(), 0.7);
    const Eigen::VectorXd z = Eigen::VectorXd::Zero(3);
    EXPECT_DOUBLE_EQ(grad_theta_potential(m, z, z), grad_theta_potential(m2, z, z));
}

TEST(Gradients, VanishAtPosteriorMean) {
    const LinearModel m = small_linear_model();
    Rng rng(2);
    const Eigen::VectorXd b = random_vector(m.n_u(), rng);
    const Eigen::VectorXd y = random_vector(m.n_y(), rng, 0.1);
    const GaussianDist post = analytic_posterior(m, b, y);
    EXPECT_LE(grad_u_potential(m, post.mean(), b, y).norm(), 1e-8 * std::max(1.0, y.norm()));
}

TEST(Hessian, BlocksAndSymmetry) {
    const LinearModel m = three_dof_model(0.4);
    const BlockHessian h = hessian(m);
    const Eigen::MatrixXd Gi = inv(m.G());
    const Eigen::MatrixXd A = m.A_theta();
    EXPECT_LT(rel_error(h.uu, A.transpose() * Gi * A + m.H().transpose() * inv(m.R()) * m.H()), 1e-12);
    EXPECT_LT(rel_error(h.ub, -A.transpose() * Gi), 1e-12);
    EXPECT_LT(rel_error(h.bb, Gi + inv(m.forcing_prior().cov())), 1e-12);
    const Eigen::MatrixXd F = h.full();
    EXPECT_LT((F - F.transpose()).cwiseAbs().maxCoeff(), 1e-12 * F.cwiseAbs().maxCoeff());
}

TEST(Hessian, MatchesSecondDifferences) {
    statfem::testing::SmallModelOptions o;
    o.n_nodes = 4;
    o.n_y = 2;
    const LinearModel m = small_linear_model(o);
    const Index n = m.n_u();
    const Eigen::MatrixXd F = hessian(m).full();
    Rng rng(8);
    const Eigen::VectorXd y = random_vector(m.n_y(), rng, 0.1);
    auto psi = [&](const Eigen::VectorXd& x) { return potential(m, x.head(n), x.tail(n), y); };
    const Eigen::VectorXd x0 = random_vector(2 * n, rng, 0.1);
    Eigen::MatrixXd Hfd(2 * n, 2 * n);
    for (Index j = 0; j < 2 * n; ++j) {
        const double h = 1e-4;
        Eigen::VectorXd xp = x0, xm = x0;
        xp(j) += h;
        xm(j) -= h;
        auto grad = [&](const Eigen::VectorXd& x) {
            Eigen::VectorXd g(2 * n);
            g << grad_u_potential(m, x.head(n), x.tail(n), y), grad_b_potential(m, x.head(n), x.tail(n));
            return g;
        };
        Hfd.col(j) = (grad(xp) - grad(xm)) / (2.0 * h);
    }
    EXPECT_LT(rel_error(Hfd, F), 1e-5);
    const Eigen::VectorXd d = random_vector(2 * n, rng, 0.1);
    EXPECT_NEAR(psi(x0 + d) + psi(x0 - d) - 2.0 * psi(x0), d.dot(F * d), 1e-6 * std::abs(d.dot(F * d)));
}

TEST(Convexity, StrongWithPriorConvexWithout) {
    std::vector<LinearModel> models{three_dof_model(), three_dof_model(-0.5), small_linear_model()};
    statfem::testing::SmallModelOptions o;
    o.n_nodes = 17;
    o.n_y = 0;
    models.push_back(small_linear_model(o));
    for (const auto& m : models) {
        EXPECT_GT(convexity_constants(hessian(m)).mu, 0.0);
        const Eigen::MatrixXd F = hessian(m, false).full();
        const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(F, Eigen::EigenvaluesOnly).eigenvalues();
        EXPECT_GE(ev(0), -1e-14 * ev(ev.size() - 1));
        const BlockHessian h = hessian(m, false);
        const Eigen::MatrixXd schur = h.uu - h.ub * inv(h.bb) * h.ub.transpose();
        EXPECT_LT((schur - m.HtRinvH()).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, h.uu.cwiseAbs().maxCoeff()));
    }
}

TEST(Convexity, WoodburyIdentity) {
    Rng rng(99);
    for (int t = 0; t < 10; ++t) {
        const Index n = 3 + t;
        const Eigen::MatrixXd G = statfem::testing::random_spd(n, rng);
        const Eigen::MatrixXd S = statfem::testing::random_spd(n, rng);
        const Eigen::MatrixXd Gi = inv(G);
        const Eigen::MatrixXd lhs = Gi - Gi * inv(Gi + inv(S)) * Gi;
        EXPECT_LT(rel_error(lhs, inv(G + S)), 1e-8);
    }
}

TEST(Convexity, IdentityPreconditioner) {
    const LinearModel m = small_linear_model();
    const BlockHessian h = hessian(m);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m.n_u(), m.n_u());
    const ConvexityConstants a = convexity_constants(h), b = convexity_constants(h, I, I);
    EXPECT_NEAR(a.mu, b.mu, 1e-9 * a.mu);
    EXPECT_NEAR(a.L, b.L, 1e-9 * a.L);
}

TEST(Convexity, ExactWhitening) {
    BlockHessian h;
    h.uu = Eigen::MatrixXd::Constant(1, 1, 1.0);
    h.ub = Eigen::MatrixXd::Zero(1, 1);
    h.bb = Eigen::MatrixXd::Constant(1, 1, 4.0);
    EXPECT_DOUBLE_EQ(convexity_constants(h).kappa, 4.0);
    const ConvexityConstants c =
        convexity_constants(h, Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::MatrixXd::Constant(1, 1, 0.25));
    EXPECT_NEAR(c.kappa, 1.0, 1e-14);
    EXPECT_THROW(convexity_constants(h, Eigen::MatrixXd::Constant(1, 1, -1.0), Eigen::MatrixXd::Constant(1, 1, 1.0)),
                 std::invalid_argument);
}

TEST(Preconditioners, Definitions) {
    const LinearModel m = small_linear_model();
    const Preconditioners p = build_preconditioners(m);
    const Eigen::MatrixXd Q = m.A_theta().transpose() * inv(m.G()) * m.A_theta() + m.HtRinvH();
    EXPECT_LT(rel_error(p.P_u * Q, Eigen::MatrixXd::Identity(m.n_u(), m.n_u())), 1e-8);
    EXPECT_LT(rel_error(p.P_b, inv(inv(m.G()) + inv(m.forcing_prior().cov()))), 1e-8);
    EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(p.P_u).info(), Eigen::Success);
    EXPECT_EQ(p.P_b_llt.info(), Eigen::Success);
}

TEST(Preconditioners, StationaryPointUnchanged) {
    const LinearModel m = three_dof_model();
    const Eigen::VectorXd y = Eigen::Vector2d(0.3, -0.1);
    const Eigen::VectorXd bstar = analytic_mmap(m, y);
    const Eigen::VectorXd ustar = analytic_posterior(m, bstar, y).mean();
    const Preconditioners p = build_preconditioners(m);
    EXPECT_LT((p.P_u * grad_u_potential(m, ustar, bstar, y)).norm(), 1e-10);
    EXPECT_LT((p.P_b * grad_b_potential(m, ustar, bstar)).norm(), 1e-10);
}

TEST(AnalyticMmap, NoDataGivesPriorMean) {
    statfem::testing::SmallModelOptions o;
    o.n_y = 0;
    const LinearModel m = small_linear_model(o);
    EXPECT_LT((analytic_mmap(m, Eigen::VectorXd(0)) - m.forcing_prior().mean()).norm(), 1e-15);
}

TEST(AnalyticMmap, MatchesGradientDescentOnMarginal) {
    const LinearModel m = three_dof_model(0.2);
    const Eigen::VectorXd y = Eigen::Vector2d(0.35, -0.2);
    const Eigen::VectorXd bstar = analytic_mmap(m, y);
    const Eigen::MatrixXd Ai = inv(m.A_theta());
    const Eigen::MatrixXd W = m.H() * Ai;
    const Eigen::MatrixXd Ci = inv(W * m.G() * W.transpose() + m.R());
    const Eigen::MatrixXd Si = inv(m.forcing_prior().cov());
    const Eigen::MatrixXd Hess = W.transpose() * Ci * W + Si;
    const double step = 1.0 / Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(Hess).eigenvalues().maxCoeff();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(3);
    for (int it = 0; it < 200000; ++it) {
        const Eigen::VectorXd g = -W.transpose() * Ci * (y - W * b) + Si * (b - m.forcing_prior().mean());
        b -= step * g;
        if (g.norm() < 1e-14) break;
    }
    EXPECT_LT((b - bstar).norm(), 1e-6);
}

TEST(AnalyticMmap, JointStationarity) {
    const LinearModel m = three_dof_model(-0.3);
    const Eigen::VectorXd y = Eigen::Vector2d(0.5, 0.25);
    const Eigen::VectorXd bstar = analytic_mmap(m, y);
    const Eigen::VectorXd ustar = analytic_posterior(m, bstar, y).mean();
    EXPECT_LT(grad_u_potential(m, ustar, bstar, y).norm(), 1e-8);
    EXPECT_LT(grad_b_potential(m, ustar, bstar).norm(), 1e-8);
}

TEST(AnalyticMmap, ArgmaxConsistent) {
    const LinearModel m = small_linear_model();
    Rng rng(4);
    const Eigen::VectorXd y = random_vector(m.n_y(), rng, 0.1);
    const Eigen::VectorXd bstar = analytic_mmap(m, y);
    const double f0 = neg_log_marginal(m, bstar, y);
    for (int k = 0; k < 20; ++k) {
        Eigen::VectorXd d = rng.normal_vector(m.n_u());
        d *= 1e-3 / d.norm();
        EXPECT_GT(neg_log_marginal(m, bstar + d, y), f0);
    }
}

TEST(AnalyticPosterior, NoDataEqualsPrior) {
    statfem::testing::SmallModelOptions o;
    o.n_y = 0;
    const LinearModel m = small_linear_model(o);
    Rng rng(1);
    const Eigen::VectorXd b = random_vector(m.n_u(), rng);
    const GaussianDist post = analytic_posterior(m, b, Eigen::VectorXd(0));
    const GaussianDist prior = statfem_prior(m, b);
    EXPECT_LT(rel_error(post.mean(), prior.mean()), 1e-8);
    EXPECT_LT(rel_error(post.cov(), prior.cov()), 1e-8);
}

TEST(AnalyticPosterior, CovarianceEqualsLatentPreconditioner) {
    const LinearModel m = small_linear_model();
    const Eigen::VectorXd b = Eigen::VectorXd::Ones(m.n_u());
    const Eigen::VectorXd y = Eigen::VectorXd::Zero(m.n_y());
    EXPECT_LT(rel_error(analytic_posterior(m, b, y).cov(), build_preconditioners(m).P_u), 1e-10);
}

TEST(AnalyticPosterior, JointGaussianConditioning) {
    const LinearModel m = three_dof_model(0.1);
    const Eigen::VectorXd b = Eigen::Vector3d(0.5, 1.5, -0.25);
    const Eigen::VectorXd y = Eigen::Vector2d(0.1, 0.4);
    const GaussianDist prior = statfem_prior(m, b);
    const Eigen::MatrixXd& C = prior.cov();
    const Eigen::MatrixXd& H = m.H();
    const Eigen::MatrixXd K = C * H.transpose() * inv(H * C * H.transpose() + m.R());
    const Eigen::VectorXd mean = prior.mean() + K * (y - H * prior.mean());
    const Eigen::MatrixXd cov = C - K * H * C;
    const GaussianDist post = analytic_posterior(m, b, y);
    EXPECT_LT((post.mean() - mean).norm(), 1e-10);
    EXPECT_LT((post.cov() - cov).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(GenerateData, NoiseFreeLimit) {
    const LinearModel base = three_dof_model();
    const LinearModel m(base.system(), 1e-30 * Eigen::MatrixXd::Identity(3, 3), 1e-30 * Eigen::MatrixXd::Identity(2, 2),
                        base.forcing_prior());
    const Eigen::VectorXd b = Eigen::Vector3d(0.0, 1.0, 0.0);
    const SyntheticData d = generate_data(m, b, 5);
    EXPECT_LT((d.y - m.H() * m.A_theta().lu().solve(b)).norm(), 1e-12);
}

TEST(GenerateData, DeterministicPerSeed) {
    const LinearModel m = small_linear_model();
    const Eigen::VectorXd b = Eigen::VectorXd::Ones(m.n_u());
    const SyntheticData a = generate_data(m, b, 17), c = generate_data(m, b, 17), e = generate_data(m, b, 18);
    EXPECT_EQ((a.y - c.y).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GT((a.y - e.y).norm(), 0.0);
}

TEST(GenerateData, MarginalCovariance) {
    const LinearModel m = small_linear_model();
    const Eigen::VectorXd b = forcing_load(m.system(), [](const Point& p) { return 5.0 * p.x; });
    const Eigen::VectorXd y0 = m.H() * m.A_theta().lu().solve(b);
    const Index n = 10000, ny = m.n_y();
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(ny, ny);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(ny);
    for (Index s = 0; s < n; ++s) {
        const Eigen::VectorXd d = generate_data(m, b, static_cast<std::uint64_t>(s)).y - y0;
        mean += d;
        S.noalias() += d * d.transpose();
    }
    mean /= static_cast<double>(n);
    S = (S - static_cast<double>(n) * mean * mean.transpose()) / static_cast<double>(n - 1);
    const Eigen::MatrixXd Ai = inv(m.A_theta());
    const Eigen::MatrixXd expected = m.H() * Ai * m.G() * Ai.transpose() * m.H().transpose() + m.R();
    EXPECT_LT(rel_error(S, expected), 0.10);
}

TEST(ModelSummary, Fields) {
    const json s = model_summary(small_linear_model(), {{"sigma_y", 0.1}});
    EXPECT_EQ(s.at("n_u").get<Index>(), 9);
    EXPECT_EQ(s.at("n_y").get<Index>(), 4);
    EXPECT_GT(s.at("condition").at("kappa").get<double>(), s.at("condition").at("kappa_P").get<double>());
    EXPECT_DOUBLE_EQ(s.at("hyperparameters").at("sigma_y").get<double>(), 0.1);
}

TEST(LinearModel, Validation) {
    const LinearModel m = three_dof_model();
    EXPECT_THROW(LinearModel(m.system(), Eigen::MatrixXd::Identity(2, 2), m.R(), m.forcing_prior()), std::invalid_argument);
    EXPECT_THROW(LinearModel(m.system(), -Eigen::MatrixXd::Identity(3, 3), m.R(), m.forcing_prior()), NumericalError);
    EXPECT_THROW(LinearModel(m.system(), m.G(), m.R(), m.forcing_prior(), ThetaPrior{0.0, 0.0}), std::invalid_argument);
    EXPECT_THROW(observation_noise(3, 0.0), std::invalid_argument);
}
