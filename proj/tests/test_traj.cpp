#include "marts/minco.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace marts;

namespace
{

using Instance = oracle::TrajInstance;
using oracle::rel;

Instance random_instance(std::mt19937 &rng, int D, int M, int s = 4) { return oracle::random_traj_instance(rng, D, M, s); }

Trajectory build(const Instance &in, int s = 4) { return Trajectory::build(in.head, in.tail, in.w, in.T, s); }

} // namespace

TEST(Traj, SinglePieceRestToRestIsConstant)
{
    MatX head = MatX::Zero(4, 2), tail = MatX::Zero(4, 2);
    head.row(0) << 1.5, -0.5;
    tail.row(0) = head.row(0);
    VecX T(1);
    T << 2.0;
    auto tr = Trajectory::build(head, tail, MatX(0, 2), T);
    for (int i = 1; i < 8; ++i)
        EXPECT_NEAR(tr.coeffs().row(i).norm(), 0.0, 1e-14);
    EXPECT_NEAR(tr.coeffs()(0, 0), 1.5, 1e-15);
}

TEST(Traj, ConditionResidualsOnRandomInstances)
{
    std::mt19937 rng(42);
    int count = 0;
    for (int N : {2, 3, 4})
        for (int M = 2; M <= 8; ++M)
            for (int rep = 0; rep < 5; ++rep, ++count)
            {
                const int D = FlatSample::dim(N);
                auto in = random_instance(rng, D, M);
                auto tr = build(in);
                MatX z0 = tr.eval_piece(0, 0.0, 3), z1 = tr.eval_piece(M - 1, in.T(M - 1), 3);
                EXPECT_LT((z0 - in.head).cwiseAbs().maxCoeff(), 1e-8);
                EXPECT_LT((z1 - in.tail).cwiseAbs().maxCoeff(), 1e-8);
                for (int m = 0; m + 1 < M; ++m)
                {
                    MatX a = tr.eval_piece(m, in.T(m), 6), b = tr.eval_piece(m + 1, 0.0, 6);
                    for (int k = 0; k <= 6; ++k)
                        for (int d = 0; d < D; ++d)
                            EXPECT_LT(rel(a(k, d), b(k, d)), 1e-8) << "order " << k;
                    EXPECT_LT((a.row(0) - in.w.row(m)).cwiseAbs().maxCoeff(), 1e-8);
                }
            }
    EXPECT_GE(count, 100);
}

TEST(Traj, MatchesDenseKktOracle)
{
    std::mt19937 rng(5);
    for (int rep = 0; rep < 20; ++rep)
    {
        auto in = random_instance(rng, 1, 2);
        auto tr = build(in);
        const VecX sol = oracle::kkt_coefficients(in);
        for (int i = 0; i < 16; ++i)
            EXPECT_NEAR(sol(i), tr.coeffs()(i, 0), 1e-8 * std::max(1.0, std::abs(sol(i))));
    }
}

TEST(Traj, EvalBoundaryAndTopDerivative)
{
    std::mt19937 rng(9);
    auto in = random_instance(rng, 11, 4);
    auto tr = build(in);
    for (int k = 0; k < 4; ++k)
        EXPECT_LT((tr.eval(0.0, k).transpose() - in.head.row(k)).cwiseAbs().maxCoeff(), 1e-12);
    double t0 = 0.0;
    for (int m = 0; m < 4; ++m)
    {
        VecX a = tr.eval(t0 + 0.1 * in.T(m), 7), b = tr.eval(t0 + 0.9 * in.T(m), 7);
        EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, a.cwiseAbs().maxCoeff()));
        t0 += in.T(m);
    }
    EXPECT_THROW(tr.eval(-0.1, 0), OutOfDomain);
    EXPECT_THROW(tr.eval(tr.duration() + 0.1, 0), OutOfDomain);
    EXPECT_NO_THROW(tr.eval(tr.duration(), 0));
}

TEST(Traj, NonPositiveDurationRejected)
{
    std::mt19937 rng(10);
    auto in = random_instance(rng, 3, 3);
    in.T(1) = 0.0;
    EXPECT_THROW(build(in), SingularSystem);
}

TEST(Traj, EnergyOfConstantTrajectory)
{
    MatX head = MatX::Zero(4, 7), tail = MatX::Zero(4, 7), w(2, 7);
    head.row(0).setConstant(0.3);
    tail.row(0).setConstant(0.3);
    w.setConstant(0.3);
    VecX T(3);
    T << 1.0, 0.5, 2.0;
    auto tr = Trajectory::build(head, tail, w, T);
    auto e = tr.energy(energy_weights(1, 0.3), 2000.0);
    EXPECT_NEAR(e.cost, 2000.0 * 3.5, 1e-9);
}

TEST(Traj, EnergyGradientsMatchFiniteDifferences)
{
    std::mt19937 rng(12);
    for (int rep = 0; rep < 10; ++rep)
    {
        auto in = random_instance(rng, FlatSample::dim(2), 3);
        auto tr = build(in);
        VecX wts = energy_weights(2, 0.3);
        auto e = tr.energy(wts, 2000.0);
        // coefficient gradient
        const double h = 1e-6;
        for (int trial = 0; trial < 20; ++trial)
        {
            int i = rng() % tr.coeffs().rows(), d = rng() % tr.coeffs().cols();
            MatX cp = tr.coeffs(), cm = tr.coeffs();
            cp(i, d) += h;
            cm(i, d) -= h;
            double fd = (Trajectory(4, in.T, cp).energy(wts, 2000.0).cost -
                         Trajectory(4, in.T, cm).energy(wts, 2000.0).cost) /
                        (2 * h);
            EXPECT_LT(rel(fd, e.grad_c(i, d)), 1e-5);
        }
        for (int m = 0; m < 3; ++m)
        {
            VecX Tp = in.T, Tm = in.T;
            Tp(m) += h;
            Tm(m) -= h;
            double fd = (Trajectory(4, Tp, tr.coeffs()).energy(wts, 2000.0).cost -
                         Trajectory(4, Tm, tr.coeffs()).energy(wts, 2000.0).cost) /
                        (2 * h);
            EXPECT_LT(rel(fd, e.grad_T(m)), 1e-5);
        }
    }
}

TEST(Traj, ResplitDoesNotIncreaseEnergy)
{
    std::mt19937 rng(13);
    for (int rep = 0; rep < 20; ++rep)
    {
        auto in = random_instance(rng, 7, 3);
        auto tr = build(in);
        VecX wts = energy_weights(1, 0.3);
        double before = tr.energy(wts, 0.0).cost;
        // split piece 1 at 40%
        MatX w2(3, 7);
        VecX T2(4);
        w2.row(0) = in.w.row(0);
        w2.row(1) = tr.eval_piece(1, 0.4 * in.T(1), 0).row(0);
        w2.row(2) = in.w.row(1);
        T2 << in.T(0), 0.4 * in.T(1), 0.6 * in.T(1), in.T(2);
        double after = Trajectory::build(in.head, in.tail, w2, T2).energy(wts, 0.0).cost;
        EXPECT_LE(after, before + 1e-9 * std::max(1.0, before));
        EXPECT_NEAR(after, before, 1e-7 * std::max(1.0, before));
    }
}

TEST(Traj, BackpropNullSpatialGradient)
{
    std::mt19937 rng(14);
    auto in = random_instance(rng, 5, 4);
    auto tr = build(in);
    VecX v = VecX::NullaryExpr(4, [&]() { return std::uniform_real_distribution<double>(-1, 1)(rng); });
    auto bp = tr.backprop(MatX::Zero(tr.coeffs().rows(), 5), v);
    EXPECT_EQ(bp.grad_w.norm(), 0.0);
    EXPECT_LT((bp.grad_T - v).norm(), 1e-15);
}

TEST(Traj, BackpropMatchesNumericJacobianScalar)
{
    std::mt19937 rng(15);
    for (int rep = 0; rep < 10; ++rep)
    {
        auto in = random_instance(rng, 1, 2);
        auto tr = build(in);
        MatX G = MatX::NullaryExpr(16, 1, [&]() { return std::uniform_real_distribution<double>(-1, 1)(rng); });
        VecX gT = VecX::Zero(2);
        auto bp = tr.backprop(G, gT);
        auto J = [&](const Instance &x) { return (build(x).coeffs().array() * G.array()).sum(); };
        const double h = 1e-6;
        Instance p = in, m = in;
        p.w(0, 0) += h;
        m.w(0, 0) -= h;
        EXPECT_NEAR(bp.grad_w(0, 0), (J(p) - J(m)) / (2 * h), 1e-7 * std::max(1.0, std::abs(bp.grad_w(0, 0))));
        for (int k = 0; k < 2; ++k)
        {
            p = in;
            m = in;
            p.T(k) += h;
            m.T(k) -= h;
            EXPECT_NEAR(bp.grad_T(k), (J(p) - J(m)) / (2 * h), 1e-6 * std::max(1.0, std::abs(bp.grad_T(k))));
        }
    }
}

TEST(Traj, EndToEndEnergyGradient)
{
    std::mt19937 rng(16);
    for (int rep = 0; rep < 10; ++rep)
    {
        const int N = 2 + rep % 3;
        const int D = FlatSample::dim(N), M = 2 + rep % 5;
        auto in = random_instance(rng, D, M);
        VecX wts = energy_weights(N, 0.3);
        auto cost = [&](const Instance &x) { return build(x).energy(wts, 2000.0).cost; };
        auto tr = build(in);
        auto e = tr.energy(wts, 2000.0);
        auto bp = tr.backprop(e.grad_c, e.grad_T);
        const double h = 1e-6;
        for (int trial = 0; trial < 10; ++trial)
        {
            int i = rng() % (M - 1), d = rng() % D;
            Instance p = in, m = in;
            p.w(i, d) += h;
            m.w(i, d) -= h;
            EXPECT_LT(rel((cost(p) - cost(m)) / (2 * h), bp.grad_w(i, d)), 1e-5);
        }
        for (int k = 0; k < M; ++k)
        {
            Instance p = in, m = in;
            p.T(k) += h;
            m.T(k) -= h;
            EXPECT_LT(rel((cost(p) - cost(m)) / (2 * h), bp.grad_T(k)), 1e-5);
        }
    }
}

TEST(Traj, BackpropIsExactAdjoint)
{
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> U(-1, 1);
    for (int rep = 0; rep < 20; ++rep)
    {
        const int D = 7, M = 2 + rep % 6;
        auto in = random_instance(rng, D, M);
        auto tr = build(in);
        MatX gc = MatX::NullaryExpr(tr.coeffs().rows(), D, [&]() { return U(rng); });
        VecX gT = VecX::NullaryExpr(M, [&]() { return U(rng); });
        auto bp = tr.backprop(gc, gT);
        MatX dw = MatX::NullaryExpr(M - 1, D, [&]() { return U(rng); });
        VecX dT = VecX::NullaryExpr(M, [&]() { return U(rng); });
        // directional derivative of c by central differences (c is smooth in w, T)
        const double h = 1e-6;
        Instance p = in, m = in;
        p.w += h * dw;
        m.w -= h * dw;
        p.T += h * dT;
        m.T -= h * dT;
        MatX dc = (build(p).coeffs() - build(m).coeffs()) / (2 * h);
        double lhs = (gc.array() * dc.array()).sum() + gT.dot(dT);
        double rhs = (bp.grad_w.array() * dw.array()).sum() + bp.grad_T.dot(dT);
        EXPECT_LT(rel(lhs, rhs), 1e-6);
        // the linear part in w is exact (no differencing error)
        Instance pw = in;
        pw.w += dw;
        MatX dcw = build(pw).coeffs() - tr.coeffs();
        double lw = (gc.array() * dcw.array()).sum();
        double rw = (bp.grad_w.array() * dw.array()).sum();
        EXPECT_LT(std::abs(lw - rw) / std::max(1.0, std::abs(lw)), 1e-8);
    }
}

TEST(Traj, ThirdOrderClassAlsoSatisfiesConditions)
{
    std::mt19937 rng(18);
    auto in = random_instance(rng, 4, 5, 3);
    auto tr = build(in, 3);
    for (int m = 0; m + 1 < 5; ++m)
    {
        MatX a = tr.eval_piece(m, in.T(m), 4), b = tr.eval_piece(m + 1, 0.0, 4);
        EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, a.cwiseAbs().maxCoeff()));
    }
}

TEST(Traj, JsonRoundTrip)
{
    std::mt19937 rng(19);
    auto in = random_instance(rng, FlatSample::dim(3), 4);
    auto tr = build(in);
    auto j = tr.to_json(3);
    EXPECT_EQ(j["layout"]["channels"].size(), 15u);
    auto back = Trajectory::from_json(nlohmann::json::parse(j.dump()));
    for (double t : {0.0, 0.7, 2.1, tr.duration()})
        EXPECT_LT((back.eval(t, 2) - tr.eval(t, 2)).cwiseAbs().maxCoeff(), 1e-12);
}
