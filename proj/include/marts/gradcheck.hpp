#pragma once

#include "marts/planner.hpp"

#include <random>

namespace marts
{

// Random planning instance with every penalty family in its active region.
struct GradcheckInstance
{
    SystemConfig sys;
    PlannerConfig cfg;
    AnalyticField field;
    MatX head, tail, w;
    VecX T;
};

inline GradcheckInstance random_instance(std::mt19937 &rng, int N, int term)
{
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    GradcheckInstance g;
    g.sys.n_robots = N;
    const int D = FlatSample::dim(N), M = 3;
    g.head = hover_flat_output(g.sys, Vec3(0, 0, 1), 0.8);
    g.tail = hover_flat_output(g.sys, Vec3(4.0 + U(rng), U(rng), 1.0 + 0.3 * U(rng)), 0.8);
    for (int r = 1; r < 3; ++r)
        for (int d = 0; d < 3; ++d)
            g.head(r, d) = 0.5 * U(rng);
    g.w.resize(M - 1, D);
    g.T.resize(M);
    for (int m = 0; m < M; ++m)
        g.T(m) = 1.0 + 0.4 * U(rng);
    for (int j = 0; j < M - 1; ++j)
    {
        const double a = (j + 1.0) / M;
        g.w.row(j) = (1.0 - a) * g.head.row(0) + a * g.tail.row(0);
        for (int d = 0; d < 3; ++d)
            g.w(j, d) += 0.4 * U(rng);
        for (int n = 0; n < N; ++n)
        {
            g.w(j, FlatSample::theta_col(n)) = 0.75 + 0.15 * U(rng);
            g.w(j, FlatSample::phi_col(n)) += 0.3 * M_PI / N * U(rng);
            g.w(j, FlatSample::force_col(n)) *= 1.0 + 0.2 * U(rng);
            g.w(j, FlatSample::psi_col(n)) = 0.3 * U(rng);
        }
    }
    auto &c = g.cfg;
    c.free_yaw = true;
    switch (term)
    {
    case kObstacle:
        for (int k = 0; k < 4; ++k)
        {
            double t = 0.25 + 0.5 * (U(rng) + 1.0) / 2.0;
            Vec3 centre = (1.0 - t) * g.head.row(0).head<3>().transpose() + t * g.tail.row(0).head<3>().transpose();
            centre += Vec3(0.5 * U(rng), 0.5 * U(rng), 0.6 + 0.3 * U(rng));
            g.field.spheres.push_back({centre, 0.3 + 0.1 * U(rng)});
        }
        c.d_oa_payload = c.d_oa_robot = c.d_oa_cable = 1.0;
        break;
    case kReciprocal:
        c.d_ra = 1.3 * g.sys.cable_length * 2.0 * std::sin(M_PI / N) * std::cos(0.8);
        break;
    case kVelocity:
        c.v_max = 1.5;
        break;
    case kThrust:
        c.f_min = 10.0;
        c.f_max = 12.5;
        break;
    case kTilt:
        c.tilt_max = 0.1;
        break;
    case kBodyRate:
        c.omega_max = 0.3;
        break;
    default:
        break;
    }
    return g;
}

struct GradcheckResult
{
    double rel_error = 0.0;
    double grad_norm = 0.0;
    double cost = 0.0;
};

// Norm-wise relative error between the analytic gradient over the
// unconstrained parameters and central differences of the full pipeline.
inline GradcheckResult gradcheck(const TrajectoryOptimizer &opt, const VecX &x, double rel_step = 1e-6)
{
    VecX g, scratch;
    GradcheckResult r;
    r.cost = opt.cost(x, g);
    VecX fd(x.size());
    for (int i = 0; i < x.size(); ++i)
    {
        const double h = rel_step * std::max(1.0, std::abs(x(i)));
        VecX xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        fd(i) = (opt.cost(xp, scratch) - opt.cost(xm, scratch)) / (2.0 * h);
    }
    r.grad_norm = g.norm();
    r.rel_error = (g - fd).norm() / std::max(fd.norm(), 1e-12);
    return r;
}

inline TrajectoryOptimizer make_optimizer(const GradcheckInstance &g, int term)
{
    TrajectoryOptimizer opt(g.sys, g.cfg, g.field);
    opt.mask = term < 0 ? TermMask::energy_only() : TermMask::only(term);
    opt.setup(g.head, g.tail, g.w, g.T);
    return opt;
}


struct GradcheckSuiteEntry
{
    std::string term;
    int instances = 0;
    int active = 0;           // instances with a nonzero gradient
    double worst = 0.0;       // worst relative error
};

// Energy plus every penalty family, `instances` random cases each with N
// cycling through 2, 3, 4.
inline std::vector<GradcheckSuiteEntry> gradcheck_suite(int instances, unsigned seed)
{
    std::vector<GradcheckSuiteEntry> out;
    for (int term = -1; term < kTermCount; ++term)
    {
        std::mt19937 rng(seed + 100 + term);
        GradcheckSuiteEntry e;
        e.term = term < 0 ? "energy" : term_name(term);
        for (int i = 0; i < instances; ++i)
        {
            auto g = random_instance(rng, 2 + i % 3, term);
            auto opt = make_optimizer(g, term);
            auto r = gradcheck(opt, opt.initial_point());
            ++e.instances;
            e.active += r.grad_norm > 0.0;
            e.worst = std::max(e.worst, r.rel_error);
        }
        out.push_back(e);
    }
    return out;
}

} // namespace marts
