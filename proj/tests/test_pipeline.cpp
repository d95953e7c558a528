#include "marts/pipeline.hpp"

#include <gtest/gtest.h>

using namespace marts;

namespace
{

// Largest horizontal distance between two robots at time t.
double formation_width(const Trajectory &tr, const SystemConfig &sys, double t)
{
    FlatSample s = tr.sample(t, 4);
    double w = 0.0;
    for (int i = 0; i < sys.n_robots; ++i)
        for (int k = i + 1; k < sys.n_robots; ++k)
        {
            const Vec3 d = sys.cable_length * (rho_from_angles(s.theta(i, 0), s.phi(i, 0)) -
                                               rho_from_angles(s.theta(k, 0), s.phi(k, 0)));
            w = std::max(w, d.head<2>().norm());
        }
    return w;
}

} // namespace

TEST(Waypoints, SeedShape)
{
    SystemConfig sys;
    WaypointCourse c;
    Seed s = waypoint_seed(c, sys, 3);
    const int M = 4 * c.per_segment;
    EXPECT_EQ(s.T.size(), M);
    EXPECT_EQ(s.w.rows(), M - 1);
    for (int k = 1; k < 4; ++k)
        EXPECT_LT((s.w.row(k * c.per_segment - 1).head<3>().transpose() - c.points[k]).norm(), 1e-12);
    // same seed, same draw
    EXPECT_EQ(s.w, waypoint_seed(c, sys, 3).w);
    EXPECT_NE(s.w, waypoint_seed(c, sys, 4).w);
}

TEST(Waypoints, PinnedJunctionsStayOnWaypoints)
{
    SystemConfig sys;
    PlannerConfig cfg;
    cfg.solver.max_iter = 400;
    WaypointCourse c;
    Seed s = waypoint_seed(c, sys, 1);
    auto r = plan_waypoints(c, s, sys, cfg);
    const VecX &T = r.plan.traj.durations();
    double t = 0.0;
    for (int m = 0; m + 1 < T.size(); ++m)
    {
        t += T(m);
        if ((m + 1) % c.per_segment == 0)
            EXPECT_LT((r.plan.traj.eval(t, 0).head<3>() - c.points[(m + 1) / c.per_segment]).norm(), 1e-9);
    }
    EXPECT_TRUE(r.feasibility.phi_in_band);
}

TEST(Waypoints, PinOutOfRange)
{
    SystemConfig sys;
    PlannerConfig cfg;
    FreeSpace fs;
    WaypointCourse c;
    Seed s = waypoint_seed(c, sys, 1);
    TrajectoryOptimizer opt(sys, cfg, fs);
    opt.setup(s.head, s.tail, s.w, s.T);
    EXPECT_THROW(opt.pin_payload(-1), InputError);
    EXPECT_THROW(opt.pin_payload(static_cast<int>(s.w.rows())), InputError);
}

TEST(Pipeline, NarrowGapContractsFormation)
{
    SystemConfig sys;
    auto g = OccupancyGrid::covering(Vec3(-4, -3, -0.5), Vec3(4, 3, 3.5), 0.1);
    g.add_gap_wall(0.0, 0.2, -3, 3, 0.0, 1.0, -0.5, 3.5);
    auto esdf = EsdfGrid::build(g);
    PipelineConfig cfg;
    cfg.planner.theta_max = 1.35;
    cfg.planner.lambda_d = 1e5;
    auto r = plan_pipeline(Vec3(-2.5, 0, 1), Vec3(2.5, 0, 1), esdf, sys, cfg);
    EXPECT_TRUE(r.collision_free);
    EXPECT_TRUE(r.success());
    const double w0 = formation_width(r.plan.traj, sys, 0.0);
    double at_gap = 1e9;
    for (double t = 0.0; t <= r.plan.traj.duration(); t += 0.01)
        if (std::abs(r.plan.traj.eval(t, 0)(0)) < 0.15)
            at_gap = std::min(at_gap, formation_width(r.plan.traj, sys, t));
    EXPECT_LT(at_gap, w0);
    EXPECT_LT(at_gap, 1.0);
}

TEST(Pipeline, GoalInsideObstacle)
{
    SystemConfig sys;
    auto g = OccupancyGrid::covering(Vec3(-3, -3, -0.5), Vec3(3, 3, 3), 0.1);
    g.add_box(Vec3(1.5, -0.5, -0.5), Vec3(2.5, 0.5, 3.0));
    auto esdf = EsdfGrid::build(g);
    PipelineConfig cfg;
    EXPECT_THROW(plan_pipeline(Vec3(-2, 0, 1), Vec3(2, 0, 1), esdf, sys, cfg), NoPath);
}

TEST(Arena, Properties)
{
    for (Density d : {Density::Sparse, Density::Medium, Density::Dense})
    {
        BenchmarkSpec spec;
        spec.density = d;
        Arena a = make_arena(spec);
        EXPECT_EQ(static_cast<int>(a.pillars.size()), spec.pillar_count()) << to_string(d);
        EXPECT_EQ(static_cast<int>(a.targets.size()), spec.targets);
        for (size_t i = 0; i < a.pillars.size(); ++i)
        {
            const auto &p = a.pillars[i];
            EXPECT_GE(std::hypot(p.x, p.y), spec.clear_start + p.r);
            EXPECT_LE(std::hypot(p.x, p.y), spec.radius - p.r);
            for (size_t k = i + 1; k < a.pillars.size(); ++k)
                EXPECT_GT(std::hypot(p.x - a.pillars[k].x, p.y - a.pillars[k].y), p.r + a.pillars[k].r + 1.0);
        }
        for (const Vec3 &t : a.targets)
            EXPECT_GT(a.esdf.distance(t, nullptr), 1.0);
    }
    EXPECT_THROW(parse_density("thick"), InputError);
}

TEST(Pipeline, ReplanSwitchIsContinuous)
{
    SystemConfig sys;
    FreeSpace fs;
    PipelineConfig cfg;
    cfg.planner.solver.max_iter = 600;
    auto first = plan_pipeline(Vec3(0, 0, 1), Vec3(6, 0, 1), fs, sys, cfg);
    auto rp = replan(first.plan.traj, 1.0, Vec3(4, 3, 1.2), fs, sys, cfg);
    EXPECT_DOUBLE_EQ(rp.switch_time, 1.1);
    const MatX before = first.plan.traj.eval_derivs(rp.switch_time, 3);
    const MatX after = rp.result.plan.traj.eval_derivs(0.0, 3);
    EXPECT_LT((before - after).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((rp.result.plan.traj.eval(rp.result.plan.traj.duration(), 0).head<3>() - Vec3(4, 3, 1.2)).norm(),
              1e-9);
    EXPECT_TRUE(rp.result.collision_free);
}
