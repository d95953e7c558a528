#pragma once

#include "marts/pathfind.hpp"
#include "marts/planner.hpp"

#include <atomic>
#include <optional>
#include <random>
#include <thread>

namespace marts
{

struct PipelineConfig
{
    PlannerConfig planner;
    PathfindConfig path;
    int pieces = -1;            // -1: from the compressed search path, clamped to [4, 12]
    double vertical_padding = 0.4;
};

struct PipelineResult
{
    PathResult path;
    Seed seed;
    PlanResult plan;
    FeasibilityReport feasibility;
    bool collision_free = false;
    bool feasible = false;

    bool success() const { return collision_free && feasible; }

    nlohmann::json report_json() const
    {
        nlohmann::json j = plan.report.to_json();
        j["feasibility"] = feasibility.to_json();
        j["collision_free"] = collision_free;
        j["dynamically_feasible"] = feasible;
        j["success"] = success();
        j["path_length"] = path.length();
        j["trajectory_duration"] = plan.traj.duration();
        return j;
    }
};

// The search levels must be realisable inside the elevation band.
inline PathfindConfig fit_levels(PathfindConfig p, const SystemConfig &sys, const PlannerConfig &cfg)
{
    const double r_lo = sys.cable_length * std::cos(cfg.theta_max - 0.02);
    p.r_min = std::max(p.r_min, r_lo);
    p.r_max = std::max(p.r_max, p.r_min);
    return p;
}

inline PipelineResult plan_pipeline(const Vec3 &start, const Vec3 &goal, const DistanceField &field,
                                    const SystemConfig &sys, const PipelineConfig &cfg)
{
    PipelineResult r;
    const PathfindConfig pf = fit_levels(cfg.path, sys, cfg.planner);
    PyramidSearch search(field, sys, pf);
    Vec3 pad(pf.padding, pf.padding, cfg.vertical_padding);
    r.path = search.plan(start, goal, start.cwiseMin(goal) - pad, start.cwiseMax(goal) + pad);
    r.seed = extract_seed(r.path.nodes, sys, cfg.planner.theta_max, cfg.planner.v_max, cfg.pieces);
    TrajectoryOptimizer opt(sys, cfg.planner, field);
    opt.setup(r.seed.head, r.seed.tail, r.seed.w, r.seed.T);
    r.plan = opt.optimize();
    r.feasibility = assess_trajectory(r.plan.traj, sys, cfg.planner, field);
    r.collision_free = r.feasibility.collision_free(cfg.planner);
    r.feasible = r.feasibility.dynamically_feasible(cfg.planner);
    return r;
}

struct Replan
{
    PipelineResult result;
    double switch_time = 0.0; // on the current trajectory's clock
};

// New plan to `goal` that starts from the current trajectory's full state
// `lookahead` seconds ahead, so switching there is continuous up to jerk.
inline Replan replan(const Trajectory &current, double now, const Vec3 &goal, const DistanceField &field,
                     const SystemConfig &sys, const PipelineConfig &cfg, double lookahead = 0.1)
{
    Replan rp;
    rp.switch_time = std::min(now + lookahead, current.duration());
    const MatX head = current.eval_derivs(rp.switch_time, 3);
    const Vec3 start = head.row(0).head<3>().transpose();
    PipelineResult &r = rp.result;
    const PathfindConfig pf = fit_levels(cfg.path, sys, cfg.planner);
    PyramidSearch search(field, sys, pf);
    Vec3 pad(pf.padding, pf.padding, cfg.vertical_padding);
    r.path = search.plan(start, goal, start.cwiseMin(goal) - pad, start.cwiseMax(goal) + pad);
    r.seed = extract_seed(r.path.nodes, sys, cfg.planner.theta_max, cfg.planner.v_max, cfg.pieces);
    r.seed.head = head;
    TrajectoryOptimizer opt(sys, cfg.planner, field);
    opt.setup(r.seed.head, r.seed.tail, r.seed.w, r.seed.T);
    r.plan = opt.optimize();
    r.feasibility = assess_trajectory(r.plan.traj, sys, cfg.planner, field);
    r.collision_free = r.feasibility.collision_free(cfg.planner);
    r.feasible = r.feasibility.dynamically_feasible(cfg.planner);
    return rp;
}

// Payload course O-A-B-C-E in free space; A, B, C are pinned junctions.
struct WaypointCourse
{
    std::vector<Vec3> points{{0, 0, 1}, {2, 2, 1.2}, {4, 0, 1.6}, {6, 2, 1.2}, {8, 0, 1}};
    int per_segment = 3;       // pieces between consecutive waypoints
    double phi_jitter = 0.5;   // seed azimuth noise as a fraction of the band half-width
    double theta_lo = 0.5, theta_hi = 0.8;
    double speed = 3.0;        // seed durations
};

struct WaypointRun
{
    PlanResult plan;
    FeasibilityReport feasibility;
};

// Random seed shared by the band-active and band-free runs.
inline Seed waypoint_seed(const WaypointCourse &c, const SystemConfig &sys, unsigned seed)
{
    if (c.points.size() < 2 || c.per_segment < 1)
        throw InputError("waypoint course needs two points and one piece per segment");
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const int N = sys.n_robots, sub = c.per_segment, S = static_cast<int>(c.points.size()) - 1, M = S * sub;
    const double th0 = 0.5 * (c.theta_lo + c.theta_hi);
    Seed s;
    s.head = hover_flat_output(sys, c.points.front(), th0);
    s.tail = hover_flat_output(sys, c.points.back(), th0);
    s.w.resize(M - 1, FlatSample::dim(N));
    s.T.resize(M);
    for (int m = 0; m < M; ++m)
        s.T(m) = (c.points[m / sub + 1] - c.points[m / sub]).norm() / sub / c.speed;
    for (int j = 0; j < M - 1; ++j)
    {
        const int seg = (j + 1) / sub;
        const double a = static_cast<double>((j + 1) % sub) / sub;
        const Vec3 p = (1.0 - a) * c.points[seg] + a * c.points[std::min(seg + 1, S)];
        const double th = c.theta_lo + (c.theta_hi - c.theta_lo) * 0.5 * (U(rng) + 1.0);
        s.w.row(j) = hover_flat_output(sys, p, th).row(0);
        for (int n = 0; n < N; ++n)
            s.w(j, FlatSample::phi_col(n)) += c.phi_jitter * M_PI / N * U(rng);
    }
    return s;
}

inline WaypointRun plan_waypoints(const WaypointCourse &c, const Seed &seed, const SystemConfig &sys,
                                  const PlannerConfig &cfg)
{
    static const FreeSpace free_space;
    TrajectoryOptimizer opt(sys, cfg, free_space);
    opt.setup(seed.head, seed.tail, seed.w, seed.T);
    for (int k = 1; k + 1 < static_cast<int>(c.points.size()); ++k)
        opt.pin_payload(k * c.per_segment - 1);
    WaypointRun r;
    r.plan = opt.optimize();
    r.feasibility = assess_trajectory(r.plan.traj, sys, cfg, free_space);
    return r;
}

enum class Density
{
    Sparse,
    Medium,
    Dense
};

inline const char *to_string(Density d)
{
    return d == Density::Sparse ? "sparse" : d == Density::Medium ? "medium" : "dense";
}

inline Density parse_density(const std::string &s)
{
    if (s == "sparse")
        return Density::Sparse;
    if (s == "medium")
        return Density::Medium;
    if (s == "dense")
        return Density::Dense;
    throw InputError("unknown density '" + s + "' (sparse, medium, dense)");
}

// Circular arena of vertical pillars; targets on a ring outside it.
struct BenchmarkSpec
{
    double radius = 6.0;
    Density density = Density::Medium;
    int targets = 36;
    double altitude = 1.0;
    double clear_start = 1.5;  // pillar-free disk around the start
    double resolution = 0.1;
    unsigned seed = 7;

    double target_radius() const { return radius * 21.0 / 18.0; }

    int pillar_count() const
    {
        // pillars per square metre of arena
        const double rho = density == Density::Sparse ? 0.04 : density == Density::Medium ? 0.08 : 0.13;
        return static_cast<int>(std::round(rho * M_PI * radius * radius));
    }
};

struct Arena
{
    OccupancyGrid occupancy;
    EsdfGrid esdf;
    std::vector<AnalyticField::Cylinder> pillars;
    std::vector<Vec3> targets;
    Vec3 start;
};

inline Arena make_arena(const BenchmarkSpec &spec)
{
    Arena a;
    std::mt19937 rng(spec.seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const double R = spec.radius, span = spec.target_radius() + 1.5;
    a.occupancy = OccupancyGrid::covering(Vec3(-span, -span, -0.5), Vec3(span, span, spec.altitude + 2.5),
                                          spec.resolution);
    const int want = spec.pillar_count();
    int tries = 0;
    while (static_cast<int>(a.pillars.size()) < want && ++tries < 100000)
    {
        const double r = R * std::sqrt(U(rng)), t = 2.0 * M_PI * U(rng), pr = 0.15 + 0.15 * U(rng);
        const double x = r * std::cos(t), y = r * std::sin(t);
        if (std::hypot(x, y) < spec.clear_start + pr || std::hypot(x, y) > R - pr)
            continue;
        // keep a passage wider than the contracted formation between pillars
        bool ok = true;
        for (const auto &c : a.pillars)
            ok = ok && std::hypot(c.x - x, c.y - y) > c.r + pr + 1.0;
        if (ok)
            a.pillars.push_back({x, y, pr});
    }
    for (const auto &c : a.pillars)
        a.occupancy.add_cylinder(c.x, c.y, c.r, -1e9, 1e9);
    a.esdf = EsdfGrid::build(a.occupancy);
    a.start = Vec3(0, 0, spec.altitude);
    for (int k = 0; k < spec.targets; ++k)
    {
        const double t = 2.0 * M_PI * k / spec.targets;
        a.targets.push_back(Vec3(spec.target_radius() * std::cos(t), spec.target_radius() * std::sin(t), spec.altitude));
    }
    return a;
}


struct BenchmarkCase
{
    int target = 0;
    bool success = false, collision_free = false, feasible = false;
    double path_length = 0.0, duration = 0.0, solve_time = 0.0;
    FeasibilityReport feasibility;
    std::optional<Trajectory> traj; // kept when requested
    std::string error;              // NoPath and similar, empty otherwise

    nlohmann::json to_json() const
    {
        nlohmann::json j{{"target", target},
                         {"success", success},
                         {"collision_free", collision_free},
                         {"dynamically_feasible", feasible},
                         {"path_length", path_length},
                         {"duration", duration},
                         {"solve_time_s", solve_time}};
        if (!error.empty())
            j["error"] = error;
        else
            j["feasibility"] = feasibility.to_json();
        return j;
    }
};

// Start-to-target solves over the ring; `threads` workers, results in target
// order.
inline std::vector<BenchmarkCase> run_benchmark(const BenchmarkSpec &spec, const Arena &arena,
                                                const SystemConfig &sys, const PipelineConfig &cfg,
                                                int stride = 1, int threads = 1, bool keep_trajectories = false)
{
    if (stride < 1 || threads < 1)
        throw InputError("benchmark: stride and threads must be >= 1");
    std::vector<int> targets;
    for (int k = 0; k < spec.targets; k += stride)
        targets.push_back(k);
    std::vector<BenchmarkCase> out(targets.size());
    std::atomic<size_t> next{0};
    auto work = [&]
    {
        for (size_t i = next++; i < targets.size(); i = next++)
        {
            BenchmarkCase &c = out[i];
            c.target = targets[i];
            try
            {
                auto r = plan_pipeline(arena.start, arena.targets[c.target], arena.esdf, sys, cfg);
                c.success = r.success();
                c.collision_free = r.collision_free;
                c.feasible = r.feasible;
                c.path_length = r.path.length();
                c.duration = r.plan.traj.duration();
                c.solve_time = r.plan.report.wall_time;
                c.feasibility = r.feasibility;
                if (keep_trajectories)
                    c.traj = r.plan.traj;
            }
            catch (const NoPath &e)
            {
                c.error = e.what();
            }
            catch (const SeedInfeasible &e)
            {
                c.error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t)
        pool.emplace_back(work);
    work();
    for (auto &t : pool)
        t.join();
    return out;
}

struct ScalingPoint
{
    int n_robots = 0;
    double solve_time = 0.0;
    bool success = false;
};

struct ScalingResult
{
    std::vector<ScalingPoint> points;
    double exponent = 0.0; // least-squares slope of log time against log N
};

// Solve time against team size on one fixed course.
inline ScalingResult responsiveness_scaling(const Arena &arena, int target, int n_lo, int n_hi,
                                            const PipelineConfig &cfg, SystemConfig sys = {})
{
    if (target < 0 || target >= static_cast<int>(arena.targets.size()) || n_lo < 2 || n_hi <= n_lo)
        throw InputError("scaling: bad target or robot range");
    ScalingResult r;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int N = n_lo; N <= n_hi; ++N)
    {
        sys.n_robots = N;
        auto p = plan_pipeline(arena.start, arena.targets[target], arena.esdf, sys, cfg);
        r.points.push_back({N, p.plan.report.wall_time, p.success()});
        const double x = std::log(N), y = std::log(p.plan.report.wall_time);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = static_cast<double>(r.points.size());
    r.exponent = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return r;
}

struct BandAblationRun
{
    unsigned seed = 0;
    double band_cost = 0.0, free_cost = 0.0;
    bool band_in_band = true; // every junction of the band-active run in its band
    bool band_feasible = false, free_feasible = false;
};

// Same random seed planned with and without the azimuth bands.
inline std::vector<BandAblationRun> band_ablation(const WaypointCourse &c, const std::vector<unsigned> &seeds,
                                                  const SystemConfig &sys, PlannerConfig cfg)
{
    std::vector<BandAblationRun> out;
    for (unsigned s : seeds)
    {
        const Seed seed = waypoint_seed(c, sys, s);
        BandAblationRun r;
        r.seed = s;
        cfg.use_bands = true;
        auto a = plan_waypoints(c, seed, sys, cfg);
        r.band_cost = a.plan.report.parts.total();
        r.band_in_band = a.feasibility.phi_in_band;
        r.band_feasible = a.feasibility.dynamically_feasible(cfg);
        cfg.use_bands = false;
        auto b = plan_waypoints(c, seed, sys, cfg);
        r.free_cost = b.plan.report.parts.total();
        r.free_feasible = b.feasibility.dynamically_feasible(cfg);
        out.push_back(r);
    }
    return out;
}

} // namespace marts
