// marts: map building, planning, simulation, benchmarking and gradient checks.
//
// Exit codes: 0 success, 2 infeasible problem, 3 input error, 4 internal fault.

#include "marts/gradcheck.hpp"
#include "marts/io.hpp"
#include "marts/scenario.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>

using namespace marts;

namespace
{

enum Exit
{
    kOk = 0,
    kInfeasible = 2,
    kInput = 3,
    kFault = 4
};

void write_json(const nlohmann::json &j, const std::string &path)
{
    if (path.empty() || path == "-")
    {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream f(path);
    if (!f)
        throw InputError("cannot write " + path);
    f << j.dump(2) << "\n";
}

int env_threads()
{
    if (const char *e = std::getenv("MARTS_THREADS"))
    {
        const int n = std::atoi(e);
        if (n < 1)
            throw InputError("MARTS_THREADS must be a positive integer");
        return n;
    }
    return 1;
}

// "section.key=value" overrides applied after the config file.
void apply_setting(PipelineConfig &cfg, SystemConfig &sys, const std::string &kv)
{
    const auto eq = kv.find('='), dot = kv.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
        throw InputError("--set expects section.key=value, got '" + kv + "'");
    const std::string section = kv.substr(0, dot), key = kv.substr(dot + 1, eq - dot - 1);
    nlohmann::json v;
    try
    {
        v = nlohmann::json::parse(kv.substr(eq + 1));
    }
    catch (const nlohmann::json::parse_error &)
    {
        throw InputError("--set " + kv + ": value is not a number or boolean");
    }
    const nlohmann::json j{{key, v}};
    if (section == "planner")
        apply_overrides(cfg.planner, j);
    else if (section == "pathfind")
        apply_overrides(cfg.path, j);
    else if (section == "system")
        apply_overrides(sys, j);
    else
        throw InputError("--set: unknown section '" + section + "'");
}

void load_config(PipelineConfig &cfg, SystemConfig &sys, const std::string &path)
{
    const auto j = read_json(path);
    for (auto it = j.begin(); it != j.end(); ++it)
    {
        if (it.key() == "planner")
            apply_overrides(cfg.planner, it.value());
        else if (it.key() == "pathfind")
            apply_overrides(cfg.path, it.value());
        else if (it.key() == "system")
            apply_overrides(sys, it.value());
        else if (it.key() == "pieces")
            cfg.pieces = it.value().get<int>();
        else
            throw InputError(path + ": unknown section '" + it.key() + "'");
    }
}

struct MapArgs
{
    std::string input, output, stats;
    double resolution = 0.1;
    bool verify = false;
};

int cmd_map(const MapArgs &a)
{
    nlohmann::json stats;
    if (a.verify && a.input.empty())
    {
        // random 32^3 grid against the all-pairs scan
        std::mt19937 rng(1);
        std::bernoulli_distribution B(0.05);
        OccupancyGrid g(Vec3::Zero(), a.resolution, Eigen::Vector3i(32, 32, 32));
        for (auto &v : g.occ)
            v = B(rng);
        const bool same = EsdfGrid::build(g).values == brute_force_esdf(g);
        write_json({{"verify", same ? "pass" : "fail"}, {"dims", {32, 32, 32}}}, a.stats);
        return same ? kOk : kFault;
    }
    if (a.input.empty())
        throw InputError("map: an input point cloud or map spec is required");
    OccupancyGrid occ;
    const bool spec = a.input.size() >= 5 && a.input.compare(a.input.size() - 5, 5, ".json") == 0;
    occ = spec ? map_from_spec(read_json(a.input)) : voxelize(load_point_cloud(a.input), a.resolution);
    const auto t0 = std::chrono::steady_clock::now();
    const EsdfGrid e = EsdfGrid::build(occ);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    long occupied = std::count(occ.occ.begin(), occ.occ.end(), true);
    const auto [lo, hi] = std::minmax_element(e.values.begin(), e.values.end());
    stats = {{"dims", {occ.dims.x(), occ.dims.y(), occ.dims.z()}},
             {"origin", {occ.origin.x(), occ.origin.y(), occ.origin.z()}},
             {"resolution", occ.resolution},
             {"occupied", occupied},
             {"min_distance", *lo},
             {"max_distance", *hi},
             {"build_time_s", dt}};
    if (a.verify)
    {
        if (occ.dims.maxCoeff() > 32)
            throw InputError("map --verify: grid larger than 32 cells per axis; omit the input to verify a random grid");
        stats["verify"] = e.values == brute_force_esdf(occ) ? "pass" : "fail";
    }
    if (!a.output.empty())
        e.save(a.output);
    write_json(stats, a.stats);
    return stats.value("verify", "pass") == "pass" ? kOk : kFault;
}

struct PlanArgs
{
    std::string map, config, output, report, replan_from;
    std::string start, goal;
    double at = -1.0, resolution = 0.1;
    std::vector<std::string> settings;
};

int cmd_plan(const PlanArgs &a)
{
    PipelineConfig cfg;
    SystemConfig sys;
    if (!a.config.empty())
        load_config(cfg, sys, a.config);
    for (const auto &s : a.settings)
        apply_setting(cfg, sys, s);
    sys.validate();
    cfg.planner.validate();
    cfg.path.validate(sys);

    std::unique_ptr<DistanceField> field;
    if (a.map.empty())
        field = std::make_unique<FreeSpace>();
    else
        field = std::make_unique<EsdfGrid>(load_map(a.map, a.resolution));
    const Vec3 goal = parse_vec3(a.goal);

    PipelineResult r;
    nlohmann::json extra;
    if (!a.replan_from.empty())
    {
        if (a.at < 0.0)
            throw InputError("plan: --replan-from needs --at");
        const Trajectory current = Trajectory::from_json(read_json(a.replan_from));
        auto rp = replan(current, a.at, goal, *field, sys, cfg);
        const MatX before = current.eval_derivs(rp.switch_time, current.order_s() - 1);
        const MatX after = rp.result.plan.traj.eval_derivs(0.0, current.order_s() - 1);
        extra = {{"switch_time", rp.switch_time}, {"switch_continuity", (before - after).cwiseAbs().maxCoeff()}};
        r = std::move(rp.result);
    }
    else
    {
        if (a.start.empty())
            throw InputError("plan: --start is required");
        r = plan_pipeline(parse_vec3(a.start), goal, *field, sys, cfg);
    }
    nlohmann::json rep = r.report_json();
    if (extra.is_object())
        rep.update(extra);
    write_json(r.plan.traj.to_json(sys.n_robots), a.output);
    if (!a.report.empty())
        write_json(rep, a.report);

    std::fprintf(stderr, "%-12s %12s\n", "term", "penalty");
    std::fprintf(stderr, "%-12s %12.4e\n", "energy", r.plan.report.parts.energy);
    for (int t = 0; t < kTermCount; ++t)
        std::fprintf(stderr, "%-12s %12.4e\n", term_name(t), r.plan.report.parts.term[t]);
    std::fprintf(stderr, "wall time %.3f s, %s\n", r.plan.report.wall_time,
                 r.success() ? "feasible" : "NOT feasible");
    return r.success() ? kOk : kInfeasible;
}

struct SimArgs
{
    std::string scenario, trace, output;
    bool ablation = false;
};

int cmd_sim(const SimArgs &a)
{
    const Scenario sc = Scenario::load(a.scenario);
    if (a.ablation)
    {
        const auto r = force_compensation_ablation(sc.trajectory(), sc.system, sc.sim);
        write_json({{"indi", r.indi.to_json()}, {"reference_force", r.reference.to_json()}}, a.output);
        return kOk;
    }
    std::ofstream trace;
    if (!a.trace.empty())
    {
        trace.open(a.trace);
        if (!trace)
            throw InputError("cannot write " + a.trace);
    }
    const auto r = run_scenario(sc, a.trace.empty() ? nullptr : &trace);
    write_json(r.to_json(), a.output);
    return kOk;
}

struct BenchArgs
{
    std::vector<std::string> densities{"sparse", "medium", "dense"};
    int stride = 1, seed = -1, scaling_target = 6;
    double radius = -1.0;
    bool scaling = false;
    std::string output, config;
    std::vector<std::string> settings;
};

int cmd_bench(const BenchArgs &a)
{
    PipelineConfig cfg;
    SystemConfig sys;
    if (!a.config.empty())
        load_config(cfg, sys, a.config);
    for (const auto &s : a.settings)
        apply_setting(cfg, sys, s);
    const int threads = env_threads();
    nlohmann::json out{{"threads", threads}, {"n_robots", sys.n_robots}, {"densities", nlohmann::json::array()}};
    for (const auto &name : a.densities)
    {
        BenchmarkSpec spec;
        spec.density = parse_density(name);
        if (a.radius > 0.0)
            spec.radius = a.radius;
        if (a.seed >= 0)
            spec.seed = static_cast<unsigned>(a.seed);
        const Arena arena = make_arena(spec);
        const auto cases = run_benchmark(spec, arena, sys, cfg, a.stride, threads);
        int ok = 0;
        double len = 0.0, time = 0.0;
        nlohmann::json rows = nlohmann::json::array();
        for (const auto &c : cases)
        {
            rows.push_back(c.to_json());
            if (c.success)
            {
                ++ok;
                len += c.path_length;
                time += c.solve_time;
            }
        }
        const double rate = static_cast<double>(ok) / cases.size();
        std::fprintf(stderr, "%-7s success %3d/%-3zu  mean length %6.2f m  mean solve %.2f s\n", name.c_str(), ok,
                     cases.size(), ok ? len / ok : 0.0, ok ? time / ok : 0.0);
        out["densities"].push_back({{"density", name},
                                    {"pillars", arena.pillars.size()},
                                    {"success_rate", rate},
                                    {"mean_length", ok ? len / ok : 0.0},
                                    {"mean_solve_time_s", ok ? time / ok : 0.0},
                                    {"cases", rows}});
    }
    if (a.scaling)
    {
        BenchmarkSpec spec;
        spec.density = Density::Medium;
        const auto r = responsiveness_scaling(make_arena(spec), a.scaling_target, 2, 8, cfg, sys);
        nlohmann::json pts = nlohmann::json::array();
        for (const auto &p : r.points)
        {
            pts.push_back({{"n_robots", p.n_robots}, {"solve_time_s", p.solve_time}, {"success", p.success}});
            std::fprintf(stderr, "N=%d  %.3f s%s\n", p.n_robots, p.solve_time, p.success ? "" : "  (infeasible)");
        }
        std::fprintf(stderr, "power-law exponent %.2f\n", r.exponent);
        out["scaling"] = {{"points", pts}, {"exponent", r.exponent}};
    }
    write_json(out, a.output);
    return kOk;
}

int cmd_gradcheck(int instances, unsigned seed, const std::string &output)
{
    const auto suite = gradcheck_suite(instances, seed);
    nlohmann::json terms = nlohmann::json::array();
    double worst = 0.0;
    for (const auto &e : suite)
    {
        worst = std::max(worst, e.worst);
        terms.push_back({{"term", e.term}, {"instances", e.instances}, {"active", e.active}, {"worst", e.worst}});
        std::fprintf(stderr, "%-12s %3d instances (%3d active)  worst %.3e\n", e.term.c_str(), e.instances, e.active,
                     e.worst);
    }
    write_json({{"terms", terms}, {"worst_relative_error", worst}}, output);
    return kOk;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Cable-suspended payload transport: planning and simulation"};
    app.require_subcommand(1);

    MapArgs ma;
    auto *map = app.add_subcommand("map", "Build and cache an ESDF from a point cloud or map spec");
    map->add_option("input", ma.input, "Point cloud (.txt/.xyz/.ply) or map spec (.json)");
    map->add_option("-o,--output", ma.output, "ESDF cache file to write");
    map->add_option("--stats", ma.stats, "Write grid stats JSON here (default stdout)");
    map->add_option("-r,--resolution", ma.resolution, "Voxel size for point clouds [m]")->check(CLI::PositiveNumber);
    map->add_flag("--verify", ma.verify, "Compare against the all-pairs oracle (grids up to 32^3)");

    PlanArgs pa;
    auto *plan = app.add_subcommand("plan", "Search, seed and optimise a trajectory");
    plan->add_option("--map", pa.map, "ESDF cache, map spec or point cloud; omit for free space");
    plan->add_option("--start", pa.start, "Start payload position x,y,z");
    plan->add_option("--goal", pa.goal, "Goal payload position x,y,z")->required();
    plan->add_option("--config", pa.config, "JSON with planner/pathfind/system sections");
    plan->add_option("--set", pa.settings, "Override: section.key=value (repeatable)");
    plan->add_option("-o,--output", pa.output, "Trajectory JSON (default stdout)");
    plan->add_option("--report", pa.report, "Report JSON");
    plan->add_option("--resolution", pa.resolution, "Voxel size when the map is a point cloud");
    plan->add_option("--replan-from", pa.replan_from, "Current trajectory JSON to switch away from");
    plan->add_option("--at", pa.at, "Current time on that trajectory [s]");

    SimArgs sa;
    auto *sim = app.add_subcommand("sim", "Run a closed-loop scenario");
    sim->add_option("scenario", sa.scenario, "Scenario JSON")->required();
    sim->add_option("--trace", sa.trace, "Per-step CSV trace");
    sim->add_option("-o,--output", sa.output, "Metrics JSON (default stdout)");
    sim->add_flag("--ablation", sa.ablation, "Run INDI and reference-force outer loops on the same noise");

    BenchArgs ba;
    auto *bench = app.add_subcommand("bench", "Target-ring benchmark; MARTS_THREADS sets worker count");
    bench->add_option("--density", ba.densities, "sparse, medium and/or dense");
    bench->add_option("--stride", ba.stride, "Solve every k-th target")->check(CLI::PositiveNumber);
    bench->add_option("--radius", ba.radius, "Arena radius [m]");
    bench->add_option("--seed", ba.seed, "Arena seed");
    bench->add_flag("--scaling", ba.scaling, "Also time N = 2..8 on one medium course");
    bench->add_option("--scaling-target", ba.scaling_target, "Target index for --scaling");
    bench->add_option("--config", ba.config, "JSON with planner/pathfind/system sections");
    bench->add_option("--set", ba.settings, "Override: section.key=value (repeatable)");
    bench->add_option("-o,--output", ba.output, "Results JSON (default stdout)");

    int gc_instances = 50;
    unsigned gc_seed = 2024;
    std::string gc_output;
    auto *gc = app.add_subcommand("gradcheck", "Finite-difference check of every cost term");
    gc->add_option("--instances", gc_instances, "Random instances per term")->check(CLI::PositiveNumber);
    gc->add_option("--seed", gc_seed, "Random seed");
    gc->add_option("-o,--output", gc_output, "Results JSON (default stdout)");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kInput;
    }

    try
    {
        if (*map)
            return cmd_map(ma);
        if (*plan)
            return cmd_plan(pa);
        if (*sim)
            return cmd_sim(sa);
        if (*bench)
            return cmd_bench(ba);
        return cmd_gradcheck(gc_instances, gc_seed, gc_output);
    }
    catch (const NoPath &e)
    {
        std::fprintf(stderr, "no path: %s\n", e.what());
        return kInfeasible;
    }
    catch (const SeedInfeasible &e)
    {
        std::fprintf(stderr, "seed infeasible: %s\n", e.what());
        return kInfeasible;
    }
    catch (const InputError &e)
    {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return kInput;
    }
    catch (const EmptyGrid &e)
    {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return kInput;
    }
    catch (const std::exception &e)
    {
        std::fprintf(stderr, "internal fault: %s\n", e.what());
        return kFault;
    }
}
