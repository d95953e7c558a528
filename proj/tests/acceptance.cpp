// Acceptance runner: one PASS/FAIL line per criterion.
//   acceptance [--only 3,5]
// Exit status is nonzero when any selected criterion fails.

#include "marts/gradcheck.hpp"
#include "marts/pipeline.hpp"
#include "marts/scenario.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <sstream>

using namespace marts;

namespace
{

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool pass, const std::string &name, const std::string &detail)
{
    std::printf("%s criterion %2d  %-32s %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += !pass;
}

std::string fmt(const char *f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int worker_threads()
{
    if (const char *e = std::getenv("MARTS_THREADS"))
        return std::max(1, std::atoi(e));
    return std::max(1u, std::thread::hardware_concurrency());
}

void gradient_fidelity()
{
    const auto t0 = Clock::now();
    auto suite = gradcheck_suite(50, 2024);
    const double dt = seconds_since(t0);
    double worst = 0.0;
    int min_instances = 1 << 30, min_active = 1 << 30;
    std::string worst_term;
    for (const auto &e : suite)
    {
        if (e.worst >= worst)
        {
            worst = e.worst;
            worst_term = e.term;
        }
        min_instances = std::min(min_instances, e.instances);
        min_active = std::min(min_active, e.active);
    }
    const bool ok = worst <= 1e-4 && min_instances >= 50 && min_active > 0 && dt < 120.0;
    report(1, ok, "gradient fidelity",
           fmt("%zu terms, worst rel err %.2e (%s), min active %d/%d, %.1f s", suite.size(), worst, worst_term.c_str(),
               min_active, min_instances, dt));
}

void trajectory_exactness()
{
    const auto t0 = Clock::now();
    std::mt19937 rng(42);
    double worst = 0.0;
    int count = 0;
    for (int N : {2, 3, 4})
        for (int M = 2; M <= 8; ++M)
            for (int rep = 0; rep < 5; ++rep, ++count)
            {
                auto in = oracle::random_traj_instance(rng, FlatSample::dim(N), M);
                auto tr = Trajectory::build(in.head, in.tail, in.w, in.T);
                worst = std::max(worst, oracle::condition_residual(tr, in));
            }
    double kkt = 0.0;
    for (int rep = 0; rep < 50; ++rep)
    {
        auto in = oracle::random_traj_instance(rng, 1, 2);
        auto tr = Trajectory::build(in.head, in.tail, in.w, in.T);
        const VecX sol = oracle::kkt_coefficients(in);
        for (int i = 0; i < sol.size(); ++i)
            kkt = std::max(kkt, std::abs(sol(i) - tr.coeffs()(i, 0)) / std::max(1.0, std::abs(sol(i))));
    }
    const double dt = seconds_since(t0);
    report(2, worst < 1e-8 && kkt < 1e-8 && count >= 100 && dt < 10.0, "trajectory class exactness",
           fmt("%d instances, residual %.2e, KKT diff %.2e, %.2f s", count, worst, kkt, dt));
}

void benchmark_and_margins(bool want3, bool want5)
{
    const auto t0 = Clock::now();
    SystemConfig sys;
    PipelineConfig cfg;
    const int per_piece = 10 * cfg.planner.kappa;
    std::ostringstream rates;
    bool rate_ok = true;
    int checked = 0, violations = 0;
    oracle::FlatMargins worst;
    worst.min_thrust = worst.min_tension = 1e9;
    for (Density d : {Density::Sparse, Density::Medium, Density::Dense})
    {
        BenchmarkSpec spec;
        spec.density = d;
        const Arena arena = make_arena(spec);
        const auto cases = run_benchmark(spec, arena, sys, cfg, 1, worker_threads(), want5);
        int ok = 0;
        for (const auto &c : cases)
        {
            ok += c.success;
            if (!c.success || !want5)
                continue;
            const auto m = oracle::flat_margins(*c.traj, sys, per_piece);
            const PlannerConfig &p = cfg.planner;
            const bool good = m.finite && m.max_speed <= p.v_max * 1.01 && m.min_thrust >= p.f_min * 0.99 &&
                              m.max_thrust <= p.f_max * 1.01 && m.max_tilt <= p.tilt_max + 0.01 &&
                              m.max_rate <= p.omega_max * 1.01 && m.min_tension > p.F_min &&
                              m.max_tension < p.F_max && m.max_coupling < 0.05;
            ++checked;
            violations += !good;
            worst.max_speed = std::max(worst.max_speed, m.max_speed);
            worst.min_thrust = std::min(worst.min_thrust, m.min_thrust);
            worst.max_thrust = std::max(worst.max_thrust, m.max_thrust);
            worst.max_tilt = std::max(worst.max_tilt, m.max_tilt);
            worst.max_rate = std::max(worst.max_rate, m.max_rate);
            worst.min_tension = std::min(worst.min_tension, m.min_tension);
            worst.max_tension = std::max(worst.max_tension, m.max_tension);
            worst.max_coupling = std::max(worst.max_coupling, m.max_coupling);
        }
        const double rate = static_cast<double>(ok) / cases.size();
        rate_ok &= d == Density::Dense ? rate >= 0.9 : rate == 1.0;
        rates << to_string(d) << " " << ok << "/" << cases.size() << "  ";
    }
    const double dt = seconds_since(t0);
    if (want3)
        report(3, rate_ok && dt < 600.0, "benchmark success rate", rates.str() + fmt("%.0f s", dt));
    if (want5)
        report(5, checked > 0 && violations == 0, "planner feasibility margins",
               fmt("%d trajectories, %d violating; v %.2f f [%.2f, %.2f] tilt %.3f w %.2f F [%.3f, %.3f] cpl %.4f",
                   checked, violations, worst.max_speed, worst.min_thrust, worst.max_thrust, worst.max_tilt,
                   worst.max_rate, worst.min_tension, worst.max_tension, worst.max_coupling));
}

void responsiveness()
{
    BenchmarkSpec spec;
    spec.density = Density::Medium;
    const Arena arena = make_arena(spec);
    const auto r = responsiveness_scaling(arena, 6, 2, 8, PipelineConfig{});
    std::ostringstream pts;
    bool all = true;
    for (const auto &p : r.points)
    {
        pts << p.n_robots << ":" << fmt("%.2f", p.solve_time) << " ";
        all &= p.success;
    }
    report(4, r.exponent < 1.5, "responsiveness scaling",
           fmt("exponent %.2f; N:s %s%s", r.exponent, pts.str().c_str(), all ? "" : "(some runs infeasible)"));
}

void band_ablation_check()
{
    std::vector<unsigned> seeds;
    for (unsigned s = 1; s <= 10; ++s)
        seeds.push_back(s);
    const auto runs = band_ablation(WaypointCourse{}, seeds, SystemConfig{}, PlannerConfig{});
    int wins = 0;
    bool in_band = true;
    std::ostringstream costs;
    for (const auto &r : runs)
    {
        wins += r.band_cost <= r.free_cost;
        in_band &= r.band_in_band;
        costs << fmt("%.1f/%.1f ", r.band_cost, r.free_cost);
    }
    report(6, wins >= 8 && in_band, "vectorial constraint ablation",
           fmt("band cost <= free cost on %d/10, all junctions in band: %s; band/free %s", wins,
               in_band ? "yes" : "no", costs.str().c_str()));
}

Scenario circle_scenario(double payload, double accel)
{
    Scenario sc;
    sc.system.payload_mass = payload;
    sc.kind = "circle_entry";
    sc.max_accel = accel;
    return sc;
}

void closed_loop_tracking()
{
    Scenario sc = circle_scenario(0.1, 9.1);
    sc.sim.noise = NoiseConfig::none();
    const auto a = run_scenario(sc);
    sc.sim.noise = NoiseConfig{};
    const auto b = run_scenario(sc);
    const bool ok = !a.metrics.diverged && !b.metrics.diverged && a.metrics.rmse <= 0.065 && b.metrics.rmse <= 0.10 &&
                    a.metrics.wall_time < 60.0 && b.metrics.wall_time < 60.0;
    report(7, ok, "closed-loop tracking",
           fmt("peak accel %.2f; RMSE noiseless %.2f cm, noisy %.2f cm; %.1f s / %.1f s", a.trajectory.max_accel,
               100 * a.metrics.rmse, 100 * b.metrics.rmse, a.metrics.wall_time, b.metrics.wall_time));
}

void force_compensation()
{
    std::string detail;
    bool ok = true;
    for (double accel : {4.9, 9.1})
    {
        Scenario sc = circle_scenario(0.1, accel);
        sc.sim.noise.thrust_bias = 0.05;
        const auto r = force_compensation_ablation(sc.trajectory(), sc.system, sc.sim);
        const double ratio = r.reference.rmse / r.indi.rmse;
        if (accel < 5.0)
            ok &= !r.indi.diverged && (r.reference.diverged || r.indi.rmse < r.reference.rmse);
        else
            ok &= !r.indi.diverged && (r.reference.diverged || ratio > 3.0);
        detail += fmt("%.1f: INDI %.2f cm, reference %s %.2f cm (x%.2f)  ", accel, 100 * r.indi.rmse,
                      r.reference.diverged ? "diverged" : "", 100 * r.reference.rmse, ratio);
    }
    report(8, ok, "force compensation ablation", detail);
}

void mass_estimation()
{
    double clean = 0.0, biased = 0.0;
    for (double m : {0.1, 0.15, 0.2})
        for (bool noisy : {false, true})
        {
            Scenario sc;
            sc.system.payload_mass = m;
            sc.kind = "hover";
            sc.duration = 8.0;
            sc.mass_estimation = true;
            if (noisy)
                sc.sim.noise.thrust_bias = 0.05;
            else
                sc.sim.noise = NoiseConfig::none();
            const auto r = run_scenario(sc);
            const double err = r.mass ? std::abs(r.mass->mass / m - 1.0) : 1.0;
            (noisy ? biased : clean) = std::max(noisy ? biased : clean, err);
        }
    report(9, clean <= 0.01 && biased <= 0.08, "mass estimation",
           fmt("worst error noiseless %.2f%%, +5%% bias with noise %.2f%%", 100 * clean, 100 * biased));
}

void robustness_sweep()
{
    std::vector<double> means;
    bool complete = true;
    for (double e : {0.0, 0.1, 0.2, 0.3})
    {
        double sum = 0.0;
        int n = 0;
        for (double m : {0.1, 0.15, 0.2})
            for (double sign : {-1.0, 1.0})
            {
                if (e == 0.0 && sign > 0.0)
                    continue;
                Scenario sc = circle_scenario(m, 4.9);
                sc.planning_mass = m * (1.0 + sign * e);
                const auto r = run_scenario(sc);
                complete &= !r.metrics.diverged && r.metrics.slack_events == 0;
                sum += r.metrics.rmse;
                ++n;
            }
        means.push_back(sum / n);
    }
    bool monotone = true;
    for (size_t i = 1; i < means.size(); ++i)
        monotone &= means[i] >= means[i - 1];
    report(10, complete && monotone, "payload uncertainty sweep",
           fmt("mean RMSE cm at 0/10/20/30%%: %.3f %.3f %.3f %.3f; all complete: %s", 100 * means[0], 100 * means[1],
               100 * means[2], 100 * means[3], complete ? "yes" : "no"));
}

void esdf_oracle()
{
    std::mt19937 rng(11);
    std::uniform_int_distribution<int> Dim(1, 20);
    std::uniform_real_distribution<double> Dens(0.0, 0.3);
    int grids = 0, mismatched = 0;
    auto check = [&](const Eigen::Vector3i &d, double dens)
    {
        const auto g = oracle::random_grid(rng, d, dens);
        ++grids;
        mismatched += EsdfGrid::build(g).values != oracle::brute_force_esdf(g);
    };
    for (int t = 0; t < 40; ++t)
        check(Eigen::Vector3i(Dim(rng), Dim(rng), Dim(rng)), Dens(rng));
    check(Eigen::Vector3i(32, 32, 32), 0.05);
    check(Eigen::Vector3i(32, 32, 32), 0.0005);
    int points = 0;
    const auto e = EsdfGrid::build(oracle::random_grid(rng, Eigen::Vector3i(16, 16, 16), 0.05));
    const double grad = oracle::esdf_gradient_error(e, rng, 2000, &points);
    report(11, mismatched == 0 && grad <= 1e-8 && points > 1000, "ESDF oracle",
           fmt("%d grids up to 32^3, %d mismatched; gradient vs FD %.2e over %d points", grids, mismatched, grad,
               points));
}

} // namespace

int main(int argc, char **argv)
{
    std::set<int> only;
    for (int i = 1; i < argc; ++i)
    {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc)
        {
            std::istringstream in(argv[++i]);
            for (std::string tok; std::getline(in, tok, ',');)
                only.insert(std::stoi(tok));
        }
        else
        {
            std::fprintf(stderr, "usage: %s [--only 1,2,...]\n", argv[0]);
            return 2;
        }
    }
    auto want = [&](int k) { return only.empty() || only.count(k); };
    if (want(1))
        gradient_fidelity();
    if (want(2))
        trajectory_exactness();
    if (want(3) || want(5))
        benchmark_and_margins(want(3), want(5));
    if (want(4))
        responsiveness();
    if (want(6))
        band_ablation_check();
    if (want(7))
        closed_loop_tracking();
    if (want(8))
        force_compensation();
    if (want(9))
        mass_estimation();
    if (want(10))
        robustness_sweep();
    if (want(11))
        esdf_oracle();
    return failures == 0 ? 0 : 1;
}
