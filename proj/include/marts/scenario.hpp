#pragma once

#include "marts/sim.hpp"

#include <fstream>

namespace marts
{

inline Trajectory hover_trajectory(const SystemConfig &sys, const Vec3 &p, double theta, double duration)
{
    if (!(duration > 0.0))
        throw InputError("hover: duration must be positive");
    MatX h = hover_flat_output(sys, p, theta);
    VecX T(1);
    T(0) = duration;
    return Trajectory::build(h, h, MatX(0, h.cols()), T);
}

// Cable channels that carry payload acceleration a exactly: each cable takes
// a 1/N share plus a fixed outward spread that sets the hover elevation.
inline void cable_channels(const Vec3 &a, const SystemConfig &sys, double theta0, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row)
{
    const int N = sys.n_robots;
    const Vec3 share = sys.payload_mass * (a + sys.gravity * kE3) / N;
    // radial spread grows with lateral load so no cable turns vertical
    const double lateral = std::sqrt(a.head<2>().squaredNorm() + 1.0);
    const double spread = sys.payload_mass * (sys.gravity / std::tan(theta0) + lateral - 1.0) / N;
    for (int n = 0; n < N; ++n)
    {
        const double c = 2.0 * M_PI * n / N;
        const Vec3 v = share + spread * Vec3(std::cos(c), std::sin(c), 0.0);
        const double F = v.norm();
        row(FlatSample::theta_col(n)) = std::asin(std::clamp(v.z() / F, -1.0, 1.0));
        row(FlatSample::phi_col(n)) = c + std::remainder(std::atan2(v.y(), v.x()) - c, 2.0 * M_PI);
        row(FlatSample::force_col(n)) = F;
        row(FlatSample::psi_col(n)) = 0.0;
    }
}

// Straight run-up, smooth curvature ramp into a horizontal circle, `turns`
// laps, ramp out, straight run-out to rest. Speed and curvature ramps use the
// C2 smoothstep 6u^5 - 15u^4 + 10u^3.
struct CircleEntrySpec
{
    double radius = 2.3;
    double lead = 6.0;       // straight length of each speed ramp
    double transition = 6.0; // curvature ramp length
    double turns = 1.0;
    double altitude = 1.0;
    double piece = 0.1;      // s per trajectory piece
    double theta0 = 0.85;    // hover cable elevation
    double speed = 3.0;      // cruise speed; see fit_circle_entry
    double hover = 0.5;      // rest at both ends

    void validate() const
    {
        if (!(radius > 0.0) || !(lead > 0.0) || !(transition > 0.0) || !(turns > 0.0) || !(piece > 0.0) ||
            !(speed > 0.0) || !(theta0 > 0.0 && theta0 < M_PI_2) || !(hover >= 0.0))
            throw InputError("circle_entry: invalid parameters");
        if (2.0 * M_PI * radius * turns < transition)
            throw InputError("circle_entry: circle too short for the curvature ramps");
    }
};

struct PrimitiveInfo
{
    double max_speed = 0.0;
    double max_accel = 0.0;
    double max_coupling = 0.0;
    double min_tension = 1e9;
};

namespace detail
{

inline double smoothstep(double u) { return u * u * u * (10.0 + u * (-15.0 + 6.0 * u)); }
inline double smoothstep_d(double u) { return 30.0 * u * u * (1.0 - u) * (1.0 - u); }
inline double smoothstep_i(double u) { return u * u * u * u * (2.5 + u * (-3.0 + u)); } // integral from 0

class CircleEntryPath
{
  public:
    explicit CircleEntryPath(const CircleEntrySpec &c) : c_(c)
    {
        c.validate();
        ta_ = 2.0 * c.lead / c.speed;
        arc_ = 2.0 * M_PI * c.radius * c.turns - c.transition;
        cruise_ = (2.0 * c.transition + arc_) / c.speed;
        length_ = 2.0 * c.lead + 2.0 * c.transition + arc_;
        const int n = static_cast<int>(std::ceil(length_ / kDs)) + 1;
        xy_.resize(n + 1);
        xy_[0] = Eigen::Vector2d(-c.lead, -c.radius);
        for (int i = 0; i < n; ++i)
        {
            const double a = heading(i * kDs), b = heading((i + 1) * kDs);
            xy_[i + 1] = xy_[i] + 0.5 * kDs * Eigen::Vector2d(std::cos(a) + std::cos(b), std::sin(a) + std::sin(b));
        }
    }

    double duration() const { return 2.0 * c_.hover + 2.0 * ta_ + cruise_; }

    struct Kinematics
    {
        double s, v, vdot;
    };

    Kinematics along(double t) const
    {
        const double V = c_.speed;
        t = std::clamp(t, 0.0, duration());
        double tt = t - c_.hover;
        if (tt <= 0.0)
            return {0.0, 0.0, 0.0};
        if (tt < ta_)
        {
            const double u = tt / ta_;
            return {V * ta_ * smoothstep_i(u), V * smoothstep(u), V * smoothstep_d(u) / ta_};
        }
        tt -= ta_;
        const double s1 = c_.lead;
        if (tt < cruise_)
            return {s1 + V * tt, V, 0.0};
        tt -= cruise_;
        const double s2 = s1 + V * cruise_;
        if (tt < ta_)
        {
            const double u = tt / ta_;
            return {s2 + V * tt - V * ta_ * smoothstep_i(u), V * (1.0 - smoothstep(u)), -V * smoothstep_d(u) / ta_};
        }
        return {length_, 0.0, 0.0};
    }

    double curvature(double s) const
    {
        const double L = c_.lead, st = c_.transition, R = c_.radius;
        if (s <= L || s >= L + 2.0 * st + arc_)
            return 0.0;
        if (s < L + st)
            return smoothstep((s - L) / st) / R;
        if (s <= L + st + arc_)
            return 1.0 / R;
        return (1.0 - smoothstep((s - L - st - arc_) / st)) / R;
    }

    double heading(double s) const
    {
        const double L = c_.lead, st = c_.transition, R = c_.radius;
        if (s <= L)
            return 0.0;
        if (s < L + st)
            return st / R * smoothstep_i((s - L) / st);
        if (s <= L + st + arc_)
            return 0.5 * st / R + (s - L - st) / R;
        if (s < L + 2.0 * st + arc_)
        {
            const double u = (s - L - st - arc_) / st;
            return 0.5 * st / R + arc_ / R + st / R * (u - smoothstep_i(u));
        }
        return 2.0 * M_PI * c_.turns;
    }

    Vec3 position(double t) const
    {
        const double s = std::clamp(along(t).s, 0.0, length_);
        const double f = s / kDs;
        const int i = std::min(static_cast<int>(f), static_cast<int>(xy_.size()) - 2);
        const Eigen::Vector2d p = xy_[i] + (f - i) * (xy_[i + 1] - xy_[i]);
        return Vec3(p.x(), p.y(), c_.altitude);
    }

    Vec3 acceleration(double t) const
    {
        const auto k = along(t);
        const double psi = heading(k.s), kap = curvature(k.s);
        const Vec3 T(std::cos(psi), std::sin(psi), 0.0), N(-std::sin(psi), std::cos(psi), 0.0);
        return k.vdot * T + k.v * k.v * kap * N;
    }

  private:
    static constexpr double kDs = 1e-3;
    CircleEntrySpec c_;
    double ta_ = 0.0, arc_ = 0.0, cruise_ = 0.0, length_ = 0.0;
    std::vector<Eigen::Vector2d> xy_;
};

} // namespace detail

inline PrimitiveInfo inspect_primitive(const Trajectory &tr, const SystemConfig &sys, double dt = 0.005)
{
    PrimitiveInfo info;
    for (double t = 0.0; t <= tr.duration(); t += dt)
    {
        FlatSample s = tr.sample(t, 4);
        info.max_speed = std::max(info.max_speed, s.p(1).norm());
        info.max_accel = std::max(info.max_accel, s.p(2).norm());
        Vec3 r = s.p(2) + sys.gravity * kE3;
        for (int n = 0; n < sys.n_robots; ++n)
        {
            r -= s.force(n, 0) * rho_from_angles(s.theta(n, 0), s.phi(n, 0)) / sys.payload_mass;
            info.min_tension = std::min(info.min_tension, s.force(n, 0));
        }
        info.max_coupling = std::max(info.max_coupling, r.norm());
    }
    return info;
}

// Junction values sampled from the analytic path; cable channels at each
// junction carry the path's exact acceleration.
inline Trajectory circle_entry_trajectory(const CircleEntrySpec &c, const SystemConfig &plan_sys)
{
    const detail::CircleEntryPath path(c);
    const double total = path.duration();
    const int M = std::max(2, static_cast<int>(std::round(total / c.piece)));
    const int D = FlatSample::dim(plan_sys.n_robots);
    VecX T = VecX::Constant(M, total / M);
    MatX head = hover_flat_output(plan_sys, path.position(0.0), c.theta0);
    MatX tail = hover_flat_output(plan_sys, path.position(total), c.theta0);
    MatX w = MatX::Zero(M - 1, D);
    for (int j = 0; j < M - 1; ++j)
    {
        const double t = (j + 1) * total / M;
        w.row(j).head<3>() = path.position(t).transpose();
        cable_channels(path.acceleration(t), plan_sys, c.theta0, w.row(j));
    }
    return Trajectory::build(head, tail, w, T);
}

// Peak payload acceleration of the analytic path.
inline double circle_entry_peak_accel(const CircleEntrySpec &c)
{
    const detail::CircleEntryPath path(c);
    double a = 0.0;
    for (double t = 0.0; t <= path.duration(); t += 0.002)
        a = std::max(a, path.acceleration(t).norm());
    return a;
}

// Cruise speed giving the requested peak payload acceleration.
inline CircleEntrySpec fit_circle_entry(CircleEntrySpec c, double max_accel)
{
    if (!(max_accel > 0.0))
        throw InputError("circle_entry: max_accel must be positive");
    double lo = 0.1, hi = 30.0;
    for (int it = 0; it < 50; ++it)
    {
        c.speed = 0.5 * (lo + hi);
        (circle_entry_peak_accel(c) < max_accel ? lo : hi) = c.speed;
    }
    c.speed = 0.5 * (lo + hi);
    return c;
}

struct Scenario
{
    SystemConfig system;            // physical system
    double planning_mass = -1.0;    // payload mass assumed by the trajectory; < 0: true mass
    std::string kind = "hover";     // hover | circle_entry | file
    Vec3 position{0.0, 0.0, 1.0};
    double duration = 5.0;
    double theta0 = 0.85;
    CircleEntrySpec circle;
    double max_accel = -1.0;        // circle_entry: fit speed to this peak acceleration
    std::string trajectory_file;
    SimConfig sim;
    bool mass_estimation = false;

    Scenario() { sim.world.attach_offset = Vec3(0.0, 0.0, -0.01); }

    SystemConfig planning_system() const
    {
        SystemConfig s = system;
        if (planning_mass > 0.0)
            s.payload_mass = planning_mass;
        return s;
    }

    static Scenario from_json(const nlohmann::json &j)
    {
        Scenario sc;
        auto vec3 = [](const nlohmann::json &a)
        {
            if (!a.is_array() || a.size() != 3)
                throw InputError("scenario: expected a 3-vector");
            return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
        };
        try
        {
            if (j.contains("system"))
            {
                const auto &s = j["system"];
                sc.system.n_robots = s.value("n_robots", sc.system.n_robots);
                sc.system.robot_mass = s.value("robot_mass", sc.system.robot_mass);
                sc.system.cable_length = s.value("cable_length", sc.system.cable_length);
                sc.system.gravity = s.value("gravity", sc.system.gravity);
            }
            if (j.contains("payload"))
            {
                const auto &p = j["payload"];
                sc.system.payload_mass = p.value("mass", sc.system.payload_mass);
                sc.planning_mass = p.value("planning_mass", -1.0);
                if (p.contains("attach_offset"))
                    sc.sim.world.attach_offset = p["attach_offset"].is_number()
                                                     ? Vec3(0.0, 0.0, -p["attach_offset"].get<double>())
                                                     : vec3(p["attach_offset"]);
            }
            if (j.contains("trajectory"))
            {
                const auto &t = j["trajectory"];
                sc.kind = t.value("type", sc.kind);
                if (t.contains("position"))
                    sc.position = vec3(t["position"]);
                sc.duration = t.value("duration", sc.duration);
                sc.theta0 = t.value("theta0", sc.theta0);
                sc.circle.radius = t.value("radius", sc.circle.radius);
                sc.circle.lead = t.value("lead", sc.circle.lead);
                sc.circle.turns = t.value("turns", sc.circle.turns);
                sc.circle.altitude = t.value("altitude", sc.circle.altitude);
                sc.circle.speed = t.value("speed", sc.circle.speed);
                sc.circle.transition = t.value("transition", sc.circle.transition);
                sc.circle.piece = t.value("piece", sc.circle.piece);
                sc.circle.theta0 = sc.theta0;
                sc.max_accel = t.value("max_accel", sc.max_accel);
                sc.trajectory_file = t.value("path", std::string());
                if (sc.kind != "hover" && sc.kind != "circle_entry" && sc.kind != "file")
                    throw InputError("scenario: unknown trajectory type '" + sc.kind + "'");
            }
            if (j.contains("controller"))
            {
                const auto &c = j["controller"];
                auto &cc = sc.sim.controller;
                for (auto [key, v] : {std::pair{"Kp", &cc.Kp}, {"Kv", &cc.Kv}, {"K_theta", &cc.K_theta},
                                      {"K_omega", &cc.K_omega}, {"K_I", &cc.K_I}})
                    if (c.contains(key))
                        *v = vec3(c[key]);
                cc.cutoff = c.value("cutoff", cc.cutoff);
                cc.window = c.value("window", cc.window);
                cc.reference_force = c.value("reference_force", cc.reference_force);
            }
            if (j.contains("noise"))
            {
                const auto &n = j["noise"];
                auto &nc = sc.sim.noise;
                nc.position = n.value("position", nc.position);
                nc.velocity = n.value("velocity", nc.velocity);
                nc.omega = n.value("omega", nc.omega);
                nc.accel = n.value("accel", nc.accel);
                nc.attitude = n.value("attitude", nc.attitude);
                nc.thrust_bias = n.value("thrust_bias", nc.thrust_bias);
            }
            if (j.contains("sim"))
            {
                const auto &s = j["sim"];
                sc.sim.tail = s.value("tail", sc.sim.tail);
                sc.sim.settle = s.value("settle", sc.sim.settle);
                sc.mass_estimation = s.value("mass_estimation", sc.mass_estimation);
            }
            sc.sim.seed = j.value("seed", sc.sim.seed);
        }
        catch (const nlohmann::json::exception &e)
        {
            throw InputError(std::string("scenario: ") + e.what());
        }
        sc.system.validate();
        sc.sim.validate();
        return sc;
    }

    static Scenario load(const std::string &path)
    {
        std::ifstream f(path);
        if (!f)
            throw InputError("cannot open scenario file " + path);
        nlohmann::json j;
        try
        {
            f >> j;
        }
        catch (const nlohmann::json::exception &e)
        {
            throw InputError("scenario " + path + ": " + e.what());
        }
        return from_json(j);
    }

    Trajectory trajectory(PrimitiveInfo *info = nullptr) const
    {
        const SystemConfig ps = planning_system();
        Trajectory tr;
        if (kind == "hover")
            tr = hover_trajectory(ps, position, theta0, duration);
        else if (kind == "circle_entry")
        {
            CircleEntrySpec c = circle;
            if (max_accel > 0.0)
                c = fit_circle_entry(c, max_accel);
            tr = circle_entry_trajectory(c, ps);
        }
        else
        {
            std::ifstream f(trajectory_file);
            if (!f)
                throw InputError("cannot open trajectory file " + trajectory_file);
            try
            {
                tr = Trajectory::from_json(nlohmann::json::parse(f));
            }
            catch (const nlohmann::json::exception &e)
            {
                throw InputError("trajectory file " + trajectory_file + ": " + e.what());
            }
        }
        if (info)
            *info = inspect_primitive(tr, ps);
        return tr;
    }
};

struct ScenarioResult
{
    RunMetrics metrics;
    PrimitiveInfo trajectory;
    std::optional<MassEstimate> mass;

    nlohmann::json to_json() const
    {
        nlohmann::json j = metrics.to_json();
        j["trajectory"] = {{"max_speed", trajectory.max_speed},
                           {"max_accel", trajectory.max_accel},
                           {"max_coupling", trajectory.max_coupling},
                           {"min_tension", trajectory.min_tension}};
        if (mass)
            j["mass_estimate"] = {{"mass", mass->mass},
                                  {"relative_std", mass->relative_std},
                                  {"excessive_variance", mass->excessive_variance}};
        return j;
    }
};

inline ScenarioResult run_scenario(const Scenario &sc, std::ostream *trace = nullptr)
{
    ScenarioResult r;
    Trajectory tr = sc.trajectory(&r.trajectory);
    SimConfig cfg = sc.sim;
    cfg.trace = trace;
    cfg.record_tension = sc.mass_estimation;
    RunResult rr = simulate(tr, sc.system, cfg);
    r.metrics = rr.metrics;
    if (sc.mass_estimation && !rr.metrics.diverged)
        r.mass = estimate_payload_mass(rr.tension_history, cfg.controller.window, sc.system.gravity);
    return r;
}

struct AblationResult
{
    RunMetrics indi, reference;
};

// Same trajectory, same noise stream, two outer-loop force models.
inline AblationResult force_compensation_ablation(const Trajectory &tr, const SystemConfig &truth,
                                                  const SimConfig &cfg, bool same_law = false)
{
    AblationResult r;
    SimConfig a = cfg, b = cfg;
    a.controller.reference_force = false;
    b.controller.reference_force = !same_law;
    r.indi = simulate(tr, truth, a).metrics;
    r.reference = simulate(tr, truth, b).metrics;
    return r;
}

} // namespace marts
