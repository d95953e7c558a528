#pragma once

#include "marts/control.hpp"
#include "marts/esdf.hpp"
#include "marts/model.hpp"

#include <chrono>
#include <random>

namespace marts
{

// Four rotors in an X layout with first-order speed lag.
struct MotorModel
{
    double k_f = 0.0;          // N / RPM^2
    double yaw_ratio = 0.01;   // yaw torque per newton of rotor thrust, m
    double lag = 0.02;         // s
    double rpm_max = 24000.0;
    double arm = 0.07;         // m
    double calibration_rpm = 13600.0;

    // k_f such that the bare robot hovers at calibration_rpm.
    static MotorModel calibrated(const SystemConfig &sys, double hover_rpm = 13600.0)
    {
        MotorModel m;
        m.calibration_rpm = hover_rpm;
        m.k_f = sys.robot_mass * sys.gravity / (4.0 * hover_rpm * hover_rpm);
        return m;
    }

    void validate() const
    {
        if (!(k_f > 0.0) || !(lag > 0.0) || !(rpm_max > 0.0) || !(arm > 0.0))
            throw InputError("motor: k_f, lag, rpm_max, arm must be positive");
    }

    // Rows: total thrust, roll, pitch, yaw torque.
    Eigen::Matrix4d allocation() const
    {
        Eigen::Matrix4d A;
        const double d = arm / M_SQRT2;
        const double x[4] = {d, -d, -d, d}, y[4] = {d, d, -d, -d}, s[4] = {1, -1, 1, -1};
        for (int i = 0; i < 4; ++i)
        {
            A(0, i) = 1.0;
            A(1, i) = y[i];
            A(2, i) = -x[i];
            A(3, i) = s[i] * yaw_ratio;
        }
        return A;
    }

    double rotor_thrust(double rpm) const { return k_f * rpm * rpm; }
};

struct NoiseConfig
{
    double position = 0.002;
    double velocity = 0.02;
    double omega = 0.01;
    double accel = 0.0;
    double attitude = 0.0;   // rad, small random rotation
    double thrust_bias = 0.0; // slope error of the fixed thrust coefficient above calibration

    static NoiseConfig none()
    {
        NoiseConfig n;
        n.position = n.velocity = n.omega = n.accel = n.attitude = n.thrust_bias = 0.0;
        return n;
    }
};

struct RobotActuator
{
    Eigen::Vector4d rpm = Eigen::Vector4d::Zero();
};

namespace detail
{

// True rotor thrust: the estimator's fixed coefficient is exact at the
// calibration speed and misses the slope by `bias` away from it.
inline double true_rotor_thrust(const MotorModel &m, double rpm, double bias)
{
    const double rc2 = m.calibration_rpm * m.calibration_rpm;
    return std::max(0.0, m.k_f * rc2 + (1.0 + bias) * m.k_f * (rpm * rpm - rc2));
}

} // namespace detail

// Rotor speed commands realising a mass-normalized thrust and body torque.
inline Eigen::Vector4d mix(const MotorModel &m, const Eigen::Matrix4d &A_inv, double thrust, const Vec3 &torque,
                           double robot_mass)
{
    Eigen::Vector4d w(robot_mass * thrust, torque.x(), torque.y(), torque.z());
    Eigen::Vector4d T = A_inv * w;
    const double tmax = m.rotor_thrust(m.rpm_max);
    Eigen::Vector4d rpm;
    for (int i = 0; i < 4; ++i)
        rpm(i) = std::sqrt(std::clamp(T(i), 0.0, tmax) / m.k_f);
    return rpm;
}

// What robot n's sensors report. Thrust and torque come from rotor speeds
// through the fixed nominal coefficient, so a thrust bias shows up here.
inline RobotMeasurement synthesize_measurement(const RobotState &rs, const Vec3 &accel, const Eigen::Vector4d &rpm,
                                               double time, const MotorModel &motor, const Eigen::Matrix4d &A,
                                               double robot_mass, const NoiseConfig &noise, std::mt19937 &rng)
{
    std::normal_distribution<double> G(0.0, 1.0);
    auto noise3 = [&](double s) { return s > 0.0 ? Vec3(s * G(rng), s * G(rng), s * G(rng)) : Vec3::Zero(); };
    RobotMeasurement m;
    m.time = time;
    m.p = rs.p + noise3(noise.position);
    m.v = rs.v + noise3(noise.velocity);
    m.omega = rs.omega + noise3(noise.omega);
    m.a = accel + noise3(noise.accel);
    m.q = rs.q;
    if (noise.attitude > 0.0)
    {
        const Vec3 e = noise3(noise.attitude);
        if (e.norm() > 0.0)
            m.q = (rs.q * Quat(Eigen::AngleAxisd(e.norm(), e.normalized()))).normalized();
    }
    Eigen::Vector4d T;
    for (int i = 0; i < 4; ++i)
        T(i) = motor.rotor_thrust(rpm(i));
    const Eigen::Vector4d wr = A * T;
    m.thrust_vec = wr(0) / robot_mass * (m.q * kE3);
    m.torque = wr.tail<3>();
    return m;
}

struct RunMetrics
{
    double rmse = 0.0, maxe = 0.0;
    double min_clearance = std::numeric_limits<double>::infinity();
    double min_robot_distance = std::numeric_limits<double>::infinity();
    double max_speed = 0.0, max_thrust = 0.0, max_tilt = 0.0, max_rate = 0.0;
    double max_rpm = 0.0;            // largest per-robot average rotor speed
    double max_length_residual = 0.0;
    double max_attitude_error = 0.0; // rad
    int slack_events = 0;
    int steps = 0;
    bool diverged = false;
    std::string diagnostic;
    double wall_time = 0.0;

    bool completed() const { return !diverged; }

    nlohmann::json to_json() const
    {
        auto fin = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
        return {{"rmse", rmse},
                {"maxe", maxe},
                {"min_clearance", fin(min_clearance)},
                {"min_robot_distance", fin(min_robot_distance)},
                {"max_speed", max_speed},
                {"max_thrust", max_thrust},
                {"max_tilt", max_tilt},
                {"max_rate", max_rate},
                {"max_rpm", max_rpm},
                {"max_length_residual", max_length_residual},
                {"max_attitude_error", max_attitude_error},
                {"slack_events", slack_events},
                {"steps", steps},
                {"diverged", diverged},
                {"diagnostic", diagnostic},
                {"wall_time", wall_time}};
    }
};

struct SimConfig
{
    double dt = 0.001;
    int substeps = 3;     // simulation steps per control step
    double tail = 1.0;    // hover time after the trajectory ends
    ControllerConfig controller;
    NoiseConfig noise;
    std::optional<MotorModel> motor; // calibrated from the system when empty
    WorldOptions world;
    unsigned seed = 1;
    double settle = 2.0;  // s before mass-estimate samples are kept
    bool record_tension = false;
    std::ostream *trace = nullptr;

    void validate() const
    {
        if (!(dt > 0.0 && dt <= 0.01) || substeps < 1)
            throw InputError("sim: dt in (0, 0.01] and substeps >= 1 required");
        if (!(tail >= 0.0))
            throw InputError("sim: tail must be >= 0");
        if (std::abs(controller.period() - dt * substeps) > 1e-9)
            throw InputError("sim: controller rate must equal 1 / (dt * substeps)");
        controller.validate();
    }
};

struct RunResult
{
    RunMetrics metrics;
    std::vector<std::vector<Vec3>> tension_history; // per robot, F rho estimates after settling
    WorldState final_state;
};

// Taut hover of the whole system at the trajectory's first sample.
inline WorldState initial_world(const Trajectory &tr, const SystemConfig &sys)
{
    FlatSample s = tr.sample(0.0, 4);
    WorldState w;
    w.payload.p = s.p(0);
    w.payload.v = s.p(1);
    for (int n = 0; n < sys.n_robots; ++n)
    {
        RobotFlatState r = robot_flat_state(s, n, sys);
        RobotState rs;
        rs.p = r.p;
        rs.v = r.v;
        rs.q = r.q;
        rs.omega = r.omega;
        w.robots.push_back(rs);
        w.tension.push_back(s.force(n, 0));
        w.slack.push_back(false);
    }
    return w;
}

// Closed-loop run. `truth` describes the physical system (true payload mass),
// the trajectory may have been planned for a different one.
inline RunResult simulate(const Trajectory &tr, const SystemConfig &truth, const SimConfig &cfg,
                          const DistanceField *field = nullptr)
{
    cfg.validate();
    truth.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const int N = truth.n_robots;
    const MotorModel motor = cfg.motor ? *cfg.motor : MotorModel::calibrated(truth);
    motor.validate();
    const Eigen::Matrix4d A = motor.allocation(), A_inv = A.inverse();
    std::mt19937 rng(cfg.seed);

    RunResult res;
    RunMetrics &M = res.metrics;
    WorldState w = initial_world(tr, truth);
    std::vector<RobotController> ctrl;
    std::vector<RobotActuator> act(N);
    std::vector<ControlInput> in(N);
    std::vector<Vec3> accel(N, Vec3::Zero());
    std::vector<Eigen::Vector4d> rpm_cmd(N, Eigen::Vector4d::Zero());
    for (int n = 0; n < N; ++n)
    {
        ctrl.emplace_back(n, truth, cfg.controller);
        // rotor speeds that hold the initial state, attachment torque included
        RobotFlatState r = robot_flat_state(tr.sample(0.0, 4), n, truth);
        const Vec3 rho = (w.robots[n].p - w.payload.p).normalized();
        const Vec3 trim = -cfg.world.attach_offset.cross(w.robots[n].q.conjugate() * (-w.tension[n] * rho));
        act[n].rpm = mix(motor, A_inv, r.f.norm(), trim, truth.robot_mass);
    }
    res.tension_history.assign(N, {});
    const double T_end = tr.duration() + cfg.tail;
    const double dtc = cfg.controller.period();
    const int control_steps = static_cast<int>(std::ceil(T_end / dtc - 1e-9));
    double se = 0.0;
    int se_n = 0;

    if (cfg.trace)
    {
        *cfg.trace << "t,px,py,pz,px_ref,py_ref,pz_ref,err";
        for (int n = 1; n <= N; ++n)
            *cfg.trace << ",r" << n << "x,r" << n << "y,r" << n << "z,f" << n << ",Fhat" << n << ",tilt" << n;
        *cfg.trace << "\n";
    }

    auto actual_wrench = [&](int n, double &thrust, Vec3 &torque)
    {
        Eigen::Vector4d T;
        for (int i = 0; i < 4; ++i)
            T(i) = detail::true_rotor_thrust(motor, act[n].rpm(i), cfg.noise.thrust_bias);
        Eigen::Vector4d wr = A * T;
        thrust = wr(0) / truth.robot_mass;
        torque = wr.tail<3>();
    };

    try
    {
        for (int k = 0; k < control_steps; ++k)
        {
            const double t = w.time;
            // tracking error against the planned payload path
            const Vec3 p_ref = tr.eval(std::min(t, tr.duration()), 0).head<3>();
            const double err = (w.payload.p - p_ref).norm();
            if (t <= tr.duration() + 1e-12)
            {
                se += err * err;
                ++se_n;
                M.maxe = std::max(M.maxe, err);
            }
            std::vector<double> fcmd(N);
            for (int n = 0; n < N; ++n)
            {
                const RobotMeasurement m =
                    synthesize_measurement(w.robots[n], accel[n], act[n].rpm, t, motor, A, truth.robot_mass, cfg.noise, rng);
                ControlOutput out = ctrl[n].update(m, tr);
                fcmd[n] = out.thrust;
                M.max_attitude_error = std::max(M.max_attitude_error, out.theta_e.norm());
                if (cfg.record_tension && t >= cfg.settle)
                    res.tension_history[n].push_back(out.tension.cable_vector());
                rpm_cmd[n] = mix(motor, A_inv, out.thrust, out.torque, truth.robot_mass);
            }
            if (cfg.trace)
            {
                *cfg.trace << t << ',' << w.payload.p.x() << ',' << w.payload.p.y() << ',' << w.payload.p.z() << ','
                           << p_ref.x() << ',' << p_ref.y() << ',' << p_ref.z() << ',' << err;
                for (int n = 0; n < N; ++n)
                    *cfg.trace << ',' << w.robots[n].p.x() << ',' << w.robots[n].p.y() << ','
                               << w.robots[n].p.z() << ',' << fcmd[n] << ',' << ctrl[n].tension().magnitude << ','
                               << tilt_angle(w.robots[n].q);
                *cfg.trace << "\n";
            }
            for (int sstep = 0; sstep < cfg.substeps; ++sstep)
            {
                const double decay = 1.0 - std::exp(-cfg.dt / motor.lag);
                for (int n = 0; n < N; ++n)
                {
                    act[n].rpm += decay * (rpm_cmd[n] - act[n].rpm);
                    actual_wrench(n, in[n].thrust, in[n].torque);
                }
                w = step_world(w, in, cfg.dt, truth, cfg.world);
                ++M.steps;
                bool slack = false;
                for (int n = 0; n < N; ++n)
                {
                    slack = slack || w.slack[n];
                    const auto &rs = w.robots[n];
                    const Vec3 d = rs.p - w.payload.p;
                    const Vec3 rho = d.normalized();
                    accel[n] = -truth.gravity * kE3 + in[n].thrust * (rs.q * kE3) - w.tension[n] * rho / truth.robot_mass;
                    if (!cfg.world.external_force.empty())
                        accel[n] += cfg.world.external_force[n] / truth.robot_mass;
                    M.max_length_residual = std::max(M.max_length_residual, std::abs(d.norm() - truth.cable_length));
                    M.max_speed = std::max(M.max_speed, rs.v.norm());
                    M.max_thrust = std::max(M.max_thrust, in[n].thrust);
                    M.max_tilt = std::max(M.max_tilt, tilt_angle(rs.q));
                    M.max_rate = std::max(M.max_rate, rs.omega.norm());
                    M.max_rpm = std::max(M.max_rpm, act[n].rpm.mean());
                    for (int j = n + 1; j < N; ++j)
                        M.min_robot_distance = std::min(M.min_robot_distance, (rs.p - w.robots[j].p).norm());
                    if (!rs.p.allFinite() || rs.p.cwiseAbs().maxCoeff() > 1e6 || rs.v.cwiseAbs().maxCoeff() > 1e6)
                        throw Divergence("robot state diverged");
                    if (field)
                        M.min_clearance = std::min(M.min_clearance, field->distance(rs.p, nullptr));
                }
                if (field)
                    M.min_clearance = std::min(M.min_clearance, field->distance(w.payload.p, nullptr));
                if (!w.payload.p.allFinite() || w.payload.p.cwiseAbs().maxCoeff() > 1e6)
                    throw Divergence("payload state diverged");
                M.slack_events += slack;
            }
        }
    }
    catch (const Divergence &e)
    {
        M.diverged = true;
        M.diagnostic = e.what();
    }
    catch (const DegenerateThrust &e)
    {
        M.diverged = true;
        M.diagnostic = e.what();
    }
    catch (const HopfSingularity &e)
    {
        M.diverged = true;
        M.diagnostic = e.what();
    }
    M.rmse = se_n > 0 ? std::sqrt(se / se_n) : 0.0;
    if (M.diverged)
        M.rmse = M.maxe = std::numeric_limits<double>::infinity();
    res.final_state = w;
    M.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

} // namespace marts
