#pragma once

#include "marts/flatness.hpp"
#include "marts/minco.hpp"

#include <optional>

namespace marts
{

struct ControllerConfig
{
    Vec3 Kp{12.0, 12.0, 3.0};
    Vec3 Kv{4.0, 4.0, 2.0};
    Vec3 K_theta{70.0, 100.0, 19.0};
    Vec3 K_omega{10.0, 12.0, 3.0};
    Vec3 K_I{0.0, 0.0, 0.3};
    double cutoff = 20.0;     // Hz, shared by every filtered signal
    int window = 1000;        // mass-estimation samples per robot
    double rate = 1000.0 / 3.0; // Hz
    double integrator_limit = 1.0; // rad/s^2 on K_I * integral
    bool reference_force = false;  // feed planned cable forces instead of INDI increments

    double period() const { return 1.0 / rate; }

    void validate() const
    {
        for (const Vec3 *k : {&Kp, &Kv, &K_theta, &K_omega, &K_I})
            if ((k->array() < 0.0).any() || !k->allFinite())
                throw InputError("controller gains must be finite and nonnegative");
        if (!(cutoff > 0.0) || !(rate > 2.0 * cutoff))
            throw InputError("controller: need 0 < cutoff < rate / 2");
        if (window < 1)
            throw InputError("controller: window must be >= 1");
        if (!(integrator_limit >= 0.0))
            throw InputError("controller: integrator_limit must be >= 0");
    }
};

// Second-order Butterworth low-pass, bilinear transform with prewarping.
template <int Dim>
class LowPassFilter
{
  public:
    using Vec = Eigen::Matrix<double, Dim, 1>;

    LowPassFilter() = default;

    LowPassFilter(double cutoff, double rate) : cutoff_(cutoff)
    {
        if (!(cutoff > 0.0) || !(rate > 2.0 * cutoff))
            throw InputError("low-pass: need 0 < cutoff < rate / 2");
        const double K = std::tan(M_PI * cutoff / rate);
        const double n = 1.0 / (1.0 + M_SQRT2 * K + K * K);
        b0_ = K * K * n;
        b1_ = 2.0 * b0_;
        b2_ = b0_;
        a1_ = 2.0 * (K * K - 1.0) * n;
        a2_ = (1.0 - M_SQRT2 * K + K * K) * n;
    }

    double cutoff() const { return cutoff_; }
    bool primed() const { return primed_; }

    // Steady state at x (startup bypass).
    void reset(const Vec &x)
    {
        x1_ = x2_ = y1_ = y2_ = x;
        primed_ = true;
    }

    Vec step(const Vec &x)
    {
        if (!primed_)
            reset(x);
        Vec y = b0_ * x + b1_ * x1_ + b2_ * x2_ - a1_ * y1_ - a2_ * y2_;
        x2_ = x1_;
        x1_ = x;
        y2_ = y1_;
        y1_ = y;
        return y;
    }

    const Vec &value() const { return y1_; }

  private:
    double cutoff_ = 0.0;
    double b0_ = 1.0, b1_ = 0.0, b2_ = 0.0, a1_ = 0.0, a2_ = 0.0;
    Vec x1_ = Vec::Zero(), x2_ = Vec::Zero(), y1_ = Vec::Zero(), y2_ = Vec::Zero();
    bool primed_ = false;
};

template <int Dim>
typename LowPassFilter<Dim>::Vec lowpass(LowPassFilter<Dim> &f, const typename LowPassFilter<Dim>::Vec &x)
{
    return f.step(x);
}

struct TensionEstimate
{
    Vec3 force = Vec3::Zero(); // -F rho, the cable force acting on the robot
    double magnitude = 0.0;
    Vec3 rho = kE3;

    Vec3 cable_vector() const { return magnitude * rho; }
};

// Rearranged robot translational dynamics: F rho = m (f z - g e3 - a).
inline TensionEstimate estimate_tension(const Vec3 &accel, const Vec3 &thrust_vec, double robot_mass, double gravity,
                                        const TensionEstimate *previous = nullptr)
{
    TensionEstimate e;
    const Vec3 Frho = robot_mass * (thrust_vec - gravity * kE3 - accel);
    e.force = -Frho;
    e.magnitude = Frho.norm();
    if (e.magnitude > 1e-6)
        e.rho = Frho / e.magnitude;
    else if (previous)
        e.rho = previous->rho;
    return e;
}

struct RobotReference
{
    double t = 0.0;
    Vec3 p = Vec3::Zero(), v = Vec3::Zero(), a = Vec3::Zero();
    Vec3 f = Vec3::Zero(); // thrust vector with the estimated cable force
    Vec3 z = kE3;
    double psi = 0.0, psi_dot = 0.0;
    Vec3 omega = Vec3::Zero(), omega_dot = Vec3::Zero();
    Vec3 planned_cable = Vec3::Zero(); // planned F rho
    Vec3 payload = Vec3::Zero();
};

namespace detail
{

inline RobotReference reference_at(const Trajectory &tr, double t, int n, const TensionEstimate &est,
                                   const SystemConfig &sys)
{
    t = std::clamp(t, 0.0, tr.duration());
    FlatSample s = tr.sample(t, 4);
    RhoJet rj = rho_derivatives(s.chain(FlatSample::theta_col(n)), s.chain(FlatSample::phi_col(n)));
    const double l = sys.cable_length, m = sys.robot_mass;
    const double F = s.force(n, 0), Fd = s.force(n, 1);
    RobotReference r;
    r.t = t;
    r.payload = s.p(0);
    r.p = s.p(0) + l * rj.rho[0];
    r.v = s.p(1) + l * rj.rho[1];
    r.a = s.p(2) + l * rj.rho[2];
    r.planned_cable = F * rj.rho[0];
    r.f = r.a + sys.gravity * kE3 + est.cable_vector() / m;
    const Vec3 fdot = s.p(3) + l * rj.rho[3] + (Fd * est.rho + est.magnitude * rj.rho[1]) / m;
    r.psi = s.psi(n, 0);
    r.psi_dot = s.psi(n, 1);
    if (r.f.norm() < 1e-6)
        throw DegenerateThrust();
    auto [z, zd] = unitize(r.f, fdot);
    r.z = z;
    r.omega = body_rate(z, zd, r.psi, r.psi_dot);
    return r;
}

} // namespace detail

// Robot references at time t with the planned cable force replaced by the
// current estimate; past the end the last sample is held.
inline RobotReference desired_states(const Trajectory &tr, double t, int n, const TensionEstimate &est,
                                     const SystemConfig &sys, double h = 1e-3)
{
    const double T = tr.duration();
    const bool hold = t >= T;
    RobotReference r = detail::reference_at(tr, t, n, est, sys);
    if (hold)
    {
        r.v.setZero();
        r.a.setZero();
        r.f = sys.gravity * kE3 + est.cable_vector() / sys.robot_mass;
        r.z = r.f.normalized();
        r.omega.setZero();
        r.psi_dot = 0.0;
        return r;
    }
    auto w = [&](double tt) { return detail::reference_at(tr, tt, n, est, sys).omega; };
    r.omega_dot = angular_accel(w, std::max(t, 0.0), h, 0.0, T);
    return r;
}

struct OuterCommand
{
    double thrust = 0.0; // mass-normalized
    Vec3 z = kE3;
    Vec3 f = Vec3::Zero();
    bool degenerate = false;
};

// accel and thrust_vec are the filtered measurements; previous_z is held on
// a degenerate command.
inline OuterCommand outer_loop(const Vec3 &p, const Vec3 &v, const RobotReference &ref, const Vec3 &accel,
                               const Vec3 &thrust_vec, const ControllerConfig &cfg, const SystemConfig &sys,
                               const Vec3 &previous_z = kE3)
{
    const Vec3 a_c = cfg.Kp.cwiseProduct(ref.p - p) + cfg.Kv.cwiseProduct(ref.v - v) + ref.a;
    OuterCommand c;
    if (cfg.reference_force)
        c.f = a_c + sys.gravity * kE3 + ref.planned_cable / sys.robot_mass;
    else
        c.f = thrust_vec + a_c - accel;
    c.thrust = c.f.norm();
    if (c.thrust < 1e-6)
    {
        c.degenerate = true;
        c.z = previous_z;
    }
    else
        c.z = c.f / c.thrust;
    return c;
}

// Rotation from q to q_d as a rotation vector in the body frame, |.| <= pi.
inline Vec3 attitude_error(const Quat &q, const Quat &q_d, Quat *q_e_out = nullptr)
{
    Quat q_e = q.conjugate() * q_d;
    if (q_e.w() < 0.0)
        q_e.coeffs() = -q_e.coeffs();
    if (q_e_out)
        *q_e_out = q_e;
    const Vec3 iota = q_e.vec();
    const double n = iota.norm();
    if (n < 1e-12)
        return Vec3::Zero();
    return 2.0 * std::acos(std::clamp(q_e.w(), -1.0, 1.0)) * iota / n;
}

struct InnerState
{
    Vec3 integral = Vec3::Zero();
};

struct InnerCommand
{
    Vec3 torque = Vec3::Zero();
    Vec3 omega_dot_c = Vec3::Zero();
    Vec3 theta_e = Vec3::Zero();
    Quat q_d = Quat::Identity();
};

// omega, omega_dot, torque are the filtered measurements.
inline InnerCommand inner_loop(const Quat &q, const Vec3 &z_c, double psi_d, const Vec3 &omega_d,
                               const Vec3 &omega_dot_d, const Vec3 &torque, const Vec3 &omega,
                               const Vec3 &omega_dot, const ControllerConfig &cfg, const SystemConfig &sys,
                               InnerState &state, double dt)
{
    InnerCommand c;
    c.q_d = attitude_from_hopf(z_c, psi_d);
    Quat q_e;
    c.theta_e = attitude_error(q, c.q_d, &q_e);
    const Vec3 omega_e = q_e * omega_d - omega;
    state.integral += omega_e * dt;
    for (int i = 0; i < 3; ++i)
    {
        const double lim = cfg.K_I(i) > 0.0 ? cfg.integrator_limit / cfg.K_I(i) : 0.0;
        state.integral(i) = std::clamp(state.integral(i), -lim, lim);
    }
    c.omega_dot_c = cfg.K_theta.cwiseProduct(c.theta_e) + cfg.K_omega.cwiseProduct(omega_e) +
                    cfg.K_I.cwiseProduct(state.integral) + omega_dot_d;
    c.torque = torque + sys.inertia * (c.omega_dot_c - omega_dot);
    return c;
}

// What one robot observes about itself; nothing about the payload or peers.
struct RobotMeasurement
{
    double time = 0.0;
    Vec3 p = Vec3::Zero(), v = Vec3::Zero(), a = Vec3::Zero();
    Quat q = Quat::Identity();
    Vec3 omega = Vec3::Zero();
    Vec3 thrust_vec = Vec3::Zero(); // mass-normalized, from rotor speeds
    Vec3 torque = Vec3::Zero();     // from rotor speeds
};

struct ControlOutput
{
    double thrust = 0.0;
    Vec3 torque = Vec3::Zero();
    RobotReference ref;
    TensionEstimate tension;
    Vec3 theta_e = Vec3::Zero();
};

// Distributed controller of robot n; it reads only its own measurements and
// the shared trajectory.
class RobotController
{
  public:
    RobotController(int n, const SystemConfig &sys, const ControllerConfig &cfg)
        : n_(n), sys_(sys), cfg_(cfg), fa_(cfg.cutoff, cfg.rate), ff_(cfg.cutoff, cfg.rate),
          fw_(cfg.cutoff, cfg.rate), ft_(cfg.cutoff, cfg.rate), fwd_(cfg.cutoff, cfg.rate)
    {
        cfg_.validate();
    }

    int index() const { return n_; }
    const TensionEstimate &tension() const { return tension_; }

    ControlOutput update(const RobotMeasurement &m, const Trajectory &tr)
    {
        const double dt = cfg_.period();
        const Vec3 a = fa_.step(m.a);
        const Vec3 fz = ff_.step(m.thrust_vec);
        const Vec3 w = fw_.step(m.omega);
        const Vec3 tau = ft_.step(m.torque);
        const Vec3 wd = fwd_.step(prev_omega_ ? Vec3((m.omega - *prev_omega_) / dt) : Vec3::Zero());
        prev_omega_ = m.omega;

        ControlOutput out;
        tension_ = estimate_tension(a, fz, sys_.robot_mass, sys_.gravity, &tension_);
        out.tension = tension_;
        out.ref = desired_states(tr, m.time, n_, tension_, sys_);
        auto oc = outer_loop(m.p, m.v, out.ref, a, fz, cfg_, sys_, z_prev_);
        z_prev_ = oc.z;
        auto ic = inner_loop(m.q, oc.z, out.ref.psi, out.ref.omega, out.ref.omega_dot, tau, w, wd, cfg_, sys_,
                             inner_, dt);
        out.thrust = oc.thrust;
        out.torque = ic.torque;
        out.theta_e = ic.theta_e;
        return out;
    }

  private:
    int n_;
    SystemConfig sys_;
    ControllerConfig cfg_;
    LowPassFilter<3> fa_, ff_, fw_, ft_, fwd_;
    std::optional<Vec3> prev_omega_;
    TensionEstimate tension_;
    InnerState inner_;
    Vec3 z_prev_ = kE3;
};

struct MassEstimate
{
    double mass = 0.0;
    double relative_std = 0.0;
    bool excessive_variance = false;
};

// history[n] holds robot n's cable-force estimates F rho (pointing from the
// payload to the robot); the last `window` samples of each are averaged.
inline MassEstimate estimate_payload_mass(const std::vector<std::vector<Vec3>> &history, int window, double gravity)
{
    if (window < 1)
        throw InputError("mass estimate: window must be >= 1");
    if (history.empty())
        throw InsufficientSamples("mass estimate: no robots");
    std::vector<double> total(window, 0.0);
    for (const auto &h : history)
    {
        if (static_cast<int>(h.size()) < window)
            throw InsufficientSamples("mass estimate: fewer than window samples");
        for (int w = 0; w < window; ++w)
            total[w] += h[h.size() - window + w].z();
    }
    double mean = 0.0, var = 0.0;
    for (double v : total)
        mean += v;
    mean /= window;
    for (double v : total)
        var += (v - mean) * (v - mean);
    var /= window;
    MassEstimate e;
    e.mass = mean / gravity;
    e.relative_std = std::abs(mean) > 1e-12 ? std::sqrt(var) / std::abs(mean) : 0.0;
    e.excessive_variance = e.relative_std > 0.1;
    return e;
}

} // namespace marts
