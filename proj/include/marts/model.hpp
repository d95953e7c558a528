#pragma once

#include "marts/common.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <vector>

namespace marts
{

struct SystemConfig
{
    int n_robots = 3;
    double payload_mass = 0.2;
    double robot_mass = 0.32;
    Mat3 inertia = Eigen::Vector3d(4.463e-4, 4.725e-4, 5.340e-4).asDiagonal();
    double cable_length = 1.2;
    double gravity = 9.81;

    void validate() const
    {
        if (n_robots < 2)
            throw InputError("n_robots must be >= 2");
        if (!(payload_mass > 0.0) || !(robot_mass > 0.0))
            throw InputError("masses must be positive");
        if (!(cable_length > 0.0))
            throw InputError("cable_length must be positive");
        if (!(gravity > 0.0))
            throw InputError("gravity must be positive");
        if ((inertia - inertia.transpose()).norm() > 1e-12 * inertia.norm())
            throw InputError("inertia must be symmetric");
        Eigen::SelfAdjointEigenSolver<Mat3> es(inertia);
        if (es.eigenvalues().minCoeff() <= 0.0)
            throw InputError("inertia must be positive definite");
    }

    // key = value lines, '#' starts a comment. inertia takes three diagonal
    // entries or nine row-major entries.
    static SystemConfig parse(std::istream &in)
    {
        SystemConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line))
        {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos)
                line.erase(hash);
            auto eq = line.find('=');
            std::string key = line.substr(0, eq);
            auto trim = [](std::string s)
            {
                const char *ws = " \t\r\n";
                s.erase(0, s.find_first_not_of(ws));
                auto e = s.find_last_not_of(ws);
                s.erase(e == std::string::npos ? 0 : e + 1);
                return s;
            };
            key = trim(key);
            if (key.empty())
                continue;
            if (eq == std::string::npos)
                throw InputError("config line " + std::to_string(lineno) + ": expected key = value");
            std::istringstream vs(line.substr(eq + 1));
            std::vector<double> vals;
            double x;
            while (vs >> x)
                vals.push_back(x);
            if (!vs.eof() || vals.empty())
                throw InputError("config line " + std::to_string(lineno) + ": bad numeric value");
            auto scalar = [&]()
            {
                if (vals.size() != 1)
                    throw InputError("config line " + std::to_string(lineno) + ": expected one value");
                return vals[0];
            };
            if (key == "n_robots")
                cfg.n_robots = static_cast<int>(scalar());
            else if (key == "payload_mass")
                cfg.payload_mass = scalar();
            else if (key == "robot_mass")
                cfg.robot_mass = scalar();
            else if (key == "cable_length")
                cfg.cable_length = scalar();
            else if (key == "gravity")
                cfg.gravity = scalar();
            else if (key == "inertia")
            {
                if (vals.size() == 3)
                    cfg.inertia = Vec3(vals[0], vals[1], vals[2]).asDiagonal();
                else if (vals.size() == 9)
                    cfg.inertia = Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(vals.data());
                else
                    throw InputError("config line " + std::to_string(lineno) + ": inertia needs 3 or 9 values");
            }
            else
                throw InputError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        cfg.validate();
        return cfg;
    }

    static SystemConfig load(const std::string &path)
    {
        std::ifstream f(path);
        if (!f)
            throw InputError("cannot open config file " + path);
        return parse(f);
    }
};

struct PayloadState
{
    Vec3 p = Vec3::Zero();
    Vec3 v = Vec3::Zero();
};

struct RobotState
{
    Vec3 p = Vec3::Zero();
    Vec3 v = Vec3::Zero();
    Quat q = Quat::Identity();
    Vec3 omega = Vec3::Zero();
};

inline Vec3 rho_from_angles(double theta, double phi)
{
    const double ct = std::cos(theta);
    return Vec3(ct * std::cos(phi), ct * std::sin(phi), std::sin(theta));
}

struct CableState
{
    double theta = 0.0;
    double phi = 0.0;
    double tension = 0.0;
    Vec3 rho = Vec3::UnitX();

    static CableState from_angles(double theta, double phi, double tension)
    {
        return {theta, phi, tension, rho_from_angles(theta, phi)};
    }

    // Direction from payload towards the robot.
    static CableState from_direction(const Vec3 &d, double tension)
    {
        Vec3 r = d.normalized();
        double th = std::asin(std::clamp(r.z(), -1.0, 1.0));
        double ph = std::atan2(r.y(), r.x());
        return {th, ph, tension, rho_from_angles(th, ph)};
    }
};

struct ControlInput
{
    double thrust = 0.0; // mass-normalized
    Vec3 torque = Vec3::Zero();
};

inline Vec3 robot_position(const Vec3 &p, const Vec3 &rho, double l)
{
    return p + l * rho;
}

inline Vec3 payload_accel(const std::vector<CableState> &cables, const SystemConfig &cfg)
{
    Vec3 a = -cfg.gravity * kE3;
    for (const auto &c : cables)
        a += c.tension * c.rho / cfg.payload_mass;
    return a;
}

inline Vec3 robot_accel(const RobotState &s, const ControlInput &u, const CableState &c,
                        const SystemConfig &cfg)
{
    return -cfg.gravity * kE3 + u.thrust * (s.q * kE3) - c.tension * c.rho / cfg.robot_mass;
}

struct WorldState
{
    double time = 0.0;
    PayloadState payload;
    std::vector<RobotState> robots;
    std::vector<double> tension;
    std::vector<bool> slack;

    CableState cable(int n) const
    {
        return CableState::from_direction(robots[n].p - payload.p, tension[n]);
    }
};

struct WorldOptions
{
    double baumgarte_alpha = 10.0;
    // Cable attachment point in body frame; produces a torque, not a force change.
    Vec3 attach_offset = Vec3::Zero();
    // Extra world-frame force on each robot (disturbance), may be empty.
    std::vector<Vec3> external_force;
};

namespace detail
{

constexpr int kPayloadDim = 6;
constexpr int kRobotDim = 13;

inline VecX pack(const WorldState &w)
{
    const int n = static_cast<int>(w.robots.size());
    VecX x(kPayloadDim + kRobotDim * n);
    x.segment<3>(0) = w.payload.p;
    x.segment<3>(3) = w.payload.v;
    for (int i = 0; i < n; ++i)
    {
        const auto &r = w.robots[i];
        const int o = kPayloadDim + kRobotDim * i;
        x.segment<3>(o) = r.p;
        x.segment<3>(o + 3) = r.v;
        x.segment<4>(o + 6) << r.q.w(), r.q.x(), r.q.y(), r.q.z();
        x.segment<3>(o + 10) = r.omega;
    }
    return x;
}

inline void unpack(const VecX &x, WorldState &w)
{
    const int n = static_cast<int>(w.robots.size());
    w.payload.p = x.segment<3>(0);
    w.payload.v = x.segment<3>(3);
    for (int i = 0; i < n; ++i)
    {
        auto &r = w.robots[i];
        const int o = kPayloadDim + kRobotDim * i;
        r.p = x.segment<3>(o);
        r.v = x.segment<3>(o + 3);
        r.q = Quat(x(o + 6), x(o + 7), x(o + 8), x(o + 9)).normalized();
        r.omega = x.segment<3>(o + 10);
    }
}

// Taut-cable closure: tensions such that the Baumgarte-stabilized second
// derivative of the length constraint vanishes, with F >= 0 by active set.
inline VecX solve_tensions(const VecX &x, const std::vector<Vec3> &u, const SystemConfig &cfg,
                           double alpha, std::vector<bool> &clamped)
{
    const int n = cfg.n_robots;
    const Vec3 p = x.segment<3>(0), v = x.segment<3>(3);
    std::vector<Vec3> rho(n);
    MatX A(n, n);
    VecX b(n);
    std::vector<double> len(n);
    for (int i = 0; i < n; ++i)
    {
        const int o = kPayloadDim + kRobotDim * i;
        Vec3 d = Vec3(x.segment<3>(o)) - p;
        Vec3 dd = Vec3(x.segment<3>(o + 3)) - v;
        len[i] = d.norm();
        rho[i] = d / len[i];
        const double C = 0.5 * (d.squaredNorm() - cfg.cable_length * cfg.cable_length);
        b(i) = len[i] * rho[i].dot(u[i]) + dd.squaredNorm() + 2.0 * alpha * d.dot(dd) + alpha * alpha * C;
    }
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k)
            A(i, k) = len[i] * ((i == k ? 1.0 / cfg.robot_mass : 0.0) + rho[i].dot(rho[k]) / cfg.payload_mass);

    std::vector<bool> active(n, true);
    VecX F = VecX::Zero(n);
    for (int pass = 0; pass <= n; ++pass)
    {
        std::vector<int> idx;
        for (int i = 0; i < n; ++i)
            if (active[i])
                idx.push_back(i);
        F.setZero();
        if (!idx.empty())
        {
            MatX As(idx.size(), idx.size());
            VecX bs(idx.size());
            for (size_t a = 0; a < idx.size(); ++a)
            {
                bs(a) = b(idx[a]);
                for (size_t c = 0; c < idx.size(); ++c)
                    As(a, c) = A(idx[a], idx[c]);
            }
            VecX Fs = As.partialPivLu().solve(bs);
            for (size_t a = 0; a < idx.size(); ++a)
                F(idx[a]) = Fs(a);
        }
        bool changed = false;
        for (int i = 0; i < n; ++i)
            if (active[i] && F(i) < 0.0)
            {
                active[i] = false;
                changed = true;
            }
        if (!changed)
            break;
    }
    clamped.assign(n, false);
    for (int i = 0; i < n; ++i)
    {
        if (!active[i] || F(i) <= 0.0)
        {
            clamped[i] = true;
            F(i) = 0.0;
        }
    }
    return F;
}

struct Deriv
{
    VecX dx;
    VecX F;
    std::vector<bool> clamped;
};

inline Deriv derivative(const VecX &x, const std::vector<ControlInput> &in, const SystemConfig &cfg,
                        const WorldOptions &opt)
{
    const int n = cfg.n_robots;
    std::vector<Vec3> u(n);
    std::vector<Quat> q(n);
    for (int i = 0; i < n; ++i)
    {
        const int o = kPayloadDim + kRobotDim * i;
        q[i] = Quat(x(o + 6), x(o + 7), x(o + 8), x(o + 9));
        u[i] = in[i].thrust * (q[i].normalized() * kE3);
        if (!opt.external_force.empty())
            u[i] += opt.external_force[i] / cfg.robot_mass;
    }
    Deriv d;
    d.F = solve_tensions(x, u, cfg, opt.baumgarte_alpha, d.clamped);
    d.dx.resize(x.size());
    const Vec3 p = x.segment<3>(0);
    Vec3 aL = -cfg.gravity * kE3;
    d.dx.segment<3>(0) = x.segment<3>(3);
    const Mat3 Jinv = cfg.inertia.inverse();
    for (int i = 0; i < n; ++i)
    {
        const int o = kPayloadDim + kRobotDim * i;
        Vec3 rho = (Vec3(x.segment<3>(o)) - p).normalized();
        aL += d.F(i) * rho / cfg.payload_mass;
        d.dx.segment<3>(o) = x.segment<3>(o + 3);
        d.dx.segment<3>(o + 3) = -cfg.gravity * kE3 + u[i] - d.F(i) * rho / cfg.robot_mass;
        Vec3 w = x.segment<3>(o + 10);
        Quat qd = q[i] * Quat(0.0, w.x(), w.y(), w.z());
        d.dx.segment<4>(o + 6) << 0.5 * qd.w(), 0.5 * qd.x(), 0.5 * qd.y(), 0.5 * qd.z();
        Vec3 tau = in[i].torque;
        if (!opt.attach_offset.isZero())
        {
            Vec3 fb = q[i].normalized().conjugate() * (-d.F(i) * rho);
            tau += opt.attach_offset.cross(fb);
        }
        Mat3 J = cfg.inertia;
        d.dx.segment<3>(o + 10) = Jinv * (tau - w.cross(J * w));
    }
    d.dx.segment<3>(3) = aL;
    return d;
}

} // namespace detail

// One classical RK4 step with inputs held constant over dt.
inline WorldState step_world(const WorldState &world, const std::vector<ControlInput> &inputs, double dt,
                             const SystemConfig &cfg, const WorldOptions &opt = {})
{
    if (!(dt > 0.0 && dt <= 0.01))
        throw InputError("step_world: dt must lie in (0, 0.01]");
    if (static_cast<int>(world.robots.size()) != cfg.n_robots ||
        static_cast<int>(inputs.size()) != cfg.n_robots)
        throw InputError("step_world: robot count mismatch");
    const VecX x0 = detail::pack(world);
    auto k1 = detail::derivative(x0, inputs, cfg, opt);
    auto k2 = detail::derivative(x0 + 0.5 * dt * k1.dx, inputs, cfg, opt);
    auto k3 = detail::derivative(x0 + 0.5 * dt * k2.dx, inputs, cfg, opt);
    auto k4 = detail::derivative(x0 + dt * k3.dx, inputs, cfg, opt);
    VecX x1 = x0 + dt / 6.0 * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx);

    WorldState out = world;
    detail::unpack(x1, out);
    out.time = world.time + dt;
    auto kend = detail::derivative(detail::pack(out), inputs, cfg, opt);
    out.tension.assign(kend.F.data(), kend.F.data() + kend.F.size());
    out.slack.assign(cfg.n_robots, false);
    for (int i = 0; i < cfg.n_robots; ++i)
        out.slack[i] = k1.clamped[i] || k2.clamped[i] || k3.clamped[i] || k4.clamped[i] || kend.clamped[i];
    return out;
}

// Kinetic plus potential energy; used to check the integrator.
inline double world_energy(const WorldState &w, const SystemConfig &cfg)
{
    double e = 0.5 * cfg.payload_mass * w.payload.v.squaredNorm() + cfg.payload_mass * cfg.gravity * w.payload.p.z();
    for (const auto &r : w.robots)
        e += 0.5 * cfg.robot_mass * r.v.squaredNorm() + cfg.robot_mass * cfg.gravity * r.p.z() +
             0.5 * r.omega.dot(cfg.inertia * r.omega);
    return e;
}

inline void write_csv_header(std::ostream &os, int n_robots)
{
    os << "time,px,py,pz,vx,vy,vz";
    for (int i = 1; i <= n_robots; ++i)
    {
        std::string r = "r" + std::to_string(i) + "_";
        os << ',' << r << "px," << r << "py," << r << "pz," << r << "vx," << r << "vy," << r << "vz,"
           << r << "qw," << r << "qx," << r << "qy," << r << "qz," << r << "wx," << r << "wy," << r << "wz";
    }
    for (int i = 1; i <= n_robots; ++i)
    {
        std::string c = "c" + std::to_string(i) + "_";
        os << ',' << c << "theta," << c << "phi," << c << "F";
    }
    os << '\n';
}

inline void write_csv_row(std::ostream &os, const WorldState &w)
{
    os << std::setprecision(10) << w.time;
    auto v3 = [&](const Vec3 &v) { os << ',' << v.x() << ',' << v.y() << ',' << v.z(); };
    v3(w.payload.p);
    v3(w.payload.v);
    for (const auto &r : w.robots)
    {
        v3(r.p);
        v3(r.v);
        os << ',' << r.q.w() << ',' << r.q.x() << ',' << r.q.y() << ',' << r.q.z();
        v3(r.omega);
    }
    for (size_t i = 0; i < w.robots.size(); ++i)
    {
        auto c = w.cable(static_cast<int>(i));
        os << ',' << c.theta << ',' << c.phi << ',' << c.tension;
    }
    os << '\n';
}

} // namespace marts
