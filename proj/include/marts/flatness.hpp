#pragma once

#include "marts/model.hpp"

#include <functional>

namespace marts
{

// Time-derivative chain x, x', x'', x''' of a scalar signal.
using Jet = std::array<double, 4>;

inline Jet jet_mul(const Jet &a, const Jet &b)
{
    Jet r{};
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j <= k; ++j)
            r[k] += binom(k, j) * a[j] * b[k - j];
    return r;
}

inline std::pair<Jet, Jet> jet_cos_sin(const Jet &x)
{
    Jet c{}, s{};
    c[0] = std::cos(x[0]);
    s[0] = std::sin(x[0]);
    // (cos x)' = -sin x * x', (sin x)' = cos x * x', expanded by Leibniz.
    for (int k = 0; k < 3; ++k)
    {
        double dc = 0.0, ds = 0.0;
        for (int j = 0; j <= k; ++j)
        {
            dc -= binom(k, j) * s[j] * x[k + 1 - j];
            ds += binom(k, j) * c[j] * x[k + 1 - j];
        }
        c[k + 1] = dc;
        s[k + 1] = ds;
    }
    return {c, s};
}

using Vec3Jet = std::array<Vec3, 4>;

// Derivative chains of rho and of its partials with respect to theta and phi.
struct RhoJet
{
    Vec3Jet rho;
    Vec3Jet rho_theta;
    Vec3Jet rho_phi;
};

inline RhoJet rho_derivatives(const Jet &theta, const Jet &phi)
{
    auto [ct, st] = jet_cos_sin(theta);
    auto [cp, sp] = jet_cos_sin(phi);
    Jet ctcp = jet_mul(ct, cp), ctsp = jet_mul(ct, sp), stcp = jet_mul(st, cp), stsp = jet_mul(st, sp);
    RhoJet r;
    for (int k = 0; k < 4; ++k)
    {
        r.rho[k] = Vec3(ctcp[k], ctsp[k], st[k]);
        r.rho_theta[k] = Vec3(-stcp[k], -stsp[k], ct[k]);
        r.rho_phi[k] = Vec3(-ctsp[k], ctcp[k], 0.0);
    }
    return r;
}

// Extended flat output and its derivatives: row k holds the k-th derivative,
// columns follow (p, theta_1, phi_1, F_1, psi_1, ..., theta_N, phi_N, F_N, psi_N).
struct FlatSample
{
    MatX Z;

    static int dim(int n_robots) { return 4 * n_robots + 3; }
    static int theta_col(int n) { return 3 + 4 * n; }
    static int phi_col(int n) { return 4 + 4 * n; }
    static int force_col(int n) { return 5 + 4 * n; }
    static int psi_col(int n) { return 6 + 4 * n; }

    int n_robots() const { return (static_cast<int>(Z.cols()) - 3) / 4; }
    int orders() const { return static_cast<int>(Z.rows()); }
    Vec3 p(int k) const { return Z.row(k).segment<3>(0).transpose(); }
    double theta(int n, int k) const { return Z(k, theta_col(n)); }
    double phi(int n, int k) const { return Z(k, phi_col(n)); }
    double force(int n, int k) const { return Z(k, force_col(n)); }
    double psi(int n, int k) const { return Z(k, psi_col(n)); }

    Jet chain(int col) const
    {
        Jet j{};
        for (int k = 0; k < 4 && k < Z.rows(); ++k)
            j[k] = Z(k, col);
        return j;
    }
};

struct ThrustVector
{
    Vec3 f;
    Vec3 fdot;
};

inline ThrustVector thrust_vector(const Vec3 &p2, const Vec3 &p3, const Vec3Jet &rho, double F, double Fdot,
                                  const SystemConfig &cfg)
{
    ThrustVector t;
    t.f = p2 + cfg.cable_length * rho[2] + cfg.gravity * kE3 + F * rho[0] / cfg.robot_mass;
    t.fdot = p3 + cfg.cable_length * rho[3] + (Fdot * rho[0] + F * rho[1]) / cfg.robot_mass;
    if (t.f.norm() < 1e-6)
        throw DegenerateThrust();
    return t;
}

// Unit vector and its derivative for a differentiable vector f.
inline std::pair<Vec3, Vec3> unitize(const Vec3 &f, const Vec3 &fdot)
{
    const double n = f.norm();
    Vec3 z = f / n;
    Vec3 zd = (fdot - z * z.dot(fdot)) / n;
    return {z, zd};
}

inline constexpr double kHopfGuard = 1e-6;

inline Quat attitude_from_hopf(const Vec3 &f, double psi)
{
    const double n = f.norm();
    if (n < 1e-6)
        throw DegenerateThrust();
    Vec3 z = f / n;
    if (z.z() <= -1.0 + kHopfGuard)
        throw HopfSingularity();
    const double a = 1.0 / std::sqrt(2.0 * (1.0 + z.z()));
    Quat qz((1.0 + z.z()) * a, -z.y() * a, z.x() * a, 0.0);
    Quat qpsi(std::cos(0.5 * psi), 0.0, 0.0, std::sin(0.5 * psi));
    return (qz * qpsi).normalized();
}

inline double tilt_angle(const Quat &q)
{
    double c = 1.0 - 2.0 * (q.x() * q.x() + q.y() * q.y());
    return std::acos(std::clamp(c, -1.0, 1.0));
}

inline Vec3 body_rate(const Vec3 &z, const Vec3 &zd, double psi, double psid)
{
    if (z.z() <= -1.0 + kHopfGuard)
        throw HopfSingularity();
    const double sp = std::sin(psi), cp = std::cos(psi), d = 1.0 + z.z();
    const double A = z.x() * sp - z.y() * cp;
    const double B = z.x() * cp + z.y() * sp;
    return Vec3(zd.x() * sp - zd.y() * cp - zd.z() * A / d,
                zd.x() * cp + zd.y() * sp - zd.z() * B / d,
                (z.y() * zd.x() - z.x() * zd.y()) / d + psid);
}

struct RobotFlatState
{
    Vec3 p, v, a;
    Vec3 f, fdot;
    Vec3 z, zdot;
    Quat q;
    double tilt = 0.0;
    Vec3 omega;
};

inline RobotFlatState robot_flat_state(const FlatSample &s, int n, const SystemConfig &cfg)
{
    RhoJet rj = rho_derivatives(s.chain(FlatSample::theta_col(n)), s.chain(FlatSample::phi_col(n)));
    const double l = cfg.cable_length;
    RobotFlatState r;
    r.p = s.p(0) + l * rj.rho[0];
    r.v = s.p(1) + l * rj.rho[1];
    r.a = s.p(2) + l * rj.rho[2];
    auto t = thrust_vector(s.p(2), s.p(3), rj.rho, s.force(n, 0), s.force(n, 1), cfg);
    r.f = t.f;
    r.fdot = t.fdot;
    std::tie(r.z, r.zdot) = unitize(t.f, t.fdot);
    r.q = attitude_from_hopf(t.f, s.psi(n, 0));
    r.tilt = tilt_angle(r.q);
    r.omega = body_rate(r.z, r.zdot, s.psi(n, 0), s.psi(n, 1));
    return r;
}

// Static hover in the flat output: equal elevation theta, azimuths 2 pi n / N,
// tensions carrying the payload weight.
inline MatX hover_flat_output(const SystemConfig &sys, const Vec3 &p, double theta)
{
    const int N = sys.n_robots;
    MatX s = MatX::Zero(4, FlatSample::dim(N));
    s.row(0).head<3>() = p.transpose();
    const double F = sys.payload_mass * sys.gravity / (N * std::sin(theta));
    for (int n = 0; n < N; ++n)
    {
        s(0, FlatSample::theta_col(n)) = theta;
        s(0, FlatSample::phi_col(n)) = 2.0 * M_PI * n / N;
        s(0, FlatSample::force_col(n)) = F;
    }
    return s;
}

// Central difference of a rate signal; one-sided second-order near the ends.
inline Vec3 angular_accel(const std::function<Vec3(double)> &omega, double t, double h, double t_begin,
                          double t_end)
{
    if (t - h >= t_begin && t + h <= t_end)
        return (omega(t + h) - omega(t - h)) / (2.0 * h);
    if (t + 2.0 * h <= t_end)
        return (-3.0 * omega(t) + 4.0 * omega(t + h) - omega(t + 2.0 * h)) / (2.0 * h);
    return (3.0 * omega(t) - 4.0 * omega(t - h) + omega(t - 2.0 * h)) / (2.0 * h);
}

} // namespace marts
