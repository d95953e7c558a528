#pragma once

#include "marts/esdf.hpp"
#include "marts/lbfgs.hpp"
#include "marts/minco.hpp"

#include <chrono>

namespace marts
{

struct PlannerConfig
{
    double d_oa_payload = 0.2;
    double d_oa_robot = 0.3;
    double d_oa_cable = 0.2;
    double d_ra = 0.2;
    int cable_samples = 7;

    double v_max = 6.0;
    double f_min = 2.0;
    double f_max = 30.0;
    double tilt_max = 1.05;
    double omega_max = 2.7;
    double theta_max = 1.0;
    double F_min = 0.24;
    double F_max = 2.4;

    double lambda_T = 2000.0;
    double lambda_Z = 0.3;
    double lambda_oa = 10000.0;
    double lambda_ra = 10000.0;
    double lambda_v = 1000.0;
    double lambda_f = 1000.0;
    double lambda_tilt = 1000.0;
    double lambda_omega = 1000.0;
    double lambda_d = 10000.0;

    double mu = 0.01;
    int kappa = 16;
    LbfgsParams solver;

    bool use_bands = true;
    bool free_yaw = false;
    bool fix_payload_junctions = false;
    bool fix_durations = false;

    void validate() const
    {
        if (!(0.0 < f_min && f_min < f_max))
            throw InputError("planner: need 0 < f_min < f_max");
        if (!(0.0 <= F_min && F_min < F_max))
            throw InputError("planner: need 0 <= F_min < F_max");
        if (!(tilt_max > 0.0 && tilt_max < M_PI / 2 + 0.5))
            throw InputError("planner: tilt_max out of range");
        if (cable_samples < 1 || kappa < 2)
            throw InputError("planner: need K >= 1 and kappa >= 2");
        if (!(mu > 0.0))
            throw InputError("planner: smoothing width must be positive");
    }
};

// C2 ramp: zero below 0, cubic blend on (0, mu], linear above.
inline double smoothing(double x, double mu, double *dx = nullptr)
{
    if (x <= 0.0)
    {
        if (dx)
            *dx = 0.0;
        return 0.0;
    }
    if (x <= mu)
    {
        const double r = x / mu;
        if (dx)
            *dx = r * r * (3.0 - 2.0 * r);
        return (mu - 0.5 * x) * r * r * r;
    }
    if (dx)
        *dx = 1.0;
    return x - 0.5 * mu;
}

struct BoundedValue
{
    double value;
    double deriv;
};

inline BoundedValue eliminate_vectorial(double eta, double lo, double hi)
{
    const double span = hi - lo;
    return {0.5 * (lo + hi) + span / M_PI * std::atan(eta), span / (M_PI * (eta * eta + 1.0))};
}

inline double inverse_vectorial(double xi, double lo, double hi)
{
    const double span = hi - lo, eps = 1e-3 * span;
    xi = std::clamp(xi, lo + eps, hi - eps);
    return std::tan((xi - 0.5 * (lo + hi)) * M_PI / span);
}

inline BoundedValue eliminate_temporal(double tau)
{
    const double T = std::exp(std::clamp(tau, -20.0, 20.0));
    return {T, T};
}

struct ChannelBand
{
    double lo, hi;
};

inline ChannelBand theta_band(const PlannerConfig &cfg) { return {0.0, cfg.theta_max}; }

// Azimuth band of robot n (0-based): width 2 pi / N centred at 2 pi n / N.
inline ChannelBand phi_band(int n, int N)
{
    const double c = 2.0 * M_PI * n / N;
    return {c - M_PI / N, c + M_PI / N};
}

inline ChannelBand force_band(const PlannerConfig &cfg) { return {cfg.F_min, cfg.F_max}; }

enum Term
{
    kObstacle,
    kReciprocal,
    kVelocity,
    kThrust,
    kTilt,
    kBodyRate,
    kCoupling,
    kTermCount
};

inline const char *term_name(int t)
{
    static const char *names[] = {"obstacle", "reciprocal", "velocity", "thrust", "tilt", "bodyrate", "coupling"};
    return names[t];
}

struct TermMask
{
    bool energy = true;
    std::array<bool, kTermCount> on{true, true, true, true, true, true, true};

    static TermMask only(int t)
    {
        TermMask m;
        m.energy = false;
        m.on.fill(false);
        m.on[t] = true;
        return m;
    }
    static TermMask energy_only()
    {
        TermMask m;
        m.on.fill(false);
        return m;
    }
};

// Per-sample quantities shared by all penalty terms.
struct SampleContext
{
    const SystemConfig &sys;
    const PlannerConfig &cfg;
    int N;
    std::array<Vec3, 4> p;
    std::vector<RhoJet> rho;
    std::vector<Jet> F;
    std::vector<std::array<double, 2>> psi;
    std::vector<Vec3> f, fdot;
    std::vector<bool> guard;

    SampleContext(const MatX &Z, const SystemConfig &s, const PlannerConfig &c) : sys(s), cfg(c)
    {
        FlatSample fs{Z};
        N = fs.n_robots();
        for (int k = 0; k < 4; ++k)
            p[k] = fs.p(k);
        rho.resize(N);
        F.resize(N);
        psi.resize(N);
        f.resize(N);
        fdot.resize(N);
        guard.assign(N, false);
        const double l = sys.cable_length;
        for (int n = 0; n < N; ++n)
        {
            rho[n] = rho_derivatives(fs.chain(FlatSample::theta_col(n)), fs.chain(FlatSample::phi_col(n)));
            F[n] = fs.chain(FlatSample::force_col(n));
            psi[n] = {fs.psi(n, 0), fs.psi(n, 1)};
            const auto &r = rho[n].rho;
            f[n] = p[2] + l * r[2] + sys.gravity * kE3 + F[n][0] * r[0] / sys.robot_mass;
            fdot[n] = p[3] + l * r[3] + (F[n][1] * r[0] + F[n][0] * r[1]) / sys.robot_mass;
            const double fn = f[n].norm();
            guard[n] = fn < 1e-6 || f[n].z() / fn <= -1.0 + kHopfGuard;
        }
    }
};

// Gradient of a sample cost with respect to p, rho, F, psi derivative chains.
struct SampleGrad
{
    std::array<Vec3, 4> p;
    std::vector<std::array<Vec3, 4>> rho;
    std::vector<std::array<double, 2>> F, psi;

    explicit SampleGrad(int N) : rho(N), F(N), psi(N)
    {
        for (auto &v : p)
            v.setZero();
        for (auto &a : rho)
            for (auto &v : a)
                v.setZero();
        for (auto &a : F)
            a = {0.0, 0.0};
        for (auto &a : psi)
            a = {0.0, 0.0};
    }

    void add_thrust(const SampleContext &c, int n, const Vec3 &gf)
    {
        p[2] += gf;
        rho[n][2] += c.sys.cable_length * gf;
        rho[n][0] += c.F[n][0] / c.sys.robot_mass * gf;
        F[n][0] += c.rho[n].rho[0].dot(gf) / c.sys.robot_mass;
    }

    void add_thrust_rate(const SampleContext &c, int n, const Vec3 &gfd)
    {
        const double m = c.sys.robot_mass;
        p[3] += gfd;
        rho[n][3] += c.sys.cable_length * gfd;
        rho[n][0] += c.F[n][1] / m * gfd;
        rho[n][1] += c.F[n][0] / m * gfd;
        F[n][1] += c.rho[n].rho[0].dot(gfd) / m;
        F[n][0] += c.rho[n].rho[1].dot(gfd) / m;
    }

    // Collapse onto the flat-output derivative rows (4 x D).
    MatX to_flat(const SampleContext &c) const
    {
        MatX G = MatX::Zero(4, FlatSample::dim(c.N));
        for (int k = 0; k < 4; ++k)
            G.row(k).head<3>() = p[k].transpose();
        for (int n = 0; n < c.N; ++n)
        {
            for (int j = 0; j < 4; ++j)
            {
                double gt = 0.0, gp = 0.0;
                for (int k = j; k < 4; ++k)
                {
                    const double b = binom(k, j);
                    gt += b * rho[n][k].dot(c.rho[n].rho_theta[k - j]);
                    gp += b * rho[n][k].dot(c.rho[n].rho_phi[k - j]);
                }
                G(j, FlatSample::theta_col(n)) = gt;
                G(j, FlatSample::phi_col(n)) = gp;
            }
            G(0, FlatSample::force_col(n)) = F[n][0];
            G(1, FlatSample::force_col(n)) = F[n][1];
            G(0, FlatSample::psi_col(n)) = psi[n][0];
            G(1, FlatSample::psi_col(n)) = psi[n][1];
        }
        return G;
    }
};

inline double obstacle_penalty(const SampleContext &c, const DistanceField &field, SampleGrad &g)
{
    const auto &cfg = c.cfg;
    double J = 0.0, dL;
    Vec3 grad;
    // payload
    {
        const double e = field.distance(c.p[0], &grad);
        const double v = smoothing(cfg.d_oa_payload - e, cfg.mu, &dL);
        J += cfg.lambda_oa * v;
        g.p[0] -= cfg.lambda_oa * dL * grad;
    }
    const double l = c.sys.cable_length;
    for (int n = 0; n < c.N; ++n)
    {
        const Vec3 &r = c.rho[n].rho[0];
        auto at = [&](double dist, double safe)
        {
            const double e = field.distance(c.p[0] + dist * r, &grad);
            const double v = smoothing(safe - e, cfg.mu, &dL);
            if (dL == 0.0 && v == 0.0)
                return;
            J += cfg.lambda_oa * v;
            Vec3 gx = -cfg.lambda_oa * dL * grad;
            g.p[0] += gx;
            g.rho[n][0] += dist * gx;
        };
        at(l, cfg.d_oa_robot);
        for (int k = 1; k <= cfg.cable_samples; ++k)
            at(l * k / (cfg.cable_samples + 1.0), cfg.d_oa_cable);
    }
    return J;
}

inline double reciprocal_penalty(const SampleContext &c, SampleGrad &g)
{
    const auto &cfg = c.cfg;
    const double l2 = c.sys.cable_length * c.sys.cable_length;
    double J = 0.0, dL;
    for (int i = 0; i < c.N; ++i)
        for (int j = i + 1; j < c.N; ++j)
        {
            Vec3 d = c.rho[i].rho[0] - c.rho[j].rho[0];
            const double v = smoothing(cfg.d_ra * cfg.d_ra - l2 * d.squaredNorm(), cfg.mu, &dL);
            if (v == 0.0 && dL == 0.0)
                continue;
            J += cfg.lambda_ra * v;
            Vec3 gd = -2.0 * cfg.lambda_ra * dL * l2 * d;
            g.rho[i][0] += gd;
            g.rho[j][0] -= gd;
        }
    return J;
}

inline double velocity_penalty(const SampleContext &c, SampleGrad &g)
{
    const auto &cfg = c.cfg;
    const double l = c.sys.cable_length;
    double J = 0.0, dL;
    for (int n = 0; n < c.N; ++n)
    {
        Vec3 v = c.p[1] + l * c.rho[n].rho[1];
        const double val = smoothing(v.squaredNorm() - cfg.v_max * cfg.v_max, cfg.mu, &dL);
        if (val == 0.0 && dL == 0.0)
            continue;
        J += cfg.lambda_v * val;
        Vec3 gv = 2.0 * cfg.lambda_v * dL * v;
        g.p[1] += gv;
        g.rho[n][1] += l * gv;
    }
    return J;
}

inline double thrust_penalty(const SampleContext &c, SampleGrad &g, int *guards = nullptr)
{
    const auto &cfg = c.cfg;
    const double favg = 0.5 * (cfg.f_max + cfg.f_min), frag = 0.5 * (cfg.f_max - cfg.f_min);
    double J = 0.0, dL;
    for (int n = 0; n < c.N; ++n)
    {
        const Vec3 &f = c.f[n];
        const double fn = f.norm();
        if (fn < 1e-6)
        {
            // barrier pushing the vertical thrust component up
            const double e = cfg.f_min - f.z();
            J += cfg.lambda_f * e * e;
            g.add_thrust(c, n, Vec3(0, 0, -2.0 * cfg.lambda_f * e));
            if (guards)
                ++*guards;
            continue;
        }
        const double dev = fn - favg;
        const double val = smoothing(dev * dev - frag * frag, cfg.mu, &dL);
        if (val == 0.0 && dL == 0.0)
            continue;
        J += cfg.lambda_f * val;
        g.add_thrust(c, n, (2.0 * cfg.lambda_f * dL * dev / fn) * f);
    }
    return J;
}

inline double tilt_penalty(const SampleContext &c, SampleGrad &g, int *guards = nullptr)
{
    const auto &cfg = c.cfg;
    double J = 0.0, dL;
    for (int n = 0; n < c.N; ++n)
    {
        if (c.guard[n])
        {
            if (c.f[n].norm() >= 1e-6)
            {
                // inverted thrust direction: same barrier as the degenerate case
                const double e = cfg.f_min - c.f[n].z();
                J += cfg.lambda_tilt * e * e;
                g.add_thrust(c, n, Vec3(0, 0, -2.0 * cfg.lambda_tilt * e));
                if (guards)
                    ++*guards;
            }
            continue;
        }
        const Vec3 &f = c.f[n];
        const double fn = f.norm();
        const Vec3 z = f / fn;
        // tilt from the Hopf quaternion: 1 - 2 (qx^2 + qy^2) reduces to z3
        const double cz = std::clamp(z.z(), -1.0, 1.0);
        const double tilt = std::acos(cz);
        const double val = smoothing(tilt - cfg.tilt_max, cfg.mu, &dL);
        if (val == 0.0 && dL == 0.0)
            continue;
        J += cfg.lambda_tilt * val;
        const double sin_t = std::sqrt(std::max(1e-300, 1.0 - cz * cz));
        const double gz3 = -cfg.lambda_tilt * dL / sin_t;
        Vec3 gz = gz3 * kE3;
        g.add_thrust(c, n, (gz - z * z.dot(gz)) / fn);
    }
    return J;
}

inline double bodyrate_penalty(const SampleContext &c, SampleGrad &g)
{
    const auto &cfg = c.cfg;
    double J = 0.0, dL;
    for (int n = 0; n < c.N; ++n)
    {
        if (c.guard[n])
            continue;
        const Vec3 &f = c.f[n], &fd = c.fdot[n];
        const double fn = f.norm();
        auto [z, zd] = unitize(f, fd);
        const double psi = c.psi[n][0], psid = c.psi[n][1];
        const Vec3 w = body_rate(z, zd, psi, psid);
        const double val = smoothing(w.squaredNorm() - cfg.omega_max * cfg.omega_max, cfg.mu, &dL);
        if (val == 0.0 && dL == 0.0)
            continue;
        J += cfg.lambda_omega * val;
        const Vec3 gw = 2.0 * cfg.lambda_omega * dL * w;
        const double g1 = gw.x(), g2 = gw.y(), g3 = gw.z();
        const double sp = std::sin(psi), cp = std::cos(psi), d = 1.0 + z.z();
        const double A = z.x() * sp - z.y() * cp, B = z.x() * cp + z.y() * sp;
        Vec3 gzd(g1 * sp + g2 * cp + g3 * z.y() / d, -g1 * cp + g2 * sp - g3 * z.x() / d,
                 -(g1 * A + g2 * B) / d);
        Vec3 gz(-g1 * zd.z() * sp / d - g2 * zd.z() * cp / d - g3 * zd.y() / d,
                g1 * zd.z() * cp / d - g2 * zd.z() * sp / d + g3 * zd.x() / d,
                (g1 * zd.z() * A + g2 * zd.z() * B - g3 * (z.y() * zd.x() - z.x() * zd.y())) / (d * d));
        g.psi[n][0] += g1 * (zd.x() * cp + zd.y() * sp - zd.z() * B / d) +
                       g2 * (-zd.x() * sp + zd.y() * cp + zd.z() * A / d);
        g.psi[n][1] += g3;
        // z = f / |f|, zd = P fd / |f| with P = I - z z^T
        const double n3 = fn * fn * fn, n5 = n3 * fn * fn;
        const double ffd = f.dot(fd), fg = f.dot(gzd);
        Vec3 gf = (gz - z * z.dot(gz)) / fn;
        gf += -f * fd.dot(gzd) / n3 - ffd * gzd / n3 - fd * fg / n3 + 3.0 * ffd * fg * f / n5;
        Vec3 gfd = (gzd - z * z.dot(gzd)) / fn;
        g.add_thrust(c, n, gf);
        g.add_thrust_rate(c, n, gfd);
    }
    return J;
}

inline Vec3 coupling_residual(const SampleContext &c)
{
    Vec3 r = c.p[2] + c.sys.gravity * kE3;
    for (int n = 0; n < c.N; ++n)
        r -= c.F[n][0] * c.rho[n].rho[0] / c.sys.payload_mass;
    return r;
}

inline double coupling_penalty(const SampleContext &c, SampleGrad &g)
{
    const auto &cfg = c.cfg;
    const Vec3 r = coupling_residual(c);
    const double rn = r.norm();
    double dL;
    const double val = smoothing(rn, cfg.mu, &dL);
    if (val == 0.0 && dL == 0.0)
        return 0.0;
    const Vec3 gr = cfg.lambda_d * dL / rn * r;
    g.p[2] += gr;
    for (int n = 0; n < c.N; ++n)
    {
        g.rho[n][0] -= c.F[n][0] / c.sys.payload_mass * gr;
        g.F[n][0] -= c.rho[n].rho[0].dot(gr) / c.sys.payload_mass;
    }
    return cfg.lambda_d * val;
}

struct SampleEval
{
    double cost = 0.0;
    std::array<double, kTermCount> term{};
    MatX G; // 4 x D gradient on Z derivative rows 0..3
    int guards = 0;
};

inline SampleEval sample_penalty(const MatX &Z, const SystemConfig &sys, const PlannerConfig &cfg,
                                 const DistanceField &field, const TermMask &mask)
{
    SampleContext c(Z, sys, cfg);
    SampleGrad g(c.N);
    SampleEval e;
    if (mask.on[kObstacle])
        e.term[kObstacle] = obstacle_penalty(c, field, g);
    if (mask.on[kReciprocal])
        e.term[kReciprocal] = reciprocal_penalty(c, g);
    if (mask.on[kVelocity])
        e.term[kVelocity] = velocity_penalty(c, g);
    if (mask.on[kThrust])
        e.term[kThrust] = thrust_penalty(c, g, &e.guards);
    if (mask.on[kTilt])
        e.term[kTilt] = tilt_penalty(c, g, &e.guards);
    if (mask.on[kBodyRate])
        e.term[kBodyRate] = bodyrate_penalty(c, g);
    if (mask.on[kCoupling])
        e.term[kCoupling] = coupling_penalty(c, g);
    for (double t : e.term)
        e.cost += t;
    e.G = g.to_flat(c);
    return e;
}

struct CostBreakdown
{
    double energy = 0.0;
    std::array<double, kTermCount> term{};
    int guards = 0;

    double total() const
    {
        double s = energy;
        for (double t : term)
            s += t;
        return s;
    }
};

struct TranscriptionResult
{
    CostBreakdown parts;
    MatX grad_c;
    VecX grad_T;
};

// Trapezoidal transcription of the continuous-time penalties, kappa
// intervals per piece, with gradients on coefficients and durations.
inline TranscriptionResult transcribe(const Trajectory &tr, const SystemConfig &sys, const PlannerConfig &cfg,
                                      const DistanceField &field, const TermMask &mask)
{
    const int M = tr.pieces(), D = tr.dim(), s = tr.order_s(), nc = 2 * s, K = cfg.kappa;
    TranscriptionResult r;
    r.grad_c = MatX::Zero(tr.coeffs().rows(), D);
    r.grad_T = VecX::Zero(M);
    Eigen::RowVectorXd basis(nc);
    bool any = false;
    for (bool b : mask.on)
        any = any || b;
    if (!any)
        return r;
    for (int m = 0; m < M; ++m)
    {
        const double T = tr.durations()(m);
        for (int k = 0; k <= K; ++k)
        {
            const double wk = (k == 0 || k == K) ? 0.5 : 1.0;
            const double t = T * k / K;
            MatX Zd = tr.eval_piece(m, t, 4);
            SampleEval e = sample_penalty(Zd.topRows(4), sys, cfg, field, mask);
            r.parts.guards += e.guards;
            const double scale = T / K * wk;
            for (int q = 0; q < kTermCount; ++q)
                r.parts.term[q] += scale * e.term[q];
            double dJdt = 0.0;
            for (int j = 0; j < 4; ++j)
            {
                basis_row(nc, j, t, basis.data());
                r.grad_c.middleRows(nc * m, nc).noalias() += scale * basis.transpose() * e.G.row(j);
                dJdt += e.G.row(j).dot(Zd.row(j + 1));
            }
            r.grad_T(m) += wk * e.cost / K + scale * (static_cast<double>(k) / K) * dJdt;
        }
    }
    return r;
}

struct PlanReport
{
    CostBreakdown parts;
    LbfgsStatus status = LbfgsStatus::MaxIterations;
    int iterations = 0;
    int evaluations = 0;
    double wall_time = 0.0;

    nlohmann::json to_json() const
    {
        nlohmann::json j;
        j["status"] = to_string(status);
        j["iterations"] = iterations;
        j["evaluations"] = evaluations;
        j["wall_time_s"] = wall_time;
        j["cost"]["energy"] = parts.energy;
        for (int t = 0; t < kTermCount; ++t)
            j["cost"][term_name(t)] = parts.term[t];
        j["cost"]["total"] = parts.total();
        j["guard_hits"] = parts.guards;
        return j;
    }
};

struct PlanResult
{
    Trajectory traj;
    PlanReport report;
};

// Spatio-temporal optimisation over unconstrained auxiliary parameters.
class TrajectoryOptimizer
{
  public:
    TermMask mask;

    TrajectoryOptimizer(const SystemConfig &sys, const PlannerConfig &cfg, const DistanceField &field)
        : sys_(sys), cfg_(cfg), field_(field)
    {
        sys_.validate();
        cfg_.validate();
    }

    const PlannerConfig &config() const { return cfg_; }
    const SystemConfig &system() const { return sys_; }

    void setup(const MatX &head, const MatX &tail, const MatX &w0, const VecX &T0)
    {
        const int D = FlatSample::dim(sys_.n_robots);
        if (head.cols() != D || tail.cols() != D || (w0.rows() > 0 && w0.cols() != D) ||
            w0.rows() != T0.size() - 1)
            throw InputError("planner: boundary/seed shape mismatch");
        head_ = head;
        tail_ = tail;
        w0_ = w0.rows() > 0 ? w0 : MatX(0, D);
        T0_ = T0;
        kind_.assign(D, Kind::Free);
        band_.assign(D, {0.0, 0.0});
        pinned_.assign(w0_.rows(), cfg_.fix_payload_junctions);
        for (int n = 0; n < sys_.n_robots; ++n)
        {
            if (cfg_.use_bands)
            {
                kind_[FlatSample::theta_col(n)] = Kind::Mapped;
                band_[FlatSample::theta_col(n)] = theta_band(cfg_);
                kind_[FlatSample::phi_col(n)] = Kind::Mapped;
                band_[FlatSample::phi_col(n)] = phi_band(n, sys_.n_robots);
            }
            kind_[FlatSample::force_col(n)] = Kind::Mapped;
            band_[FlatSample::force_col(n)] = force_band(cfg_);
            kind_[FlatSample::psi_col(n)] = cfg_.free_yaw ? Kind::Free : Kind::Fixed;
        }
    }

    // Hold the payload position at interior junction j to its seed value.
    void pin_payload(int j)
    {
        if (j < 0 || j >= static_cast<int>(pinned_.size()))
            throw InputError("planner: pinned junction out of range");
        pinned_[j] = true;
    }

    int num_variables() const
    {
        int n = 0;
        for (int j = 0; j < w0_.rows(); ++j)
            for (int d = 0; d < w0_.cols(); ++d)
                n += kind(j, d) != Kind::Fixed;
        return n + (cfg_.fix_durations ? 0 : static_cast<int>(T0_.size()));
    }

    VecX initial_point() const
    {
        VecX x(num_variables());
        int i = 0;
        for (int j = 0; j < w0_.rows(); ++j)
            for (int d = 0; d < w0_.cols(); ++d)
            {
                if (kind(j, d) == Kind::Free)
                    x(i++) = w0_(j, d);
                else if (kind(j, d) == Kind::Mapped)
                    x(i++) = inverse_vectorial(w0_(j, d), band_[d].lo, band_[d].hi);
            }
        if (!cfg_.fix_durations)
            for (int m = 0; m < T0_.size(); ++m)
                x(i++) = std::log(T0_(m));
        return x;
    }

    void decode(const VecX &x, MatX &w, VecX &T) const
    {
        w = w0_;
        T = T0_;
        int i = 0;
        for (int j = 0; j < w.rows(); ++j)
            for (int d = 0; d < w.cols(); ++d)
            {
                if (kind(j, d) == Kind::Free)
                    w(j, d) = x(i++);
                else if (kind(j, d) == Kind::Mapped)
                    w(j, d) = eliminate_vectorial(x(i++), band_[d].lo, band_[d].hi).value;
            }
        if (!cfg_.fix_durations)
            for (int m = 0; m < T.size(); ++m)
                T(m) = eliminate_temporal(x(i++)).value;
    }

    Trajectory trajectory(const VecX &x) const
    {
        MatX w;
        VecX T;
        decode(x, w, T);
        return Trajectory::build(head_, tail_, w, T);
    }

    double cost(const VecX &x, VecX &grad, CostBreakdown *parts = nullptr) const
    {
        MatX w;
        VecX T;
        decode(x, w, T);
        Trajectory tr = Trajectory::build(head_, tail_, w, T);
        TranscriptionResult tc = transcribe(tr, sys_, cfg_, field_, mask);
        if (mask.energy)
        {
            auto e = tr.energy(energy_weights(sys_.n_robots, cfg_.lambda_Z), cfg_.lambda_T);
            tc.parts.energy = e.cost;
            tc.grad_c += e.grad_c;
            tc.grad_T += e.grad_T;
        }
        auto bp = tr.backprop(tc.grad_c, tc.grad_T);
        grad.resize(x.size());
        int i = 0;
        for (int j = 0; j < w.rows(); ++j)
            for (int d = 0; d < w.cols(); ++d)
            {
                if (kind(j, d) == Kind::Free)
                    grad(i) = bp.grad_w(j, d), ++i;
                else if (kind(j, d) == Kind::Mapped)
                {
                    grad(i) = bp.grad_w(j, d) * eliminate_vectorial(x(i), band_[d].lo, band_[d].hi).deriv;
                    ++i;
                }
            }
        if (!cfg_.fix_durations)
            for (int m = 0; m < T.size(); ++m, ++i)
                grad(i) = bp.grad_T(m) * eliminate_temporal(x(i)).deriv;
        if (parts)
            *parts = tc.parts;
        return tc.parts.total();
    }

    // Flatness maps must be evaluable at every quadrature point of the seed.
    void check_seed() const
    {
        Trajectory tr = Trajectory::build(head_, tail_, w0_, T0_);
        for (int m = 0; m < tr.pieces(); ++m)
            for (int k = 0; k <= cfg_.kappa; ++k)
            {
                SampleContext c(tr.eval_piece(m, tr.durations()(m) * k / cfg_.kappa, 3), sys_, cfg_);
                for (int n = 0; n < c.N; ++n)
                    if (c.guard[n])
                        throw SeedInfeasible("seed has degenerate or inverted thrust at piece " + std::to_string(m));
            }
    }

    PlanResult optimize()
    {
        check_seed();
        auto t0 = std::chrono::steady_clock::now();
        auto fg = [&](const VecX &x, VecX &g) { return cost(x, g); };
        LbfgsResult lr = lbfgs_minimize(fg, initial_point(), cfg_.solver);
        PlanResult out;
        out.traj = trajectory(lr.x);
        VecX g;
        cost(lr.x, g, &out.report.parts);
        out.report.status = lr.status;
        out.report.iterations = lr.iterations;
        out.report.evaluations = lr.evaluations;
        out.report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return out;
    }

  private:
    enum class Kind
    {
        Free,
        Fixed,
        Mapped
    };
    Kind kind(int j, int d) const { return d < 3 && pinned_[j] ? Kind::Fixed : kind_[d]; }

    SystemConfig sys_;
    PlannerConfig cfg_;
    const DistanceField &field_;
    MatX head_, tail_, w0_;
    VecX T0_;
    std::vector<Kind> kind_;
    std::vector<bool> pinned_;
    std::vector<ChannelBand> band_;
};

// Dense post-hoc check of an optimised trajectory.
struct FeasibilityReport
{
    double max_speed = 0.0;
    double min_thrust = 1e9, max_thrust = 0.0;
    double max_tilt = 0.0;
    double max_rate = 0.0;
    double min_tension = 1e9, max_tension = -1e9;
    double max_coupling = 0.0;
    double min_clear_payload = 1e9, min_clear_robot = 1e9, min_clear_cable = 1e9;
    double min_robot_distance = 1e9;
    double max_arg_excess = -1e9; // largest v/f/tilt/rate smoothing argument minus mu
    bool phi_in_band = true;
    bool theta_in_band = true;
    int degenerate = 0;
    int samples = 0;

    bool collision_free(const PlannerConfig &cfg) const
    {
        return min_clear_payload > 0.0 && min_clear_robot > 0.0 && min_clear_cable > 0.0 &&
               min_robot_distance > 0.5 * cfg.d_ra && degenerate == 0;
    }

    bool dynamically_feasible(const PlannerConfig &cfg) const
    {
        return max_speed <= cfg.v_max * 1.01 && min_thrust >= cfg.f_min * 0.99 && max_thrust <= cfg.f_max * 1.01 &&
               max_tilt <= cfg.tilt_max + 0.01 && max_rate <= cfg.omega_max * 1.01 && min_tension > cfg.F_min &&
               max_tension < cfg.F_max && max_coupling < 0.05 && degenerate == 0;
    }

    nlohmann::json to_json() const
    {
        return {{"max_speed", max_speed},
                {"min_thrust", min_thrust},
                {"max_thrust", max_thrust},
                {"max_tilt", max_tilt},
                {"max_rate", max_rate},
                {"min_tension", min_tension},
                {"max_tension", max_tension},
                {"max_coupling_residual", max_coupling},
                {"min_clearance_payload", min_clear_payload},
                {"min_clearance_robot", min_clear_robot},
                {"min_clearance_cable", min_clear_cable},
                {"min_robot_distance", min_robot_distance},
                {"max_smoothing_arg_excess", max_arg_excess},
                {"phi_in_band", phi_in_band},
                {"samples", samples}};
    }
};

inline FeasibilityReport assess_trajectory(const Trajectory &tr, const SystemConfig &sys, const PlannerConfig &cfg,
                                           const DistanceField &field, int per_piece = -1)
{
    if (per_piece < 0)
        per_piece = 10 * cfg.kappa;
    FeasibilityReport r;
    const int N = sys.n_robots;
    const double l = sys.cable_length;
    const double favg = 0.5 * (cfg.f_max + cfg.f_min), frag = 0.5 * (cfg.f_max - cfg.f_min);
    auto excess = [&](double arg) { r.max_arg_excess = std::max(r.max_arg_excess, arg - cfg.mu); };
    for (int m = 0; m < tr.pieces(); ++m)
        for (int k = 0; k <= per_piece; ++k)
        {
            MatX Z = tr.eval_piece(m, tr.durations()(m) * k / per_piece, 3);
            SampleContext c(Z, sys, cfg);
            ++r.samples;
            r.min_clear_payload = std::min(r.min_clear_payload, field.distance(c.p[0], nullptr));
            const double cr = coupling_residual(c).norm();
            r.max_coupling = std::max(r.max_coupling, cr);
            for (int n = 0; n < N; ++n)
            {
                const Vec3 &rho = c.rho[n].rho[0];
                Vec3 v = c.p[1] + l * c.rho[n].rho[1];
                r.max_speed = std::max(r.max_speed, v.norm());
                excess(v.squaredNorm() - cfg.v_max * cfg.v_max);
                const double fn = c.f[n].norm();
                r.min_thrust = std::min(r.min_thrust, fn);
                r.max_thrust = std::max(r.max_thrust, fn);
                excess((fn - favg) * (fn - favg) - frag * frag);
                r.min_tension = std::min(r.min_tension, c.F[n][0]);
                r.max_tension = std::max(r.max_tension, c.F[n][0]);
                const double th = Z(0, FlatSample::theta_col(n)), ph = Z(0, FlatSample::phi_col(n));
                auto pb = phi_band(n, N);
                auto tb = theta_band(cfg);
                // bands are imposed on interior junctions only
                const bool junction = k == 0 && m > 0;
                if (junction && (ph <= pb.lo || ph >= pb.hi))
                    r.phi_in_band = false;
                if (junction && (th <= tb.lo || th >= tb.hi))
                    r.theta_in_band = false;
                if (c.guard[n])
                {
                    ++r.degenerate;
                    continue;
                }
                auto [z, zd] = unitize(c.f[n], c.fdot[n]);
                const double tilt = std::acos(std::clamp(z.z(), -1.0, 1.0));
                r.max_tilt = std::max(r.max_tilt, tilt);
                excess(tilt - cfg.tilt_max);
                Vec3 w = body_rate(z, zd, c.psi[n][0], c.psi[n][1]);
                r.max_rate = std::max(r.max_rate, w.norm());
                excess(w.squaredNorm() - cfg.omega_max * cfg.omega_max);
                r.min_clear_robot = std::min(r.min_clear_robot, field.distance(c.p[0] + l * rho, nullptr));
                for (int q = 1; q <= cfg.cable_samples; ++q)
                    r.min_clear_cable = std::min(
                        r.min_clear_cable, field.distance(c.p[0] + l * q / (cfg.cable_samples + 1.0) * rho, nullptr));
                for (int j = n + 1; j < N; ++j)
                    r.min_robot_distance = std::min(r.min_robot_distance, l * (rho - c.rho[j].rho[0]).norm());
            }
        }
    return r;
}

} // namespace marts
