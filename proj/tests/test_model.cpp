#include "marts/flatness.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace marts;

namespace
{

WorldState hover_world(const SystemConfig &cfg, double theta, std::vector<ControlInput> &u)
{
    WorldState w;
    w.payload.p = Vec3(0.3, -0.2, 1.0);
    const double F = cfg.payload_mass * cfg.gravity / (cfg.n_robots * std::sin(theta));
    u.clear();
    for (int n = 0; n < cfg.n_robots; ++n)
    {
        Vec3 rho = rho_from_angles(theta, 2.0 * M_PI * n / cfg.n_robots);
        RobotState r;
        r.p = robot_position(w.payload.p, rho, cfg.cable_length);
        Vec3 f = cfg.gravity * kE3 + F * rho / cfg.robot_mass;
        r.q = attitude_from_hopf(f, 0.0);
        w.robots.push_back(r);
        w.tension.push_back(F);
        w.slack.push_back(false);
        u.push_back({f.norm(), Vec3::Zero()});
    }
    return w;
}

} // namespace

TEST(Model, RhoFromAnglesAxisCases)
{
    EXPECT_NEAR((rho_from_angles(0.0, 0.0) - Vec3(1, 0, 0)).norm(), 0.0, 1e-15);
    EXPECT_NEAR((rho_from_angles(M_PI / 2, 0.7) - Vec3(0, 0, 1)).norm(), 0.0, 1e-15);
}

TEST(Model, RhoFromAnglesMatchesRotationConstruction)
{
    // Elevation theta, azimuth phi: rotate e1 about -y by theta then about z by phi.
    auto other = [](double th, double ph)
    {
        return Vec3(Eigen::AngleAxisd(ph, Vec3::UnitZ()) * Eigen::AngleAxisd(-th, Vec3::UnitY()) * Vec3::UnitX());
    };
    EXPECT_NEAR((rho_from_angles(0.3, 1.1) - other(0.3, 1.1)).norm(), 0.0, 1e-14);
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> U(-10, 10);
    for (int i = 0; i < 1000; ++i)
    {
        double th = U(rng), ph = U(rng);
        Vec3 r = rho_from_angles(th, ph);
        EXPECT_NEAR(r.norm(), 1.0, 1e-12);
        EXPECT_NEAR((r - other(th, ph)).norm(), 0.0, 1e-12);
    }
}

TEST(Model, RobotPosition)
{
    EXPECT_NEAR((robot_position(Vec3::Zero(), Vec3(0, 0, 1), 1.2) - Vec3(0, 0, 1.2)).norm(), 0.0, 1e-15);
    Vec3 p(1, 2, 3);
    EXPECT_EQ(robot_position(p, Vec3(0, 1, 0), 0.0), p);
    std::mt19937 rng(2);
    std::uniform_real_distribution<double> U(-5, 5);
    for (int i = 0; i < 1000; ++i)
    {
        Vec3 q(U(rng), U(rng), U(rng));
        Vec3 rho = rho_from_angles(U(rng), U(rng));
        EXPECT_NEAR((robot_position(q, rho, 1.2) - q).norm(), 1.2, 1e-12);
    }
}

TEST(Model, PayloadAccel)
{
    SystemConfig cfg;
    std::vector<CableState> c;
    for (int n = 0; n < 3; ++n)
        c.push_back(CableState::from_angles(M_PI / 2, 0.0, cfg.payload_mass * cfg.gravity / 3));
    EXPECT_NEAR(payload_accel(c, cfg).norm(), 0.0, 1e-12);
    for (auto &x : c)
        x.tension = 0.0;
    EXPECT_NEAR((payload_accel(c, cfg) - Vec3(0, 0, -cfg.gravity)).norm(), 0.0, 1e-15);

    c = {CableState::from_angles(0.8, 0.1, 0.9), CableState::from_angles(0.6, 2.2, 0.4),
         CableState::from_angles(0.95, -2.0, 1.3)};
    double ax = 0, ay = 0, az = -cfg.gravity;
    for (auto &x : c)
    {
        ax += x.tension * std::cos(x.theta) * std::cos(x.phi) / 0.2;
        ay += x.tension * std::cos(x.theta) * std::sin(x.phi) / 0.2;
        az += x.tension * std::sin(x.theta) / 0.2;
    }
    Vec3 a = payload_accel(c, cfg);
    EXPECT_NEAR(a.x(), ax, 1e-12);
    EXPECT_NEAR(a.y(), ay, 1e-12);
    EXPECT_NEAR(a.z(), az, 1e-12);
}

TEST(Model, AccelerationsLinearInTension)
{
    SystemConfig cfg;
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> U(0, 2);
    for (int i = 0; i < 100; ++i)
    {
        std::vector<CableState> a, b, ab;
        for (int n = 0; n < 3; ++n)
        {
            double th = U(rng) * 0.7, ph = U(rng) * 3, Fa = U(rng), Fb = U(rng);
            a.push_back(CableState::from_angles(th, ph, Fa));
            b.push_back(CableState::from_angles(th, ph, Fb));
            ab.push_back(CableState::from_angles(th, ph, Fa + Fb));
        }
        Vec3 g = -cfg.gravity * kE3;
        Vec3 lhs = payload_accel(ab, cfg) - g;
        Vec3 rhs = payload_accel(a, cfg) - g + payload_accel(b, cfg) - g;
        EXPECT_NEAR((lhs - rhs).norm(), 0.0, 1e-12);

        RobotState s;
        s.q = Quat(Eigen::AngleAxisd(U(rng), Vec3(U(rng), U(rng), 1).normalized()));
        ControlInput u{U(rng) * 10, Vec3::Zero()};
        Vec3 r0 = robot_accel(s, u, CableState::from_angles(0.5, 0.5, 0.0), cfg);
        Vec3 ra = robot_accel(s, u, a[0], cfg) - r0;
        Vec3 rab = robot_accel(s, u, ab[0], cfg) - r0;
        Vec3 rb = robot_accel(s, u, b[0], cfg) - r0;
        EXPECT_NEAR((rab - ra - rb).norm(), 0.0, 1e-12);
        EXPECT_NEAR((ra + a[0].tension * a[0].rho / cfg.robot_mass).norm(), 0.0, 1e-12);
    }
}

TEST(Model, RobotAccelHover)
{
    SystemConfig cfg;
    RobotState s;
    EXPECT_NEAR(robot_accel(s, {cfg.gravity, Vec3::Zero()}, CableState::from_angles(0, 0, 0), cfg).norm(), 0.0,
                1e-15);
    CableState c = CableState::from_angles(M_PI / 2, 0.0, 0.654);
    double f = cfg.gravity + 0.654 / cfg.robot_mass;
    EXPECT_NEAR(f, 11.854, 1e-3);
    EXPECT_NEAR(robot_accel(s, {f, Vec3::Zero()}, c, cfg).norm(), 0.0, 1e-12);
}

TEST(Model, StepWorldEquilibriumIsFixedPoint)
{
    SystemConfig cfg;
    std::vector<ControlInput> u;
    WorldState w0 = hover_world(cfg, 0.9, u);
    WorldState w = w0;
    for (int i = 0; i < 1000; ++i)
        w = step_world(w, u, 1e-3, cfg);
    EXPECT_NEAR(w.time, 1.0, 1e-12);
    EXPECT_LT((w.payload.p - w0.payload.p).norm(), 1e-9);
    EXPECT_LT(w.payload.v.norm(), 1e-9);
    for (int n = 0; n < 3; ++n)
    {
        EXPECT_LT((w.robots[n].p - w0.robots[n].p).norm(), 1e-9);
        EXPECT_LT(w.robots[n].omega.norm(), 1e-9);
        EXPECT_NEAR(w.tension[n], w0.tension[n], 1e-9);
        EXPECT_FALSE(w.slack[n]);
    }
}

TEST(Model, UnactuatedEnergyConserved)
{
    SystemConfig cfg;
    std::vector<ControlInput> u;
    WorldState w = hover_world(cfg, 0.4, u);
    const double Omega = 3.0;
    for (auto &r : w.robots)
    {
        r.v = (Omega * kE3).cross(r.p - w.payload.p);
        r.omega = Vec3(0.5, -0.3, 1.0);
    }
    for (auto &x : u)
        x = ControlInput{};
    const double e0 = world_energy(w, cfg);
    double ke0 = 0.0;
    for (auto &r : w.robots)
        ke0 += 0.5 * cfg.robot_mass * r.v.squaredNorm() + 0.5 * r.omega.dot(cfg.inertia * r.omega);
    int slack = 0;
    for (int i = 0; i < 1000; ++i)
    {
        w = step_world(w, u, 1e-3, cfg);
        for (bool s : w.slack)
            slack += s;
    }
    EXPECT_EQ(slack, 0);
    const double rel = std::abs(world_energy(w, cfg) - e0) / ke0;
    EXPECT_LT(rel, 1e-5) << "relative energy drift " << rel;
    for (auto &r : w.robots)
        EXPECT_NEAR((r.p - w.payload.p).norm(), cfg.cable_length, 1e-6);
}

TEST(Model, StepWorldRejectsBadStep)
{
    SystemConfig cfg;
    std::vector<ControlInput> u;
    WorldState w = hover_world(cfg, 0.9, u);
    EXPECT_THROW(step_world(w, u, 0.0, cfg), InputError);
    EXPECT_THROW(step_world(w, u, 0.02, cfg), InputError);
}

TEST(Model, SlackFlagWhenRobotsDive)
{
    SystemConfig cfg;
    std::vector<ControlInput> u;
    WorldState w = hover_world(cfg, 0.9, u);
    for (auto &r : w.robots)
        r.v = Vec3(0, 0, -3.0);
    w = step_world(w, u, 1e-3, cfg);
    for (int n = 0; n < 3; ++n)
    {
        EXPECT_TRUE(w.slack[n]);
        EXPECT_EQ(w.tension[n], 0.0);
    }
}

TEST(Model, QuaternionNormPreserved)
{
    SystemConfig cfg;
    std::vector<ControlInput> u;
    WorldState w = hover_world(cfg, 0.9, u);
    for (auto &x : u)
        x.torque = Vec3(1e-4, -2e-4, 5e-5);
    for (int i = 0; i < 200; ++i)
    {
        w = step_world(w, u, 1e-3, cfg);
        for (auto &r : w.robots)
            EXPECT_NEAR(r.q.norm(), 1.0, 1e-9);
    }
}

TEST(Model, ConfigParse)
{
    std::istringstream ok("# table values\npayload_mass = 0.15\nrobot_mass=0.32\ncable_length = 1.0 # m\n"
                          "n_robots = 4\ninertia = 1e-3 2e-3 3e-3\n");
    SystemConfig c = SystemConfig::parse(ok);
    EXPECT_EQ(c.n_robots, 4);
    EXPECT_DOUBLE_EQ(c.payload_mass, 0.15);
    EXPECT_DOUBLE_EQ(c.cable_length, 1.0);
    EXPECT_DOUBLE_EQ(c.inertia(2, 2), 3e-3);

    std::istringstream bad("payload_mass = 0.2\ncable_length = abc\n");
    try
    {
        SystemConfig::parse(bad);
        FAIL();
    }
    catch (const InputError &e)
    {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
    std::istringstream neg("payload_mass = -1\n");
    EXPECT_THROW(SystemConfig::parse(neg), InputError);
    std::istringstream unknown("wingspan = 3\n");
    EXPECT_THROW(SystemConfig::parse(unknown), InputError);
}

TEST(Model, CsvRowHasHeaderWidth)
{
    SystemConfig cfg;
    std::vector<ControlInput> u;
    WorldState w = hover_world(cfg, 0.9, u);
    std::ostringstream h, r;
    write_csv_header(h, 3);
    write_csv_row(r, w);
    auto count = [](const std::string &s) { return std::count(s.begin(), s.end(), ','); };
    EXPECT_EQ(count(h.str()), count(r.str()));
    EXPECT_EQ(count(h.str()), 6 + 3 * 13 + 3 * 3);
}
