#include "marts/control.hpp"

#include <gtest/gtest.h>

using namespace marts;

namespace
{

// Steady-state gain of the filter on a sine of frequency f.
double sine_gain(double f, double cutoff = 20.0, double rate = 1000.0 / 3.0)
{
    LowPassFilter<1> lp(cutoff, rate);
    Eigen::Matrix<double, 1, 1> x;
    x(0) = 0.0;
    lp.reset(x);
    double peak = 0.0;
    const int n = static_cast<int>(rate * 4.0);
    for (int k = 0; k < n; ++k)
    {
        x(0) = std::sin(2.0 * M_PI * f * k / rate);
        const double y = lp.step(x)(0);
        if (k > n / 2)
            peak = std::max(peak, std::abs(y));
    }
    return peak;
}

double butterworth_gain(double f, double cutoff, double rate)
{
    const double r = std::tan(M_PI * f / rate) / std::tan(M_PI * cutoff / rate);
    return 1.0 / std::sqrt(1.0 + r * r * r * r);
}

} // namespace

TEST(Filter, UnitDcGain)
{
    LowPassFilter<3> lp(20.0, 1000.0 / 3.0);
    const Vec3 x(1.0, -2.0, 0.5);
    lp.reset(Vec3::Zero());
    Vec3 y;
    for (int k = 0; k < 400; ++k)
        y = lp.step(x);
    EXPECT_LT((y - x).norm(), 1e-9);
}

TEST(Filter, FirstSamplePrimes)
{
    LowPassFilter<3> lp(20.0, 1000.0 / 3.0);
    const Vec3 x(3.0, 1.0, -1.0);
    EXPECT_LT((lp.step(x) - x).norm(), 1e-12);
    EXPECT_TRUE(lp.primed());
}

TEST(Filter, CutoffIsMinusThreeDecibels)
{
    EXPECT_NEAR(sine_gain(20.0), M_SQRT1_2, 0.01);
}

TEST(Filter, StopbandMatchesButterworth)
{
    for (double f : {60.0, 100.0, 150.0})
        EXPECT_NEAR(sine_gain(f), butterworth_gain(f, 20.0, 1000.0 / 3.0), 0.005) << f;
    EXPECT_LT(sine_gain(100.0), 0.06);
}

TEST(Filter, RejectsBadCutoff)
{
    EXPECT_THROW(LowPassFilter<3>(200.0, 1000.0 / 3.0), InputError);
    EXPECT_THROW(LowPassFilter<3>(0.0, 100.0), InputError);
}

TEST(Tension, HoverInversion)
{
    const double m = 0.9, g = 9.81, T = 1.3;
    // cable pulls the hovering robot straight down
    const Vec3 thrust_vec = (g + T / m) * kE3;
    auto e = estimate_tension(Vec3::Zero(), thrust_vec, m, g);
    EXPECT_NEAR(e.magnitude, T, 1e-12);
    EXPECT_LT((e.force - Vec3(0, 0, -T)).norm(), 1e-12);
    EXPECT_LT((e.rho - kE3).norm(), 1e-12);
}

TEST(Tension, FreeFlightIsZero)
{
    const Vec3 a(1.0, -0.5, 0.2);
    auto e = estimate_tension(a, a + 9.81 * kE3, 0.9, 9.81);
    EXPECT_LT(e.magnitude, 1e-12);
}

TEST(Tension, DegenerateHoldsDirection)
{
    TensionEstimate prev;
    prev.rho = Vec3(1.0, 0.0, 1.0).normalized();
    auto e = estimate_tension(Vec3::Zero(), 9.81 * kE3, 0.9, 9.81, &prev);
    EXPECT_LT((e.rho - prev.rho).norm(), 1e-15);
}

TEST(Outer, IndiFixedPoint)
{
    SystemConfig sys;
    ControllerConfig cfg;
    RobotReference ref;
    ref.p = Vec3(1, 2, 3);
    ref.v = Vec3(0.5, 0, 0);
    ref.a = Vec3(0.3, -0.1, 0.2);
    const Vec3 thrust_vec(0.4, 0.2, 11.0);
    // tracking exactly with the measured acceleration equal to the reference
    auto c = outer_loop(ref.p, ref.v, ref, ref.a, thrust_vec, cfg, sys);
    EXPECT_LT((c.f - thrust_vec).norm(), 1e-12);
    EXPECT_NEAR(c.thrust, thrust_vec.norm(), 1e-12);
    // a position error adds Kp e to the increment
    auto d = outer_loop(ref.p - Vec3(0.1, 0, 0), ref.v, ref, ref.a, thrust_vec, cfg, sys);
    EXPECT_NEAR((d.f - c.f).x(), cfg.Kp.x() * 0.1, 1e-12);
}

TEST(Outer, ReferenceForceLaw)
{
    SystemConfig sys;
    ControllerConfig cfg;
    cfg.reference_force = true;
    RobotReference ref;
    ref.a = Vec3(1.0, 0.0, 0.0);
    ref.planned_cable = Vec3(0.0, 0.0, 0.5);
    auto c = outer_loop(Vec3::Zero(), Vec3::Zero(), ref, Vec3(5, 5, 5), Vec3(9, 9, 9), cfg, sys);
    const Vec3 expect = ref.a + sys.gravity * kE3 + ref.planned_cable / sys.robot_mass;
    EXPECT_LT((c.f - expect).norm(), 1e-12);
}

TEST(Outer, DegenerateKeepsPreviousAxis)
{
    SystemConfig sys;
    ControllerConfig cfg;
    RobotReference ref;
    const Vec3 prev = Vec3(0.1, 0.0, 1.0).normalized();
    auto c = outer_loop(Vec3::Zero(), Vec3::Zero(), ref, Vec3::Zero(), Vec3::Zero(), cfg, sys, prev);
    EXPECT_TRUE(c.degenerate);
    EXPECT_LT((c.z - prev).norm(), 1e-15);
}

TEST(Attitude, ErrorIsBodyRotationVector)
{
    const Quat q(Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()));
    const Vec3 axis = Vec3(-1, 0.5, 2).normalized();
    const Quat qd = q * Quat(Eigen::AngleAxisd(0.3, axis));
    EXPECT_LT((attitude_error(q, qd) - 0.3 * axis).norm(), 1e-12);
    // the double cover does not change the error
    Quat neg = qd;
    neg.coeffs() = -neg.coeffs();
    EXPECT_LT((attitude_error(q, neg) - 0.3 * axis).norm(), 1e-12);
    EXPECT_LT(attitude_error(q, q).norm(), 1e-15);
}

TEST(Attitude, ShortestRotation)
{
    const Quat q = Quat::Identity();
    const Quat qd(Eigen::AngleAxisd(1.5 * M_PI, kE3));
    const Vec3 e = attitude_error(q, qd);
    EXPECT_NEAR(e.norm(), 0.5 * M_PI, 1e-12);
    EXPECT_LT(e.z(), 0.0);
}

TEST(Inner, FixedPointReturnsMeasuredTorque)
{
    SystemConfig sys;
    ControllerConfig cfg;
    InnerState st;
    const Vec3 z = Vec3(0.2, -0.1, 1.0).normalized();
    const Quat q = attitude_from_hopf(z, 0.4);
    const Vec3 omega_d(0.1, 0.2, -0.3), omega_dot_d(0.5, 0.0, 0.1), tau(0.01, -0.02, 0.003);
    auto c = inner_loop(q, z, 0.4, omega_d, omega_dot_d, tau, omega_d, omega_dot_d, cfg, sys, st, 0.003);
    EXPECT_LT(c.theta_e.norm(), 1e-9);
    EXPECT_LT((c.torque - tau).norm(), 1e-9);
}

TEST(Inner, IntegratorClamped)
{
    SystemConfig sys;
    ControllerConfig cfg;
    InnerState st;
    const Quat q = Quat::Identity();
    for (int k = 0; k < 10000; ++k)
        inner_loop(q, kE3, 0.0, Vec3(0, 0, 5.0), Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), cfg, sys,
                   st, 0.003);
    EXPECT_NEAR(cfg.K_I.z() * st.integral.z(), cfg.integrator_limit, 1e-12);
    EXPECT_EQ(st.integral.x(), 0.0);
}

TEST(MassEstimate, ConstantHistory)
{
    const double g = 9.81;
    std::vector<std::vector<Vec3>> h(3, std::vector<Vec3>(50, Vec3(0.1, 0.0, 0.15 * g / 3.0)));
    auto m = estimate_payload_mass(h, 40, g);
    EXPECT_NEAR(m.mass, 0.15, 1e-12);
    EXPECT_NEAR(m.relative_std, 0.0, 1e-12);
    EXPECT_FALSE(m.excessive_variance);
}

TEST(MassEstimate, UsesLatestWindow)
{
    std::vector<std::vector<Vec3>> h(2);
    for (int k = 0; k < 20; ++k)
        for (auto &r : h)
            r.push_back(Vec3(0, 0, k < 10 ? 100.0 : 1.0));
    EXPECT_NEAR(estimate_payload_mass(h, 10, 1.0).mass, 2.0, 1e-12);
}

TEST(MassEstimate, InsufficientSamples)
{
    std::vector<std::vector<Vec3>> h(3, std::vector<Vec3>(5, kE3));
    EXPECT_THROW(estimate_payload_mass(h, 10, 9.81), InsufficientSamples);
    EXPECT_THROW(estimate_payload_mass({}, 10, 9.81), InsufficientSamples);
}

TEST(MassEstimate, VarianceFlag)
{
    std::vector<std::vector<Vec3>> h(1);
    for (int k = 0; k < 100; ++k)
        h[0].push_back(Vec3(0, 0, k % 2 ? 1.5 : 0.5));
    auto m = estimate_payload_mass(h, 100, 1.0);
    EXPECT_NEAR(m.mass, 1.0, 1e-12);
    EXPECT_TRUE(m.excessive_variance);
}

TEST(Config, Validation)
{
    ControllerConfig c;
    EXPECT_NO_THROW(c.validate());
    c.Kp.x() = -1.0;
    EXPECT_THROW(c.validate(), InputError);
    c = ControllerConfig{};
    c.window = 0;
    EXPECT_THROW(c.validate(), InputError);
}
