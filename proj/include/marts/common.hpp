#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>
#include <stdexcept>
#include <string>

namespace marts
{

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline const Vec3 kE3(0.0, 0.0, 1.0);

struct Error : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

struct DegenerateThrust : Error
{
    DegenerateThrust() : Error("degenerate thrust vector") {}
};

struct HopfSingularity : Error
{
    HopfSingularity() : Error("hopf map singular (inverted attitude)") {}
};

struct SingularSystem : Error
{
    using Error::Error;
};

struct OutOfDomain : Error
{
    using Error::Error;
};

struct EmptyGrid : Error
{
    EmptyGrid() : Error("empty occupancy grid") {}
};

struct NoPath : Error
{
    using Error::Error;
};

struct SeedInfeasible : Error
{
    using Error::Error;
};

struct InputError : Error
{
    using Error::Error;
};

struct InsufficientSamples : Error
{
    using Error::Error;
};

struct Divergence : Error
{
    using Error::Error;
};

// Binomial coefficient for the small orders used by derivative jets.
inline double binom(int n, int k)
{
    double r = 1.0;
    for (int i = 1; i <= k; ++i)
        r = r * (n - k + i) / i;
    return r;
}

inline double factorial_ratio(int n, int k)
{
    // n! / (n-k)!
    double r = 1.0;
    for (int i = 0; i < k; ++i)
        r *= (n - i);
    return r;
}

inline Mat3 skew(const Vec3 &v)
{
    Mat3 m;
    m << 0.0, -v.z(), v.y(),
        v.z(), 0.0, -v.x(),
        -v.y(), v.x(), 0.0;
    return m;
}

} // namespace marts
