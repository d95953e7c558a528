#pragma once

#include "marts/common.hpp"

#include <deque>

namespace marts
{

struct LbfgsParams
{
    int memory = 8;
    double g_tol = 1e-5;     // infinity norm of the gradient
    double rel_tol = 1e-8;   // relative decrease over `past` iterations
    int past = 5;
    int max_iter = 3000;
    int max_linesearch = 60;
    double c1 = 1e-4;
    double c2 = 0.9;
};

enum class LbfgsStatus
{
    GradientConverged,
    RelativeDecrease,
    MaxIterations,
    LineSearchFailure,
    NonFiniteStart,
};

inline const char *to_string(LbfgsStatus s)
{
    switch (s)
    {
    case LbfgsStatus::GradientConverged:
        return "gradient_converged";
    case LbfgsStatus::RelativeDecrease:
        return "relative_decrease";
    case LbfgsStatus::MaxIterations:
        return "max_iterations";
    case LbfgsStatus::LineSearchFailure:
        return "line_search_failure";
    case LbfgsStatus::NonFiniteStart:
        return "non_finite_start";
    }
    return "unknown";
}

struct LbfgsResult
{
    VecX x;
    double f = 0.0;
    int iterations = 0;
    int evaluations = 0;
    LbfgsStatus status = LbfgsStatus::MaxIterations;
};

namespace detail
{

// Minimiser of the cubic through (a, fa, ga), (b, fb, gb), or NaN.
inline double cubic_min(double a, double fa, double ga, double b, double fb, double gb)
{
    const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    const double disc = d1 * d1 - ga * gb;
    if (disc < 0.0)
        return std::numeric_limits<double>::quiet_NaN();
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    return b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
}

} // namespace detail

// fg(x, g) returns f(x) and writes the gradient into g.
template <class Fn> LbfgsResult lbfgs_minimize(Fn &&fg, const VecX &x0, const LbfgsParams &prm = {})
{
    LbfgsResult res;
    const int n = static_cast<int>(x0.size());
    VecX x = x0, g(n);
    double f = fg(x, g);
    res.evaluations = 1;
    res.x = x;
    res.f = f;
    if (!std::isfinite(f) || !g.allFinite())
    {
        res.status = LbfgsStatus::NonFiniteStart;
        return res;
    }
    if (n == 0 || g.cwiseAbs().maxCoeff() < prm.g_tol)
    {
        res.status = LbfgsStatus::GradientConverged;
        return res;
    }

    std::deque<VecX> S, Y;
    std::deque<double> Rho;
    std::vector<double> hist{f};
    VecX d(n), xt(n), gt(n);

    for (int k = 1; k <= prm.max_iter; ++k)
    {
        // two-loop recursion
        d = -g;
        std::vector<double> alpha(S.size());
        for (int i = static_cast<int>(S.size()) - 1; i >= 0; --i)
        {
            alpha[i] = Rho[i] * S[i].dot(d);
            d -= alpha[i] * Y[i];
        }
        if (!S.empty())
            d *= S.back().dot(Y.back()) / Y.back().squaredNorm();
        for (size_t i = 0; i < S.size(); ++i)
        {
            const double beta = Rho[i] * Y[i].dot(d);
            d += (alpha[i] - beta) * S[i];
        }
        double dg0 = g.dot(d);
        if (!(dg0 < 0.0))
        {
            S.clear();
            Y.clear();
            Rho.clear();
            d = -g;
            dg0 = -g.squaredNorm();
        }

        // strong Wolfe line search (bracketing + zoom)
        const double f0 = f;
        double step = S.empty() ? std::min(1.0, 1.0 / d.norm()) : 1.0;
        double a_prev = 0.0, f_prev = f0, g_prev = dg0;
        double a_lo = 0.0, f_lo = f0, g_lo = dg0, a_hi = 0.0, f_hi = 0.0, g_hi = 0.0;
        bool bracketed = false, accepted = false;
        double best_a = 0.0, best_f = f0;
        VecX best_g = g;
        auto eval = [&](double a, double &fa, double &ga)
        {
            xt = x + a * d;
            fa = fg(xt, gt);
            ++res.evaluations;
            ga = gt.dot(d);
            if (!std::isfinite(fa) || !std::isfinite(ga))
            {
                fa = std::numeric_limits<double>::infinity();
                ga = std::numeric_limits<double>::quiet_NaN();
                return;
            }
            if (fa <= f0 + prm.c1 * a * dg0 && fa < best_f)
            {
                best_a = a;
                best_f = fa;
                best_g = gt;
            }
        };
        double fa = 0.0, ga = 0.0;
        for (int ls = 0; ls < prm.max_linesearch; ++ls)
        {
            if (!bracketed)
            {
                eval(step, fa, ga);
                if (fa > f0 + prm.c1 * step * dg0 || (ls > 0 && fa >= f_prev) || !std::isfinite(fa))
                {
                    a_lo = a_prev, f_lo = f_prev, g_lo = g_prev;
                    a_hi = step, f_hi = fa, g_hi = ga;
                    bracketed = true;
                    continue;
                }
                if (std::abs(ga) <= -prm.c2 * dg0)
                {
                    accepted = true;
                    break;
                }
                if (ga >= 0.0)
                {
                    a_lo = step, f_lo = fa, g_lo = ga;
                    a_hi = a_prev, f_hi = f_prev, g_hi = g_prev;
                    bracketed = true;
                    continue;
                }
                a_prev = step, f_prev = fa, g_prev = ga;
                step *= 4.0;
                continue;
            }
            // zoom
            double lo = std::min(a_lo, a_hi), hi = std::max(a_lo, a_hi), w = hi - lo;
            if (w <= 1e-16 * std::max(1.0, hi))
                break;
            double trial = std::isfinite(f_hi) && std::isfinite(g_hi)
                               ? detail::cubic_min(a_lo, f_lo, g_lo, a_hi, f_hi, g_hi)
                               : std::numeric_limits<double>::quiet_NaN();
            if (!std::isfinite(trial) || trial < lo + 0.1 * w || trial > hi - 0.1 * w)
                trial = 0.5 * (a_lo + a_hi);
            step = trial;
            eval(step, fa, ga);
            if (fa > f0 + prm.c1 * step * dg0 || fa >= f_lo || !std::isfinite(fa))
            {
                a_hi = step, f_hi = fa, g_hi = ga;
                continue;
            }
            if (std::abs(ga) <= -prm.c2 * dg0)
            {
                accepted = true;
                break;
            }
            if (ga * (a_hi - a_lo) >= 0.0)
                a_hi = a_lo, f_hi = f_lo, g_hi = g_lo;
            a_lo = step, f_lo = fa, g_lo = ga;
        }

        VecX gnew;
        double fnew;
        if (accepted)
        {
            gnew = gt;
            fnew = fa;
        }
        else if (best_a > 0.0)
        {
            step = best_a;
            xt = x + step * d;
            gnew = best_g;
            fnew = best_f;
        }
        else
        {
            res.status = LbfgsStatus::LineSearchFailure;
            res.iterations = k - 1;
            break;
        }
        VecX s = xt - x, y = gnew - g;
        x = xt;
        g = gnew;
        f = fnew;
        res.x = x;
        res.f = f;
        res.iterations = k;
        const double sy = s.dot(y);
        if (sy > 1e-12 * y.squaredNorm())
        {
            S.push_back(s);
            Y.push_back(y);
            Rho.push_back(1.0 / sy);
            if (static_cast<int>(S.size()) > prm.memory)
            {
                S.pop_front();
                Y.pop_front();
                Rho.pop_front();
            }
        }
        hist.push_back(f);
        if (g.cwiseAbs().maxCoeff() < prm.g_tol)
        {
            res.status = LbfgsStatus::GradientConverged;
            return res;
        }
        if (static_cast<int>(hist.size()) > prm.past)
        {
            const double fp = hist[hist.size() - 1 - prm.past];
            if ((fp - f) / std::max(1.0, std::abs(f)) < prm.rel_tol)
            {
                res.status = LbfgsStatus::RelativeDecrease;
                return res;
            }
        }
        if (k == prm.max_iter)
            res.status = LbfgsStatus::MaxIterations;
    }
    return res;
}

} // namespace marts
