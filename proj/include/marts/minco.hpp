#pragma once

#include "marts/flatness.hpp"

#include <json.hpp>

namespace marts
{

// Square banded matrix with in-place LU (no pivoting) in the layout used by
// the minimum-effort trajectory solver.
class BandedSystem
{
  public:
    BandedSystem() = default;
    BandedSystem(int n, int lower, int upper)
        : n_(n), lower_(lower), upper_(upper), data_(static_cast<size_t>(lower + upper + 1) * n, 0.0)
    {
    }

    int size() const { return n_; }

    double &operator()(int i, int j) { return data_[static_cast<size_t>(i - j + upper_) * n_ + j]; }
    double operator()(int i, int j) const { return data_[static_cast<size_t>(i - j + upper_) * n_ + j]; }

    bool in_band(int i, int j) const { return i - j <= lower_ && j - i <= upper_; }

    void factorize()
    {
        for (int k = 0; k < n_ - 1; ++k)
        {
            const int iM = std::min(k + lower_, n_ - 1);
            const double piv = (*this)(k, k);
            for (int i = k + 1; i <= iM; ++i)
                if ((*this)(i, k) != 0.0)
                    (*this)(i, k) /= piv;
            const int jM = std::min(k + upper_, n_ - 1);
            for (int j = k + 1; j <= jM; ++j)
            {
                const double v = (*this)(k, j);
                if (v == 0.0)
                    continue;
                for (int i = k + 1; i <= iM; ++i)
                    if ((*this)(i, k) != 0.0)
                        (*this)(i, j) -= (*this)(i, k) * v;
            }
        }
    }

    // Solves A x = b in place (b has one column per channel).
    void solve(MatX &b) const
    {
        for (int j = 0; j < n_; ++j)
        {
            const int iM = std::min(j + lower_, n_ - 1);
            for (int i = j + 1; i <= iM; ++i)
                if ((*this)(i, j) != 0.0)
                    b.row(i) -= (*this)(i, j) * b.row(j);
        }
        for (int j = n_ - 1; j >= 0; --j)
        {
            b.row(j) /= (*this)(j, j);
            const int iM = std::max(0, j - upper_);
            for (int i = iM; i < j; ++i)
                if ((*this)(i, j) != 0.0)
                    b.row(i) -= (*this)(i, j) * b.row(j);
        }
    }

    // Solves A^T x = b in place.
    void solve_adjoint(MatX &b) const
    {
        for (int j = 0; j < n_; ++j)
        {
            b.row(j) /= (*this)(j, j);
            const int iM = std::min(j + upper_, n_ - 1);
            for (int i = j + 1; i <= iM; ++i)
                if ((*this)(j, i) != 0.0)
                    b.row(i) -= (*this)(j, i) * b.row(j);
        }
        for (int j = n_ - 1; j >= 0; --j)
        {
            const int iM = std::max(0, j - lower_);
            for (int i = iM; i < j; ++i)
                if ((*this)(j, i) != 0.0)
                    b.row(i) -= (*this)(j, i) * b.row(j);
        }
    }

  private:
    int n_ = 0, lower_ = 0, upper_ = 0;
    std::vector<double> data_;
};

// Row of the r-th derivative of the monomial basis [1, t, ..., t^(2s-1)].
inline void basis_row(int n_coef, int r, double t, double *out)
{
    double tp = 1.0;
    for (int i = 0; i < n_coef; ++i)
    {
        if (i < r)
        {
            out[i] = 0.0;
            continue;
        }
        out[i] = factorial_ratio(i, r) * tp;
        tp *= t;
    }
}

struct EnergyResult
{
    double cost = 0.0;
    MatX grad_c;
    VecX grad_T;
};

struct BackpropResult
{
    MatX grad_w;
    VecX grad_T;
};

class Trajectory
{
  public:
    Trajectory() = default;

    // Coefficients and durations only (evaluation without the factorization).
    Trajectory(int s, const VecX &T, const MatX &c) : s_(s), T_(T), c_(c)
    {
        if (c.rows() != 2 * s * T.size())
            throw InputError("trajectory: coefficient rows do not match 2sM");
        for (int m = 0; m < T.size(); ++m)
            if (!(T(m) > 0.0))
                throw SingularSystem("trajectory: non-positive duration");
    }

    // head/tail: s x D boundary derivatives, w: (M-1) x D junction values.
    static Trajectory build(const MatX &head, const MatX &tail, const MatX &w, const VecX &T, int s = 4)
    {
        const int M = static_cast<int>(T.size());
        if (M < 1)
            throw InputError("trajectory: need at least one piece");
        const int D = static_cast<int>(head.cols());
        if (head.rows() != s || tail.rows() != s || tail.cols() != D || w.rows() != M - 1 ||
            (M > 1 && w.cols() != D))
            throw InputError("trajectory: boundary/junction shape mismatch");
        for (int m = 0; m < M; ++m)
            if (!(T(m) > 0.0) || !std::isfinite(T(m)))
                throw SingularSystem("trajectory: non-positive duration");

        Trajectory tr;
        tr.s_ = s;
        tr.T_ = T;
        const int nc = 2 * s;
        const int n = nc * M;
        tr.A_ = BandedSystem(n, nc, nc);
        MatX b = MatX::Zero(n, D);
        std::vector<double> row(nc);
        auto put = [&](int r, int col0, int order, double t)
        {
            basis_row(nc, order, t, row.data());
            for (int j = order; j < nc; ++j)
                tr.A_(r, col0 + j) = row[j];
        };

        for (int k = 0; k < s; ++k)
        {
            put(k, 0, k, 0.0);
            b.row(k) = head.row(k);
        }
        for (int i = 0; i < M - 1; ++i)
        {
            const int base = s + nc * i, ci = nc * i, cn = nc * (i + 1);
            for (int r = 0; r < s - 1; ++r)
            {
                put(base + r, ci, s + r, T(i));
                tr.A_(base + r, cn + s + r) = -factorial_ratio(s + r, s + r);
            }
            put(base + s - 1, ci, 0, T(i));
            b.row(base + s - 1) = w.row(i);
            for (int r = 0; r < s; ++r)
            {
                put(base + s + r, ci, r, T(i));
                tr.A_(base + s + r, cn + r) = -factorial_ratio(r, r);
            }
        }
        for (int k = 0; k < s; ++k)
        {
            put(n - s + k, nc * (M - 1), k, T(M - 1));
            b.row(n - s + k) = tail.row(k);
        }
        tr.A_.factorize();
        tr.A_.solve(b);
        tr.c_ = std::move(b);
        tr.factorized_ = true;
        return tr;
    }

    int order_s() const { return s_; }
    int pieces() const { return static_cast<int>(T_.size()); }
    int dim() const { return static_cast<int>(c_.cols()); }
    const VecX &durations() const { return T_; }
    const MatX &coeffs() const { return c_; }
    double duration() const { return T_.sum(); }
    auto piece_coeffs(int m) const { return c_.middleRows(2 * s_ * m, 2 * s_); }

    // Derivatives 0..max_order of piece m at local time tau, one row per order.
    MatX eval_piece(int m, double tau, int max_order) const
    {
        const int nc = 2 * s_;
        MatX out(max_order + 1, dim());
        Eigen::RowVectorXd bt(nc);
        for (int r = 0; r <= max_order; ++r)
        {
            basis_row(nc, r, tau, bt.data());
            out.row(r) = bt * piece_coeffs(m);
        }
        return out;
    }

    // Piece index and local time; right-continuous at junctions.
    std::pair<int, double> locate(double t) const
    {
        const double total = duration();
        if (t < -1e-12 || t > total + 1e-12 || !std::isfinite(t))
            throw OutOfDomain("trajectory time out of domain");
        t = std::clamp(t, 0.0, total);
        int m = 0;
        while (m < pieces() - 1 && t >= T_(m))
        {
            t -= T_(m);
            ++m;
        }
        return {m, std::min(t, T_(m))};
    }

    VecX eval(double t, int order) const
    {
        auto [m, tau] = locate(t);
        const int nc = 2 * s_;
        Eigen::RowVectorXd bt(nc);
        basis_row(nc, order, tau, bt.data());
        return (bt * piece_coeffs(m)).transpose();
    }

    MatX eval_derivs(double t, int max_order) const
    {
        auto [m, tau] = locate(t);
        return eval_piece(m, tau, max_order);
    }

    FlatSample sample(double t, int orders = 4) const { return FlatSample{eval_derivs(t, orders - 1)}; }

    // Junction values (piece end positions), (M-1) x D.
    MatX junctions() const
    {
        MatX w(pieces() - 1, dim());
        for (int m = 0; m + 1 < pieces(); ++m)
            w.row(m) = eval_piece(m, T_(m), 0).row(0);
        return w;
    }

    // Integral of weighted squared s-th derivative plus lambda_T times total time.
    EnergyResult energy(const VecX &channel_weight, double lambda_T) const
    {
        const int nc = 2 * s_, M = pieces();
        EnergyResult r;
        r.grad_c = MatX::Zero(c_.rows(), c_.cols());
        r.grad_T = VecX::Constant(M, lambda_T);
        r.cost = lambda_T * duration();
        MatX G(nc, nc);
        Eigen::RowVectorXd bs(nc);
        for (int m = 0; m < M; ++m)
        {
            const double T = T_(m);
            G.setZero();
            for (int i = s_; i < nc; ++i)
                for (int j = s_; j < nc; ++j)
                {
                    const int p = i + j - 2 * s_ + 1;
                    G(i, j) = factorial_ratio(i, s_) * factorial_ratio(j, s_) * std::pow(T, p) / p;
                }
            auto cm = piece_coeffs(m);
            MatX Gc = G * cm;
            basis_row(nc, s_, T, bs.data());
            Eigen::RowVectorXd zs = bs * cm;
            for (int d = 0; d < dim(); ++d)
            {
                const double wgt = channel_weight(d);
                r.cost += wgt * cm.col(d).dot(Gc.col(d));
                r.grad_c.block(nc * m, d, nc, 1) = 2.0 * wgt * Gc.col(d);
                r.grad_T(m) += wgt * zs(d) * zs(d);
            }
        }
        return r;
    }

    // Pulls gradients on (c, T) back to gradients on (w, T).
    BackpropResult backprop(const MatX &grad_c, const VecX &grad_T) const
    {
        if (!factorized_)
            throw InputError("trajectory: backprop needs a built trajectory");
        const int nc = 2 * s_, M = pieces(), n = nc * M;
        MatX lam = grad_c;
        A_.solve_adjoint(lam);
        BackpropResult r;
        r.grad_w.resize(M - 1, dim());
        r.grad_T = grad_T;
        for (int i = 0; i < M - 1; ++i)
        {
            const int base = s_ + nc * i;
            r.grad_w.row(i) = lam.row(base + s_ - 1);
            MatX Zd = eval_piece(i, T_(i), 2 * s_ - 1);
            double acc = 0.0;
            for (int q = 0; q < s_ - 1; ++q)
                acc += lam.row(base + q).dot(Zd.row(s_ + q + 1));
            acc += lam.row(base + s_ - 1).dot(Zd.row(1));
            for (int q = 0; q < s_; ++q)
                acc += lam.row(base + s_ + q).dot(Zd.row(q + 1));
            r.grad_T(i) -= acc;
        }
        MatX Zd = eval_piece(M - 1, T_(M - 1), s_);
        double acc = 0.0;
        for (int k = 0; k < s_; ++k)
            acc += lam.row(n - s_ + k).dot(Zd.row(k + 1));
        r.grad_T(M - 1) -= acc;
        return r;
    }

    nlohmann::json to_json(int n_robots) const
    {
        nlohmann::json j;
        j["s"] = s_;
        j["M"] = pieces();
        j["T"] = std::vector<double>(T_.data(), T_.data() + T_.size());
        std::vector<std::vector<double>> rows(c_.rows());
        for (int i = 0; i < c_.rows(); ++i)
            for (int k = 0; k < c_.cols(); ++k)
                rows[i].push_back(c_(i, k));
        j["c"] = rows;
        std::vector<std::string> names = {"px", "py", "pz"};
        for (int n = 1; n <= n_robots; ++n)
            for (const char *nm : {"theta_", "phi_", "F_", "psi_"})
                names.push_back(nm + std::to_string(n));
        j["layout"] = {{"n_robots", n_robots}, {"channels", names}};
        return j;
    }

    static Trajectory from_json(const nlohmann::json &j)
    {
        const int s = j.at("s").get<int>();
        auto Tv = j.at("T").get<std::vector<double>>();
        auto rows = j.at("c").get<std::vector<std::vector<double>>>();
        if (rows.empty())
            throw InputError("trajectory json: empty coefficient matrix");
        MatX c(rows.size(), rows[0].size());
        for (size_t i = 0; i < rows.size(); ++i)
        {
            if (rows[i].size() != rows[0].size())
                throw InputError("trajectory json: ragged coefficient matrix");
            for (size_t k = 0; k < rows[i].size(); ++k)
                c(i, k) = rows[i][k];
        }
        return Trajectory(s, Eigen::Map<VecX>(Tv.data(), Tv.size()), c);
    }

  private:
    int s_ = 4;
    VecX T_;
    MatX c_;
    BandedSystem A_;
    bool factorized_ = false;
};

inline VecX energy_weights(int n_robots, double lambda_Z)
{
    VecX w = VecX::Constant(FlatSample::dim(n_robots), lambda_Z);
    w.head<3>().setOnes();
    return w;
}

} // namespace marts
