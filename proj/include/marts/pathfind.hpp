#pragma once

#include "marts/esdf.hpp"
#include "marts/flatness.hpp"

#include <json.hpp>

#include <queue>

namespace marts
{

struct PathfindConfig
{
    double step = 0.2;        // lattice spacing in p
    int levels = 4;           // number of scale levels
    double r_min = 0.3;       // smallest base circumradius
    double r_max = 0.8;       // nominal base circumradius (gamma = 1)
    double margin = 0.1;      // required ESDF clearance of the solid pyramid
    double below = 0.1;       // solid extent below the payload point
    double lambda_gamma = 0.5; // cost per level change, metres
    double sample = 0.1;      // sampling pitch inside the solid
    double padding = 2.0;     // lattice bounding box padding around start and goal
    long max_expansions = 4'000'000;

    void validate(const SystemConfig &sys) const
    {
        if (!(step > 0.0 && sample > 0.0 && margin >= 0.0 && below >= 0.0))
            throw InputError("pathfind: step, sample and margin must be positive");
        if (levels < 1 || !(0.0 < r_min && r_min <= r_max && r_max < sys.cable_length))
            throw InputError("pathfind: need 0 < r_min <= r_max < cable length");
    }

    double radius(int level) const
    {
        if (levels == 1)
            return r_max;
        return r_max - (r_max - r_min) * level / (levels - 1);
    }
};

// Payload position and scale of the pyramid: base circumradius gamma * r_max.
struct PyramidConfig
{
    Vec3 p;
    int level = 0;
    double gamma = 1.0;
    double radius = 0.0;
};

// Conservative solid: segment below the payload plus the cone from the
// payload (apex) up to the horizontal disk through the robots.
inline bool pyramid_collision_free(const Vec3 &p, double radius, const DistanceField &field, const SystemConfig &sys,
                                   const PathfindConfig &cfg)
{
    const double l = sys.cable_length, h = std::sqrt(l * l - radius * radius);
    // quick reject at the apex
    if (field.distance(p, nullptr) <= cfg.margin)
        return false;
    // quick accept through a bounding sphere; sqrt(3) covers the interpolant's Lipschitz constant
    const Vec3 c = p + 0.5 * (h - cfg.below) * kE3;
    const double rb = std::hypot(0.5 * (h + cfg.below), radius);
    if (field.distance(c, nullptr) - std::sqrt(3.0) * rb > cfg.margin)
        return true;
    for (double z = -cfg.below; z < 0.0; z += cfg.sample)
        if (field.distance(p + z * kE3, nullptr) <= cfg.margin)
            return false;
    const int layers = std::max(1, static_cast<int>(std::ceil(h / cfg.sample)));
    for (int k = layers; k >= 0; --k)
    {
        const double z = h * k / layers, rz = radius * z / h;
        const Vec3 o = p + z * kE3;
        if (field.distance(o, nullptr) <= cfg.margin)
            return false;
        const int rings = static_cast<int>(std::ceil(rz / cfg.sample));
        for (int q = rings; q >= 1; --q)
        {
            const double rr = rz * q / rings;
            const int spokes = std::max(6, static_cast<int>(std::ceil(2.0 * M_PI * rr / cfg.sample)));
            // rotate a unit vector instead of calling cos/sin per spoke
            const double cs = std::cos(2.0 * M_PI / spokes), sn = std::sin(2.0 * M_PI / spokes);
            double ux = 1.0, uy = 0.0;
            for (int a = 0; a < spokes; ++a)
            {
                if (field.distance(o + Vec3(rr * ux, rr * uy, 0.0), nullptr) <= cfg.margin)
                    return false;
                const double t = cs * ux - sn * uy;
                uy = sn * ux + cs * uy;
                ux = t;
            }
        }
    }
    return true;
}

struct PathResult
{
    std::vector<PyramidConfig> nodes;
    double cost = 0.0;
    long expansions = 0;

    double length() const
    {
        double s = 0.0;
        for (size_t i = 1; i < nodes.size(); ++i)
            s += (nodes[i].p - nodes[i - 1].p).norm();
        return s;
    }

    nlohmann::json to_json() const
    {
        nlohmann::json j;
        j["cost"] = cost;
        j["length"] = length();
        for (const auto &n : nodes)
            j["nodes"].push_back({{"p", {n.p.x(), n.p.y(), n.p.z()}}, {"gamma", n.gamma}, {"radius", n.radius}});
        return j;
    }
};

// Lattice search over (p, gamma). Positions are start + step * (i, j, k)
// inside an axis-aligned box; gamma moves are separate edges.
class PyramidSearch
{
  public:
    PyramidSearch(const DistanceField &field, const SystemConfig &sys, const PathfindConfig &cfg)
        : field_(field), sys_(sys), cfg_(cfg)
    {
        cfg_.validate(sys_);
    }

    bool free(const Vec3 &p, int level) const
    {
        return pyramid_collision_free(p, cfg_.radius(level), field_, sys_, cfg_);
    }

    // box_lo/box_hi bound the payload positions considered.
    PathResult plan(const Vec3 &start, const Vec3 &goal, Vec3 box_lo, Vec3 box_hi, bool use_heuristic = true)
    {
        box_lo = box_lo.cwiseMin(start.cwiseMin(goal));
        box_hi = box_hi.cwiseMax(start.cwiseMax(goal));
        origin_ = start;
        lo_ = ((box_lo - start) / cfg_.step).array().floor().cast<int>();
        hi_ = ((box_hi - start) / cfg_.step).array().ceil().cast<int>();
        dims_ = hi_ - lo_ + Eigen::Vector3i::Ones();
        const long n = static_cast<long>(dims_.x()) * dims_.y() * dims_.z() * cfg_.levels;
        cache_.assign(n, -1);

        // start and goal hold the widest free formation
        Eigen::Vector3i gi = ((goal - start) / cfg_.step).array().round().cast<int>();
        int goal_level = -1;
        for (int lv = 0; lv < cfg_.levels && goal_level < 0; ++lv)
            if (free(goal, lv) && is_free(gi, lv))
                goal_level = lv;
        if (goal_level < 0)
            throw NoPath("goal is not collision-free at any scale");

        struct Item
        {
            double f, g;
            long id;
            bool operator>(const Item &o) const { return f > o.f || (f == o.f && id > o.id); }
        };
        std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
        std::vector<double> g(n, std::numeric_limits<double>::infinity());
        std::vector<long> parent(n, -1);
        auto h = [&](const Eigen::Vector3i &i)
        { return use_heuristic ? cfg_.step * (i - gi).cast<double>().norm() : 0.0; };

        int start_level = -1;
        for (int lv = 0; lv < cfg_.levels && start_level < 0; ++lv)
            if (free(start, lv))
                start_level = lv;
        if (start_level < 0)
            throw NoPath("start is not collision-free at any scale");
        const long start_id = encode(Eigen::Vector3i::Zero(), start_level);
        g[start_id] = 0.0;
        open.push({h(Eigen::Vector3i::Zero()), 0.0, start_id});

        PathResult res;
        long goal_id = -1;
        while (!open.empty())
        {
            Item it = open.top();
            open.pop();
            if (it.g > g[it.id])
                continue;
            if (++res.expansions > cfg_.max_expansions)
                throw NoPath("search budget exhausted");
            auto [idx, lv] = decode(it.id);
            if (idx == gi && lv == goal_level)
            {
                goal_id = it.id;
                break;
            }
            auto relax = [&](const Eigen::Vector3i &j, int lj, double w)
            {
                if ((j.array() < lo_.array()).any() || (j.array() > hi_.array()).any())
                    return;
                const long jd = encode(j, lj);
                const double gn = it.g + w;
                if (gn >= g[jd] || !is_free(j, lj))
                    return;
                g[jd] = gn;
                parent[jd] = it.id;
                open.push({gn + h(j), gn, jd});
            };
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx)
                        if (dx || dy || dz)
                        {
                            Eigen::Vector3i d(dx, dy, dz);
                            relax(idx + d, lv, cfg_.step * d.cast<double>().norm());
                        }
            if (lv > 0)
                relax(idx, lv - 1, cfg_.lambda_gamma);
            if (lv + 1 < cfg_.levels)
                relax(idx, lv + 1, cfg_.lambda_gamma);
        }
        if (goal_id < 0)
            throw NoPath("goal unreachable in the lattice");
        res.cost = g[goal_id];
        for (long id = goal_id; id >= 0; id = parent[id])
        {
            auto [idx, lv] = decode(id);
            res.nodes.push_back(node(position(idx), lv));
        }
        std::reverse(res.nodes.begin(), res.nodes.end());
        res.nodes.front().p = start;
        if ((res.nodes.back().p - goal).norm() > 1e-12)
            res.nodes.push_back(node(goal, res.nodes.back().level));
        return res;
    }

    Vec3 position(const Eigen::Vector3i &i) const { return origin_ + cfg_.step * i.cast<double>(); }

  private:
    const DistanceField &field_;
    SystemConfig sys_;
    PathfindConfig cfg_;
    Vec3 origin_;
    Eigen::Vector3i lo_, hi_, dims_;
    std::vector<signed char> cache_;

    PyramidConfig node(const Vec3 &p, int lv) const
    {
        return {p, lv, cfg_.radius(lv) / cfg_.r_max, cfg_.radius(lv)};
    }

    long encode(const Eigen::Vector3i &i, int lv) const
    {
        const Eigen::Vector3i r = i - lo_;
        return ((static_cast<long>(lv) * dims_.z() + r.z()) * dims_.y() + r.y()) * dims_.x() + r.x();
    }

    std::pair<Eigen::Vector3i, int> decode(long id) const
    {
        Eigen::Vector3i r;
        r.x() = id % dims_.x();
        id /= dims_.x();
        r.y() = id % dims_.y();
        id /= dims_.y();
        r.z() = id % dims_.z();
        id /= dims_.z();
        return {r + lo_, static_cast<int>(id)};
    }

    bool is_free(const Eigen::Vector3i &i, int lv)
    {
        auto &c = cache_[encode(i, lv)];
        if (c < 0)
            c = free(position(i), lv) ? 1 : 0;
        return c == 1;
    }
};

// Collapse runs of identical moves into straight segments.
inline std::vector<PyramidConfig> compress_path(const std::vector<PyramidConfig> &nodes)
{
    if (nodes.size() <= 2)
        return nodes;
    std::vector<PyramidConfig> out{nodes.front()};
    for (size_t i = 1; i + 1 < nodes.size(); ++i)
    {
        const Vec3 a = nodes[i].p - nodes[i - 1].p, b = nodes[i + 1].p - nodes[i].p;
        const bool straight = a.norm() > 0 && b.norm() > 0 && (a.normalized() - b.normalized()).norm() < 1e-9;
        if (!straight || nodes[i].level != nodes[i - 1].level || nodes[i].level != nodes[i + 1].level)
            out.push_back(nodes[i]);
    }
    out.push_back(nodes.back());
    return out;
}

// Boundary states and junction/duration seed for the trajectory optimiser.
struct Seed
{
    MatX head, tail, w;
    VecX T;
};

inline double theta_for_radius(double radius, double l, double theta_max)
{
    const double th = std::acos(std::clamp(radius / l, 0.0, 1.0));
    return std::clamp(th, 0.02, theta_max - 0.02);
}

inline Seed extract_seed(const std::vector<PyramidConfig> &path, const SystemConfig &sys, double theta_max,
                         double v_max, int M = -1)
{
    if (path.size() < 2)
        throw InputError("seed extraction needs at least two path nodes");
    std::vector<double> s{0.0};
    for (size_t i = 1; i < path.size(); ++i)
        s.push_back(s.back() + (path[i].p - path[i - 1].p).norm());
    const double S = s.back();
    if (!(S > 0.0))
        throw InputError("seed extraction: start and goal coincide");
    if (M < 0)
        M = std::clamp(static_cast<int>(path.size()) - 1, 4, 12);
    const double l = sys.cable_length;
    auto radius_in = [&](double a, double b)
    {
        double r = 1e9;
        for (size_t i = 0; i < path.size(); ++i)
            if (s[i] >= a - 1e-9 && s[i] <= b + 1e-9)
                r = std::min(r, path[i].radius);
        return r;
    };
    auto point_at = [&](double a)
    {
        size_t i = std::upper_bound(s.begin(), s.end(), a) - s.begin();
        i = std::clamp<size_t>(i, 1, path.size() - 1);
        const double seg = s[i] - s[i - 1], u = seg > 0 ? (a - s[i - 1]) / seg : 0.0;
        return Vec3((1.0 - u) * path[i - 1].p + u * path[i].p);
    };
    Seed seed;
    seed.head = hover_flat_output(sys, path.front().p, theta_for_radius(path.front().radius, l, theta_max));
    seed.tail = hover_flat_output(sys, path.back().p, theta_for_radius(path.back().radius, l, theta_max));
    seed.w.resize(M - 1, seed.head.cols());
    for (int j = 1; j < M; ++j)
    {
        const double a = S * j / M, r = radius_in(S * (j - 1) / M, S * (j + 1) / M);
        seed.w.row(j - 1) = hover_flat_output(sys, point_at(a), theta_for_radius(r, l, theta_max)).row(0);
    }
    seed.T = VecX::Constant(M, S / M / (0.5 * v_max));
    return seed;
}

} // namespace marts
