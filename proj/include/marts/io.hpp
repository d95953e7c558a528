#pragma once

#include "marts/pipeline.hpp"

#include <fstream>

namespace marts
{

// Exact signed distance by scanning every voxel pair; small grids only.
inline std::vector<double> brute_force_esdf(const OccupancyGrid &g)
{
    const double res = g.resolution, cap = res * g.dims.cast<double>().norm();
    std::vector<double> out(g.occ.size());
    for (int k = 0; k < g.dims.z(); ++k)
        for (int j = 0; j < g.dims.y(); ++j)
            for (int i = 0; i < g.dims.x(); ++i)
            {
                const bool me = g.at(i, j, k);
                double best = std::numeric_limits<double>::infinity();
                for (int c = 0; c < g.dims.z(); ++c)
                    for (int b = 0; b < g.dims.y(); ++b)
                        for (int a = 0; a < g.dims.x(); ++a)
                            if (g.at(a, b, c) != me)
                                best = std::min(best, double(a - i) * (a - i) + double(b - j) * (b - j) +
                                                          double(c - k) * (c - k));
                const double v = std::isinf(best) ? cap : std::sqrt(best) * res - 0.5 * res;
                out[g.index(i, j, k)] = me ? -v : v;
            }
    return out;
}

inline nlohmann::json read_json(const std::string &path)
{
    std::ifstream f(path);
    if (!f)
        throw InputError("cannot open " + path);
    try
    {
        return nlohmann::json::parse(f);
    }
    catch (const nlohmann::json::parse_error &e)
    {
        throw InputError(path + ": " + e.what());
    }
}

inline Vec3 json_vec3(const nlohmann::json &a, const std::string &what)
{
    if (!a.is_array() || a.size() != 3 || !a[0].is_number() || !a[1].is_number() || !a[2].is_number())
        throw InputError(what + ": expected [x, y, z]");
    return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
}

// "x,y,z" from the command line.
inline Vec3 parse_vec3(const std::string &s)
{
    Vec3 v;
    char c1 = 0, c2 = 0;
    std::istringstream in(s);
    if (!(in >> v.x() >> c1 >> v.y() >> c2 >> v.z()) || c1 != ',' || c2 != ',' || !(in >> std::ws).eof())
        throw InputError("expected x,y,z but got '" + s + "'");
    return v;
}

namespace detail
{

template <class T>
void override_field(const nlohmann::json &j, const char *key, T &field, const std::string &section)
{
    if (!j.contains(key))
        return;
    const auto &v = j[key];
    if constexpr (std::is_same_v<T, bool>)
    {
        if (!v.is_boolean())
            throw InputError(section + "." + key + ": expected a boolean");
    }
    else if (!v.is_number())
        throw InputError(section + "." + key + ": expected a number");
    field = v.get<T>();
}

template <class Table>
void check_keys(const nlohmann::json &j, const Table &known, const std::string &section)
{
    if (!j.is_object())
        throw InputError(section + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw InputError(section + ": unknown key '" + it.key() + "'");
}

} // namespace detail

inline void apply_overrides(PlannerConfig &c, const nlohmann::json &j)
{
    using detail::override_field;
    const std::string s = "planner";
    const std::vector<std::string> keys{"d_oa_payload", "d_oa_robot", "d_oa_cable", "d_ra", "cable_samples", "v_max",
                                        "f_min", "f_max", "tilt_max", "omega_max", "theta_max", "F_min", "F_max",
                                        "lambda_T", "lambda_Z", "lambda_oa", "lambda_ra", "lambda_v", "lambda_f",
                                        "lambda_tilt", "lambda_omega", "lambda_d", "mu", "kappa", "max_iter",
                                        "use_bands", "free_yaw", "fix_durations"};
    detail::check_keys(j, keys, s);
    override_field(j, "d_oa_payload", c.d_oa_payload, s);
    override_field(j, "d_oa_robot", c.d_oa_robot, s);
    override_field(j, "d_oa_cable", c.d_oa_cable, s);
    override_field(j, "d_ra", c.d_ra, s);
    override_field(j, "cable_samples", c.cable_samples, s);
    override_field(j, "v_max", c.v_max, s);
    override_field(j, "f_min", c.f_min, s);
    override_field(j, "f_max", c.f_max, s);
    override_field(j, "tilt_max", c.tilt_max, s);
    override_field(j, "omega_max", c.omega_max, s);
    override_field(j, "theta_max", c.theta_max, s);
    override_field(j, "F_min", c.F_min, s);
    override_field(j, "F_max", c.F_max, s);
    override_field(j, "lambda_T", c.lambda_T, s);
    override_field(j, "lambda_Z", c.lambda_Z, s);
    override_field(j, "lambda_oa", c.lambda_oa, s);
    override_field(j, "lambda_ra", c.lambda_ra, s);
    override_field(j, "lambda_v", c.lambda_v, s);
    override_field(j, "lambda_f", c.lambda_f, s);
    override_field(j, "lambda_tilt", c.lambda_tilt, s);
    override_field(j, "lambda_omega", c.lambda_omega, s);
    override_field(j, "lambda_d", c.lambda_d, s);
    override_field(j, "mu", c.mu, s);
    override_field(j, "kappa", c.kappa, s);
    override_field(j, "max_iter", c.solver.max_iter, s);
    override_field(j, "use_bands", c.use_bands, s);
    override_field(j, "free_yaw", c.free_yaw, s);
    override_field(j, "fix_durations", c.fix_durations, s);
    c.validate();
}

inline void apply_overrides(PathfindConfig &c, const nlohmann::json &j)
{
    using detail::override_field;
    const std::string s = "pathfind";
    const std::vector<std::string> keys{"step",         "levels", "r_min",   "r_max",         "margin",
                                        "below",        "lambda_gamma", "sample", "padding", "max_expansions"};
    detail::check_keys(j, keys, s);
    override_field(j, "step", c.step, s);
    override_field(j, "levels", c.levels, s);
    override_field(j, "r_min", c.r_min, s);
    override_field(j, "r_max", c.r_max, s);
    override_field(j, "margin", c.margin, s);
    override_field(j, "below", c.below, s);
    override_field(j, "lambda_gamma", c.lambda_gamma, s);
    override_field(j, "sample", c.sample, s);
    override_field(j, "padding", c.padding, s);
    override_field(j, "max_expansions", c.max_expansions, s);
}

inline void apply_overrides(SystemConfig &c, const nlohmann::json &j)
{
    using detail::override_field;
    const std::string s = "system";
    const std::vector<std::string> keys{"n_robots", "payload_mass", "robot_mass", "cable_length", "gravity"};
    detail::check_keys(j, keys, s);
    override_field(j, "n_robots", c.n_robots, s);
    override_field(j, "payload_mass", c.payload_mass, s);
    override_field(j, "robot_mass", c.robot_mass, s);
    override_field(j, "cable_length", c.cable_length, s);
    override_field(j, "gravity", c.gravity, s);
    c.validate();
}

// Procedural map:
//   {"resolution": 0.1, "bounds": {"lo": [..], "hi": [..]},
//    "boxes": [{"lo": [..], "hi": [..]}],
//    "cylinders": [{"x", "y", "r", "zmin", "zmax"}],
//    "gap_walls": [{"x", "thickness", "ylo", "yhi", "center", "width", "zmin", "zmax"}]}
// or {"arena": {"density": "medium", "radius": 6, "seed": 7}} for a benchmark arena.
inline OccupancyGrid map_from_spec(const nlohmann::json &j)
{
    try
    {
        if (j.contains("arena"))
        {
            const auto &a = j["arena"];
            BenchmarkSpec spec;
            spec.density = parse_density(a.value("density", std::string("medium")));
            spec.radius = a.value("radius", spec.radius);
            spec.seed = a.value("seed", spec.seed);
            spec.resolution = j.value("resolution", spec.resolution);
            return make_arena(spec).occupancy;
        }
        if (!j.contains("bounds"))
            throw InputError("map: 'bounds' or 'arena' required");
        const double res = j.value("resolution", 0.1);
        if (!(res > 0.0))
            throw InputError("map: resolution must be positive");
        const Vec3 lo = json_vec3(j["bounds"].at("lo"), "map.bounds.lo");
        const Vec3 hi = json_vec3(j["bounds"].at("hi"), "map.bounds.hi");
        if ((hi.array() <= lo.array()).any())
            throw InputError("map: bounds must have hi > lo");
        OccupancyGrid g = OccupancyGrid::covering(lo, hi, res);
        for (const auto &b : j.value("boxes", nlohmann::json::array()))
            g.add_box(json_vec3(b.at("lo"), "map.boxes.lo"), json_vec3(b.at("hi"), "map.boxes.hi"));
        for (const auto &c : j.value("cylinders", nlohmann::json::array()))
            g.add_cylinder(c.at("x").get<double>(), c.at("y").get<double>(), c.at("r").get<double>(),
                           c.value("zmin", lo.z()), c.value("zmax", hi.z()));
        for (const auto &w : j.value("gap_walls", nlohmann::json::array()))
            g.add_gap_wall(w.at("x").get<double>(), w.value("thickness", 0.2), w.value("ylo", lo.y()),
                           w.value("yhi", hi.y()), w.value("center", 0.0), w.at("width").get<double>(),
                           w.value("zmin", lo.z()), w.value("zmax", hi.z()));
        return g;
    }
    catch (const nlohmann::json::exception &e)
    {
        throw InputError(std::string("map: ") + e.what());
    }
}

// A map argument: ESDF cache (.esdf), procedural spec (.json), or point cloud.
inline EsdfGrid load_map(const std::string &path, double resolution = 0.1)
{
    auto ends_with = [&](const char *suffix)
    {
        const std::string s(suffix);
        return path.size() >= s.size() && path.compare(path.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".esdf"))
        return EsdfGrid::load(path);
    if (ends_with(".json"))
        return EsdfGrid::build(map_from_spec(read_json(path)));
    return EsdfGrid::build(voxelize(load_point_cloud(path), resolution));
}

} // namespace marts
