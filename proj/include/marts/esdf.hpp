#pragma once

#include "marts/common.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace marts
{

// Signed distance with gradient; the planner only sees this interface.
class DistanceField
{
  public:
    virtual ~DistanceField() = default;
    virtual double distance(const Vec3 &x, Vec3 *grad) const = 0;
};

class FreeSpace final : public DistanceField
{
  public:
    double distance(const Vec3 &, Vec3 *grad) const override
    {
        if (grad)
            grad->setZero();
        return 1e6;
    }
};

// Union of spheres and vertical cylinders with exact distance; smooth away
// from medial surfaces, which makes it convenient for derivative checks.
class AnalyticField final : public DistanceField
{
  public:
    struct Sphere
    {
        Vec3 c;
        double r;
    };
    struct Cylinder
    {
        double x, y, r;
    };
    std::vector<Sphere> spheres;
    std::vector<Cylinder> cylinders;

    double distance(const Vec3 &x, Vec3 *grad) const override
    {
        double best = 1e6;
        Vec3 g = Vec3::Zero();
        for (const auto &s : spheres)
        {
            Vec3 d = x - s.c;
            double n = d.norm();
            if (n - s.r < best)
            {
                best = n - s.r;
                g = d / std::max(n, 1e-12);
            }
        }
        for (const auto &c : cylinders)
        {
            Vec3 d(x.x() - c.x, x.y() - c.y, 0.0);
            double n = d.norm();
            if (n - c.r < best)
            {
                best = n - c.r;
                g = d / std::max(n, 1e-12);
            }
        }
        if (grad)
            *grad = g;
        return best;
    }
};

struct OccupancyGrid
{
    Vec3 origin = Vec3::Zero(); // corner of cell (0,0,0)
    double resolution = 0.1;
    Eigen::Vector3i dims = Eigen::Vector3i::Zero();
    std::vector<uint8_t> occ;

    OccupancyGrid() = default;
    OccupancyGrid(const Vec3 &o, double res, const Eigen::Vector3i &d)
        : origin(o), resolution(res), dims(d), occ(static_cast<size_t>(d.prod()), 0)
    {
        if (!(res > 0.0) || d.minCoeff() < 1)
            throw InputError("occupancy grid: bad resolution or dimensions");
    }

    // Grid covering [lo, hi] at the given resolution.
    static OccupancyGrid covering(const Vec3 &lo, const Vec3 &hi, double res)
    {
        Eigen::Vector3i d;
        for (int a = 0; a < 3; ++a)
            d(a) = std::max(1, static_cast<int>(std::ceil((hi(a) - lo(a)) / res - 1e-9)));
        return OccupancyGrid(lo, res, d);
    }

    size_t index(int i, int j, int k) const
    {
        return static_cast<size_t>(i) + static_cast<size_t>(dims.x()) * (j + static_cast<size_t>(dims.y()) * k);
    }
    bool at(int i, int j, int k) const { return occ[index(i, j, k)] != 0; }
    void set(int i, int j, int k, bool v = true) { occ[index(i, j, k)] = v; }
    Vec3 center(int i, int j, int k) const { return origin + resolution * Vec3(i + 0.5, j + 0.5, k + 0.5); }

    bool mark_point(const Vec3 &p)
    {
        Vec3 u = (p - origin) / resolution;
        Eigen::Vector3i c(static_cast<int>(std::floor(u.x())), static_cast<int>(std::floor(u.y())),
                          static_cast<int>(std::floor(u.z())));
        if ((c.array() < 0).any() || (c.array() >= dims.array()).any())
            return false;
        set(c.x(), c.y(), c.z());
        return true;
    }

    template <class Inside> void fill(Inside inside)
    {
        for (int k = 0; k < dims.z(); ++k)
            for (int j = 0; j < dims.y(); ++j)
                for (int i = 0; i < dims.x(); ++i)
                    if (inside(center(i, j, k)))
                        set(i, j, k);
    }

    void add_box(const Vec3 &lo, const Vec3 &hi)
    {
        fill([&](const Vec3 &c) { return (c.array() >= lo.array()).all() && (c.array() <= hi.array()).all(); });
    }

    void add_cylinder(double x, double y, double r, double zmin, double zmax)
    {
        fill([&](const Vec3 &c)
             {
                 const double dx = c.x() - x, dy = c.y() - y;
                 return c.z() >= zmin && c.z() <= zmax && dx * dx + dy * dy <= r * r;
             });
    }

    // Wall normal to x at x0 spanning y in [ylo, yhi] with a full-height slit
    // of the given width centred at yc.
    void add_gap_wall(double x0, double thickness, double ylo, double yhi, double yc, double width, double zmin,
                      double zmax)
    {
        add_box(Vec3(x0 - thickness / 2, ylo, zmin), Vec3(x0 + thickness / 2, yc - width / 2, zmax));
        add_box(Vec3(x0 - thickness / 2, yc + width / 2, zmin), Vec3(x0 + thickness / 2, yhi, zmax));
    }

    size_t occupied_count() const
    {
        size_t n = 0;
        for (auto v : occ)
            n += v;
        return n;
    }
};

namespace detail
{

// 1D lower envelope of parabolas (squared distance transform) over f.
inline void edt_1d(const double *f, double *d, int n, int *v, double *z)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    int k = 0;
    v[0] = 0;
    z[0] = -inf;
    z[1] = inf;
    for (int q = 1; q < n; ++q)
    {
        if (f[q] == inf)
            continue;
        if (f[v[k]] == inf)
        {
            v[k] = q;
            continue;
        }
        double s;
        while (true)
        {
            s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
            if (s <= z[k] && k > 0)
                --k;
            else
                break;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    if (f[v[0]] == inf)
    {
        for (int q = 0; q < n; ++q)
            d[q] = inf;
        return;
    }
    k = 0;
    for (int q = 0; q < n; ++q)
    {
        while (z[k + 1] < q)
            ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

// Squared index distance to the nearest seed cell.
inline std::vector<double> squared_edt(const Eigen::Vector3i &dims, const std::vector<uint8_t> &seed)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    const int nx = dims.x(), ny = dims.y(), nz = dims.z();
    std::vector<double> g(seed.size());
    for (size_t i = 0; i < seed.size(); ++i)
        g[i] = seed[i] ? 0.0 : inf;
    const int nmax = std::max({nx, ny, nz});
    std::vector<double> f(nmax), d(nmax), z(nmax + 1);
    std::vector<int> v(nmax);
    auto pass = [&](int n, int count, auto idx)
    {
        for (int line = 0; line < count; ++line)
        {
            for (int q = 0; q < n; ++q)
                f[q] = g[idx(line, q)];
            edt_1d(f.data(), d.data(), n, v.data(), z.data());
            for (int q = 0; q < n; ++q)
                g[idx(line, q)] = d[q];
        }
    };
    const size_t sx = 1, sy = nx, sz = static_cast<size_t>(nx) * ny;
    pass(nx, ny * nz, [&](int line, int q) { return q * sx + (line % ny) * sy + (line / ny) * sz; });
    pass(ny, nx * nz, [&](int line, int q) { return (line % nx) * sx + q * sy + (line / nx) * sz; });
    pass(nz, nx * ny, [&](int line, int q) { return (line % nx) * sx + (line / nx) * sy + q * sz; });
    return g;
}

} // namespace detail

struct DistanceQuery
{
    double value = 0.0;
    Vec3 grad = Vec3::Zero();
    bool out_of_bounds = false;
};

// Voxel ESDF; values live at cell centres. Free cells hold the distance to
// the nearest occupied centre minus half a cell, occupied cells the negated
// distance to the nearest free centre minus half a cell.
class EsdfGrid final : public DistanceField
{
  public:
    Vec3 origin = Vec3::Zero();
    double resolution = 0.1;
    Eigen::Vector3i dims = Eigen::Vector3i::Zero();
    std::vector<double> values;

    static EsdfGrid build(const OccupancyGrid &occ)
    {
        if (occ.occ.empty() || occ.dims.minCoeff() < 1)
            throw EmptyGrid();
        EsdfGrid e;
        e.origin = occ.origin;
        e.resolution = occ.resolution;
        e.dims = occ.dims;
        const double res = occ.resolution;
        const double cap = res * occ.dims.cast<double>().norm();
        std::vector<uint8_t> freecells(occ.occ.size());
        for (size_t i = 0; i < occ.occ.size(); ++i)
            freecells[i] = !occ.occ[i];
        auto to_occ = detail::squared_edt(occ.dims, occ.occ);
        auto to_free = detail::squared_edt(occ.dims, freecells);
        e.values.resize(occ.occ.size());
        for (size_t i = 0; i < occ.occ.size(); ++i)
        {
            if (!occ.occ[i])
                e.values[i] = std::isinf(to_occ[i]) ? cap : std::sqrt(to_occ[i]) * res - 0.5 * res;
            else
                e.values[i] = std::isinf(to_free[i]) ? -cap : -(std::sqrt(to_free[i]) * res - 0.5 * res);
        }
        return e;
    }

    size_t index(int i, int j, int k) const
    {
        return static_cast<size_t>(i) + static_cast<size_t>(dims.x()) * (j + static_cast<size_t>(dims.y()) * k);
    }
    double at(int i, int j, int k) const { return values[index(i, j, k)]; }
    Vec3 center(int i, int j, int k) const { return origin + resolution * Vec3(i + 0.5, j + 0.5, k + 0.5); }
    Vec3 lower() const { return origin; }
    Vec3 upper() const { return origin + resolution * dims.cast<double>(); }

    DistanceQuery query(const Vec3 &x) const
    {
        DistanceQuery q;
        Vec3 u = (x - origin) / resolution - Vec3::Constant(0.5);
        Eigen::Vector3i i0;
        Vec3 fr, uc;
        std::array<bool, 3> clamped{};
        for (int a = 0; a < 3; ++a)
        {
            const double hi = dims(a) - 1;
            uc(a) = std::clamp(u(a), 0.0, hi);
            clamped[a] = uc(a) != u(a);
            // snap round-off so cell centres reproduce stored values exactly
            const double r = static_cast<int>(uc(a) + 0.5);
            if (std::abs(uc(a) - r) < 1e-9)
                uc(a) = r;
            if (dims(a) == 1)
            {
                i0(a) = 0;
                fr(a) = 0.0;
                continue;
            }
            i0(a) = std::min(static_cast<int>(uc(a)), dims(a) - 2);
            fr(a) = uc(a) - i0(a);
        }
        auto v = [&](int di, int dj, int dk)
        {
            return at(std::min(i0.x() + di, dims.x() - 1), std::min(i0.y() + dj, dims.y() - 1),
                      std::min(i0.z() + dk, dims.z() - 1));
        };
        const double c000 = v(0, 0, 0), c100 = v(1, 0, 0), c010 = v(0, 1, 0), c110 = v(1, 1, 0);
        const double c001 = v(0, 0, 1), c101 = v(1, 0, 1), c011 = v(0, 1, 1), c111 = v(1, 1, 1);
        const double fx = fr.x(), fy = fr.y(), fz = fr.z();
        const double c00 = c000 + fx * (c100 - c000), c10 = c010 + fx * (c110 - c010);
        const double c01 = c001 + fx * (c101 - c001), c11 = c011 + fx * (c111 - c011);
        const double c0 = c00 + fy * (c10 - c00), c1 = c01 + fy * (c11 - c01);
        q.value = c0 + fz * (c1 - c0);
        const double dx0 = (c100 - c000) + fy * ((c110 - c010) - (c100 - c000));
        const double dx1 = (c101 - c001) + fy * ((c111 - c011) - (c101 - c001));
        q.grad.x() = (dx0 + fz * (dx1 - dx0)) / resolution;
        q.grad.y() = ((c10 - c00) + fz * ((c11 - c01) - (c10 - c00))) / resolution;
        q.grad.z() = (c1 - c0) / resolution;
        for (int a = 0; a < 3; ++a)
            if (dims(a) == 1)
                q.grad(a) = 0.0;
        if (clamped[0] || clamped[1] || clamped[2])
        {
            q.out_of_bounds = true;
            Vec3 xc = origin + resolution * (uc + Vec3::Constant(0.5));
            Vec3 out = x - xc;
            const double d = out.norm();
            for (int a = 0; a < 3; ++a)
                if (clamped[a])
                    q.grad(a) = 0.0;
            if (d > 0.0)
            {
                q.value -= d;
                q.grad -= out / d;
            }
        }
        return q;
    }

    double distance(const Vec3 &x, Vec3 *grad) const override
    {
        auto q = query(x);
        if (grad)
            *grad = q.grad;
        return q.value;
    }

    void save(const std::string &path) const
    {
        std::ofstream f(path, std::ios::binary);
        if (!f)
            throw InputError("cannot write esdf cache " + path);
        const char magic[8] = {'M', 'E', 'S', 'D', 'F', '1', 0, 0};
        f.write(magic, 8);
        f.write(reinterpret_cast<const char *>(origin.data()), 3 * sizeof(double));
        f.write(reinterpret_cast<const char *>(&resolution), sizeof(double));
        int32_t d[3] = {dims.x(), dims.y(), dims.z()};
        f.write(reinterpret_cast<const char *>(d), sizeof(d));
        std::vector<float> body(values.begin(), values.end());
        f.write(reinterpret_cast<const char *>(body.data()), static_cast<std::streamsize>(body.size() * sizeof(float)));
    }

    static EsdfGrid load(const std::string &path)
    {
        std::ifstream f(path, std::ios::binary);
        if (!f)
            throw InputError("cannot open esdf cache " + path);
        char magic[8];
        f.read(magic, 8);
        if (!f || std::memcmp(magic, "MESDF1", 6) != 0)
            throw InputError("not an esdf cache: " + path);
        EsdfGrid e;
        f.read(reinterpret_cast<char *>(e.origin.data()), 3 * sizeof(double));
        f.read(reinterpret_cast<char *>(&e.resolution), sizeof(double));
        int32_t d[3];
        f.read(reinterpret_cast<char *>(d), sizeof(d));
        if (!f || d[0] < 1 || d[1] < 1 || d[2] < 1 || !(e.resolution > 0))
            throw InputError("corrupt esdf cache header: " + path);
        e.dims = Eigen::Vector3i(d[0], d[1], d[2]);
        std::vector<float> body(static_cast<size_t>(e.dims.prod()));
        f.read(reinterpret_cast<char *>(body.data()), static_cast<std::streamsize>(body.size() * sizeof(float)));
        if (!f)
            throw InputError("truncated esdf cache: " + path);
        e.values.assign(body.begin(), body.end());
        return e;
    }
};

// Point clouds: plain "x y z" lines (commas allowed) or a PLY subset with a
// vertex element carrying x, y, z (ascii or binary_little_endian).
inline std::vector<Vec3> load_point_cloud(const std::string &path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw InputError("cannot open point cloud " + path);
    std::vector<Vec3> pts;
    std::string line;
    int lineno = 0;
    std::streampos start = f.tellg();
    std::getline(f, line);
    ++lineno;
    if (line.rfind("ply", 0) == 0)
    {
        bool binary = false;
        size_t nvert = 0;
        struct Prop
        {
            std::string name;
            int size;
            bool is_double;
            bool is_float;
        };
        std::vector<Prop> props;
        bool in_vertex = false;
        while (std::getline(f, line))
        {
            ++lineno;
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            std::istringstream ss(line);
            std::string tok;
            ss >> tok;
            if (tok == "format")
            {
                std::string fmt;
                ss >> fmt;
                if (fmt == "binary_little_endian")
                    binary = true;
                else if (fmt != "ascii")
                    throw InputError("ply line " + std::to_string(lineno) + ": unsupported format " + fmt);
            }
            else if (tok == "element")
            {
                std::string name;
                ss >> name;
                in_vertex = name == "vertex";
                if (in_vertex)
                    ss >> nvert;
            }
            else if (tok == "property" && in_vertex)
            {
                std::string type, name;
                ss >> type >> name;
                if (type == "list")
                    throw InputError("ply line " + std::to_string(lineno) + ": list property in vertex element");
                int size = 4;
                if (type == "double" || type == "float64")
                    size = 8;
                else if (type == "char" || type == "uchar" || type == "int8" || type == "uint8")
                    size = 1;
                else if (type == "short" || type == "ushort" || type == "int16" || type == "uint16")
                    size = 2;
                props.push_back({name, size, size == 8, type == "float" || type == "float32"});
            }
            else if (tok == "end_header")
                break;
        }
        int ix = -1, iy = -1, iz = -1;
        for (size_t i = 0; i < props.size(); ++i)
        {
            if (props[i].name == "x")
                ix = static_cast<int>(i);
            if (props[i].name == "y")
                iy = static_cast<int>(i);
            if (props[i].name == "z")
                iz = static_cast<int>(i);
        }
        if (ix < 0 || iy < 0 || iz < 0)
            throw InputError("ply: vertex element lacks x/y/z");
        for (size_t v = 0; v < nvert; ++v)
        {
            std::vector<double> vals(props.size());
            if (binary)
            {
                for (size_t i = 0; i < props.size(); ++i)
                {
                    char buf[8];
                    f.read(buf, props[i].size);
                    if (props[i].is_double)
                        std::memcpy(&vals[i], buf, 8);
                    else if (props[i].is_float)
                    {
                        float x;
                        std::memcpy(&x, buf, 4);
                        vals[i] = x;
                    }
                }
                if (!f)
                    throw InputError("ply: truncated binary body at vertex " + std::to_string(v));
            }
            else
            {
                if (!std::getline(f, line))
                    throw InputError("ply: missing vertex line " + std::to_string(lineno + 1));
                ++lineno;
                std::istringstream ss(line);
                for (auto &x : vals)
                    if (!(ss >> x))
                        throw InputError("ply line " + std::to_string(lineno) + ": bad vertex");
            }
            pts.emplace_back(vals[ix], vals[iy], vals[iz]);
        }
        return pts;
    }
    f.seekg(start);
    lineno = 0;
    while (std::getline(f, line))
    {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        double x, y, z;
        if (!(ss >> x))
            continue;
        if (!(ss >> y >> z))
            throw InputError("point cloud line " + std::to_string(lineno) + ": expected x y z");
        pts.emplace_back(x, y, z);
    }
    return pts;
}

// Voxelises a cloud into a grid; with no explicit bounds the cloud's box plus
// padding is used.
inline OccupancyGrid voxelize(const std::vector<Vec3> &pts, double res, double padding = 1.0)
{
    if (pts.empty())
        throw EmptyGrid();
    Vec3 lo = pts[0], hi = pts[0];
    for (const auto &p : pts)
    {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    lo -= Vec3::Constant(padding);
    hi += Vec3::Constant(padding);
    auto g = OccupancyGrid::covering(lo, hi, res);
    for (const auto &p : pts)
        g.mark_point(p);
    return g;
}

} // namespace marts
