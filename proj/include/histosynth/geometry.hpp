// Implicit cell shapes and vertical-ray slab sectioning.
//
// Every shape is one or two ellipsoids in a local frame, optionally bent
// along its long axis and with a band-limited radial perturbation. A point p
// is inside a lobe when |n| <= 1 + amplitude * f(n / |n|), where n is the
// local offset divided by the semi-axes and |f| <= 1 on the unit sphere.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>

#include "histosynth/core.hpp"

namespace histosynth
{

enum class ShapeKind : std::uint8_t
{
    Ellipsoid,
    BiLobed,
    Spindle,
    Disc,
    Vacuole,
};

struct Slab
{
    double z0{0.0};
    double thickness{1.0};

    double z1() const { return z0 + thickness; }
    friend bool operator==(const Slab&, const Slab&) = default;
};

struct Box2
{
    double xmin{0.0};
    double xmax{0.0};
    double ymin{0.0};
    double ymax{0.0};
    bool empty{true};

    bool contains(double x, double y) const { return !empty && x >= xmin && x <= xmax && y >= ymin && y <= ymax; }
};

struct Box3
{
    Vec3 lo;
    Vec3 hi;
};

struct OccupancySample
{
    bool covered{false};
    double z_entry{0.0};  // first entry into the shape
    double z_exit{0.0};   // last exit
    double inside{0.0};   // total length inside; less than exit - entry when the ray leaves and re-enters

    double path_length() const { return covered ? inside : 0.0; }
};

/// Angular modulation built from azimuthal bands sin^k(theta) cos(k phi + c)
/// and Legendre polar bands P_k(cos theta), k = 2..6. Coefficients are
/// normalized so the field never exceeds 1 in magnitude.
class AngularNoise
{
public:
    static constexpr int kMinBand = 2;
    static constexpr int kMaxBand = 6;
    static constexpr int kBands = kMaxBand - kMinBand + 1;

    AngularNoise() = default;

    explicit AngularNoise(std::uint64_t seed)
    {
        Rng rng(seed);
        double total = 0.0;
        for (int i = 0; i < kBands; ++i)
        {
            const double decay = 1.0 / static_cast<double>(i + kMinBand - 1);
            re_[i] = rng.normal() * decay;
            im_[i] = rng.normal() * decay;
            polar_[i] = rng.normal() * decay * 0.5;
            total += std::hypot(re_[i], im_[i]) + std::abs(polar_[i]);
        }
        if (total > 0.0)
        {
            for (int i = 0; i < kBands; ++i)
            {
                re_[i] /= total;
                im_[i] /= total;
                polar_[i] /= total;
            }
        }
    }

    /// Field value for a unit direction.
    double operator()(double ux, double uy, double uz) const
    {
        // (ux + i uy)^k = sin^k(theta) e^{i k phi}
        double pr = ux * ux - uy * uy;
        double pi = 2.0 * ux * uy;
        // Legendre recurrence up to P_6
        double p_prev = 1.0;
        double p_cur = uz;
        double value = 0.0;
        for (int k = 2; k <= kMaxBand; ++k)
        {
            const double p_next = ((2.0 * k - 1.0) * uz * p_cur - (k - 1.0) * p_prev) / k;
            p_prev = p_cur;
            p_cur = p_next;
            const int i = k - kMinBand;
            value += re_[i] * pr - im_[i] * pi + polar_[i] * p_cur;
            const double nr = pr * ux - pi * uy;
            pi = pr * uy + pi * ux;
            pr = nr;
        }
        return value;
    }

private:
    std::array<double, kBands> re_{};
    std::array<double, kBands> im_{};
    std::array<double, kBands> polar_{};
};

struct ShapeDesc
{
    ShapeKind kind{ShapeKind::Ellipsoid};
    Vec3 center;
    Quat orientation;
    Vec3 semi_axes{1.0, 1.0, 1.0};
    double lobe_separation{0.0};  // BiLobed: distance between lobe centers along local x
    double bend{0.0};             // [0,1]; tip offset along local y is bend * a / 2
    double noise_amplitude{0.0};
    std::uint64_t noise_seed{0};

    friend bool operator==(const ShapeDesc&, const ShapeDesc&) = default;
};

class ImplicitShape
{
public:
    explicit ImplicitShape(const ShapeDesc& desc)
        : desc_(desc), noise_(desc.noise_amplitude > 0.0 ? AngularNoise(desc.noise_seed) : AngularNoise())
    {
        const Quat inv = desc_.orientation.conjugate();
        const Vec3 ex = inv.rotate({1, 0, 0});
        const Vec3 ey = inv.rotate({0, 1, 0});
        const Vec3 ez = inv.rotate({0, 0, 1});
        // columns are the world axes expressed in the local frame
        rot_ = {{{ex.x, ey.x, ez.x}, {ex.y, ey.y, ez.y}, {ex.z, ey.z, ez.z}}};
        inv_axes_ = {1.0 / desc_.semi_axes.x, 1.0 / desc_.semi_axes.y, 1.0 / desc_.semi_axes.z};
        bend_coef_ = 0.5 * desc_.bend / desc_.semi_axes.x;
        half_sep_ = desc_.kind == ShapeKind::BiLobed ? desc_.lobe_separation / 2.0 : 0.0;
        compute_bounds();
    }

    const ShapeDesc& desc() const { return desc_; }
    const Box3& bounds() const { return bounds_; }
    bool is_exact_ellipsoid() const { return desc_.noise_amplitude == 0.0 && desc_.bend == 0.0; }

    Vec3 to_local(const Vec3& p) const
    {
        const Vec3 d = p - desc_.center;
        return {rot_[0][0] * d.x + rot_[0][1] * d.y + rot_[0][2] * d.z,
                rot_[1][0] * d.x + rot_[1][1] * d.y + rot_[1][2] * d.z,
                rot_[2][0] * d.x + rot_[2][1] * d.y + rot_[2][2] * d.z};
    }

    bool contains(const Vec3& p) const
    {
        Vec3 l = to_local(p);
        if (bend_coef_ != 0.0)
            l.y -= bend_coef_ * l.x * l.x;
        if (half_sep_ != 0.0)
            return lobe_contains({l.x - half_sep_, l.y, l.z}) || lobe_contains({l.x + half_sep_, l.y, l.z});
        return lobe_contains(l);
    }

    using Interval = std::pair<double, double>;

    /// z-intervals where the vertical line through (x, y) meets each inflated
    /// lobe ellipsoid, ignoring bend. At most two.
    std::array<std::optional<Interval>, 2> lobe_chords(double x, double y, double inflate) const
    {
        const Vec3 l0 = to_local({x, y, desc_.center.z});
        const Vec3 dir{rot_[0][2], rot_[1][2], rot_[2][2]};
        const auto lobe = [&](double offset) -> std::optional<Interval> {
            const double sx = inv_axes_.x / inflate;
            const double sy = inv_axes_.y / inflate;
            const double sz = inv_axes_.z / inflate;
            const double px = (l0.x - offset) * sx, py = l0.y * sy, pz = l0.z * sz;
            const double dx = dir.x * sx, dy = dir.y * sy, dz = dir.z * sz;
            const double a = dx * dx + dy * dy + dz * dz;
            const double b = 2.0 * (px * dx + py * dy + pz * dz);
            const double c = px * px + py * py + pz * pz - 1.0;
            const double disc = b * b - 4.0 * a * c;
            if (disc < 0.0)
                return std::nullopt;
            const double root = std::sqrt(disc);
            return Interval{desc_.center.z + (-b - root) / (2.0 * a), desc_.center.z + (-b + root) / (2.0 * a)};
        };
        if (half_sep_ != 0.0)
            return {lobe(half_sep_), lobe(-half_sep_)};
        return {lobe(0.0), std::nullopt};
    }

    /// Smallest z-interval containing every lobe chord; see lobe_chords.
    std::optional<Interval> chord_hull(double x, double y, double inflate) const
    {
        std::optional<Interval> hull;
        for (const auto& c : lobe_chords(x, y, inflate))
        {
            if (!c)
                continue;
            hull = hull ? Interval{std::min(hull->first, c->first), std::max(hull->second, c->second)} : *c;
        }
        return hull;
    }

private:
    bool lobe_contains(const Vec3& l) const
    {
        const double nx = l.x * inv_axes_.x;
        const double ny = l.y * inv_axes_.y;
        const double nz = l.z * inv_axes_.z;
        const double r2 = nx * nx + ny * ny + nz * nz;
        const double amp = desc_.noise_amplitude;
        if (amp == 0.0)
            return r2 <= 1.0;
        const double lo = 1.0 - amp;
        if (lo > 0.0 && r2 <= lo * lo)
            return true;
        const double hi = 1.0 + amp;
        if (r2 > hi * hi)
            return false;
        if (r2 == 0.0)
            return true;
        const double r = std::sqrt(r2);
        return r <= 1.0 + amp * noise_(nx / r, ny / r, nz / r);
    }

    void compute_bounds()
    {
        const double k = 1.0 + desc_.noise_amplitude;
        const double ex = k * desc_.semi_axes.x + half_sep_;
        const double ey = k * desc_.semi_axes.y;
        const double ez = k * desc_.semi_axes.z;
        // bend moves points by up to bend_coef * x^2 along local y
        const double ylo = -ey - (bend_coef_ < 0 ? -bend_coef_ * ex * ex : 0.0);
        const double yhi = ey + (bend_coef_ > 0 ? bend_coef_ * ex * ex : 0.0);
        bounds_.lo = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                      std::numeric_limits<double>::infinity()};
        bounds_.hi = bounds_.lo * -1.0;
        for (int i = 0; i < 8; ++i)
        {
            const Vec3 corner{(i & 1) ? ex : -ex, (i & 2) ? yhi : ylo, (i & 4) ? ez : -ez};
            const Vec3 w = desc_.orientation.rotate(corner) + desc_.center;
            bounds_.lo = {std::min(bounds_.lo.x, w.x), std::min(bounds_.lo.y, w.y), std::min(bounds_.lo.z, w.z)};
            bounds_.hi = {std::max(bounds_.hi.x, w.x), std::max(bounds_.hi.y, w.y), std::max(bounds_.hi.z, w.z)};
        }
    }

    ShapeDesc desc_;
    AngularNoise noise_;
    std::array<std::array<double, 3>, 3> rot_{};
    Vec3 inv_axes_;
    double bend_coef_{0.0};
    double half_sep_{0.0};
    Box3 bounds_;
};

inline bool contains(const ImplicitShape& shape, const Vec3& point) { return shape.contains(point); }

/// Coarse step of the membership scan along z, and bisection tolerance.
inline constexpr double kOccupancyScanStep = 0.5;
inline constexpr double kOccupancyTolerance = 0.01;

/// Where the vertical line through xy meets shape within the slab. Exact for
/// smooth unbent ellipsoids and lobe pairs; otherwise the membership function
/// is scanned in steps of at most kOccupancyScanStep and every run boundary
/// is refined by bisection.
inline OccupancySample slab_occupancy(const ImplicitShape& shape, const Slab& slab, Vec2 xy)
{
    const Box3& b = shape.bounds();
    if (xy.x < b.lo.x || xy.x > b.hi.x || xy.y < b.lo.y || xy.y > b.hi.y)
        return {};

    if (shape.is_exact_ellipsoid())
    {
        OccupancySample out;
        std::array<ImplicitShape::Interval, 2> parts{};
        int n = 0;
        for (const auto& c : shape.lobe_chords(xy.x, xy.y, 1.0))
        {
            if (!c)
                continue;
            const double lo = std::max(c->first, slab.z0);
            const double hi = std::min(c->second, slab.z1());
            if (hi > lo)
                parts[static_cast<std::size_t>(n++)] = {lo, hi};
        }
        if (n == 0)
            return {};
        if (n == 2 && parts[1].first < parts[0].first)
            std::swap(parts[0], parts[1]);
        out.covered = true;
        out.z_entry = parts[0].first;
        out.z_exit = n == 2 ? std::max(parts[0].second, parts[1].second) : parts[0].second;
        out.inside = parts[0].second - parts[0].first;
        if (n == 2)
            out.inside += parts[1].second - std::max(parts[1].first, std::min(parts[1].second, parts[0].second));
        return out;
    }

    double za = b.lo.z;
    double zb = b.hi.z;
    if (shape.desc().bend == 0.0)
    {
        const auto hull = shape.chord_hull(xy.x, xy.y, 1.0 + shape.desc().noise_amplitude);
        if (!hull)
            return {};
        za = hull->first;
        zb = hull->second;
    }
    za = std::max(za, slab.z0);
    zb = std::min(zb, slab.z1());
    if (!(zb > za))
        return {};

    const auto inside = [&](double z) { return shape.contains({xy.x, xy.y, z}); };
    const int steps = std::max(8, static_cast<int>(std::ceil((zb - za) / kOccupancyScanStep)));
    const double h = (zb - za) / steps;
    const auto z_at = [&](int i) { return i == steps ? zb : za + i * h; };
    // bisect between an inside and an outside sample, keeping the inside end
    const auto refine = [&](double in, double out) {
        while (std::abs(in - out) > kOccupancyTolerance)
        {
            const double mid = 0.5 * (in + out);
            (inside(mid) ? in : out) = mid;
        }
        return in;
    };

    OccupancySample result;
    int run_start = -1;
    bool prev = false;
    for (int i = 0; i <= steps + 1; ++i)
    {
        const bool cur = i <= steps && inside(z_at(i));
        if (cur && !prev)
            run_start = i;
        if (!cur && prev)
        {
            const int run_end = i - 1;
            const double lo = run_start > 0 ? refine(z_at(run_start), z_at(run_start - 1)) : z_at(run_start);
            const double hi = run_end < steps ? refine(z_at(run_end), z_at(run_end + 1)) : z_at(run_end);
            if (!result.covered)
                result.z_entry = lo;
            result.covered = true;
            result.z_exit = hi;
            result.inside += hi - lo;
        }
        prev = cur;
    }
    return result;
}

/// Conservative xy box of everything the shape can cover inside the slab.
inline Box2 footprint(const ImplicitShape& shape, const Slab& slab)
{
    const Box3& b = shape.bounds();
    if (b.hi.z < slab.z0 || b.lo.z > slab.z1())
        return {};
    return {b.lo.x, b.hi.x, b.lo.y, b.hi.y, false};
}

}  // namespace histosynth
