// Ground-truth world: crypt macrostructure, epithelial rings, stromal cells
// and distractors, assembled into a SceneGraph that fully determines a render.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "histosynth/config.hpp"
#include "histosynth/core.hpp"
#include "histosynth/geometry.hpp"

namespace histosynth
{

struct Crypt
{
    Vec2 center;
    double radius{0.0};
    double wall_thickness{0.0};
    Vec3 axis_tilt{0.0, 0.0, 1.0};  // unit direction of the straight part of the axis
    Vec2 bend_quadratic;            // axis offset = tilt + bend_quadratic u^2 + bend_cubic u^3
    Vec2 bend_cubic;
    double z_mid{0.0};   // u = (z - z_mid) / z_half
    double z_half{1.0};

    friend bool operator==(const Crypt&, const Crypt&) = default;

    Vec2 axis_at(double z) const
    {
        const double dz = z - z_mid;
        const double u = dz / z_half;
        const double u2 = u * u;
        const double u3 = u2 * u;
        return {center.x + axis_tilt.x / axis_tilt.z * dz + bend_quadratic.x * u2 + bend_cubic.x * u3,
                center.y + axis_tilt.y / axis_tilt.z * dz + bend_quadratic.y * u2 + bend_cubic.y * u3};
    }

    /// Largest distance of the axis from center over |u| <= 1.
    double max_axis_offset() const
    {
        return std::hypot(axis_tilt.x, axis_tilt.y) / axis_tilt.z * z_half + std::hypot(bend_quadratic.x, bend_quadratic.y) +
               std::hypot(bend_cubic.x, bend_cubic.y);
    }

    double radial_distance(const Vec3& p) const
    {
        const Vec2 a = axis_at(p.z);
        return std::hypot(p.x - a.x, p.y - a.y);
    }
};

struct Tear
{
    std::vector<Vec2> vertices;

    friend bool operator==(const Tear&, const Tear&) = default;

    bool contains(Vec2 p) const
    {
        bool inside = false;
        const std::size_t n = vertices.size();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++)
        {
            const Vec2& a = vertices[i];
            const Vec2& b = vertices[j];
            if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x)
                inside = !inside;
        }
        return inside;
    }
};

struct CryptLayout
{
    std::vector<Crypt> crypts;
    std::vector<Tear> tears;

    friend bool operator==(const CryptLayout&, const CryptLayout&) = default;

    /// Index of the crypt whose tube (lumen plus wall) contains p.
    std::optional<std::size_t> crypt_containing(const Vec3& p) const
    {
        for (std::size_t i = 0; i < crypts.size(); ++i)
            if (crypts[i].radial_distance(p) <= crypts[i].radius)
                return i;
        return std::nullopt;
    }

    bool in_lumen(const Vec3& p) const
    {
        for (const auto& c : crypts)
            if (c.radial_distance(p) < c.radius - c.wall_thickness)
                return true;
        return false;
    }

    bool in_tear(Vec2 p) const
    {
        for (const auto& t : tears)
            if (t.contains(p))
                return true;
        return false;
    }

    /// Connective tissue between crypts: outside every crypt tube and tear.
    bool in_stroma(const Vec3& p) const { return !crypt_containing(p) && !in_tear({p.x, p.y}); }

    /// Stained tissue: crypt walls plus stroma.
    bool in_tissue(const Vec3& p) const
    {
        if (crypt_containing(p))
            return !in_lumen(p);
        return !in_tear({p.x, p.y});
    }
};

/// Concrete shape drawn for one cell.
struct ShapeSample
{
    Vec3 semi_axes{1.0, 1.0, 1.0};
    double bend{0.0};
    double noise_amplitude{0.0};
    std::uint64_t noise_seed{0};
    double lobe_separation{0.0};
    double cytoplasm_scale{1.5};

    friend bool operator==(const ShapeSample&, const ShapeSample&) = default;
};

struct CellInstance
{
    std::uint16_t id{0};
    CellClass cell_class{CellClass::Plasma};
    Vec3 nucleus_center;
    Quat orientation;
    ShapeSample shape;
    double stain_jitter{1.0};
    int crypt_index{-1};  // epithelial and goblet cells only

    friend bool operator==(const CellInstance&, const CellInstance&) = default;
};

/// Diffuse red stain confined to the stroma.
struct RedBlob
{
    Vec2 center;
    double radius{0.0};
    double intensity{0.0};

    friend bool operator==(const RedBlob&, const RedBlob&) = default;
};

struct SceneProvenance
{
    std::uint64_t master_seed{0};
    std::map<std::string, std::uint64_t> streams;

    friend bool operator==(const SceneProvenance&, const SceneProvenance&) = default;
};

struct SceneGraph
{
    SceneConfig config;
    CryptLayout layout;
    std::vector<CellInstance> cells;
    std::vector<RedBlob> red_blobs;
    SceneProvenance provenance;

    friend bool operator==(const SceneGraph&, const SceneGraph&) = default;

    const CellInstance* find(std::uint16_t id) const
    {
        if (id >= 1 && id <= cells.size() && cells[id - 1].id == id)
            return &cells[id - 1];
        for (const auto& c : cells)
            if (c.id == id)
                return &c;
        return nullptr;
    }
};

inline constexpr std::size_t kMaxInstances = 65534;
inline constexpr int kMaxTears = 6;
inline constexpr double kTearRadiusFraction = 0.08;  // of world_extent, at tearing_degree 1
inline constexpr int kLloydIterations = 8;
inline constexpr int kDartRetries = 30;

// ---------------------------------------------------------------------------
// Cell shapes
// ---------------------------------------------------------------------------

inline ShapeKind nucleus_kind(CellClass c)
{
    switch (c)
    {
    case CellClass::Eosinophil: return ShapeKind::BiLobed;
    case CellClass::Fibroblast: return ShapeKind::Spindle;
    case CellClass::Goblet: return ShapeKind::Vacuole;
    case CellClass::BloodCell: return ShapeKind::Disc;
    default: return ShapeKind::Ellipsoid;
    }
}

/// Stained nucleus; only the five labelled classes have one.
inline std::optional<ImplicitShape> nucleus_shape(const CellInstance& cell)
{
    if (!has_nucleus_label(cell.cell_class))
        return std::nullopt;
    const auto& s = cell.shape;
    return ImplicitShape(ShapeDesc{nucleus_kind(cell.cell_class), cell.nucleus_center, cell.orientation, s.semi_axes,
                                   s.lobe_separation, s.bend, s.noise_amplitude, s.noise_seed});
}

/// Cytoplasm for labelled cells, the vacuole for goblets, the disc body for
/// blood cells. Always a smooth ellipsoid.
inline ImplicitShape body_shape(const CellInstance& cell)
{
    const auto& s = cell.shape;
    if (!has_nucleus_label(cell.cell_class))
        return ImplicitShape(ShapeDesc{nucleus_kind(cell.cell_class), cell.nucleus_center, cell.orientation, s.semi_axes});
    const double k = s.cytoplasm_scale;
    const Vec3 axes{(s.semi_axes.x + s.lobe_separation / 2.0) * k, s.semi_axes.y * k, s.semi_axes.z * k};
    return ImplicitShape(ShapeDesc{ShapeKind::Ellipsoid, cell.nucleus_center, cell.orientation, axes});
}

/// Half-extent of the largest cell body a config can produce; the z-range
/// cells are placed in is the slab padded by this much.
inline double cell_margin(const SceneConfig& cfg)
{
    double m = 0.0;
    for (const auto& s : cfg.shapes)
    {
        const double d = s.diameter_mean + 3.0 * s.diameter_sd;
        m = std::max(m, (0.5 * d * std::sqrt(s.elongation) + 0.5 * s.lobe_separation) * s.cytoplasm_scale);
    }
    return m;
}

namespace detail
{

struct PlacementBox
{
    double x0, x1, y0, y1, z0, z1;

    double area_mm2() const { return (x1 - x0) * (y1 - y0) * 1e-6; }
    Vec3 sample(Rng& rng) const { return {rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(z0, z1)}; }
};

inline PlacementBox placement_box(const SceneConfig& cfg)
{
    const double m = cell_margin(cfg);
    return {0.0, cfg.world_extent, 0.0, cfg.world_height(), cfg.slab_z0 - m, cfg.slab_z0 + cfg.slab_thickness + m};
}

/// Cells farther than one body diameter outside the image cannot touch it.
inline bool within_padded_world(const SceneConfig& cfg, const Vec3& p)
{
    const double pad = 2.0 * cell_margin(cfg);
    return p.x >= -pad && p.x <= cfg.world_extent + pad && p.y >= -pad && p.y <= cfg.world_height() + pad;
}

inline double sample_diameter(Rng& rng, const ShapeParams& s)
{
    return std::max(0.3 * s.diameter_mean, rng.normal(s.diameter_mean, s.diameter_sd));
}

inline double sample_jitter(Rng& rng, const SceneConfig& cfg)
{
    return std::max(0.0, 1.0 + rng.normal() * cfg.stain.stain_noise_sigma);
}

/// Stroma point by rejection; falls back to the last candidate when the
/// stroma is (nearly) empty.
inline Vec3 sample_stroma(Rng& rng, const CryptLayout& layout, const PlacementBox& box)
{
    Vec3 p = box.sample(rng);
    for (int tries = 0; tries < 10000 && !layout.in_stroma(p); ++tries)
        p = box.sample(rng);
    return p;
}

inline Vec2 random_in_disc(Rng& rng, double radius)
{
    const double r = radius * std::sqrt(rng.uniform());
    const double a = rng.uniform() * 2.0 * std::numbers::pi;
    return {r * std::cos(a), r * std::sin(a)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Crypt layout
// ---------------------------------------------------------------------------

/// Hexagonal lattice of crypt tubes with a random phase. Lattice points
/// within half a mean radius of the image are kept; radii, centers and axis
/// bends are jittered, then radii shrunk until no two tubes can intersect.
inline CryptLayout build_crypt_layout(const ValidatedConfig& vc, std::uint64_t seed)
{
    const SceneConfig& cfg = *vc;
    Rng rng(seed);
    CryptLayout layout;

    const double s = cfg.crypt_spacing;
    const double row_h = s * std::sqrt(3.0) / 2.0;
    const double ox = rng.uniform() * s;
    const double oy = rng.uniform() * 2.0 * row_h;
    const double margin = cfg.crypt_radius_mean / 2.0;
    const double w = cfg.world_extent;
    const double h = cfg.world_height();
    const auto pad = detail::placement_box(cfg);
    const double z_mid = 0.5 * (pad.z0 + pad.z1);
    const double z_half = 0.5 * (pad.z1 - pad.z0);
    const double budget = cfg.crypt_bending_amplitude / 2.0;

    const long j0 = static_cast<long>(std::floor((-margin - oy) / row_h));
    const long j1 = static_cast<long>(std::ceil((h + margin - oy) / row_h));
    for (long j = j0; j <= j1; ++j)
    {
        const double y = oy + static_cast<double>(j) * row_h;
        if (y < -margin || y > h + margin)
            continue;
        const double row_x = ox + ((j % 2 != 0) ? s / 2.0 : 0.0);
        const long i0 = static_cast<long>(std::floor((-margin - row_x) / s));
        const long i1 = static_cast<long>(std::ceil((w + margin - row_x) / s));
        for (long i = i0; i <= i1; ++i)
        {
            const double x = row_x + static_cast<double>(i) * s;
            if (x < -margin || x > w + margin)
                continue;
            Crypt c;
            c.center = {x + rng.normal() * cfg.crypt_center_jitter, y + rng.normal() * cfg.crypt_center_jitter};
            c.wall_thickness = cfg.crypt_wall_thickness;
            const double min_radius = cfg.crypt_wall_thickness + 0.5 * (cfg.crypt_radius_mean - cfg.crypt_wall_thickness);
            c.radius = std::max(min_radius, rng.normal(cfg.crypt_radius_mean, cfg.crypt_radius_jitter));
            c.z_mid = z_mid;
            c.z_half = z_half;
            // half the bending budget goes to tilt, half to the polynomial bend
            const Vec2 slope = detail::random_in_disc(rng, budget / z_half);
            const double norm = std::sqrt(1.0 + slope.x * slope.x + slope.y * slope.y);
            c.axis_tilt = {slope.x / norm, slope.y / norm, 1.0 / norm};
            const Vec2 b2 = detail::random_in_disc(rng, budget / 2.0);
            const Vec2 b3 = detail::random_in_disc(rng, budget / 2.0);
            c.bend_quadratic = b2;
            c.bend_cubic = b3;
            layout.crypts.push_back(c);
        }
    }

    // resolve overlaps: straighten the pair first, then shrink radii, then drop
    std::vector<bool> keep(layout.crypts.size(), true);
    for (std::size_t a = 0; a < layout.crypts.size(); ++a)
    {
        for (std::size_t b = a + 1; b < layout.crypts.size(); ++b)
        {
            if (!keep[a] || !keep[b])
                continue;
            auto& ca = layout.crypts[a];
            auto& cb = layout.crypts[b];
            const double d = std::hypot(ca.center.x - cb.center.x, ca.center.y - cb.center.y);
            const auto clearance = [&] { return d - (ca.radius + cb.radius + ca.max_axis_offset() + cb.max_axis_offset()); };
            if (clearance() >= 0.0)
                continue;
            for (Crypt* c : {&ca, &cb})
            {
                c->axis_tilt = {0.0, 0.0, 1.0};
                c->bend_quadratic = {};
                c->bend_cubic = {};
            }
            const double excess = -clearance() + 1e-9;
            if (excess <= 1e-9)
                continue;
            const double floor_radius = cfg.crypt_wall_thickness + 0.5;
            const double room_a = ca.radius - floor_radius;
            const double room_b = cb.radius - floor_radius;
            if (room_a + room_b < excess)
            {
                keep[b] = false;
                continue;
            }
            const double cut_a = std::clamp(excess / 2.0, excess - room_b, room_a);
            ca.radius -= cut_a;
            cb.radius -= excess - cut_a;
        }
    }
    std::vector<Crypt> kept;
    for (std::size_t i = 0; i < layout.crypts.size(); ++i)
        if (keep[i])
            kept.push_back(layout.crypts[i]);
    layout.crypts = std::move(kept);

    const int tear_count = static_cast<int>(std::lround(cfg.tearing_degree * kMaxTears));
    const double tear_radius = cfg.tearing_degree * kTearRadiusFraction * cfg.world_extent;
    for (int t = 0; t < tear_count; ++t)
    {
        const Vec2 c{rng.uniform(0.0, w), rng.uniform(0.0, h)};
        const double r = tear_radius * rng.uniform(0.7, 1.3);
        const int k = 5 + static_cast<int>(rng.below(4));
        Tear tear;
        for (int v = 0; v < k; ++v)
        {
            const double angle = 2.0 * std::numbers::pi * (v + rng.uniform(-0.3, 0.3)) / k;
            const double rv = r * rng.uniform(0.6, 1.0);
            tear.vertices.push_back({c.x + rv * std::cos(angle), c.y + rv * std::sin(angle)});
        }
        layout.tears.push_back(std::move(tear));
    }
    return layout;
}

// ---------------------------------------------------------------------------
// Epithelium
// ---------------------------------------------------------------------------

/// Relaxes sorted angles on the circle towards equal spacing; each point
/// moves to the midpoint of its 1D Voronoi cell.
inline void lloyd_relax_ring(std::vector<double>& angles, int iterations)
{
    const std::size_t n = angles.size();
    if (n < 2)
        return;
    constexpr double tau = 2.0 * std::numbers::pi;
    std::vector<double> next(n);
    for (int it = 0; it < iterations; ++it)
    {
        for (std::size_t i = 0; i < n; ++i)
        {
            const double prev = i == 0 ? angles[n - 1] - tau : angles[i - 1];
            const double succ = i + 1 == n ? angles[0] + tau : angles[i + 1];
            next[i] = 0.25 * (prev + 2.0 * angles[i] + succ);
        }
        angles = next;
    }
}

/// Voronoi arc (radians) of each point on a ring of sorted angles.
inline std::vector<double> ring_cells(const std::vector<double>& angles)
{
    const std::size_t n = angles.size();
    constexpr double tau = 2.0 * std::numbers::pi;
    std::vector<double> cells(n, tau);
    if (n < 2)
        return cells;
    for (std::size_t i = 0; i < n; ++i)
    {
        const double prev = i == 0 ? angles[n - 1] - tau : angles[i - 1];
        const double succ = i + 1 == n ? angles[0] + tau : angles[i + 1];
        cells[i] = 0.5 * (succ - prev);
    }
    return cells;
}

/// z-centers of the epithelial bands stacked through the padded slab.
inline std::vector<double> epithelial_bands(const SceneConfig& cfg)
{
    const auto box = detail::placement_box(cfg);
    const double d = cfg.shape(CellClass::Epithelial).diameter_mean;
    const int n = std::max(1, static_cast<int>(std::ceil((box.z1 - box.z0) / d)));
    std::vector<double> bands;
    for (int b = 0; b < n; ++b)
        bands.push_back(box.z0 + (b + 0.5) * d);
    return bands;
}

inline std::vector<CellInstance> place_epithelial_cells(const CryptLayout& layout, const ValidatedConfig& vc, std::uint64_t seed)
{
    const SceneConfig& cfg = *vc;
    const ShapeParams& epi = cfg.shape(CellClass::Epithelial);
    const ShapeParams& gob = cfg.shape(CellClass::Goblet);
    const auto bands = epithelial_bands(cfg);
    std::vector<CellInstance> cells;

    for (std::size_t ci = 0; ci < layout.crypts.size(); ++ci)
    {
        const Crypt& crypt = layout.crypts[ci];
        const double ring_r = crypt.radius - crypt.wall_thickness / 2.0;
        const double circumference = 2.0 * std::numbers::pi * ring_r;
        for (std::size_t b = 0; b < bands.size(); ++b)
        {
            Rng rng(derive_seed(seed, "ring", (static_cast<std::uint64_t>(ci) << 16) | b));
            const auto n = static_cast<std::size_t>(
                std::max(3L, std::lround(circumference / epi.diameter_mean * rng.uniform(0.9, 1.1))));
            std::vector<double> angles(n);
            for (auto& a : angles)
                a = rng.uniform() * 2.0 * std::numbers::pi;
            std::sort(angles.begin(), angles.end());
            lloyd_relax_ring(angles, kLloydIterations);
            const auto arcs = ring_cells(angles);

            for (std::size_t i = 0; i < n; ++i)
            {
                const double gap = arcs[i] * ring_r;
                const double theta = angles[i];
                const double z = bands[b] + rng.uniform(-0.1, 0.1) * epi.diameter_mean;
                const double rc = ring_r + rng.uniform(-0.25, 0.25) * crypt.wall_thickness;
                const Vec2 axis = crypt.axis_at(z);

                CellInstance cell;
                cell.crypt_index = static_cast<int>(ci);
                cell.nucleus_center = {axis.x + rc * std::cos(theta), axis.y + rc * std::sin(theta), z};
                cell.orientation = Quat::about_z(theta);
                cell.stain_jitter = detail::sample_jitter(rng, cfg);
                const bool goblet = rng.uniform() < cfg.goblet_ratio;
                if (goblet)
                {
                    const double d = detail::sample_diameter(rng, gob);
                    cell.cell_class = CellClass::Goblet;
                    cell.shape.semi_axes = {std::min(0.5 * d, 0.45 * crypt.wall_thickness), 0.5 * std::min(d, gap),
                                            0.5 * d * std::sqrt(gob.elongation)};
                    cell.shape.cytoplasm_scale = gob.cytoplasm_scale;
                }
                else
                {
                    const double d = detail::sample_diameter(rng, epi);
                    const double tangential = std::clamp(d / std::sqrt(epi.elongation), 0.6 * gap, 1.0 * gap);
                    cell.cell_class = CellClass::Epithelial;
                    cell.shape.semi_axes = {std::min(0.5 * d * std::sqrt(epi.elongation), 0.45 * crypt.wall_thickness),
                                            0.5 * tangential, 0.45 * epi.diameter_mean};
                    cell.shape.noise_amplitude = epi.shape_noise;
                    cell.shape.noise_seed = rng.bits();
                    cell.shape.cytoplasm_scale = epi.cytoplasm_scale;
                }
                if (detail::within_padded_world(cfg, cell.nucleus_center))
                    cells.push_back(cell);
            }
        }
    }
    return cells;
}

// ---------------------------------------------------------------------------
// Stroma and distractors
// ---------------------------------------------------------------------------

inline ShapeSample sample_stromal_shape(Rng& rng, CellClass cls, const ShapeParams& p)
{
    ShapeSample s;
    const double d = detail::sample_diameter(rng, p);
    const double root_e = std::sqrt(p.elongation);
    s.semi_axes = {0.5 * d * root_e, 0.5 * d / root_e, 0.5 * d / root_e};
    s.noise_amplitude = p.shape_noise;
    s.noise_seed = rng.bits();
    s.cytoplasm_scale = p.cytoplasm_scale;
    if (cls == CellClass::Eosinophil)
        s.lobe_separation = p.lobe_separation * d / p.diameter_mean;
    if (cls == CellClass::Fibroblast)
        s.bend = p.bending * rng.uniform(0.5, 1.0);
    return s;
}

/// Poisson(density * box area) candidates thinned to the stroma, so the count
/// is Poisson with mean density * stroma area. Candidates closer than half
/// the mean stromal diameter to an accepted cell are redrawn up to
/// kDartRetries times, then accepted anyway.
inline std::vector<CellInstance> place_stromal_cells(const CryptLayout& layout, const ValidatedConfig& vc, std::uint64_t seed)
{
    const SceneConfig& cfg = *vc;
    Rng rng(seed);
    std::vector<CellInstance> cells;
    const auto box = detail::placement_box(cfg);
    const auto candidates = rng.poisson(cfg.stromal_density * box.area_mm2());

    double mean_diameter = 0.0;
    for (std::size_t k = 0; k < kStromalClassCount; ++k)
        mean_diameter += cfg.class_ratios[k] * cfg.shape(kStromalClasses[k]).diameter_mean;
    const double min_sep2 = 0.25 * mean_diameter * mean_diameter;

    const auto far_enough = [&](const Vec3& p) {
        for (const auto& c : cells)
        {
            const Vec3 d = c.nucleus_center - p;
            if (d.dot(d) < min_sep2)
                return false;
        }
        return true;
    };

    for (std::uint64_t k = 0; k < candidates; ++k)
    {
        Vec3 p = box.sample(rng);
        if (!layout.in_stroma(p))
            continue;
        for (int retry = 0; retry < kDartRetries && !far_enough(p); ++retry)
            p = detail::sample_stroma(rng, layout, box);

        const auto cls = kStromalClasses[rng.categorical(cfg.class_ratios)];
        CellInstance cell;
        cell.cell_class = cls;
        cell.nucleus_center = p;
        cell.orientation = rng.rotation();
        cell.shape = sample_stromal_shape(rng, cls, cfg.shape(cls));
        cell.stain_jitter = detail::sample_jitter(rng, cfg);
        cells.push_back(cell);
    }
    return cells;
}

/// Exactly blood_count anucleate blood discs in the stroma.
inline std::vector<CellInstance> place_distractors(const CryptLayout& layout, const ValidatedConfig& vc, std::uint64_t seed,
                                                   std::size_t blood_count)
{
    const SceneConfig& cfg = *vc;
    const ShapeParams& p = cfg.shape(CellClass::BloodCell);
    Rng rng(seed);
    const auto box = detail::placement_box(cfg);
    std::vector<CellInstance> cells;
    cells.reserve(blood_count);
    for (std::size_t i = 0; i < blood_count; ++i)
    {
        CellInstance cell;
        cell.cell_class = CellClass::BloodCell;
        cell.nucleus_center = detail::sample_stroma(rng, layout, box);
        cell.orientation = rng.rotation();
        const double d = detail::sample_diameter(rng, p);
        cell.shape.semi_axes = {0.5 * d, 0.5 * d, 0.5 * d / p.elongation};
        cell.shape.cytoplasm_scale = p.cytoplasm_scale;
        cell.stain_jitter = detail::sample_jitter(rng, cfg);
        cells.push_back(cell);
    }
    return cells;
}

/// Gives cells the ids first_id, first_id + 1, ...; throws when the 16-bit
/// id space would overflow.
inline void assign_ids(std::vector<CellInstance>& cells, std::size_t first_id = 1)
{
    if (first_id + cells.size() - 1 > kMaxInstances && !cells.empty())
        throw Error("scene has " + std::to_string(first_id + cells.size() - 1) + " instances; limit is " +
                    std::to_string(kMaxInstances));
    for (std::size_t i = 0; i < cells.size(); ++i)
        cells[i].id = static_cast<std::uint16_t>(first_id + i);
}

inline SceneGraph assemble_scene(const ValidatedConfig& vc)
{
    const SceneConfig& cfg = *vc;
    SceneGraph scene;
    scene.config = cfg;
    scene.provenance.master_seed = cfg.master_seed;
    auto& streams = scene.provenance.streams;
    streams["crypts"] = derive_seed(cfg.master_seed, "crypts", 0);
    streams["epithelial"] = derive_seed(cfg.master_seed, "epithelial", 0);
    streams["stromal"] = derive_seed(cfg.master_seed, "stromal", 0);
    streams["blood"] = derive_seed(cfg.master_seed, "blood", 0);

    scene.layout = build_crypt_layout(vc, streams["crypts"]);
    auto epithelial = place_epithelial_cells(scene.layout, vc, streams["epithelial"]);
    auto stromal = place_stromal_cells(scene.layout, vc, streams["stromal"]);
    auto blood = place_distractors(scene.layout, vc, streams["blood"], cfg.blood_cell_baseline);

    scene.cells = std::move(epithelial);
    scene.cells.insert(scene.cells.end(), stromal.begin(), stromal.end());
    scene.cells.insert(scene.cells.end(), blood.begin(), blood.end());
    assign_ids(scene.cells);
    return scene;
}

// ---------------------------------------------------------------------------
// scene.json
// ---------------------------------------------------------------------------

namespace detail
{
inline Json vec_json(const Vec3& v) { return Json::array({v.x, v.y, v.z}); }
inline Json vec_json(const Vec2& v) { return Json::array({v.x, v.y}); }
inline Vec3 vec3_from(const Json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
inline Vec2 vec2_from(const Json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }
}  // namespace detail

inline Json to_json(const SceneGraph& scene)
{
    using detail::vec_json;
    Json crypts = Json::array();
    for (const auto& c : scene.layout.crypts)
        crypts.push_back(Json{{"center", vec_json(c.center)},
                              {"radius", c.radius},
                              {"wall_thickness", c.wall_thickness},
                              {"axis_tilt", vec_json(c.axis_tilt)},
                              {"bend_quadratic", vec_json(c.bend_quadratic)},
                              {"bend_cubic", vec_json(c.bend_cubic)},
                              {"z_mid", c.z_mid},
                              {"z_half", c.z_half}});
    Json tears = Json::array();
    for (const auto& t : scene.layout.tears)
    {
        Json verts = Json::array();
        for (const auto& v : t.vertices)
            verts.push_back(vec_json(v));
        tears.push_back(verts);
    }
    Json cells = Json::array();
    for (const auto& c : scene.cells)
    {
        const auto& s = c.shape;
        cells.push_back(Json{{"id", c.id},
                             {"class", std::string(class_name(c.cell_class))},
                             {"nucleus_center", vec_json(c.nucleus_center)},
                             {"orientation", Json::array({c.orientation.w, c.orientation.x, c.orientation.y, c.orientation.z})},
                             {"semi_axes", vec_json(s.semi_axes)},
                             {"bend", s.bend},
                             {"noise_amplitude", s.noise_amplitude},
                             {"noise_seed", s.noise_seed},
                             {"lobe_separation", s.lobe_separation},
                             {"cytoplasm_scale", s.cytoplasm_scale},
                             {"stain_jitter", c.stain_jitter},
                             {"crypt_index", c.crypt_index}});
    }
    Json blobs = Json::array();
    for (const auto& b : scene.red_blobs)
        blobs.push_back(Json{{"center", vec_json(b.center)}, {"radius", b.radius}, {"intensity", b.intensity}});

    return Json{{"config", to_json(scene.config)},
                {"layout", Json{{"crypts", crypts}, {"tears", tears}}},
                {"cells", cells},
                {"red_blobs", blobs},
                {"provenance", Json{{"master_seed", scene.provenance.master_seed}, {"streams", scene.provenance.streams}}}};
}

inline SceneGraph scene_from_json(const Json& j)
{
    using detail::vec2_from;
    using detail::vec3_from;
    SceneGraph scene;
    try
    {
        scene.config = config_from_json(j.at("config"));
        for (const auto& c : j.at("layout").at("crypts"))
        {
            Crypt crypt;
            crypt.center = vec2_from(c.at("center"));
            crypt.radius = c.at("radius").get<double>();
            crypt.wall_thickness = c.at("wall_thickness").get<double>();
            crypt.axis_tilt = vec3_from(c.at("axis_tilt"));
            crypt.bend_quadratic = vec2_from(c.at("bend_quadratic"));
            crypt.bend_cubic = vec2_from(c.at("bend_cubic"));
            crypt.z_mid = c.at("z_mid").get<double>();
            crypt.z_half = c.at("z_half").get<double>();
            scene.layout.crypts.push_back(crypt);
        }
        for (const auto& t : j.at("layout").at("tears"))
        {
            Tear tear;
            for (const auto& v : t)
                tear.vertices.push_back(vec2_from(v));
            scene.layout.tears.push_back(std::move(tear));
        }
        for (const auto& c : j.at("cells"))
        {
            CellInstance cell;
            cell.id = c.at("id").get<std::uint16_t>();
            const auto cls = class_from_name(c.at("class").get<std::string>());
            if (!cls)
                throw Error("scene.json: unknown cell class '" + c.at("class").get<std::string>() + "'");
            cell.cell_class = *cls;
            cell.nucleus_center = vec3_from(c.at("nucleus_center"));
            const auto& q = c.at("orientation");
            cell.orientation = {q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(), q.at(3).get<double>()};
            cell.shape.semi_axes = vec3_from(c.at("semi_axes"));
            cell.shape.bend = c.at("bend").get<double>();
            cell.shape.noise_amplitude = c.at("noise_amplitude").get<double>();
            cell.shape.noise_seed = c.at("noise_seed").get<std::uint64_t>();
            cell.shape.lobe_separation = c.at("lobe_separation").get<double>();
            cell.shape.cytoplasm_scale = c.at("cytoplasm_scale").get<double>();
            cell.stain_jitter = c.at("stain_jitter").get<double>();
            cell.crypt_index = c.at("crypt_index").get<int>();
            scene.cells.push_back(cell);
        }
        for (const auto& b : j.at("red_blobs"))
            scene.red_blobs.push_back({vec2_from(b.at("center")), b.at("radius").get<double>(), b.at("intensity").get<double>()});
        scene.provenance.master_seed = j.at("provenance").at("master_seed").get<std::uint64_t>();
        scene.provenance.streams = j.at("provenance").at("streams").get<std::map<std::string, std::uint64_t>>();
    }
    catch (const nlohmann::json::exception& e)
    {
        throw Error(std::string("scene.json: ") + e.what());
    }
    return scene;
}

inline std::string serialize_scene(const SceneGraph& scene) { return dump_canonical(to_json(scene)); }

inline SceneGraph parse_scene(std::string_view text)
{
    try
    {
        return scene_from_json(Json::parse(text));
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw Error(std::string("scene.json: ") + e.what());
    }
}

inline std::uint64_t scene_hash(const SceneGraph& scene) { return fnv1a64(serialize_scene(scene)); }

}  // namespace histosynth
