#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "histosynth/scenegen.hpp"
#include "support.hpp"

using namespace histosynth;
using testing_support::small_config;

namespace
{

// Midpoint-grid estimate of the stroma fraction of the placement box.
double stroma_fraction(const CryptLayout& layout, const SceneConfig& cfg)
{
    const auto box = detail::placement_box(cfg);
    const int nx = 64, ny = 64, nz = 6;
    int hits = 0;
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i)
            {
                const Vec3 p{box.x0 + (i + 0.5) * (box.x1 - box.x0) / nx, box.y0 + (j + 0.5) * (box.y1 - box.y0) / ny,
                             box.z0 + (k + 0.5) * (box.z1 - box.z0) / nz};
                hits += layout.in_stroma(p);
            }
    return hits / double(nx * ny * nz);
}

double tear_area(const CryptLayout& layout, const SceneConfig& cfg)
{
    const int n = 128;
    int hits = 0;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
            hits += layout.in_tear({(i + 0.5) * cfg.world_extent / n, (j + 0.5) * cfg.world_height() / n});
    return hits * cfg.world_extent * cfg.world_height() / (n * n);
}

}  // namespace

TEST(AssembleScene, Deterministic)
{
    const auto a = testing_support::small_scene(5);
    const auto b = testing_support::small_scene(5);
    EXPECT_EQ(serialize_scene(a), serialize_scene(b));
    EXPECT_EQ(a, b);
}

TEST(AssembleScene, SeedChangesPositions)
{
    int differ = 0;
    for (std::uint64_t s = 0; s < 100; ++s)
    {
        const auto a = assemble_scene(validate(small_config(s, 128)));
        const auto b = assemble_scene(validate(small_config(s + 1000, 128)));
        const std::size_t n = std::min(a.cells.size(), b.cells.size());
        bool all_same = a.cells.size() == b.cells.size();
        for (std::size_t i = 0; i < n && all_same; ++i)
            all_same = a.cells[i].nucleus_center == b.cells[i].nucleus_center;
        differ += !all_same;
    }
    EXPECT_GE(differ, 99);
}

TEST(AssembleScene, IdsAreContiguousFromOne)
{
    for (std::uint64_t s = 0; s < 5; ++s)
    {
        const auto scene = testing_support::small_scene(s);
        ASSERT_FALSE(scene.cells.empty());
        for (std::size_t i = 0; i < scene.cells.size(); ++i)
            ASSERT_EQ(scene.cells[i].id, i + 1);
    }
}

TEST(AssembleScene, CentersWithinPaddedWorld)
{
    for (std::uint64_t s = 0; s < 10; ++s)
    {
        const auto scene = testing_support::small_scene(s);
        const auto& cfg = scene.config;
        const double max_d = 2.0 * cell_margin(cfg);
        for (const auto& c : scene.cells)
        {
            ASSERT_GE(c.nucleus_center.x, -max_d);
            ASSERT_LE(c.nucleus_center.x, cfg.world_extent + max_d);
            ASSERT_GE(c.nucleus_center.y, -max_d);
            ASSERT_LE(c.nucleus_center.y, cfg.world_height() + max_d);
            ASSERT_GE(c.nucleus_center.z, cfg.slab_z0 - max_d);
            ASSERT_LE(c.nucleus_center.z, cfg.slab_z0 + cfg.slab_thickness + max_d);
        }
    }
}

TEST(AssembleScene, IdOverflowIsAnError)
{
    auto cfg = small_config(1, 64);
    cfg.blood_cell_baseline = static_cast<std::uint32_t>(kMaxInstances + 1);
    EXPECT_THROW(assemble_scene(validate(cfg)), Error);
    std::vector<CellInstance> cells(kMaxInstances);
    EXPECT_NO_THROW(assign_ids(cells));
    EXPECT_EQ(cells.back().id, kMaxInstances);
    cells.emplace_back();
    EXPECT_THROW(assign_ids(cells), Error);
}

TEST(AssembleScene, SpatialSorting)
{
    for (std::uint64_t s = 0; s < 10; ++s)
    {
        const auto scene = testing_support::small_scene(s);
        const auto& layout = scene.layout;
        for (const auto& c : scene.cells)
        {
            const Vec3& p = c.nucleus_center;
            if (c.cell_class == CellClass::Epithelial || c.cell_class == CellClass::Goblet)
            {
                ASSERT_GE(c.crypt_index, 0);
                const Crypt& crypt = layout.crypts[static_cast<std::size_t>(c.crypt_index)];
                const double r = crypt.radial_distance(p);
                ASSERT_GE(r, crypt.radius - crypt.wall_thickness - 1e-9);
                ASSERT_LE(r, crypt.radius + 1e-9);
            }
            else
            {
                ASSERT_TRUE(layout.in_stroma(p)) << class_name(c.cell_class) << " " << c.id;
            }
        }
    }
}

TEST(AssembleScene, JsonRoundTrip)
{
    const auto scene = testing_support::small_scene(77);
    const auto text = serialize_scene(scene);
    const auto back = parse_scene(text);
    EXPECT_EQ(back, scene);
    EXPECT_EQ(serialize_scene(back), text);
    EXPECT_EQ(scene_hash(back), scene_hash(scene));
}

TEST(CryptLayout, RadiusExceedsWallAndTubesDoNotOverlap)
{
    for (std::uint64_t s = 0; s < 30; ++s)
    {
        auto cfg = small_config(s);
        cfg.crypt_spacing = 60.0;  // crowded, forces the overlap resolution
        cfg.crypt_radius_jitter = 6.0;
        const auto vc = validate(cfg);
        const auto layout = build_crypt_layout(vc, s);
        const auto box = detail::placement_box(cfg);
        for (std::size_t a = 0; a < layout.crypts.size(); ++a)
        {
            const auto& ca = layout.crypts[a];
            ASSERT_GT(ca.radius, ca.wall_thickness);
            ASSERT_GT(ca.wall_thickness, 0.0);
            for (std::size_t b = a + 1; b < layout.crypts.size(); ++b)
            {
                const auto& cb = layout.crypts[b];
                for (int k = 0; k <= 20; ++k)
                {
                    const double z = box.z0 + k * (box.z1 - box.z0) / 20;
                    const Vec2 pa = ca.axis_at(z), pb = cb.axis_at(z);
                    ASSERT_GE(std::hypot(pa.x - pb.x, pa.y - pb.y), ca.radius + cb.radius - 1e-6);
                }
            }
        }
    }
}

TEST(CryptLayout, NoiselessCentersSitOnLattice)
{
    auto cfg = small_config(3, 512);
    cfg.crypt_center_jitter = 0.0;
    cfg.crypt_bending_amplitude = 0.0;
    cfg.crypt_radius_jitter = 0.0;
    const auto layout = build_crypt_layout(validate(cfg), 9);
    ASSERT_GE(layout.crypts.size(), 4u);
    for (std::size_t a = 0; a < layout.crypts.size(); ++a)
    {
        double nearest = 1e300;
        for (std::size_t b = 0; b < layout.crypts.size(); ++b)
            if (a != b)
                nearest = std::min(nearest, std::hypot(layout.crypts[a].center.x - layout.crypts[b].center.x,
                                                       layout.crypts[a].center.y - layout.crypts[b].center.y));
        EXPECT_NEAR(nearest, cfg.crypt_spacing, 1e-6);
    }
}

TEST(CryptLayout, SpacingLargerThanWorld)
{
    for (std::uint64_t s = 0; s < 50; ++s)
    {
        auto cfg = small_config(s);
        cfg.crypt_spacing = 4.0 * cfg.world_extent;
        const auto layout = build_crypt_layout(validate(cfg), s);
        EXPECT_LE(layout.crypts.size(), 1u);
        EXPECT_NO_THROW(assemble_scene(validate(cfg)));
    }
}

TEST(CryptLayout, TearAreaGrowsWithDegree)
{
    double prev = -1.0;
    for (const double degree : {0.0, 0.25, 0.5, 0.75, 1.0})
    {
        auto cfg = small_config(0);
        cfg.tearing_degree = degree;
        const auto vc = validate(cfg);
        double total = 0.0;
        for (std::uint64_t s = 0; s < 50; ++s)
            total += tear_area(build_crypt_layout(vc, s), cfg);
        if (degree == 0.0)
        {
            EXPECT_EQ(total, 0.0);
        }
        EXPECT_GT(total, prev) << degree;
        prev = total;
    }
}

TEST(Epithelium, RingBandCount)
{
    auto cfg = small_config(0, 512);
    cfg.shapes[class_index(CellClass::Epithelial)].diameter_mean = 10.0;
    cfg.goblet_ratio = 0.0;
    const auto vc = validate(cfg);
    CryptLayout layout;
    Crypt c;
    c.wall_thickness = cfg.crypt_wall_thickness;
    c.radius = 300.0 / (2.0 * std::numbers::pi) + c.wall_thickness / 2.0;  // ring circumference 300
    c.center = {128, 128};
    layout.crypts.push_back(c);
    const auto bands = epithelial_bands(cfg);
    for (std::uint64_t s = 0; s < 100; ++s)
    {
        const auto cells = place_epithelial_cells(layout, vc, s);
        std::map<int, int> per_band;
        for (const auto& cell : cells)
        {
            ASSERT_EQ(cell.cell_class, CellClass::Epithelial);
            const auto it = std::min_element(bands.begin(), bands.end(), [&](double a, double b) {
                return std::abs(a - cell.nucleus_center.z) < std::abs(b - cell.nucleus_center.z);
            });
            ++per_band[static_cast<int>(it - bands.begin())];
        }
        ASSERT_EQ(per_band.size(), bands.size());
        for (const auto& [band, n] : per_band)
        {
            EXPECT_GE(n, 25) << band;
            EXPECT_LE(n, 35) << band;
        }
    }
}

TEST(Epithelium, GobletFractionIsBinomial)
{
    long goblets = 0, total = 0;
    for (std::uint64_t s = 0; s < 20; ++s)
    {
        const auto scene = testing_support::small_scene(s);
        for (const auto& c : scene.cells)
        {
            goblets += c.cell_class == CellClass::Goblet;
            total += c.cell_class == CellClass::Goblet || c.cell_class == CellClass::Epithelial;
        }
    }
    const double p = SceneConfig{}.goblet_ratio;
    const double z = (goblets - p * total) / std::sqrt(total * p * (1 - p));
    EXPECT_LT(std::abs(z), 4.0) << goblets << "/" << total;

    auto cfg = small_config(1);
    cfg.goblet_ratio = 0.0;
    for (const auto& c : assemble_scene(validate(cfg)).cells)
        ASSERT_NE(c.cell_class, CellClass::Goblet);
}

TEST(Stroma, ZeroDensityIsEmpty)
{
    auto cfg = small_config(2);
    cfg.stromal_density = 0.0;
    const auto vc = validate(cfg);
    EXPECT_TRUE(place_stromal_cells(build_crypt_layout(vc, 1), vc, 2).empty());
}

TEST(Stroma, SingleClassRatio)
{
    auto cfg = small_config(2);
    cfg.class_ratios = {1.0, 0.0, 0.0, 0.0};
    const auto vc = validate(cfg);
    const auto cells = place_stromal_cells(build_crypt_layout(vc, 1), vc, 2);
    ASSERT_FALSE(cells.empty());
    for (const auto& c : cells)
        ASSERT_EQ(c.cell_class, CellClass::Plasma);
}

TEST(Stroma, CountMatchesDensityTimesStromaVolume)
{
    auto cfg = small_config(0, 256);
    const auto vc = validate(cfg);
    const auto box = detail::placement_box(cfg);
    double expected = 0.0;
    long observed = 0;
    for (std::uint64_t s = 0; s < 200; ++s)
    {
        const auto layout = build_crypt_layout(vc, derive_seed(s, "crypts", 0));
        expected += cfg.stromal_density * box.area_mm2() * stroma_fraction(layout, cfg);
        observed += static_cast<long>(place_stromal_cells(layout, vc, derive_seed(s, "stromal", 0)).size());
    }
    const double z = (observed - expected) / std::sqrt(expected);
    EXPECT_LT(std::abs(z), 2.576 + 0.5) << observed << " vs " << expected;  // 99% band plus grid error
}

TEST(Stroma, ClassHistogramMatchesRatios)
{
    const auto cfg = small_config(0, 512);
    const auto vc = validate(cfg);
    std::array<long, kStromalClassCount> counts{};
    long n = 0;
    for (std::uint64_t s = 0; n < 10000; ++s)
    {
        const auto layout = build_crypt_layout(vc, s);
        for (const auto& c : place_stromal_cells(layout, vc, s + 1))
        {
            for (std::size_t k = 0; k < kStromalClassCount; ++k)
                counts[k] += c.cell_class == kStromalClasses[k];
            ++n;
        }
    }
    double chi2 = 0.0;
    for (std::size_t k = 0; k < kStromalClassCount; ++k)
    {
        const double e = n * cfg.class_ratios[k];
        chi2 += (counts[k] - e) * (counts[k] - e) / e;
    }
    EXPECT_LT(chi2, 11.345);  // chi-square 3 dof, p = 0.01
}

TEST(Distractors, ExactCountInStroma)
{
    const auto cfg = small_config(0);
    const auto vc = validate(cfg);
    for (std::uint64_t s = 0; s < 50; ++s)
    {
        const auto layout = build_crypt_layout(vc, s);
        EXPECT_TRUE(place_distractors(layout, vc, s, 0).empty());
        const auto blood = place_distractors(layout, vc, s, 40);
        ASSERT_EQ(blood.size(), 40u);
        for (const auto& c : blood)
        {
            ASSERT_EQ(c.cell_class, CellClass::BloodCell);
            ASSERT_FALSE(layout.crypt_containing(c.nucleus_center).has_value());
        }
    }
}
