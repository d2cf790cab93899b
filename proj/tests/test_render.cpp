#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "histosynth/io.hpp"
#include "histosynth/render.hpp"
#include "support.hpp"

using namespace histosynth;
using testing_support::small_config;
using testing_support::small_scene;

namespace
{

SceneGraph bare_scene(std::uint32_t pixels)
{
    SceneGraph scene;
    scene.config = small_config(0, pixels);
    scene.config.stain.tissue_intensity = 0.0;
    scene.config.blur_strength = 0.0;
    return scene;
}

CellInstance sphere_cell(Vec3 center, double radius, std::uint16_t id = 1)
{
    CellInstance c;
    c.id = id;
    c.cell_class = CellClass::Plasma;
    c.nucleus_center = center;
    c.shape.semi_axes = {radius, radius, radius};
    c.shape.cytoplasm_scale = 1.5;
    return c;
}

double gradient_energy(const Plane<Rgb8>& img)
{
    double e = 0.0;
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x + 1 < img.width(); ++x)
        {
            const double d = double(img(x + 1, y).g) - double(img(x, y).g);
            e += d * d;
        }
    return e;
}

bool no_brighter(const Plane<Rgb8>& after, const Plane<Rgb8>& before)
{
    for (std::size_t i = 0; i < after.size(); ++i)
        if (after[i].r > before[i].r || after[i].g > before[i].g || after[i].b > before[i].b)
            return false;
    return true;
}

}  // namespace

TEST(Render, EmptySceneIsBackground)
{
    auto scene = bare_scene(64);
    scene.config.stain.background_light = {1.0, 0.8, 0.6};
    const auto out = render_scene(scene);
    const Rgb8 want{255, 204, 153};
    for (std::size_t i = 0; i < out.image.size(); ++i)
    {
        ASSERT_EQ(out.image[i], want);
        ASSERT_EQ(out.semantic_mask[i], 0);
        ASSERT_EQ(out.instance_mask[i], 0);
        ASSERT_EQ(out.depth_map[i], 0.0f);
    }
}

TEST(Render, PlanesShareDimensions)
{
    auto cfg = small_config(3, 96);
    cfg.image_height = 64;
    const auto scene = assemble_scene(validate(cfg));
    const auto out = render_scene(scene);
    for (const auto& [w, h] : {std::pair{out.image.width(), out.image.height()},
                              std::pair{out.semantic_mask.width(), out.semantic_mask.height()},
                              std::pair{out.instance_mask.width(), out.instance_mask.height()},
                              std::pair{out.depth_map.width(), out.depth_map.height()}})
    {
        EXPECT_EQ(w, 96u);
        EXPECT_EQ(h, 64u);
    }
}

TEST(Render, SphereMaskIsAnalyticDisc)
{
    auto scene = bare_scene(64);  // 0.5 um pixels
    const Vec3 c{16.13, 15.87, 5.0};
    const double r = 4.1;
    scene.cells.push_back(sphere_cell(c, r));
    const auto out = render_scene(scene);
    const double px = scene.config.pixel_size();
    std::size_t disc = 0;
    for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x)
        {
            const double d = std::hypot((x + 0.5) * px - c.x, (y + 0.5) * px - c.y);
            const bool inside = d < r;
            disc += inside;
            ASSERT_EQ(out.instance_mask(x, y), inside ? 1 : 0) << x << "," << y;
            ASSERT_EQ(out.semantic_mask(x, y), inside ? 2 : 0);
            ASSERT_EQ(out.depth_map(x, y), inside ? 5.0f : 0.0f);
        }
    EXPECT_GT(disc, 200u);
}

TEST(Render, Deterministic)
{
    const auto scene = small_scene(11, 128);
    const auto a = render_scene(scene);
    const auto b = render_scene(scene);
    EXPECT_TRUE(a == b);
}

TEST(Render, IndependentOfJobCount)
{
    const auto scene = small_scene(12, 128);
    const auto a = render_scene(scene, RenderOptions{1});
    const auto b = render_scene(scene, RenderOptions{4});
    EXPECT_TRUE(a == b);
}

TEST(Render, MaskContractHolds)
{
    for (std::uint64_t s = 0; s < 5; ++s)
    {
        const auto scene = small_scene(s, 192);
        const auto out = render_scene(scene);
        EXPECT_EQ(testing_support::mask_violations(scene, out), 0u) << s;
        std::size_t fg = 0;
        for (const auto id : out.instance_mask.values())
            fg += id != 0;
        EXPECT_GT(fg, 0u);
    }
}

TEST(Render, OverlapGoesToNucleusNearestFocus)
{
    auto scene = bare_scene(64);
    scene.cells.push_back(sphere_cell({16, 16, 1.5}, 3.0, 1));
    scene.cells.push_back(sphere_cell({17, 16, 5.5}, 3.0, 2));  // nearer the focal depth 5
    scene.cells.push_back(sphere_cell({24, 24, 3.0}, 3.0, 3));
    scene.cells.push_back(sphere_cell({26, 24, 7.0}, 3.0, 4));  // same defocus as id 3
    const auto out = render_scene(scene);
    EXPECT_EQ(out.instance_mask(33, 32), 2);  // (16.75, 16.25) um, inside both
    EXPECT_EQ(out.depth_map(33, 32), 5.5f);
    EXPECT_EQ(out.instance_mask(50, 48), 3);  // (25.25, 24.25) um, tie broken by id
}

TEST(Render, AddingObjectsNeverBrightens)
{
    auto scene = small_scene(13, 128);
    const auto before = render_scene(scene);
    scene.cells.push_back(sphere_cell({30, 30, 5}, 3.5, static_cast<std::uint16_t>(scene.cells.size() + 1)));
    scene.cells.back().cell_class = CellClass::Eosinophil;
    const auto with_cell = render_scene(scene);
    EXPECT_TRUE(no_brighter(with_cell.image, before.image));
    EXPECT_FALSE(with_cell.image == before.image);
    scene.red_blobs.push_back(RedBlob{{20, 40}, 12.0, 0.7});
    const auto with_blob = render_scene(scene);
    EXPECT_TRUE(no_brighter(with_blob.image, with_cell.image));
}

TEST(Render, MasksIgnoreBlur)
{
    auto scene = small_scene(14, 128);
    scene.config.blur_strength = 0.0;
    const auto sharp = render_scene(scene);
    scene.config.blur_strength = 0.6;
    const auto blurred = render_scene(scene);
    EXPECT_TRUE(sharp.instance_mask == blurred.instance_mask);
    EXPECT_TRUE(sharp.semantic_mask == blurred.semantic_mask);
    EXPECT_TRUE(sharp.depth_map == blurred.depth_map);
    EXPECT_FALSE(sharp.image == blurred.image);
}

TEST(Render, DefocusReducesSharpness)
{
    auto scene = bare_scene(64);
    scene.config.blur_strength = 0.3;
    scene.cells.push_back(sphere_cell({16, 16, 5}, 3.0));
    double prev = INFINITY;
    for (const double focal : {5.0, 7.0, 9.0, 13.0, 20.0})
    {
        scene.config.focal_depth = focal;
        const double e = gradient_energy(render_scene(scene).image);
        EXPECT_LE(e, prev) << focal;
        prev = e;
    }
}

TEST(Render, TooManyInstancesRejected)
{
    auto scene = bare_scene(16);
    scene.cells.resize(kMaxInstances + 1);
    EXPECT_THROW(render_scene(scene), Error);
}

TEST(ZStack, SingleSliceEqualsFullRender)
{
    const auto scene = small_scene(15, 128);
    const auto stack = render_zstack(scene, 1);
    ASSERT_EQ(stack.size(), 1u);
    EXPECT_TRUE(stack[0] == render_scene(scene));
    EXPECT_THROW(render_zstack(scene, 0), Error);
}

TEST(ZStack, SlicesCoverFullRenderIdsAndDepths)
{
    for (std::uint64_t s = 0; s < 20; ++s)
    {
        const auto scene = small_scene(100 + s, 96);
        const auto full = render_scene(scene);
        const std::size_t n = 3;
        const auto stack = render_zstack(scene, n);
        std::set<std::uint16_t> full_ids(full.instance_mask.values().begin(), full.instance_mask.values().end());
        std::set<std::uint16_t> union_ids;
        const double t = scene.config.slab_thickness / n;
        for (std::size_t i = 0; i < n; ++i)
        {
            const double z0 = scene.config.slab_z0 + i * t;
            const auto& sl = stack[i];
            for (std::size_t p = 0; p < sl.instance_mask.size(); ++p)
            {
                const auto id = sl.instance_mask[p];
                union_ids.insert(id);
                if (id == 0)
                    continue;
                const CellInstance* cell = scene.find(id);
                ASSERT_NE(cell, nullptr);
                const auto& sh = cell->shape;
                const double reach =
                    std::max({sh.semi_axes.x + sh.lobe_separation / 2, sh.semi_axes.y, sh.semi_axes.z}) * (1.0 + sh.noise_amplitude) +
                    (sh.bend > 0 ? sh.bend * sh.semi_axes.x : 0.0);
                ASSERT_GE(sl.depth_map[p], z0 - reach - 1e-4);
                ASSERT_LE(sl.depth_map[p], z0 + t + reach + 1e-4);
            }
        }
        for (const auto id : full_ids)
            ASSERT_TRUE(union_ids.count(id)) << "scene " << s << " id " << id;
    }
}

TEST(Outputs, RoundTripAndSizes)
{
    testing_support::TempDir dir("render_io");
    const auto scene = small_scene(16, 80);
    const auto out = render_scene(scene);
    write_outputs(out, scene, dir.path(), "img");
    const auto back = read_outputs(dir.path(), "img");
    EXPECT_TRUE(back == out);
    EXPECT_EQ(fs::file_size(dir / "img_depth.bin"), 4u * 80u * 80u);
    const auto meta = Json::parse(read_file(dir / "img_meta.json"));
    EXPECT_EQ(meta.at("width"), 80);
    EXPECT_EQ(meta.at("scene_hash"), hex64(scene_hash(scene)));

    // same stem again overwrites
    const auto other_scene = small_scene(17, 80);
    const auto other = render_scene(other_scene);
    write_outputs(other, other_scene, dir.path(), "img");
    EXPECT_TRUE(read_outputs(dir.path(), "img") == other);
}

TEST(Outputs, SixteenBitIdsSurvive)
{
    testing_support::TempDir dir("png16");
    Plane<std::uint16_t> ids(7, 3);
    for (std::size_t i = 0; i < ids.size(); ++i)
        ids[i] = static_cast<std::uint16_t>(i * 3001 + 255);
    write_png(dir / "ids.png", ids);
    EXPECT_TRUE(read_png_gray16(dir / "ids.png") == ids);
    EXPECT_THROW(read_png_gray8(dir / "ids.png"), Error);
    EXPECT_THROW(read_png_rgb(dir / "missing.png"), Error);
}
