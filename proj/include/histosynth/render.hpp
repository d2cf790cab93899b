// Orthographic brightfield renderer.
//
// Every stained volume contributes absorbance hue * intensity * jitter *
// path_length / slab_thickness per channel; path lengths come from vertical
// slab sectioning. Each object's absorbance is Gaussian-blurred by its
// distance from the focal plane before compositing, and transmitted light is
// background_light * exp(-total absorbance), box-filtered from a 2x
// supersampled grid. Masks are computed unblurred at native resolution.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "histosynth/config.hpp"
#include "histosynth/core.hpp"
#include "histosynth/filter.hpp"
#include "histosynth/geometry.hpp"
#include "histosynth/parallel.hpp"
#include "histosynth/scenegen.hpp"

namespace histosynth
{

struct Rgb8
{
    std::uint8_t r{0};
    std::uint8_t g{0};
    std::uint8_t b{0};

    friend bool operator==(const Rgb8&, const Rgb8&) = default;
};

struct RenderOutput
{
    Plane<Rgb8> image;
    Plane<std::uint8_t> semantic_mask;
    Plane<std::uint16_t> instance_mask;
    Plane<float> depth_map;

    friend bool operator==(const RenderOutput&, const RenderOutput&) = default;
};

struct RenderOptions
{
    unsigned jobs{default_jobs()};
};

inline constexpr int kSupersample = 2;
inline constexpr int kTissueZSamples = 8;
inline constexpr double kBlobCore = 0.6;        // red blobs are flat out to this fraction of the radius

namespace detail
{

/// Path lengths of one cell on a subpixel tile, already blurred.
struct CellTile
{
    int x0{0};
    int y0{0};
    int w{0};
    int h{0};
    std::vector<float> nucleus;    // nucleus path (um)
    std::vector<float> cytoplasm;  // body path outside the nucleus (um)
    std::vector<std::uint32_t> mask_pixels;  // native-resolution pixels covered by the nucleus
};

struct Grid
{
    int width{0};   // native pixels
    int height{0};
    double pixel{1.0};
    double sub{0.5};  // supersampled pixel size
    int sw{0};
    int sh{0};
};

inline Grid make_grid(const SceneConfig& cfg)
{
    Grid g;
    g.width = static_cast<int>(cfg.image_width);
    g.height = static_cast<int>(cfg.image_height);
    g.pixel = cfg.pixel_size();
    g.sub = g.pixel / kSupersample;
    g.sw = g.width * kSupersample;
    g.sh = g.height * kSupersample;
    return g;
}

inline double defocus_sigma(const SceneConfig& cfg, double z, double pixel)
{
    return cfg.blur_strength * std::abs(z - cfg.focal_depth) / pixel;
}

inline CellTile render_cell(const CellInstance& cell, const SceneConfig& cfg, const Slab& slab, const Grid& g)
{
    CellTile tile;
    const ImplicitShape body = body_shape(cell);
    const auto nucleus = nucleus_shape(cell);

    Box2 box = footprint(body, slab);
    if (nucleus)
    {
        const Box2 nb = footprint(*nucleus, slab);
        if (!nb.empty)
            box = box.empty ? nb
                            : Box2{std::min(box.xmin, nb.xmin), std::max(box.xmax, nb.xmax), std::min(box.ymin, nb.ymin),
                                   std::max(box.ymax, nb.ymax), false};
    }
    if (box.empty)
        return tile;

    const auto kernel = gaussian_kernel(defocus_sigma(cfg, cell.nucleus_center.z, g.sub));
    const int r = kernel_radius(kernel);
    // content range in subpixels, clipped to the image plus the blur apron
    const int cx0 = std::max(-r, static_cast<int>(std::floor(box.xmin / g.sub)));
    const int cx1 = std::min(g.sw + r, static_cast<int>(std::ceil(box.xmax / g.sub)) + 1);
    const int cy0 = std::max(-r, static_cast<int>(std::floor(box.ymin / g.sub)));
    const int cy1 = std::min(g.sh + r, static_cast<int>(std::ceil(box.ymax / g.sub)) + 1);
    if (cx0 >= cx1 || cy0 >= cy1)
        return tile;

    tile.x0 = cx0 - r;
    tile.y0 = cy0 - r;
    tile.w = cx1 - cx0 + 2 * r;
    tile.h = cy1 - cy0 + 2 * r;
    if (tile.x0 + tile.w <= 0 || tile.y0 + tile.h <= 0 || tile.x0 >= g.sw || tile.y0 >= g.sh)
    {
        tile.w = tile.h = 0;
        return tile;
    }
    tile.nucleus.assign(static_cast<std::size_t>(tile.w) * tile.h, 0.0f);
    tile.cytoplasm.assign(tile.nucleus.size(), 0.0f);

    for (int sy = cy0; sy < cy1; ++sy)
    {
        const double y = (sy + 0.5) * g.sub;
        for (int sx = cx0; sx < cx1; ++sx)
        {
            const double x = (sx + 0.5) * g.sub;
            const double body_len = slab_occupancy(body, slab, {x, y}).path_length();
            const double nuc_len = nucleus ? slab_occupancy(*nucleus, slab, {x, y}).path_length() : 0.0;
            const std::size_t at = static_cast<std::size_t>(sy - tile.y0) * tile.w + (sx - tile.x0);
            tile.nucleus[at] = static_cast<float>(nuc_len);
            tile.cytoplasm[at] = static_cast<float>(std::max(0.0, body_len - nuc_len));
        }
    }
    blur_plane(tile.nucleus, tile.w, tile.h, kernel);
    blur_plane(tile.cytoplasm, tile.w, tile.h, kernel);

    if (nucleus)
    {
        const Box2 nb = footprint(*nucleus, slab);
        if (!nb.empty)
        {
            const int px0 = std::max(0, static_cast<int>(std::floor(nb.xmin / g.pixel)));
            const int px1 = std::min(g.width, static_cast<int>(std::ceil(nb.xmax / g.pixel)) + 1);
            const int py0 = std::max(0, static_cast<int>(std::floor(nb.ymin / g.pixel)));
            const int py1 = std::min(g.height, static_cast<int>(std::ceil(nb.ymax / g.pixel)) + 1);
            for (int py = py0; py < py1; ++py)
                for (int px = px0; px < px1; ++px)
                    if (slab_occupancy(*nucleus, slab, {(px + 0.5) * g.pixel, (py + 0.5) * g.pixel}).covered)
                        tile.mask_pixels.push_back(static_cast<std::uint32_t>(py * g.width + px));
        }
    }
    return tile;
}

/// Tissue path per subpixel (crypt walls and stroma), and optionally the
/// fraction of the slab column that is stroma.
inline void tissue_columns(const SceneGraph& scene, const Slab& slab, const Grid& g, std::vector<float>& path,
                           std::vector<float>* stroma_fraction)
{
    const auto& layout = scene.layout;
    std::array<double, kTissueZSamples> zs{};
    for (int k = 0; k < kTissueZSamples; ++k)
        zs[static_cast<std::size_t>(k)] = slab.z0 + (k + 0.5) * slab.thickness / kTissueZSamples;

    struct CryptProbe
    {
        std::array<Vec2, kTissueZSamples> axis;
        double outer2;
        double inner2;
        double reach;
        Vec2 center;
    };
    std::vector<CryptProbe> probes;
    for (const auto& c : layout.crypts)
    {
        CryptProbe p{};
        double off = 0.0;
        for (int k = 0; k < kTissueZSamples; ++k)
        {
            p.axis[static_cast<std::size_t>(k)] = c.axis_at(zs[static_cast<std::size_t>(k)]);
            off = std::max(off, std::hypot(p.axis[static_cast<std::size_t>(k)].x - c.center.x,
                                           p.axis[static_cast<std::size_t>(k)].y - c.center.y));
        }
        p.outer2 = c.radius * c.radius;
        const double inner = c.radius - c.wall_thickness;
        p.inner2 = inner * inner;
        p.reach = c.radius + off;
        p.center = c.center;
        probes.push_back(p);
    }
    struct TearBox
    {
        double xmin, xmax, ymin, ymax;
    };
    std::vector<TearBox> tear_boxes;
    for (const auto& t : layout.tears)
    {
        TearBox b{1e300, -1e300, 1e300, -1e300};
        for (const auto& v : t.vertices)
        {
            b.xmin = std::min(b.xmin, v.x);
            b.xmax = std::max(b.xmax, v.x);
            b.ymin = std::min(b.ymin, v.y);
            b.ymax = std::max(b.ymax, v.y);
        }
        tear_boxes.push_back(b);
    }

    path.assign(static_cast<std::size_t>(g.sw) * g.sh, 0.0f);
    if (stroma_fraction)
        stroma_fraction->assign(path.size(), 0.0f);
    const double dz = slab.thickness / kTissueZSamples;
    std::vector<const CryptProbe*> row_probes;
    for (int sy = 0; sy < g.sh; ++sy)
    {
        const double y = (sy + 0.5) * g.sub;
        row_probes.clear();
        for (const auto& p : probes)
            if (std::abs(y - p.center.y) <= p.reach)
                row_probes.push_back(&p);
        for (int sx = 0; sx < g.sw; ++sx)
        {
            const double x = (sx + 0.5) * g.sub;
            bool torn = false;
            for (std::size_t t = 0; t < tear_boxes.size() && !torn; ++t)
            {
                const auto& b = tear_boxes[t];
                torn = x >= b.xmin && x <= b.xmax && y >= b.ymin && y <= b.ymax && layout.tears[t].contains({x, y});
            }
            int tissue = 0;
            int stroma = 0;
            for (int k = 0; k < kTissueZSamples; ++k)
            {
                bool in_tube = false;
                bool in_lumen = false;
                for (const CryptProbe* p : row_probes)
                {
                    if (std::abs(x - p->center.x) > p->reach)
                        continue;
                    const Vec2& a = p->axis[static_cast<std::size_t>(k)];
                    const double d2 = (x - a.x) * (x - a.x) + (y - a.y) * (y - a.y);
                    if (d2 <= p->outer2)
                    {
                        in_tube = true;
                        in_lumen = d2 < p->inner2;
                        break;
                    }
                }
                if (in_tube)
                    tissue += in_lumen ? 0 : 1;
                else if (!torn)
                {
                    ++tissue;
                    ++stroma;
                }
            }
            const std::size_t at = static_cast<std::size_t>(sy) * g.sw + sx;
            path[at] = static_cast<float>(tissue * dz);
            if (stroma_fraction)
                (*stroma_fraction)[at] = static_cast<float>(stroma) / kTissueZSamples;
        }
    }

    // goblet vacuoles displace tissue
    for (const auto& cell : scene.cells)
    {
        if (cell.cell_class != CellClass::Goblet)
            continue;
        const ImplicitShape vac = body_shape(cell);
        const Box2 box = footprint(vac, slab);
        if (box.empty)
            continue;
        const int x0 = std::max(0, static_cast<int>(std::floor(box.xmin / g.sub)));
        const int x1 = std::min(g.sw, static_cast<int>(std::ceil(box.xmax / g.sub)) + 1);
        const int y0 = std::max(0, static_cast<int>(std::floor(box.ymin / g.sub)));
        const int y1 = std::min(g.sh, static_cast<int>(std::ceil(box.ymax / g.sub)) + 1);
        for (int sy = y0; sy < y1; ++sy)
            for (int sx = x0; sx < x1; ++sx)
            {
                const double len = slab_occupancy(vac, slab, {(sx + 0.5) * g.sub, (sy + 0.5) * g.sub}).path_length();
                if (len > 0.0)
                {
                    float& v = path[static_cast<std::size_t>(sy) * g.sw + sx];
                    v = std::max(0.0f, v - static_cast<float>(len));
                }
            }
    }
}

inline double blob_profile(double t)
{
    if (t >= 1.0)
        return 0.0;
    if (t <= kBlobCore)
        return 1.0;
    return 0.5 * (1.0 + std::cos(std::numbers::pi * (t - kBlobCore) / (1.0 - kBlobCore)));
}

}  // namespace detail

/// Renders the scene through its config's slab. Pure; safe to call
/// concurrently on distinct scenes.
inline RenderOutput render_scene(const SceneGraph& scene, const RenderOptions& options = {})
{
    if (scene.cells.size() > kMaxInstances)
        throw Error("render_scene: " + std::to_string(scene.cells.size()) + " instances exceed the 16-bit id space");

    const SceneConfig& cfg = scene.config;
    const auto g = detail::make_grid(cfg);
    const Slab slab{cfg.slab_z0, cfg.slab_thickness};
    const auto& stain = cfg.stain;
    const double inv_ref = 1.0 / cfg.slab_thickness;
    const std::size_t n_sub = static_cast<std::size_t>(g.sw) * g.sh;

    std::array<std::vector<float>, 3> absorb;
    for (auto& a : absorb)
        a.assign(n_sub, 0.0f);

    // tissue layer, blurred at the slab center's defocus
    {
        std::vector<float> path;
        std::vector<float> stroma;
        detail::tissue_columns(scene, slab, g, path, scene.red_blobs.empty() ? nullptr : &stroma);
        const auto kernel = detail::gaussian_kernel(detail::defocus_sigma(cfg, slab.z0 + slab.thickness / 2.0, g.sub));
        detail::blur_plane(path, g.sw, g.sh, kernel);
        for (int ch = 0; ch < 3; ++ch)
        {
            const float k = static_cast<float>(stain.tissue_hue[static_cast<std::size_t>(ch)] * stain.tissue_intensity * inv_ref);
            auto& a = absorb[static_cast<std::size_t>(ch)];
            for (std::size_t i = 0; i < n_sub; ++i)
                a[i] += k * path[i];
        }

        const auto& blood_hue = stain.cytoplasm[class_index(CellClass::BloodCell)].hue;
        for (const auto& blob : scene.red_blobs)
        {
            const int x0 = std::max(0, static_cast<int>(std::floor((blob.center.x - blob.radius) / g.sub)));
            const int x1 = std::min(g.sw, static_cast<int>(std::ceil((blob.center.x + blob.radius) / g.sub)) + 1);
            const int y0 = std::max(0, static_cast<int>(std::floor((blob.center.y - blob.radius) / g.sub)));
            const int y1 = std::min(g.sh, static_cast<int>(std::ceil((blob.center.y + blob.radius) / g.sub)) + 1);
            for (int sy = y0; sy < y1; ++sy)
                for (int sx = x0; sx < x1; ++sx)
                {
                    const double t = std::hypot((sx + 0.5) * g.sub - blob.center.x, (sy + 0.5) * g.sub - blob.center.y) / blob.radius;
                    const std::size_t at = static_cast<std::size_t>(sy) * g.sw + sx;
                    const double w = blob.intensity * detail::blob_profile(t) * stroma[at];
                    if (w <= 0.0)
                        continue;
                    for (int ch = 0; ch < 3; ++ch)
                        absorb[static_cast<std::size_t>(ch)][at] += static_cast<float>(blood_hue[static_cast<std::size_t>(ch)] * w);
                }
        }
    }

    RenderOutput out;
    out.semantic_mask = Plane<std::uint8_t>(static_cast<std::size_t>(g.width), static_cast<std::size_t>(g.height), 0);
    out.instance_mask = Plane<std::uint16_t>(static_cast<std::size_t>(g.width), static_cast<std::size_t>(g.height), 0);
    out.depth_map = Plane<float>(static_cast<std::size_t>(g.width), static_cast<std::size_t>(g.height), 0.0f);
    std::vector<double> best_focus(static_cast<std::size_t>(g.width) * g.height, std::numeric_limits<double>::infinity());

    // cells: tiles in parallel per batch, composited in id order
    std::vector<const CellInstance*> stained;
    for (const auto& c : scene.cells)
        if (c.cell_class != CellClass::Goblet)
            stained.push_back(&c);
    constexpr std::size_t kBatch = 256;
    std::vector<detail::CellTile> tiles;
    for (std::size_t start = 0; start < stained.size(); start += kBatch)
    {
        const std::size_t count = std::min(kBatch, stained.size() - start);
        tiles.assign(count, {});
        parallel_for(count, options.jobs, [&](std::size_t i) { tiles[i] = detail::render_cell(*stained[start + i], cfg, slab, g); });

        for (std::size_t i = 0; i < count; ++i)
        {
            const CellInstance& cell = *stained[start + i];
            const auto& tile = tiles[i];
            const double jitter = cell.stain_jitter * inv_ref;
            std::array<float, 3> kn{};
            std::array<float, 3> kc{};
            const auto& cyto = stain.cytoplasm[class_index(cell.cell_class)];
            for (std::size_t ch = 0; ch < 3; ++ch)
            {
                if (has_nucleus_label(cell.cell_class))
                    kn[ch] = static_cast<float>(stain.nucleus_hue[class_index(cell.cell_class)][ch] * stain.nucleus_intensity * jitter);
                kc[ch] = static_cast<float>(cyto.hue[ch] * cyto.intensity * jitter);
            }
            const int ty0 = std::max(0, tile.y0);
            const int ty1 = std::min(g.sh, tile.y0 + tile.h);
            const int tx0 = std::max(0, tile.x0);
            const int tx1 = std::min(g.sw, tile.x0 + tile.w);
            for (int sy = ty0; sy < ty1; ++sy)
                for (int sx = tx0; sx < tx1; ++sx)
                {
                    const std::size_t t = static_cast<std::size_t>(sy - tile.y0) * tile.w + (sx - tile.x0);
                    const std::size_t at = static_cast<std::size_t>(sy) * g.sw + sx;
                    const float n = tile.nucleus[t];
                    const float c = tile.cytoplasm[t];
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        absorb[ch][at] += kn[ch] * n + kc[ch] * c;
                }

            const double focus = std::abs(cell.nucleus_center.z - cfg.focal_depth);
            for (const auto p : tile.mask_pixels)
            {
                const std::uint16_t current = out.instance_mask[p];
                if (focus < best_focus[p] || (focus == best_focus[p] && cell.id < current))
                {
                    best_focus[p] = focus;
                    out.instance_mask[p] = cell.id;
                    out.semantic_mask[p] = static_cast<std::uint8_t>(cell.cell_class);
                    out.depth_map[p] = static_cast<float>(cell.nucleus_center.z);
                }
            }
        }
    }

    out.image = Plane<Rgb8>(static_cast<std::size_t>(g.width), static_cast<std::size_t>(g.height));
    const auto to_byte = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
        {
            std::array<double, 3> light{};
            for (int dy = 0; dy < kSupersample; ++dy)
                for (int dx = 0; dx < kSupersample; ++dx)
                {
                    const std::size_t at = static_cast<std::size_t>(y * kSupersample + dy) * g.sw + (x * kSupersample + dx);
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        light[ch] += std::exp(-static_cast<double>(absorb[ch][at]));
                }
            const double norm = 1.0 / (kSupersample * kSupersample);
            out.image(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) =
                Rgb8{to_byte(stain.background_light[0] * light[0] * norm), to_byte(stain.background_light[1] * light[1] * norm),
                     to_byte(stain.background_light[2] * light[2] * norm)};
        }
    return out;
}

/// Renders n_slices equal sub-slabs of the scene's slab, top to bottom.
inline std::vector<RenderOutput> render_zstack(const SceneGraph& scene, std::size_t n_slices, const RenderOptions& options = {})
{
    if (n_slices == 0)
        throw Error("render_zstack: n_slices must be >= 1");
    std::vector<RenderOutput> out;
    out.reserve(n_slices);
    const double z0 = scene.config.slab_z0;
    const double t = scene.config.slab_thickness;
    for (std::size_t i = 0; i < n_slices; ++i)
    {
        SceneGraph slice = scene;
        slice.config.slab_z0 = z0 + static_cast<double>(i) * t / static_cast<double>(n_slices);
        slice.config.slab_thickness = t / static_cast<double>(n_slices);
        out.push_back(render_scene(slice, options));
    }
    return out;
}

}  // namespace histosynth
