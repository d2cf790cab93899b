// Seeded annotator-noise models on instance masks.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "histosynth/config.hpp"
#include "histosynth/core.hpp"
#include "histosynth/filter.hpp"
#include "histosynth/scenegen.hpp"

namespace histosynth
{

enum class LabelNoiseTask
{
    SemSegFlip,
    FgBgShape,
};

enum class ShapeOp
{
    Shift,
    Scale,
    Elastic,
    Drop,
};

struct LabelNoiseSpec
{
    LabelNoiseTask task{LabelNoiseTask::SemSegFlip};
    double level{0.0};
    std::uint64_t seed{0};
    double shift_max{0.5};  // fraction of the equivalent diameter
    double scale_min{0.6};
    double scale_max{1.4};
    double elastic_sigma{8.0};  // pixels
    double elastic_alpha{10.0};  // pixels
    std::array<double, 4> op_weights{0.25, 0.25, 0.25, 0.25};  // shift, scale, elastic, drop
};

using ClassMap = std::map<std::uint16_t, CellClass>;

inline void validate(const LabelNoiseSpec& s)
{
    using detail::require;
    require(s.level >= 0.0 && s.level <= 1.0, "level", "must be in [0, 1], got " + detail::fmt_number(s.level));
    require(s.shift_max >= 0.0 && std::isfinite(s.shift_max), "shift_max", "must be >= 0");
    require(s.scale_min > 0.0 && s.scale_min <= s.scale_max && std::isfinite(s.scale_max), "scale_range",
            "must satisfy 0 < min <= max");
    require(s.elastic_sigma >= 0.0 && std::isfinite(s.elastic_sigma), "elastic_sigma", "must be >= 0");
    require(s.elastic_alpha >= 0.0 && std::isfinite(s.elastic_alpha), "elastic_alpha", "must be >= 0");
    double sum = 0.0;
    for (const double w : s.op_weights)
    {
        require(w >= 0.0, "op_weights", "entries must be >= 0");
        sum += w;
    }
    require(std::abs(sum - 1.0) <= 1e-9, "op_weights", "sum = " + detail::fmt_number(sum));
}

inline ClassMap class_map_from_scene(const SceneGraph& scene)
{
    ClassMap map;
    for (const auto& c : scene.cells)
        if (has_nucleus_label(c.cell_class))
            map[c.id] = c.cell_class;
    return map;
}

/// Reads the id-to-class table off a pair of masks; throws if an instance
/// carries more than one class.
inline ClassMap class_map_from_masks(const Plane<std::uint16_t>& instance, const Plane<std::uint8_t>& semantic)
{
    if (instance.width() != semantic.width() || instance.height() != semantic.height())
        throw Error("instance and semantic masks differ in size");
    ClassMap map;
    for (std::size_t i = 0; i < instance.size(); ++i)
    {
        const auto id = instance[i];
        if (id == 0)
            continue;
        const auto label = semantic[i];
        if (label < 1 || label > kNucleusClassCount)
            throw Error("instance " + std::to_string(id) + " has semantic label " + std::to_string(label));
        const auto cls = static_cast<CellClass>(label);
        const auto [it, inserted] = map.emplace(id, cls);
        if (!inserted && it->second != cls)
            throw Error("instance " + std::to_string(id) + " carries two semantic labels");
    }
    return map;
}

inline Plane<std::uint8_t> semantic_from_classes(const Plane<std::uint16_t>& instance, const ClassMap& classes)
{
    Plane<std::uint8_t> out(instance.width(), instance.height(), 0);
    for (std::size_t i = 0; i < instance.size(); ++i)
    {
        const auto id = instance[i];
        if (id == 0)
            continue;
        const auto it = classes.find(id);
        if (it == classes.end())
            throw Error("instance id " + std::to_string(id) + " missing from class map");
        out[i] = static_cast<std::uint8_t>(it->second);
    }
    return out;
}

/// Each instance present in the mask switches, with probability level, to
/// one of the other nucleus classes chosen uniformly. Entries for ids absent
/// from the mask pass through.
inline ClassMap corrupt_semantic(const Plane<std::uint16_t>& instance, const ClassMap& classes, const LabelNoiseSpec& spec)
{
    validate(spec);
    std::vector<bool> present(65536, false);
    for (const auto id : instance.values())
        present[id] = true;
    ClassMap out = classes;
    for (std::size_t id = 1; id < present.size(); ++id)
    {
        if (!present[id])
            continue;
        const auto it = out.find(static_cast<std::uint16_t>(id));
        if (it == out.end())
            throw Error("instance id " + std::to_string(id) + " missing from class map");
        if (!has_nucleus_label(it->second))
            throw Error("instance id " + std::to_string(id) + " has non-nucleus class " + std::string(class_name(it->second)));
        Rng rng(derive_seed(spec.seed, "flip", id));
        if (rng.uniform() >= spec.level)
            continue;
        auto pick = static_cast<std::size_t>(rng.below(kNucleusClassCount - 1));
        if (pick >= class_index(it->second))
            ++pick;
        it->second = class_from_index(pick);
    }
    return out;
}

namespace detail
{

struct PixelSet
{
    std::vector<std::int32_t> xs;
    std::vector<std::int32_t> ys;

    std::size_t size() const { return xs.size(); }
};

struct LocalMask
{
    int x0{0};
    int y0{0};
    int w{0};
    int h{0};
    std::vector<std::uint8_t> bits;

    bool test(long long x, long long y) const
    {
        if (x < x0 || y < y0 || x >= x0 + w || y >= y0 + h)
            return false;
        return bits[static_cast<std::size_t>((y - y0) * w + (x - x0))] != 0;
    }
};

inline LocalMask local_mask(const PixelSet& px)
{
    LocalMask m;
    const auto [xmin, xmax] = std::minmax_element(px.xs.begin(), px.xs.end());
    const auto [ymin, ymax] = std::minmax_element(px.ys.begin(), px.ys.end());
    m.x0 = *xmin;
    m.y0 = *ymin;
    m.w = *xmax - *xmin + 1;
    m.h = *ymax - *ymin + 1;
    m.bits.assign(static_cast<std::size_t>(m.w) * m.h, 0);
    for (std::size_t i = 0; i < px.size(); ++i)
        m.bits[static_cast<std::size_t>((px.ys[i] - m.y0) * m.w + (px.xs[i] - m.x0))] = 1;
    return m;
}

inline PixelSet shift_pixels(const PixelSet& px, Rng& rng, const LabelNoiseSpec& spec)
{
    const double equiv_diameter = 2.0 * std::sqrt(static_cast<double>(px.size()) / std::numbers::pi);
    const Vec2 d = random_in_disc(rng, spec.shift_max * equiv_diameter);
    const auto dx = static_cast<std::int32_t>(std::lround(d.x));
    const auto dy = static_cast<std::int32_t>(std::lround(d.y));
    PixelSet out = px;
    for (auto& x : out.xs)
        x += dx;
    for (auto& y : out.ys)
        y += dy;
    return out;
}

/// Nearest-neighbour inverse map about the centroid of pixel centers.
inline PixelSet scale_pixels(const PixelSet& px, Rng& rng, const LabelNoiseSpec& spec)
{
    const double f = spec.scale_min == spec.scale_max ? spec.scale_min : rng.uniform(spec.scale_min, spec.scale_max);
    double cx = 0.0;
    double cy = 0.0;
    for (std::size_t i = 0; i < px.size(); ++i)
    {
        cx += px.xs[i] + 0.5;
        cy += px.ys[i] + 0.5;
    }
    cx /= static_cast<double>(px.size());
    cy /= static_cast<double>(px.size());
    const auto src = local_mask(px);
    const auto lo_x = static_cast<long long>(std::floor(cx + (src.x0 - cx) * f)) - 1;
    const auto hi_x = static_cast<long long>(std::ceil(cx + (src.x0 + src.w - cx) * f)) + 1;
    const auto lo_y = static_cast<long long>(std::floor(cy + (src.y0 - cy) * f)) - 1;
    const auto hi_y = static_cast<long long>(std::ceil(cy + (src.y0 + src.h - cy) * f)) + 1;
    PixelSet out;
    for (long long y = lo_y; y < hi_y; ++y)
        for (long long x = lo_x; x < hi_x; ++x)
        {
            const double sx = cx + (x + 0.5 - cx) / f;
            const double sy = cy + (y + 0.5 - cy) / f;
            if (src.test(static_cast<long long>(std::floor(sx)), static_cast<long long>(std::floor(sy))))
            {
                out.xs.push_back(static_cast<std::int32_t>(x));
                out.ys.push_back(static_cast<std::int32_t>(y));
            }
        }
    return out;
}

/// Backward warp through a smoothed random displacement field whose largest
/// displacement is elastic_alpha.
inline PixelSet elastic_pixels(const PixelSet& px, Rng& rng, const LabelNoiseSpec& spec)
{
    const auto src = local_mask(px);
    const int pad = static_cast<int>(std::ceil(spec.elastic_alpha)) + 1;
    const int w = src.w + 2 * pad;
    const int h = src.h + 2 * pad;
    std::vector<float> dx(static_cast<std::size_t>(w) * h);
    std::vector<float> dy(dx.size());
    for (auto& v : dx)
        v = static_cast<float>(rng.normal());
    for (auto& v : dy)
        v = static_cast<float>(rng.normal());
    const auto kernel = gaussian_kernel(spec.elastic_sigma);
    blur_plane(dx, w, h, kernel);
    blur_plane(dy, w, h, kernel);
    double peak = 0.0;
    for (std::size_t i = 0; i < dx.size(); ++i)
        peak = std::max(peak, std::hypot(static_cast<double>(dx[i]), static_cast<double>(dy[i])));
    const double gain = peak > 0.0 ? spec.elastic_alpha / peak : 0.0;

    PixelSet out;
    for (int j = 0; j < h; ++j)
        for (int i = 0; i < w; ++i)
        {
            const std::size_t at = static_cast<std::size_t>(j) * w + i;
            const long long x = src.x0 - pad + i;
            const long long y = src.y0 - pad + j;
            const double sx = x + 0.5 + gain * dx[at];
            const double sy = y + 0.5 + gain * dy[at];
            if (src.test(static_cast<long long>(std::floor(sx)), static_cast<long long>(std::floor(sy))))
            {
                out.xs.push_back(static_cast<std::int32_t>(x));
                out.ys.push_back(static_cast<std::int32_t>(y));
            }
        }
    return out;
}

}  // namespace detail

/// Which op (if any) corrupt_shapes applies to an instance.
struct ShapeDecision
{
    bool modified{false};
    ShapeOp op{ShapeOp::Drop};
};

/// Independently per instance, with probability level, applies one of
/// shift / scale / elastic / drop. Unmodified instances keep all their
/// pixels; among modified instances the lower id paints first and wins.
/// Pixels moved outside the image are clipped.
inline Plane<std::uint16_t> corrupt_shapes(const Plane<std::uint16_t>& instance, const LabelNoiseSpec& spec,
                                           std::map<std::uint16_t, ShapeDecision>* decisions = nullptr)
{
    validate(spec);
    const auto W = static_cast<std::int32_t>(instance.width());
    const auto H = static_cast<std::int32_t>(instance.height());
    std::map<std::uint16_t, detail::PixelSet> pixels;
    for (std::int32_t y = 0; y < H; ++y)
        for (std::int32_t x = 0; x < W; ++x)
            if (const auto id = instance(static_cast<std::size_t>(x), static_cast<std::size_t>(y)); id != 0)
            {
                auto& p = pixels[id];
                p.xs.push_back(x);
                p.ys.push_back(y);
            }

    Plane<std::uint16_t> out(instance.width(), instance.height(), 0);
    std::vector<std::pair<std::uint16_t, detail::PixelSet>> moved;
    for (const auto& [id, px] : pixels)
    {
        Rng rng(derive_seed(spec.seed, "shape", id));
        ShapeDecision d;
        d.modified = rng.uniform() < spec.level;
        if (d.modified)
            d.op = static_cast<ShapeOp>(rng.categorical(spec.op_weights));
        if (decisions)
            (*decisions)[id] = d;
        if (!d.modified)
        {
            for (std::size_t i = 0; i < px.size(); ++i)
                out(static_cast<std::size_t>(px.xs[i]), static_cast<std::size_t>(px.ys[i])) = id;
            continue;
        }
        switch (d.op)
        {
        case ShapeOp::Shift:
            moved.emplace_back(id, detail::shift_pixels(px, rng, spec));
            break;
        case ShapeOp::Scale:
            moved.emplace_back(id, detail::scale_pixels(px, rng, spec));
            break;
        case ShapeOp::Elastic:
            moved.emplace_back(id, detail::elastic_pixels(px, rng, spec));
            break;
        case ShapeOp::Drop:
            break;
        }
    }
    // modified instances only fill pixels nobody has claimed yet
    std::vector<bool> claimed(out.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        claimed[i] = out[i] != 0;
    for (const auto& [id, px] : moved)
        for (std::size_t i = 0; i < px.size(); ++i)
        {
            const auto x = px.xs[i];
            const auto y = px.ys[i];
            if (x < 0 || y < 0 || x >= W || y >= H)
                continue;
            const std::size_t at = static_cast<std::size_t>(y) * instance.width() + static_cast<std::size_t>(x);
            if (!claimed[at])
            {
                out[at] = id;
                claimed[at] = true;
            }
        }
    return out;
}

inline Plane<std::uint8_t> derive_fgbg(const Plane<std::uint8_t>& semantic)
{
    Plane<std::uint8_t> out(semantic.width(), semantic.height(), 0);
    for (std::size_t i = 0; i < semantic.size(); ++i)
        out[i] = semantic[i] != 0 ? 1 : 0;
    return out;
}

inline std::string_view task_name(LabelNoiseTask t) { return t == LabelNoiseTask::SemSegFlip ? "semseg-flip" : "fgbg-shape"; }

inline Json to_json(const LabelNoiseSpec& s)
{
    return Json{{"task", std::string(task_name(s.task))},
                {"level", s.level},
                {"seed", s.seed},
                {"shift_max", s.shift_max},
                {"scale_range", Json::array({s.scale_min, s.scale_max})},
                {"elastic_sigma", s.elastic_sigma},
                {"elastic_alpha", s.elastic_alpha},
                {"op_weights", s.op_weights}};
}

}  // namespace histosynth
