// Scene-level image perturbations. Both act on the SceneGraph before
// rendering and never touch nucleus-class cells, so masks are unchanged.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "histosynth/config.hpp"
#include "histosynth/core.hpp"
#include "histosynth/scenegen.hpp"

namespace histosynth
{

enum class PerturbKind
{
    NucleiIntensity,
    BloodStain,
};

struct PerturbationSpec
{
    PerturbKind kind{PerturbKind::NucleiIntensity};
    double level{0.0};
    std::uint64_t seed{0};  // blood-stain placement only
};

inline constexpr std::size_t kMaxExtraBlood = 150;
inline constexpr std::size_t kBlobCandidates = 40;
inline constexpr double kBlobRadiusMin = 5.0;
inline constexpr double kBlobRadiusMax = 25.0;
inline constexpr double kBlobIntensityMin = 0.4;
inline constexpr double kBlobIntensityMax = 0.8;

inline std::string_view perturb_kind_name(PerturbKind k)
{
    return k == PerturbKind::NucleiIntensity ? "nuclei-intensity" : "blood-stain";
}

inline PerturbKind perturb_kind_from_name(std::string_view name)
{
    if (name == "nuclei-intensity")
        return PerturbKind::NucleiIntensity;
    if (name == "blood-stain")
        return PerturbKind::BloodStain;
    throw ConfigError("unknown perturbation kind '" + std::string(name) + "' (expected nuclei-intensity or blood-stain)");
}

namespace detail
{

inline void require_level(double level)
{
    if (!(level >= 0.0 && level <= 1.0))
        throw ConfigError("perturbation level must be in [0, 1], got " + fmt_number(level));
}

}  // namespace detail

/// Scales the nucleus stain intensity by (1 - level).
inline SceneGraph apply_nuclei_intensity(const SceneGraph& scene, double level)
{
    detail::require_level(level);
    SceneGraph out = scene;
    out.config.stain.nucleus_intensity = scene.config.stain.nucleus_intensity * (1.0 - level);
    return out;
}

/// Adds round(level * 150) blood cells and round(level * 40) red stain blobs
/// with level-scaled intensity. The candidate pools depend only on the scene
/// and seed, so a higher level is always a superset of a lower one.
inline SceneGraph apply_blood_stain(const SceneGraph& scene, double level, std::uint64_t seed)
{
    detail::require_level(level);
    if (level == 0.0)
        return scene;
    SceneGraph out = scene;
    const auto vc = validate(scene.config);

    const auto extra_count = static_cast<std::size_t>(std::lround(level * static_cast<double>(kMaxExtraBlood)));
    auto extra = place_distractors(scene.layout, vc, derive_seed(seed, "blood_extra", 0), kMaxExtraBlood);
    extra.resize(extra_count);
    assign_ids(extra, scene.cells.size() + 1);
    out.cells.insert(out.cells.end(), extra.begin(), extra.end());

    Rng rng(derive_seed(seed, "blood_stain", 0));
    const double world_w = scene.config.world_extent;
    const double world_h = scene.config.world_height();
    const auto blob_count = static_cast<std::size_t>(std::lround(level * static_cast<double>(kBlobCandidates)));
    for (std::size_t i = 0; i < kBlobCandidates; ++i)
    {
        RedBlob blob;
        blob.center = {rng.uniform(0.0, world_w), rng.uniform(0.0, world_h)};
        blob.radius = rng.uniform(kBlobRadiusMin, kBlobRadiusMax);
        blob.intensity = level * rng.uniform(kBlobIntensityMin, kBlobIntensityMax);
        if (i < blob_count)
            out.red_blobs.push_back(blob);
    }
    out.provenance.streams["blood_extra"] = derive_seed(seed, "blood_extra", 0);
    out.provenance.streams["blood_stain"] = derive_seed(seed, "blood_stain", 0);
    return out;
}

inline SceneGraph apply_perturbation(const SceneGraph& scene, const PerturbationSpec& spec)
{
    return spec.kind == PerturbKind::NucleiIntensity ? apply_nuclei_intensity(scene, spec.level)
                                                     : apply_blood_stain(scene, spec.level, spec.seed);
}

/// Parses "kind=blood-stain,level=0.5[,seed=7]".
inline PerturbationSpec parse_perturbation(std::string_view text)
{
    PerturbationSpec spec;
    bool have_kind = false;
    bool have_level = false;
    while (!text.empty())
    {
        const auto comma = text.find(',');
        const auto item = text.substr(0, comma);
        text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
        const auto eq = item.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("perturbation: expected key=value, got '" + std::string(item) + "'");
        const auto key = item.substr(0, eq);
        const std::string value(item.substr(eq + 1));
        try
        {
            if (key == "kind")
            {
                spec.kind = perturb_kind_from_name(value);
                have_kind = true;
            }
            else if (key == "level")
            {
                std::size_t used = 0;
                spec.level = std::stod(value, &used);
                if (used != value.size())
                    throw ConfigError("perturbation: bad level '" + value + "'");
                have_level = true;
            }
            else if (key == "seed")
            {
                std::size_t used = 0;
                spec.seed = std::stoull(value, &used);
                if (used != value.size())
                    throw ConfigError("perturbation: bad seed '" + value + "'");
            }
            else
                throw ConfigError("perturbation: unknown key '" + std::string(key) + "'");
        }
        catch (const std::logic_error&)
        {
            throw ConfigError("perturbation: bad value for " + std::string(key) + ": '" + value + "'");
        }
    }
    if (!have_kind || !have_level)
        throw ConfigError("perturbation: kind and level are required");
    detail::require_level(spec.level);
    return spec;
}

}  // namespace histosynth
