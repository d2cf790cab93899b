// Scene configuration: every controllable parameter of one generated scene,
// its validation, and the scene_config.json document format.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>

#include <json.hpp>

#include "histosynth/core.hpp"

namespace histosynth
{

using Json = nlohmann::json;
using Rgb = std::array<double, 3>;

/// Object classes. Values 1..5 double as semantic mask labels; goblet and
/// blood cells are rendered distractors and never enter a mask.
enum class CellClass : std::uint8_t
{
    Epithelial = 1,
    Plasma = 2,
    Lymphocyte = 3,
    Eosinophil = 4,
    Fibroblast = 5,
    Goblet = 6,
    BloodCell = 7,
};

inline constexpr std::size_t kNucleusClassCount = 5;
inline constexpr std::size_t kCellClassCount = 7;
inline constexpr std::size_t kStromalClassCount = 4;

inline constexpr std::array<CellClass, kStromalClassCount> kStromalClasses{
    CellClass::Plasma, CellClass::Lymphocyte, CellClass::Eosinophil, CellClass::Fibroblast};

constexpr std::size_t class_index(CellClass c) { return static_cast<std::size_t>(c) - 1; }
constexpr CellClass class_from_index(std::size_t i) { return static_cast<CellClass>(i + 1); }
constexpr bool has_nucleus_label(CellClass c) { return static_cast<int>(c) <= 5; }

inline constexpr std::array<std::string_view, kCellClassCount> kClassNames{
    "epithelial", "plasma", "lymphocyte", "eosinophil", "fibroblast", "goblet", "blood_cell"};

inline std::string_view class_name(CellClass c) { return kClassNames[class_index(c)]; }

inline std::optional<CellClass> class_from_name(std::string_view name)
{
    for (std::size_t i = 0; i < kClassNames.size(); ++i)
        if (kClassNames[i] == name)
            return class_from_index(i);
    return std::nullopt;
}

/// Per-class shape distribution. For discs (blood cells) elongation is the
/// diameter-to-thickness ratio.
struct ShapeParams
{
    double diameter_mean{7.0};
    double diameter_sd{0.7};
    double elongation{1.0};
    double bending{0.0};
    double shape_noise{0.1};
    double lobe_separation{0.0};
    double cytoplasm_scale{1.5};

    friend bool operator==(const ShapeParams&, const ShapeParams&) = default;
};

struct CytoplasmStain
{
    Rgb hue{0.1, 0.4, 0.2};
    double intensity{0.3};

    friend bool operator==(const CytoplasmStain&, const CytoplasmStain&) = default;
};

/// Stain hues are absorbance per RGB channel; light transmitted through a
/// stained path is background_light * exp(-absorbance).
struct StainConfig
{
    std::array<Rgb, kNucleusClassCount> nucleus_hue{{
        {0.70, 0.85, 0.35},  // epithelial
        {0.80, 0.95, 0.40},  // plasma
        {0.95, 1.00, 0.45},  // lymphocyte
        {0.75, 0.90, 0.35},  // eosinophil
        {0.60, 0.75, 0.30},  // fibroblast
    }};
    double nucleus_intensity{0.9};
    std::array<CytoplasmStain, kCellClassCount> cytoplasm{{
        {{0.08, 0.35, 0.15}, 0.45},  // epithelial
        {{0.20, 0.40, 0.15}, 0.50},  // plasma
        {{0.10, 0.25, 0.10}, 0.30},  // lymphocyte
        {{0.05, 0.85, 0.50}, 0.90},  // eosinophil
        {{0.05, 0.40, 0.15}, 0.35},  // fibroblast
        {{0.00, 0.00, 0.00}, 0.00},  // goblet vacuole, unstained
        {{0.02, 0.90, 0.75}, 1.00},  // blood cell body
    }};
    Rgb tissue_hue{0.05, 0.45, 0.20};
    double tissue_intensity{0.55};
    double stain_noise_sigma{0.08};
    Rgb background_light{1.0, 1.0, 1.0};

    friend bool operator==(const StainConfig&, const StainConfig&) = default;
};

inline std::array<ShapeParams, kCellClassCount> default_shapes()
{
    return {{
        // mean, sd, elongation, bending, noise, lobe sep, cytoplasm scale
        {7.0, 0.7, 1.8, 0.0, 0.15, 0.0, 1.5},   // epithelial
        {7.5, 0.8, 1.3, 0.0, 0.10, 0.0, 1.9},   // plasma
        {6.0, 0.5, 1.1, 0.0, 0.08, 0.0, 1.3},   // lymphocyte
        {5.0, 0.5, 1.2, 0.0, 0.10, 4.0, 2.2},   // eosinophil
        {7.0, 0.8, 5.0, 0.4, 0.10, 0.0, 1.2},   // fibroblast
        {10.0, 1.2, 1.3, 0.0, 0.0, 0.0, 1.1},   // goblet
        {7.0, 0.4, 3.2, 0.0, 0.0, 0.0, 1.1},    // blood cell
    }};
}

struct SceneConfig
{
    std::uint32_t image_width{512};
    std::uint32_t image_height{512};
    double world_extent{256.0};  // micrometers per image side
    double slab_z0{0.0};
    double slab_thickness{10.0};
    double focal_depth{5.0};
    double blur_strength{0.15};  // blur sigma (um) per um of defocus

    double crypt_spacing{90.0};
    double crypt_radius_mean{32.0};
    double crypt_radius_jitter{3.0};
    double crypt_center_jitter{4.0};
    double crypt_wall_thickness{14.0};
    double crypt_bending_amplitude{6.0};
    double tearing_degree{0.1};

    std::array<ShapeParams, kCellClassCount> shapes{default_shapes()};
    std::array<double, kStromalClassCount> class_ratios{0.30, 0.35, 0.10, 0.25};
    double stromal_density{4000.0};  // cells per mm^2
    double goblet_ratio{0.15};
    StainConfig stain{};
    std::uint32_t blood_cell_baseline{5};
    std::uint64_t master_seed{0};

    friend bool operator==(const SceneConfig&, const SceneConfig&) = default;

    double pixel_size() const { return world_extent / static_cast<double>(image_width); }
    double world_height() const { return pixel_size() * static_cast<double>(image_height); }
    const ShapeParams& shape(CellClass c) const { return shapes[class_index(c)]; }
};

/// A SceneConfig that passed validate(); immutable.
class ValidatedConfig
{
public:
    const SceneConfig& get() const { return config_; }
    const SceneConfig* operator->() const { return &config_; }
    const SceneConfig& operator*() const { return config_; }

private:
    explicit ValidatedConfig(SceneConfig config) : config_(std::move(config)) {}
    friend ValidatedConfig validate(const SceneConfig& config);

    SceneConfig config_;
};

namespace detail
{

inline std::string fmt_number(double v)
{
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

inline void require(bool ok, const std::string& path, const std::string& what)
{
    if (!ok)
        throw ConfigError(path + ": " + what);
}

inline void require_range(double v, double lo, double hi, const std::string& path)
{
    require(lo <= v && v <= hi, path, "value " + fmt_number(v) + " outside [" + fmt_number(lo) + ", " + fmt_number(hi) + "]");
}

inline void require_positive(double v, const std::string& path)
{
    require(v > 0.0 && std::isfinite(v), path, "value " + fmt_number(v) + " must be > 0");
}

inline void require_non_negative(double v, const std::string& path)
{
    require(v >= 0.0 && std::isfinite(v), path, "value " + fmt_number(v) + " must be >= 0");
}

inline void require_finite(double v, const std::string& path)
{
    require(std::isfinite(v), path, "value must be finite");
}

inline void require_rgb(const Rgb& c, const std::string& path)
{
    for (std::size_t i = 0; i < 3; ++i)
        require_range(c[i], 0.0, 1.0, path + "[" + std::to_string(i) + "]");
}

}  // namespace detail

/// Returns the config unchanged if every invariant holds, else throws
/// ConfigError naming the first violated field.
inline ValidatedConfig validate(const SceneConfig& c)
{
    using namespace detail;
    require(c.image_width > 0 && c.image_width <= 16384, "image_width", "must be in [1, 16384]");
    require(c.image_height > 0 && c.image_height <= 16384, "image_height", "must be in [1, 16384]");
    require_positive(c.world_extent, "world_extent");
    require_finite(c.slab_z0, "slab_z0");
    require_positive(c.slab_thickness, "slab_thickness");
    require_finite(c.focal_depth, "focal_depth");
    require_non_negative(c.blur_strength, "blur_strength");

    require_positive(c.crypt_spacing, "crypt_spacing");
    require_positive(c.crypt_radius_mean, "crypt_radius_mean");
    require_non_negative(c.crypt_radius_jitter, "crypt_radius_jitter");
    require_non_negative(c.crypt_center_jitter, "crypt_center_jitter");
    require_positive(c.crypt_wall_thickness, "crypt_wall_thickness");
    require(c.crypt_wall_thickness < c.crypt_radius_mean, "crypt_wall_thickness",
            "value " + fmt_number(c.crypt_wall_thickness) + " must be < crypt_radius_mean " + fmt_number(c.crypt_radius_mean));
    require_non_negative(c.crypt_bending_amplitude, "crypt_bending_amplitude");
    require_range(c.tearing_degree, 0.0, 1.0, "tearing_degree");

    for (std::size_t i = 0; i < kCellClassCount; ++i)
    {
        const auto& s = c.shapes[i];
        const std::string p = "shapes." + std::string(kClassNames[i]) + ".";
        require_positive(s.diameter_mean, p + "diameter_mean");
        require_non_negative(s.diameter_sd, p + "diameter_sd");
        require(s.elongation >= 1.0 && std::isfinite(s.elongation), p + "elongation", "value " + fmt_number(s.elongation) + " must be >= 1");
        require_range(s.bending, 0.0, 1.0, p + "bending");
        require_range(s.shape_noise, 0.0, 1.0, p + "shape_noise");
        require_non_negative(s.lobe_separation, p + "lobe_separation");
        require(s.cytoplasm_scale > 1.0 && std::isfinite(s.cytoplasm_scale), p + "cytoplasm_scale",
                "value " + fmt_number(s.cytoplasm_scale) + " must be > 1");
    }

    double ratio_sum = 0.0;
    for (std::size_t i = 0; i < kStromalClassCount; ++i)
    {
        require_non_negative(c.class_ratios[i], "class_ratios." + std::string(class_name(kStromalClasses[i])));
        ratio_sum += c.class_ratios[i];
    }
    require(std::abs(ratio_sum - 1.0) <= 1e-9, "class_ratios", "sum = " + fmt_number(ratio_sum));

    require_non_negative(c.stromal_density, "stromal_density");
    require_range(c.goblet_ratio, 0.0, 1.0, "goblet_ratio");

    const auto& st = c.stain;
    for (std::size_t i = 0; i < kNucleusClassCount; ++i)
        require_rgb(st.nucleus_hue[i], "stain.nucleus_hue." + std::string(kClassNames[i]));
    require_range(st.nucleus_intensity, 0.0, 1.0, "stain.nucleus_intensity");
    for (std::size_t i = 0; i < kCellClassCount; ++i)
    {
        const std::string p = "stain.cytoplasm." + std::string(kClassNames[i]);
        require_rgb(st.cytoplasm[i].hue, p + ".hue");
        require_range(st.cytoplasm[i].intensity, 0.0, 1.0, p + ".intensity");
    }
    require_rgb(st.tissue_hue, "stain.tissue_hue");
    require_range(st.tissue_intensity, 0.0, 1.0, "stain.tissue_intensity");
    require_non_negative(st.stain_noise_sigma, "stain.stain_noise_sigma");
    require_rgb(st.background_light, "stain.background_light");

    return ValidatedConfig(c);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace detail
{

/// Reads an object field by field and rejects keys nobody asked for.
class StrictReader
{
public:
    StrictReader(const Json& j, std::string path) : json_(j), path_(std::move(path))
    {
        if (!json_.is_object())
            throw ConfigError(display_path() + ": expected an object");
    }

    template <typename T>
    void read(const char* key, T& out)
    {
        seen_.insert(key);
        const auto it = json_.find(key);
        if (it == json_.end())
            return;
        try
        {
            parse_value(*it, out, child(key));
        }
        catch (const nlohmann::json::exception& e)
        {
            throw ConfigError(child(key) + ": " + e.what());
        }
    }

    const Json* sub(const char* key)
    {
        seen_.insert(key);
        const auto it = json_.find(key);
        return it == json_.end() ? nullptr : &*it;
    }

    std::string child(std::string_view key) const { return path_.empty() ? std::string(key) : path_ + "." + std::string(key); }

    void finish() const
    {
        for (const auto& [key, value] : json_.items())
            if (!seen_.contains(key))
                throw ConfigError(child(key) + ": unknown key");
    }

private:
    std::string display_path() const { return path_.empty() ? "<root>" : path_; }

    static void parse_value(const Json& j, double& out, const std::string& path)
    {
        if (!j.is_number())
            throw ConfigError(path + ": expected a number");
        out = j.get<double>();
    }

    static void parse_value(const Json& j, std::uint32_t& out, const std::string& path)
    {
        if (!j.is_number_unsigned() || j.get<std::uint64_t>() > 0xffffffffULL)
            throw ConfigError(path + ": expected an unsigned 32-bit integer");
        out = j.get<std::uint32_t>();
    }

    static void parse_value(const Json& j, std::uint64_t& out, const std::string& path)
    {
        if (!j.is_number_unsigned())
            throw ConfigError(path + ": expected an unsigned 64-bit integer");
        out = j.get<std::uint64_t>();
    }

    static void parse_value(const Json& j, Rgb& out, const std::string& path)
    {
        if (!j.is_array() || j.size() != 3)
            throw ConfigError(path + ": expected an array of 3 numbers");
        for (std::size_t i = 0; i < 3; ++i)
            parse_value(j[i], out[i], path + "[" + std::to_string(i) + "]");
    }

    const Json& json_;
    std::string path_;
    std::set<std::string, std::less<>> seen_;
};

}  // namespace detail

inline Json to_json(const ShapeParams& s)
{
    return Json{{"diameter_mean", s.diameter_mean}, {"diameter_sd", s.diameter_sd},     {"elongation", s.elongation},
                {"bending", s.bending},             {"shape_noise", s.shape_noise},     {"lobe_separation", s.lobe_separation},
                {"cytoplasm_scale", s.cytoplasm_scale}};
}

inline Json to_json(const StainConfig& s)
{
    Json nucleus = Json::object();
    for (std::size_t i = 0; i < kNucleusClassCount; ++i)
        nucleus[std::string(kClassNames[i])] = s.nucleus_hue[i];
    Json cyto = Json::object();
    for (std::size_t i = 0; i < kCellClassCount; ++i)
        cyto[std::string(kClassNames[i])] = Json{{"hue", s.cytoplasm[i].hue}, {"intensity", s.cytoplasm[i].intensity}};
    return Json{{"nucleus_hue", nucleus},
                {"nucleus_intensity", s.nucleus_intensity},
                {"cytoplasm", cyto},
                {"tissue_hue", s.tissue_hue},
                {"tissue_intensity", s.tissue_intensity},
                {"stain_noise_sigma", s.stain_noise_sigma},
                {"background_light", s.background_light}};
}

inline Json to_json(const SceneConfig& c)
{
    Json shapes = Json::object();
    for (std::size_t i = 0; i < kCellClassCount; ++i)
        shapes[std::string(kClassNames[i])] = to_json(c.shapes[i]);
    Json ratios = Json::object();
    for (std::size_t i = 0; i < kStromalClassCount; ++i)
        ratios[std::string(class_name(kStromalClasses[i]))] = c.class_ratios[i];

    return Json{{"image_width", c.image_width},
                {"image_height", c.image_height},
                {"world_extent", c.world_extent},
                {"slab_z0", c.slab_z0},
                {"slab_thickness", c.slab_thickness},
                {"focal_depth", c.focal_depth},
                {"blur_strength", c.blur_strength},
                {"crypt_spacing", c.crypt_spacing},
                {"crypt_radius_mean", c.crypt_radius_mean},
                {"crypt_radius_jitter", c.crypt_radius_jitter},
                {"crypt_center_jitter", c.crypt_center_jitter},
                {"crypt_wall_thickness", c.crypt_wall_thickness},
                {"crypt_bending_amplitude", c.crypt_bending_amplitude},
                {"tearing_degree", c.tearing_degree},
                {"shapes", shapes},
                {"class_ratios", ratios},
                {"stromal_density", c.stromal_density},
                {"goblet_ratio", c.goblet_ratio},
                {"stain", to_json(c.stain)},
                {"blood_cell_baseline", c.blood_cell_baseline},
                {"master_seed", c.master_seed}};
}

inline ShapeParams shape_from_json(const Json& j, const std::string& path, ShapeParams s)
{
    detail::StrictReader r(j, path);
    r.read("diameter_mean", s.diameter_mean);
    r.read("diameter_sd", s.diameter_sd);
    r.read("elongation", s.elongation);
    r.read("bending", s.bending);
    r.read("shape_noise", s.shape_noise);
    r.read("lobe_separation", s.lobe_separation);
    r.read("cytoplasm_scale", s.cytoplasm_scale);
    r.finish();
    return s;
}

inline StainConfig stain_from_json(const Json& j, const std::string& path, StainConfig s)
{
    detail::StrictReader r(j, path);
    if (const Json* nucleus = r.sub("nucleus_hue"))
    {
        detail::StrictReader nr(*nucleus, r.child("nucleus_hue"));
        for (std::size_t i = 0; i < kNucleusClassCount; ++i)
            nr.read(kClassNames[i].data(), s.nucleus_hue[i]);
        nr.finish();
    }
    r.read("nucleus_intensity", s.nucleus_intensity);
    if (const Json* cyto = r.sub("cytoplasm"))
    {
        detail::StrictReader cr(*cyto, r.child("cytoplasm"));
        for (std::size_t i = 0; i < kCellClassCount; ++i)
        {
            if (const Json* entry = cr.sub(kClassNames[i].data()))
            {
                detail::StrictReader er(*entry, cr.child(kClassNames[i]));
                er.read("hue", s.cytoplasm[i].hue);
                er.read("intensity", s.cytoplasm[i].intensity);
                er.finish();
            }
        }
        cr.finish();
    }
    r.read("tissue_hue", s.tissue_hue);
    r.read("tissue_intensity", s.tissue_intensity);
    r.read("stain_noise_sigma", s.stain_noise_sigma);
    r.read("background_light", s.background_light);
    r.finish();
    return s;
}

/// Parses a scene_config document. Missing keys keep their defaults;
/// unknown keys are rejected. Does not validate.
inline SceneConfig config_from_json(const Json& j)
{
    SceneConfig c;
    detail::StrictReader r(j, "");
    r.read("image_width", c.image_width);
    r.read("image_height", c.image_height);
    r.read("world_extent", c.world_extent);
    r.read("slab_z0", c.slab_z0);
    r.read("slab_thickness", c.slab_thickness);
    r.read("focal_depth", c.focal_depth);
    r.read("blur_strength", c.blur_strength);
    r.read("crypt_spacing", c.crypt_spacing);
    r.read("crypt_radius_mean", c.crypt_radius_mean);
    r.read("crypt_radius_jitter", c.crypt_radius_jitter);
    r.read("crypt_center_jitter", c.crypt_center_jitter);
    r.read("crypt_wall_thickness", c.crypt_wall_thickness);
    r.read("crypt_bending_amplitude", c.crypt_bending_amplitude);
    r.read("tearing_degree", c.tearing_degree);
    if (const Json* shapes = r.sub("shapes"))
    {
        detail::StrictReader sr(*shapes, "shapes");
        for (std::size_t i = 0; i < kCellClassCount; ++i)
            if (const Json* entry = sr.sub(kClassNames[i].data()))
                c.shapes[i] = shape_from_json(*entry, sr.child(kClassNames[i]), c.shapes[i]);
        sr.finish();
    }
    if (const Json* ratios = r.sub("class_ratios"))
    {
        detail::StrictReader rr(*ratios, "class_ratios");
        for (std::size_t i = 0; i < kStromalClassCount; ++i)
            rr.read(class_name(kStromalClasses[i]).data(), c.class_ratios[i]);
        rr.finish();
    }
    r.read("stromal_density", c.stromal_density);
    r.read("goblet_ratio", c.goblet_ratio);
    if (const Json* stain = r.sub("stain"))
        c.stain = stain_from_json(*stain, "stain", c.stain);
    r.read("blood_cell_baseline", c.blood_cell_baseline);
    r.read("master_seed", c.master_seed);
    r.finish();
    return c;
}

/// Canonical text: sorted keys, two-space indent, trailing newline.
inline std::string dump_canonical(const Json& j) { return j.dump(2) + "\n"; }

inline std::string serialize_config(const SceneConfig& c) { return dump_canonical(to_json(c)); }

inline SceneConfig parse_config(std::string_view text)
{
    Json j;
    try
    {
        j = Json::parse(text);
    }
    catch (const nlohmann::json::parse_error& e)
    {
        throw ConfigError(std::string("<root>: ") + e.what());
    }
    return config_from_json(j);
}

inline std::uint64_t config_hash(const SceneConfig& c) { return fnv1a64(serialize_config(c)); }

}  // namespace histosynth
