// Uncertainty quantification over softmax sample stacks: entropy
// decomposition, MSR, image-level aggregation, segmentation metrics, the
// on-disk stack format, and the benchmark runner.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "histosynth/config.hpp"
#include "histosynth/core.hpp"
#include "histosynth/io.hpp"
#include "histosynth/parallel.hpp"

namespace histosynth
{

inline constexpr double kSimplexTolerance = 1e-5;

/// T x C x H x W softmax samples, row-major.
struct ProbStack
{
    std::size_t T{0};
    std::size_t C{0};
    std::size_t H{0};
    std::size_t W{0};
    std::vector<float> samples;
    std::vector<std::string> class_names;
    std::string source_tag;

    ProbStack() = default;
    ProbStack(std::size_t t, std::size_t c, std::size_t h, std::size_t w)
        : T(t), C(c), H(h), W(w), samples(t * c * h * w, 0.0f)
    {
    }

    std::size_t index(std::size_t t, std::size_t c, std::size_t h, std::size_t w) const { return ((t * C + c) * H + h) * W + w; }
    float& operator()(std::size_t t, std::size_t c, std::size_t h, std::size_t w) { return samples[index(t, c, h, w)]; }
    float operator()(std::size_t t, std::size_t c, std::size_t h, std::size_t w) const { return samples[index(t, c, h, w)]; }

    friend bool operator==(const ProbStack&, const ProbStack&) = default;
};

/// Throws on shape mismatch or on the first (t, h, w) that is not a simplex.
inline void validate(const ProbStack& s)
{
    if (s.T == 0 || s.C == 0 || s.H == 0 || s.W == 0)
        throw Error("prob stack: all dimensions must be >= 1 (T=" + std::to_string(s.T) + ", C=" + std::to_string(s.C) +
                    ", H=" + std::to_string(s.H) + ", W=" + std::to_string(s.W) + ")");
    if (s.samples.size() != s.T * s.C * s.H * s.W)
        throw Error("prob stack: " + std::to_string(s.samples.size()) + " values for shape " + std::to_string(s.T) + "x" +
                    std::to_string(s.C) + "x" + std::to_string(s.H) + "x" + std::to_string(s.W));
    if (!s.class_names.empty() && s.class_names.size() != s.C)
        throw Error("prob stack: " + std::to_string(s.class_names.size()) + " class names for C=" + std::to_string(s.C));
    for (std::size_t t = 0; t < s.T; ++t)
        for (std::size_t h = 0; h < s.H; ++h)
            for (std::size_t w = 0; w < s.W; ++w)
            {
                double sum = 0.0;
                bool ok = true;
                for (std::size_t c = 0; c < s.C; ++c)
                {
                    const float v = s(t, c, h, w);
                    ok = ok && std::isfinite(v) && v >= 0.0f;
                    sum += v;
                }
                if (!ok || std::abs(sum - 1.0) > kSimplexTolerance)
                    throw Error("prob stack: not a probability simplex at (t=" + std::to_string(t) + ", h=" + std::to_string(h) +
                                ", w=" + std::to_string(w) + "), sum = " + detail::fmt_number(sum));
            }
}

/// C x H x W probability map.
struct ProbMap
{
    std::size_t C{0};
    std::size_t H{0};
    std::size_t W{0};
    std::vector<double> values;

    double operator()(std::size_t c, std::size_t h, std::size_t w) const { return values[(c * H + h) * W + w]; }
};

inline ProbMap predictive_mean(const ProbStack& s)
{
    validate(s);
    ProbMap m{s.C, s.H, s.W, std::vector<double>(s.C * s.H * s.W, 0.0)};
    const std::size_t plane = s.C * s.H * s.W;
    for (std::size_t t = 0; t < s.T; ++t)
        for (std::size_t i = 0; i < plane; ++i)
            m.values[i] += s.samples[t * plane + i];
    for (auto& v : m.values)
        v /= static_cast<double>(s.T);
    return m;
}

/// Shannon entropy in nats with 0 ln 0 = 0.
template <typename T>
double entropy(std::span<const T> p)
{
    double h = 0.0;
    for (const T v : p)
        if (v > 0)
            h -= static_cast<double>(v) * std::log(static_cast<double>(v));
    return h;
}

inline double entropy(std::initializer_list<double> p) { return entropy(std::span<const double>(p.begin(), p.size())); }

inline Plane<float> entropy_map(const ProbMap& m)
{
    Plane<float> out(m.W, m.H);
    std::vector<double> p(m.C);
    for (std::size_t h = 0; h < m.H; ++h)
        for (std::size_t w = 0; w < m.W; ++w)
        {
            for (std::size_t c = 0; c < m.C; ++c)
                p[c] = m(c, h, w);
            out(w, h) = static_cast<float>(entropy(std::span<const double>(p)));
        }
    return out;
}

struct UncMaps
{
    Plane<float> pu;
    Plane<float> au;
    Plane<float> eu;
    bool single_member{false};   // T = 1: eu is 0 by construction
    std::size_t clamp_count{0};  // pixels where pu - au < 0 was clamped
    double max_clamp{0.0};       // largest clamped magnitude
};

/// pu = H(mean), au = mean H(member), eu = pu - au. A negative eu (rounding)
/// is clamped to 0 with au set to pu, so 0 <= au <= pu holds exactly. Pixels
/// whose members are bitwise identical get pu = au and eu = 0 exactly.
inline UncMaps decompose(const ProbStack& s)
{
    validate(s);
    UncMaps out;
    out.pu = Plane<float>(s.W, s.H);
    out.au = Plane<float>(s.W, s.H);
    out.eu = Plane<float>(s.W, s.H);
    out.single_member = s.T == 1;
    std::vector<double> member(s.C);
    std::vector<double> mean(s.C);
    for (std::size_t h = 0; h < s.H; ++h)
        for (std::size_t w = 0; w < s.W; ++w)
        {
            bool identical = true;
            for (std::size_t t = 1; t < s.T && identical; ++t)
                for (std::size_t c = 0; c < s.C && identical; ++c)
                    identical = std::bit_cast<std::uint32_t>(s(t, c, h, w)) == std::bit_cast<std::uint32_t>(s(0, c, h, w));

            double au = 0.0;
            std::fill(mean.begin(), mean.end(), 0.0);
            for (std::size_t t = 0; t < (identical ? 1 : s.T); ++t)
            {
                for (std::size_t c = 0; c < s.C; ++c)
                {
                    member[c] = s(t, c, h, w);
                    mean[c] += member[c];
                }
                au += entropy(std::span<const double>(member));
            }
            double pu = 0.0;
            double eu = 0.0;
            if (identical)
                pu = au;
            else
            {
                au /= static_cast<double>(s.T);
                for (auto& v : mean)
                    v /= static_cast<double>(s.T);
                pu = entropy(std::span<const double>(mean));
                eu = pu - au;
                if (eu < 0.0)
                {
                    ++out.clamp_count;
                    out.max_clamp = std::max(out.max_clamp, -eu);
                    eu = 0.0;
                    au = pu;
                }
            }
            out.pu(w, h) = static_cast<float>(pu);
            out.au(w, h) = static_cast<float>(au);
            out.eu(w, h) = static_cast<float>(eu);
        }
    return out;
}

/// 1 - max_c p_c per pixel.
inline Plane<float> msr_uncertainty(const ProbMap& m)
{
    Plane<float> out(m.W, m.H);
    for (std::size_t h = 0; h < m.H; ++h)
        for (std::size_t w = 0; w < m.W; ++w)
        {
            double best = 0.0;
            for (std::size_t c = 0; c < m.C; ++c)
                best = std::max(best, m(c, h, w));
            out(w, h) = static_cast<float>(1.0 - best);
        }
    return out;
}

/// Class index with the highest mean probability; ties go to the lower index.
inline Plane<std::uint8_t> argmax_classes(const ProbMap& m)
{
    if (m.C > 256)
        throw Error("argmax: more than 256 classes");
    Plane<std::uint8_t> out(m.W, m.H);
    for (std::size_t h = 0; h < m.H; ++h)
        for (std::size_t w = 0; w < m.W; ++w)
        {
            std::size_t best = 0;
            for (std::size_t c = 1; c < m.C; ++c)
                if (m(c, h, w) > m(best, h, w))
                    best = c;
            out(w, h) = static_cast<std::uint8_t>(best);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

enum class AggStrategy
{
    ImageMean,
    PatchMax,
    ThresholdMean,
};

struct AggregationSpec
{
    AggStrategy strategy{AggStrategy::ThresholdMean};
    std::size_t patch_size{64};
    std::size_t stride{32};
    double quantile_p{0.9};

    static AggregationSpec image_mean() { return {AggStrategy::ImageMean, 64, 32, 0.9}; }
    static AggregationSpec patch_max(std::size_t patch, std::size_t stride) { return {AggStrategy::PatchMax, patch, stride, 0.9}; }
    static AggregationSpec threshold_mean(double p) { return {AggStrategy::ThresholdMean, 64, 32, p}; }
};

inline std::string agg_name(const AggregationSpec& a)
{
    switch (a.strategy)
    {
    case AggStrategy::ImageMean:
        return "image_mean";
    case AggStrategy::PatchMax:
        return "patch_max(patch=" + std::to_string(a.patch_size) + ";stride=" + std::to_string(a.stride) + ")";
    case AggStrategy::ThresholdMean:
        return "threshold_mean(p=" + detail::fmt_number(a.quantile_p) + ")";
    }
    return "unknown";
}

/// Nearest-rank p-quantile: the ceil(p n)-th smallest value (the minimum at p = 0).
inline double nearest_rank_quantile(std::vector<float> values, double p)
{
    if (values.empty())
        throw Error("quantile of an empty map");
    const auto n = values.size();
    const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
    const std::size_t k = rank == 0 ? 0 : std::min(rank - 1, n - 1);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
    return values[k];
}

inline double aggregate(const Plane<float>& unc, const AggregationSpec& spec)
{
    const std::size_t H = unc.height();
    const std::size_t W = unc.width();
    if (H == 0 || W == 0)
        throw Error("aggregate: empty map");
    switch (spec.strategy)
    {
    case AggStrategy::ImageMean:
    {
        double sum = 0.0;
        for (const float v : unc.values())
            sum += v;
        return sum / static_cast<double>(H * W);
    }
    case AggStrategy::ThresholdMean:
    {
        if (!(spec.quantile_p >= 0.0 && spec.quantile_p < 1.0))
            throw ConfigError("quantile_p: must be in [0, 1), got " + detail::fmt_number(spec.quantile_p));
        const auto vals = unc.values();
        const double q = nearest_rank_quantile({vals.begin(), vals.end()}, spec.quantile_p);
        double sum = 0.0;
        std::size_t count = 0;
        for (const float v : vals)
            if (v >= q)
            {
                sum += v;
                ++count;
            }
        return sum / static_cast<double>(count);
    }
    case AggStrategy::PatchMax:
    {
        if (spec.patch_size == 0 || spec.stride == 0)
            throw ConfigError("patch_size and stride must be > 0");
        if (spec.patch_size > H || spec.patch_size > W)
            throw ConfigError("patch_size " + std::to_string(spec.patch_size) + " exceeds the image side");
        // window starts 0, s, 2s, ... through the first window reaching the edge
        const auto starts = [&](std::size_t dim) {
            std::vector<std::size_t> out;
            for (std::size_t s = 0;; s += spec.stride)
            {
                out.push_back(s);
                if (s + spec.patch_size >= dim)
                    break;
            }
            return out;
        };
        double best = -std::numeric_limits<double>::infinity();
        for (const auto y0 : starts(H))
            for (const auto x0 : starts(W))
            {
                const std::size_t y1 = std::min(H, y0 + spec.patch_size);
                const std::size_t x1 = std::min(W, x0 + spec.patch_size);
                double sum = 0.0;
                for (std::size_t y = y0; y < y1; ++y)
                    for (std::size_t x = x0; x < x1; ++x)
                        sum += unc(x, y);
                best = std::max(best, sum / static_cast<double>((y1 - y0) * (x1 - x0)));
            }
        return best;
    }
    }
    throw Error("aggregate: unknown strategy");
}

/// Parses "image-mean", "patch-max[:patch[:stride]]" or "threshold-mean[:p]".
inline AggregationSpec parse_aggregation(const std::string& text)
{
    const auto colon = text.find(':');
    const std::string name = text.substr(0, colon);
    std::vector<std::string> args;
    for (std::size_t at = colon; at != std::string::npos;)
    {
        const auto next = text.find(':', at + 1);
        args.push_back(text.substr(at + 1, next == std::string::npos ? std::string::npos : next - at - 1));
        at = next;
    }
    try
    {
        if (name == "image-mean" && args.empty())
            return AggregationSpec::image_mean();
        if (name == "patch-max" && args.size() <= 2)
        {
            auto a = AggregationSpec::patch_max(64, 32);
            if (!args.empty())
                a.patch_size = std::stoul(args[0]);
            if (args.size() > 1)
                a.stride = std::stoul(args[1]);
            if (a.patch_size == 0 || a.stride == 0)
                throw ConfigError("aggregation: patch and stride must be > 0");
            return a;
        }
        if (name == "threshold-mean" && args.size() <= 1)
        {
            auto a = AggregationSpec::threshold_mean(0.9);
            if (!args.empty())
                a.quantile_p = std::stod(args[0]);
            if (!(a.quantile_p >= 0.0 && a.quantile_p < 1.0))
                throw ConfigError("aggregation: quantile must be in [0, 1)");
            return a;
        }
    }
    catch (const std::logic_error&)
    {
    }
    throw ConfigError("aggregation: cannot parse '" + text + "' (image-mean | patch-max[:patch[:stride]] | threshold-mean[:p])");
}

// ---------------------------------------------------------------------------
// Segmentation metrics
// ---------------------------------------------------------------------------

struct SegMetrics
{
    double accuracy{0.0};
    std::vector<double> f1;  // NaN for classes absent from both maps
    double f1_macro{0.0};    // mean over classes with a defined F1
    std::vector<std::vector<std::uint64_t>> confusion;  // [gt][pred]
};

inline SegMetrics segmentation_metrics(const Plane<std::uint8_t>& pred, const Plane<std::uint8_t>& gt, std::size_t n_classes)
{
    if (pred.width() != gt.width() || pred.height() != gt.height())
        throw Error("segmentation_metrics: prediction is " + std::to_string(pred.width()) + "x" + std::to_string(pred.height()) +
                    ", ground truth is " + std::to_string(gt.width()) + "x" + std::to_string(gt.height()));
    SegMetrics m;
    m.confusion.assign(n_classes, std::vector<std::uint64_t>(n_classes, 0));
    std::uint64_t correct = 0;
    for (std::size_t i = 0; i < gt.size(); ++i)
    {
        if (gt[i] >= n_classes || pred[i] >= n_classes)
            throw Error("segmentation_metrics: label " + std::to_string(std::max(gt[i], pred[i])) + " >= C = " + std::to_string(n_classes));
        ++m.confusion[gt[i]][pred[i]];
        correct += gt[i] == pred[i] ? 1 : 0;
    }
    m.accuracy = gt.size() == 0 ? std::numeric_limits<double>::quiet_NaN()
                                : static_cast<double>(correct) / static_cast<double>(gt.size());
    m.f1.assign(n_classes, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t c = 0; c < n_classes; ++c)
    {
        const std::uint64_t tp = m.confusion[c][c];
        std::uint64_t fp = 0;
        std::uint64_t fn = 0;
        for (std::size_t k = 0; k < n_classes; ++k)
            if (k != c)
            {
                fp += m.confusion[k][c];
                fn += m.confusion[c][k];
            }
        const std::uint64_t denom = 2 * tp + fp + fn;
        if (denom == 0)
            continue;
        m.f1[c] = 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
        sum += m.f1[c];
        ++defined;
    }
    m.f1_macro = defined == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(defined);
    return m;
}

// ---------------------------------------------------------------------------
// Stack files
// ---------------------------------------------------------------------------

inline fs::path probs_bin_path(const fs::path& dir, const std::string& stem) { return dir / (stem + "_probs.bin"); }
inline fs::path probs_json_path(const fs::path& dir, const std::string& stem) { return dir / (stem + "_probs.json"); }

inline Json probstack_sidecar(const ProbStack& s)
{
    return Json{{"T", s.T}, {"C", s.C}, {"H", s.H}, {"W", s.W}, {"class_names", s.class_names}, {"source_tag", s.source_tag}};
}

/// Writes <stem>_probs.bin (little-endian float32, T,C,H,W order) and the
/// <stem>_probs.json sidecar. Validates first; nothing is written on error.
inline void write_probstack(const fs::path& dir, const std::string& stem, const ProbStack& s)
{
    validate(s);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw Error("cannot create " + dir.string() + ": " + ec.message());
    write_file_atomic(probs_bin_path(dir, stem), encode_f32le(s.samples));
    write_file_atomic(probs_json_path(dir, stem), dump_canonical(probstack_sidecar(s)));
}

inline ProbStack read_probstack(const fs::path& dir, const std::string& stem)
{
    const auto json_path = probs_json_path(dir, stem);
    Json side;
    try
    {
        side = Json::parse(read_file(json_path));
    }
    catch (const Json::exception& e)
    {
        throw Error(json_path.string() + ": " + e.what());
    }
    ProbStack s;
    try
    {
        s.T = side.at("T").get<std::size_t>();
        s.C = side.at("C").get<std::size_t>();
        s.H = side.at("H").get<std::size_t>();
        s.W = side.at("W").get<std::size_t>();
        s.class_names = side.at("class_names").get<std::vector<std::string>>();
        s.source_tag = side.at("source_tag").get<std::string>();
    }
    catch (const Json::exception& e)
    {
        throw Error(json_path.string() + ": " + e.what());
    }
    const auto bin_path = probs_bin_path(dir, stem);
    const auto bytes = read_file(bin_path);
    const std::size_t expected = 4 * s.T * s.C * s.H * s.W;
    if (bytes.size() != expected)
        throw Error(bin_path.string() + ": " + std::to_string(bytes.size()) + " bytes, sidecar implies " + std::to_string(expected));
    s.samples = decode_f32le(bytes);
    try
    {
        validate(s);
    }
    catch (const Error& e)
    {
        throw Error(bin_path.string() + ": " + e.what());
    }
    return s;
}

/// Stems of every *_probs.json in dir, sorted.
inline std::vector<std::string> list_probstacks(const fs::path& dir)
{
    std::vector<std::string> stems;
    const std::string suffix = "_probs.json";
    for (const auto& entry : fs::directory_iterator(dir))
    {
        const auto name = entry.path().filename().string();
        if (entry.is_regular_file() && name.size() > suffix.size() && name.ends_with(suffix))
            stems.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(stems.begin(), stems.end());
    return stems;
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

struct LevelInput
{
    std::string label;  // as spelled in the directory name
    double level{0.0};
    fs::path dir;
};

struct BenchmarkRow
{
    std::string level_label;
    double noise_level{0.0};
    std::string image_stem;
    std::string source_tag;
    double accuracy{0.0};
    double f1_macro{0.0};
    double pu{0.0};
    double au{0.0};
    double eu{0.0};
};

struct LevelSummary
{
    std::string level_label;
    double noise_level{0.0};
    std::size_t images{0};
    std::string source_tag;
    double accuracy{0.0};
    double f1_macro{0.0};
    double pu{0.0};
    double au{0.0};
    double eu{0.0};
};

struct BenchmarkReport
{
    AggregationSpec agg;
    std::vector<BenchmarkRow> rows;
    std::vector<LevelSummary> summaries;
};

/// level_<x> subdirectories of root, ordered by level. A root without any
/// is treated as a single level 0.
inline std::vector<LevelInput> discover_levels(const fs::path& root)
{
    if (!fs::is_directory(root))
        throw Error("not a directory: " + root.string());
    std::vector<LevelInput> levels;
    for (const auto& entry : fs::directory_iterator(root))
    {
        const auto name = entry.path().filename().string();
        if (!entry.is_directory() || !name.starts_with("level_"))
            continue;
        const std::string label = name.substr(6);
        try
        {
            std::size_t used = 0;
            const double v = std::stod(label, &used);
            if (used == label.size())
                levels.push_back({label, v, entry.path()});
        }
        catch (const std::logic_error&)
        {
        }
    }
    if (levels.empty())
        levels.push_back({"0", 0.0, root});
    std::sort(levels.begin(), levels.end(), [](const LevelInput& a, const LevelInput& b) {
        return a.level != b.level ? a.level < b.level : a.label < b.label;
    });
    return levels;
}

/// Looks for <stem>_sem.png under gt_root/level_<x>/ first, then gt_root;
/// in each place both flat and per-scene subdirectory layouts are accepted.
inline std::optional<fs::path> find_ground_truth(const fs::path& gt_root, const std::string& level_label, const std::string& stem)
{
    const std::string file = stem + "_sem.png";
    for (const auto& base : {gt_root / ("level_" + level_label), gt_root})
        for (const auto& candidate : {base / file, base / stem / file})
            if (fs::is_regular_file(candidate))
                return candidate;
    return std::nullopt;
}

/// One row per (level, image): accuracy, macro F1 and aggregated PU/AU/EU.
/// With C = 2 the ground truth is binarized to foreground/background.
inline BenchmarkReport benchmark_run(const std::vector<LevelInput>& levels, const fs::path& gt_root, const AggregationSpec& agg,
                                     unsigned jobs = default_jobs())
{
    struct Job
    {
        const LevelInput* level;
        std::string stem;
        fs::path gt;
    };
    std::vector<Job> work;
    std::vector<std::string> missing;
    for (const auto& level : levels)
        for (const auto& stem : list_probstacks(level.dir))
        {
            auto gt = find_ground_truth(gt_root, level.label, stem);
            if (!gt)
                missing.push_back("level_" + level.label + "/" + stem);
            else
                work.push_back({&level, stem, *gt});
        }
    if (!missing.empty())
    {
        std::string msg = "no ground truth for:";
        for (const auto& m : missing)
            msg += " " + m;
        throw Error(msg);
    }
    if (work.empty())
        throw Error("no prediction stacks found");

    BenchmarkReport report;
    report.agg = agg;
    report.rows.resize(work.size());
    parallel_for(work.size(), jobs, [&](std::size_t i) {
        const auto& job = work[i];
        const ProbStack stack = read_probstack(job.level->dir, job.stem);
        auto gt = read_png_gray8(job.gt);
        if (gt.width() != stack.W || gt.height() != stack.H)
            throw Error(job.gt.string() + ": mask is " + std::to_string(gt.width()) + "x" + std::to_string(gt.height()) +
                        ", predictions are " + std::to_string(stack.W) + "x" + std::to_string(stack.H));
        if (stack.C == 2)
            for (auto& v : gt.values())
                v = v != 0 ? 1 : 0;
        const auto mean = predictive_mean(stack);
        const auto metrics = segmentation_metrics(argmax_classes(mean), gt, stack.C);
        const auto unc = decompose(stack);
        auto& row = report.rows[i];
        row.level_label = job.level->label;
        row.noise_level = job.level->level;
        row.image_stem = job.stem;
        row.source_tag = stack.source_tag;
        row.accuracy = metrics.accuracy;
        row.f1_macro = metrics.f1_macro;
        row.pu = aggregate(unc.pu, agg);
        row.au = aggregate(unc.au, agg);
        row.eu = aggregate(unc.eu, agg);
    });

    for (const auto& level : levels)
    {
        LevelSummary s;
        s.level_label = level.label;
        s.noise_level = level.level;
        std::size_t f1_count = 0;
        for (const auto& r : report.rows)
        {
            if (r.level_label != level.label)
                continue;
            if (s.images == 0)
                s.source_tag = r.source_tag;
            else if (s.source_tag != r.source_tag)
                s.source_tag = "mixed";
            ++s.images;
            s.accuracy += r.accuracy;
            if (!std::isnan(r.f1_macro))
            {
                s.f1_macro += r.f1_macro;
                ++f1_count;
            }
            s.pu += r.pu;
            s.au += r.au;
            s.eu += r.eu;
        }
        if (s.images == 0)
            continue;
        const auto n = static_cast<double>(s.images);
        s.accuracy /= n;
        s.f1_macro = f1_count == 0 ? std::numeric_limits<double>::quiet_NaN() : s.f1_macro / static_cast<double>(f1_count);
        s.pu /= n;
        s.au /= n;
        s.eu /= n;
        report.summaries.push_back(s);
    }
    return report;
}

namespace detail
{

inline std::string csv_number(double v)
{
    if (std::isnan(v))
        return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (const char c : s)
        out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

}  // namespace detail

inline constexpr const char* kReportHeader = "noise_level,image_stem,source_tag,accuracy,f1_macro,pu,au,eu,agg_strategy";

/// Data rows, then one MEAN row per level.
inline std::string report_csv(const BenchmarkReport& r)
{
    using detail::csv_field;
    using detail::csv_number;
    const std::string agg = csv_field(agg_name(r.agg));
    std::string out = std::string(kReportHeader) + "\n";
    for (const auto& row : r.rows)
        out += csv_field(row.level_label) + "," + csv_field(row.image_stem) + "," + csv_field(row.source_tag) + "," +
               csv_number(row.accuracy) + "," + csv_number(row.f1_macro) + "," + csv_number(row.pu) + "," + csv_number(row.au) +
               "," + csv_number(row.eu) + "," + agg + "\n";
    for (const auto& s : r.summaries)
        out += csv_field(s.level_label) + ",MEAN," + csv_field(s.source_tag) + "," + csv_number(s.accuracy) + "," +
               csv_number(s.f1_macro) + "," + csv_number(s.pu) + "," + csv_number(s.au) + "," + csv_number(s.eu) + "," + agg + "\n";
    return out;
}

inline Json report_summary(const BenchmarkReport& r)
{
    const auto num = [](double v) { return std::isnan(v) ? Json(nullptr) : Json(v); };
    Json levels = Json::array();
    for (const auto& s : r.summaries)
        levels.push_back(Json{{"noise_level", s.level_label},
                              {"images", s.images},
                              {"source_tag", s.source_tag},
                              {"accuracy", num(s.accuracy)},
                              {"f1_macro", num(s.f1_macro)},
                              {"pu", num(s.pu)},
                              {"au", num(s.au)},
                              {"eu", num(s.eu)}});
    return Json{{"agg_strategy", agg_name(r.agg)}, {"rows", r.rows.size()}, {"levels", levels}};
}

}  // namespace histosynth
