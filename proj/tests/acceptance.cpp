// One PASS/FAIL line per release criterion; exit status 1 if any fails.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <sstream>
#include <sys/wait.h>

#include "histosynth/labelnoise.hpp"
#include "histosynth/mockpred.hpp"
#include "histosynth/perturb.hpp"
#include "support.hpp"

using namespace histosynth;
namespace ts = testing_support;

namespace
{

// Pinned tolerances.
constexpr double kIdentityTol = 1e-5;
constexpr double kEntropyBoundTol = 1e-6;
constexpr double kIdentityBudgetSeconds = 10.0;
constexpr double kHandTol = 1e-3;
constexpr double kSceneBudgetSeconds = 10.0;
constexpr double kContrastAtFull = 0.05;
constexpr double kAggTol = 1e-7;
constexpr double kFlipLevel = 0.3;
constexpr double kFlipCoverage = 0.99;
constexpr double kMinAccuracyDrop = 0.20;
constexpr double kMaxRelativeEuChange = 0.10;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome
{
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double mean_of(const Plane<float>& m)
{
    double s = 0;
    for (const float v : m.values())
        s += v;
    return s / static_cast<double>(m.size());
}

Outcome identity()
{
    const auto t0 = Clock::now();
    Rng rng(derive_seed(1, "acceptance-identity", 0));
    double worst = 0.0;
    std::size_t bound_violations = 0;
    for (int k = 0; k < 1000; ++k)
    {
        const std::size_t T = 2 + rng.below(7);
        const std::size_t C = 2 + rng.below(5);
        const auto u = decompose(ts::random_stack(rng, T, C, 16, 16));
        const double lnC = std::log(static_cast<double>(C));
        for (std::size_t i = 0; i < u.pu.size(); ++i)
        {
            const double pu = u.pu[i], au = u.au[i], eu = u.eu[i];
            worst = std::max(worst, std::abs(pu - (au + eu)));
            if (au < 0 || eu < 0 || au > pu || eu > pu || pu > lnC + kEntropyBoundTol)
                ++bound_violations;
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= kIdentityTol && bound_violations == 0 && secs < kIdentityBudgetSeconds,
            fmt("max |pu-(au+eu)| = %.3g, bound violations = %zu, %.2f s", worst, bound_violations, secs)};
}

Outcome hand_values()
{
    ProbStack s(2, 2, 1, 1);
    s(0, 0, 0, 0) = 0.8f;
    s(0, 1, 0, 0) = 0.2f;
    s(1, 0, 0, 0) = 0.6f;
    s(1, 1, 0, 0) = 0.4f;
    const auto u = decompose(s);
    const bool ok = std::abs(u.pu[0] - 0.6109) <= kHandTol && std::abs(u.au[0] - 0.5867) <= kHandTol &&
                    std::abs(u.eu[0] - 0.0242) <= kHandTol;
    return {ok, fmt("pu = %.4f, au = %.4f, eu = %.4f", u.pu[0], u.au[0], u.eu[0])};
}

std::map<std::string, std::string> tree(const fs::path& root)
{
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            files[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
    return files;
}

Outcome determinism()
{
    ts::TempDir dir("acceptance_det");
    double worst = 0.0;
    for (const char* name : {"a", "b"})
    {
        const std::string cmd =
            std::string(HISTOSYNTH_CLI_PATH) + " generate --count 5 --seed 42 --out " + (dir / name).string() + " >/dev/null";
        const auto t0 = Clock::now();
        const int status = std::system(cmd.c_str());
        worst = std::max(worst, seconds_since(t0) / 5.0);
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
            return {false, std::string("generate failed for run ") + name};
    }
    const auto a = tree(dir / "a");
    const auto b = tree(dir / "b");
    std::size_t differing = 0;
    for (const auto& [rel, bytes] : a)
        differing += !b.contains(rel) || b.at(rel) != bytes;
    differing += b.size() > a.size() ? b.size() - a.size() : 0;
    return {differing == 0 && a.size() == 1 + 5 * 7 && worst <= kSceneBudgetSeconds,
            fmt("%zu files, %zu differ, %.2f s per 512x512 scene on %u thread(s)", a.size(), differing, worst, default_jobs())};
}

Outcome mask_exactness()
{
    std::size_t contract = 0, hidden_classes = 0, blur_changes = 0, instances = 0;
    for (std::uint64_t i = 0; i < 100; ++i)
    {
        SceneConfig cfg;
        cfg.master_seed = derive_seed(4, "acceptance-masks", i);
        const auto scene = assemble_scene(validate(cfg));
        const auto out = render_scene(scene);
        contract += ts::mask_violations(scene, out);
        for (const auto v : out.semantic_mask.values())
            hidden_classes += v == static_cast<std::uint8_t>(CellClass::Goblet) || v == static_cast<std::uint8_t>(CellClass::BloodCell);
        instances += class_map_from_masks(out.instance_mask, out.semantic_mask).size();

        SceneGraph blurred = scene;
        blurred.config.blur_strength = scene.config.blur_strength * 0.5;
        const auto other = render_scene(blurred);
        blur_changes += !(other.semantic_mask == out.semantic_mask) + !(other.instance_mask == out.instance_mask) +
                        !(other.depth_map == out.depth_map);
        if (other.image == out.image)
            return {false, "changing blur_strength did not change the image; invariance check is vacuous"};
    }
    return {contract == 0 && hidden_classes == 0 && blur_changes == 0,
            fmt("100 scenes, %zu instances; contract violations %zu, goblet/blood labels %zu, masks changed by blur %zu", instances,
                contract, hidden_classes, blur_changes)};
}

Outcome nuclei_slider()
{
    const double levels[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    double sums[5] = {0, 0, 0, 0, 0};
    std::size_t increases = 0, scenes = 0;
    for (std::uint64_t i = 0; i < 20; ++i)
    {
        SceneConfig cfg;
        cfg.master_seed = derive_seed(5, "acceptance-nuclei", i);
        const auto scene = assemble_scene(validate(cfg));
        double prev = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 5; ++k)
        {
            const auto changed = apply_perturbation(scene, {PerturbKind::NucleiIntensity, levels[k], 0});
            const double c = ts::nucleus_contrast(render_scene(changed));
            if (std::isnan(c))
                return {false, fmt("scene %llu has no visible nuclei", static_cast<unsigned long long>(i))};
            increases += c > prev;
            prev = c;
            sums[k] += c;
        }
        ++scenes;
    }
    const double full = sums[4] / scenes;
    return {increases == 0 && full < kContrastAtFull,
            fmt("mean contrast %.3f/%.3f/%.3f/%.3f/%.3f, %zu increases", sums[0] / scenes, sums[1] / scenes, sums[2] / scenes,
                sums[3] / scenes, full, increases)};
}

std::size_t blood_count(const SceneGraph& s)
{
    return static_cast<std::size_t>(
        std::count_if(s.cells.begin(), s.cells.end(), [](const CellInstance& c) { return c.cell_class == CellClass::BloodCell; }));
}

Outcome blood_slider()
{
    std::size_t count_errors = 0, mask_changes = 0;
    for (std::uint64_t i = 0; i < 5; ++i)
    {
        SceneConfig cfg;
        cfg.master_seed = derive_seed(6, "acceptance-blood", i);
        const auto scene = assemble_scene(validate(cfg));
        count_errors += blood_count(scene) != cfg.blood_cell_baseline;
        std::optional<RenderOutput> first;
        for (const double level : {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0})
        {
            const auto changed = apply_perturbation(scene, {PerturbKind::BloodStain, level, derive_seed(cfg.master_seed, "perturb", 0)});
            count_errors += blood_count(changed) != cfg.blood_cell_baseline + static_cast<std::size_t>(std::lround(level * 150));
            const auto out = render_scene(changed);
            if (!first)
                first = out;
            mask_changes += !(out.semantic_mask == first->semantic_mask) + !(out.instance_mask == first->instance_mask);
        }
    }
    return {count_errors == 0 && mask_changes == 0,
            fmt("5 scenes x 7 levels: %zu count mismatches, %zu mask changes", count_errors, mask_changes)};
}

Outcome flip_rates()
{
    struct Image
    {
        Plane<std::uint16_t> instance;
        ClassMap classes;
    };
    std::vector<Image> images;
    std::size_t n = 0;
    for (std::uint64_t i = 0; n < 1000; ++i)
    {
        SceneConfig cfg;
        cfg.master_seed = derive_seed(7, "acceptance-flip", i);
        const auto out = render_scene(assemble_scene(validate(cfg)));
        auto classes = class_map_from_masks(out.instance_mask, out.semantic_mask);
        n += classes.size();
        images.push_back({out.instance_mask, std::move(classes)});
    }
    const auto flips = [&](double level, std::uint64_t seed) {
        std::size_t changed = 0;
        for (std::size_t k = 0; k < images.size(); ++k)
        {
            LabelNoiseSpec spec;
            spec.level = level;
            spec.seed = derive_seed(seed, "image", k);
            const auto noisy = corrupt_semantic(images[k].instance, images[k].classes, spec);
            for (const auto& [id, cls] : images[k].classes)
                changed += noisy.at(id) != cls;
        }
        return changed;
    };
    const auto [lo, hi] = ts::binomial_interval(static_cast<long>(n), kFlipLevel, kFlipCoverage);
    std::size_t outside = 0, lowest = n, highest = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed)
    {
        const std::size_t c = flips(kFlipLevel, seed);
        lowest = std::min(lowest, c);
        highest = std::max(highest, c);
        outside += static_cast<long>(c) < lo || static_cast<long>(c) > hi;
    }
    const std::size_t at_zero = flips(0.0, 99);
    const std::size_t at_one = flips(1.0, 99);
    return {outside == 0 && at_zero == 0 && at_one == n,
            fmt("%zu instances in %zu images; level 0.3 counts %zu..%zu vs interval [%ld, %ld], %zu of 50 seeds outside; "
                "level 0 flips %zu, level 1 flips %zu",
                n, images.size(), lowest, highest, lo, hi, outside, at_zero, at_one)};
}

Outcome aggregation()
{
    Rng rng(derive_seed(8, "acceptance-agg", 0));
    double worst = 0.0;
    for (int k = 0; k < 100; ++k)
    {
        const std::size_t side = 1 + rng.below(64);
        Plane<float> m(side, side);
        for (auto& v : m.values())
            v = static_cast<float>(rng.uniform());
        const double mean = aggregate(m, AggregationSpec::image_mean());
        worst = std::max(worst, std::abs(aggregate(m, AggregationSpec::threshold_mean(0.0)) - mean));
        worst = std::max(worst, std::abs(aggregate(m, AggregationSpec::patch_max(side, side)) - mean));
    }
    Plane<float> ex(4, 1);
    ex[0] = 0.1f;
    ex[1] = 0.2f;
    ex[2] = 0.3f;
    ex[3] = 0.4f;
    const double worked = aggregate(ex, AggregationSpec::threshold_mean(0.5));
    return {worst <= kAggTol && std::abs(worked - 0.3) <= kAggTol,
            fmt("max deviation from image mean %.3g; worked example %.7f", worst, worked)};
}

Outcome mockpred()
{
    std::vector<Plane<std::uint8_t>> gts;
    for (std::uint64_t i = 0; i < 2; ++i)
    {
        SceneConfig cfg;
        cfg.master_seed = derive_seed(9, "acceptance-mock", i);
        gts.push_back(render_scene(assemble_scene(validate(cfg))).semantic_mask);
    }
    struct Stats
    {
        double accuracy = 0, au = 0, eu = 0;
    };
    const auto run = [&](const MockSpec& base) {
        Stats s;
        for (std::size_t k = 0; k < gts.size(); ++k)
        {
            MockSpec spec = base;
            spec.seed = derive_seed(base.seed, "image", k);
            const auto stack = generate_stack(gts[k], spec);
            const auto u = decompose(stack);
            s.au += mean_of(u.au) / gts.size();
            s.eu += mean_of(u.eu) / gts.size();
            s.accuracy += segmentation_metrics(argmax_classes(predictive_mean(stack)), gts[k], spec.C).accuracy / gts.size();
        }
        return s;
    };
    std::ostringstream detail;
    bool ok = true;
    double prev = -1;
    detail << "EU over jitter:";
    for (const double jitter : {0.0, 0.5, 1.0, 2.0})
    {
        MockSpec spec;
        spec.jitter = jitter;
        const double eu = run(spec).eu;
        ok = ok && eu > prev;
        prev = eu;
        detail << " " << fmt("%.3g", eu);
    }
    prev = -1;
    detail << "; AU over softness:";
    for (const double softness : {0.0, 0.5, 1.0, 2.0})
    {
        MockSpec spec;
        spec.softness = softness;
        const double au = run(spec).au;
        ok = ok && au > prev;
        prev = au;
        detail << " " << fmt("%.3g", au);
    }
    MockSpec base;
    base.softness = 0.5;
    base.jitter = 1.0;
    const Stats clean = run(base);
    MockSpec confused = base;
    std::vector<std::vector<double>> m(base.C, std::vector<double>(base.C, 0.0));
    for (std::size_t c = 0; c < base.C; ++c)
    {
        m[c][c] = 0.6;
        m[c][(c + 1) % base.C] = 0.4;
    }
    confused.confusion = m;
    const Stats noisy = run(confused);
    const double drop = clean.accuracy - noisy.accuracy;
    const double eu_change = std::abs(noisy.eu - clean.eu) / clean.eu;
    ok = ok && drop >= kMinAccuracyDrop && eu_change <= kMaxRelativeEuChange;
    detail << fmt("; confusion: accuracy %.3f -> %.3f, mean EU %.3g -> %.3g (%.1f%%)", clean.accuracy, noisy.accuracy, clean.eu,
                  noisy.eu, 100 * eu_change);
    return {ok, detail.str()};
}

}  // namespace

int main()
{
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"decomposition identity and bounds", identity},
        {"decomposition hand values", hand_values},
        {"generate determinism and runtime", determinism},
        {"mask exactness", mask_exactness},
        {"nuclei-intensity slider", nuclei_slider},
        {"blood-stain slider", blood_slider},
        {"label-noise flip rates", flip_rates},
        {"aggregation degeneracies", aggregation},
        {"mock prediction disentanglement", mockpred},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria)
    {
        Outcome o;
        const auto t0 = Clock::now();
        try
        {
            o = check();
        }
        catch (const std::exception& e)
        {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("%s  %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed\n", failures, std::size(criteria));
    return failures == 0 ? 0 : 1;
}
