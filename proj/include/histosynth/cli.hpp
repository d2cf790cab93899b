// Command-line driver: generate, perturb, labelnoise, mockpred, evaluate,
// and replay from a run manifest.
#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "histosynth/config.hpp"
#include "histosynth/core.hpp"
#include "histosynth/io.hpp"
#include "histosynth/labelnoise.hpp"
#include "histosynth/mockpred.hpp"
#include "histosynth/parallel.hpp"
#include "histosynth/perturb.hpp"
#include "histosynth/render.hpp"
#include "histosynth/scenegen.hpp"
#include "histosynth/uq.hpp"

namespace histosynth
{

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kJobsEnv = "HISTOSYNTH_JOBS";
inline constexpr const char* kOutRootEnv = "HISTOSYNTH_OUT_ROOT";
inline constexpr const char* kManifestName = "manifest.json";

namespace cli
{

/// Relative output paths are placed under $HISTOSYNTH_OUT_ROOT when set.
inline fs::path resolve_out(const fs::path& out)
{
    const char* root = std::getenv(kOutRootEnv);
    if (out.is_relative() && root && *root)
        return fs::path(root) / out;
    return out;
}

inline std::string stem_for(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%05zu", i);
    return buf;
}

/// Scene directories of a dataset: immediate subdirectories holding
/// <name>_sem.png or scene.json, sorted by name.
inline std::vector<fs::path> scene_dirs(const fs::path& dataset)
{
    if (!fs::is_directory(dataset))
        throw Error("not a directory: " + dataset.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dataset))
    {
        if (!e.is_directory())
            continue;
        const auto name = e.path().filename().string();
        if (fs::exists(e.path() / "scene.json") || fs::exists(e.path() / (name + "_sem.png")))
            out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Collects produced files with their content hashes, relative to the run's
/// output directory.
class FileLedger
{
public:
    explicit FileLedger(fs::path root) : root_(std::move(root)) {}

    void add(const fs::path& file)
    {
        const auto hash = hex64(file_hash(file));
        std::lock_guard lock(mutex_);
        files_[fs::relative(file, root_).generic_string()] = hash;
    }

    void add_output_set(const fs::path& dir, const std::string& stem)
    {
        const auto p = output_paths(dir, stem);
        for (const auto& f : {p.image, p.semantic, p.instance, p.depth, p.meta})
            add(f);
    }

    Json json() const
    {
        std::lock_guard lock(mutex_);
        return Json(files_);
    }

private:
    fs::path root_;
    mutable std::mutex mutex_;
    std::map<std::string, std::string> files_;
};

struct Manifest
{
    std::string command;
    std::vector<std::string> argv;
    Json config = nullptr;
    Json seeds = Json::object();
    Json inputs = Json::object();
    Json parameters = Json::object();
};

inline void write_manifest(const fs::path& out_dir, const Manifest& m, const FileLedger& files)
{
    const Json j{{"tool", "histosynth"},
                 {"version", kToolVersion},
                 {"command", m.command},
                 {"argv", m.argv},
                 {"config", m.config},
                 {"seeds", m.seeds},
                 {"inputs", m.inputs},
                 {"parameters", m.parameters},
                 {"outputs", files.json()}};
    write_file_atomic(out_dir / kManifestName, dump_canonical(j));
}

inline void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw Error("cannot create " + dir.string() + ": " + ec.message());
}

inline void copy_file_exact(const fs::path& from, const fs::path& to)
{
    write_file_atomic(to, read_file(from));
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateOptions
{
    std::optional<fs::path> config;
    fs::path out;
    std::size_t count{1};
    std::uint64_t seed{0};
    unsigned jobs{1};
    std::optional<std::string> perturb;
    std::size_t zstack{0};
};

inline int cmd_generate(const GenerateOptions& opt, const std::vector<std::string>& argv, std::ostream& log)
{
    SceneConfig base;
    Json inputs = Json::object();
    if (opt.config)
    {
        base = parse_config(read_file(*opt.config));
        inputs["config"] = {{"path", opt.config->generic_string()}, {"hash", hex64(file_hash(*opt.config))}};
    }
    const auto checked = validate(base);
    std::optional<PerturbationSpec> perturb;
    if (opt.perturb)
        perturb = parse_perturbation(*opt.perturb);

    const fs::path out = resolve_out(opt.out);
    ensure_dir(out);
    FileLedger files(out);
    std::vector<std::uint64_t> seeds(opt.count);
    std::vector<std::uint8_t> created(opt.count, 0);
    const unsigned scene_jobs = std::max(1U, std::min<unsigned>(opt.jobs, static_cast<unsigned>(std::max<std::size_t>(opt.count, 1))));
    const unsigned render_jobs = std::max(1U, opt.jobs / scene_jobs);
    try
    {
        parallel_for(opt.count, scene_jobs, [&](std::size_t i) {
            SceneConfig cfg = *checked;
            cfg.master_seed = derive_seed(opt.seed, "image", i);
            seeds[i] = cfg.master_seed;
            SceneGraph scene = assemble_scene(validate(cfg));
            if (perturb)
            {
                auto spec = *perturb;
                spec.seed = derive_seed(cfg.master_seed, "perturb", perturb->seed);
                scene = apply_perturbation(scene, spec);
            }
            const RenderOptions ro{render_jobs};
            const auto rendered = render_scene(scene, ro);
            const auto stem = stem_for(i);
            const fs::path dir = out / stem;
            created[i] = fs::exists(dir) ? 0 : 1;
            write_outputs(rendered, scene, dir, stem);
            write_file_atomic(dir / "scene.json", serialize_scene(scene));
            write_file_atomic(dir / "scene_config.json", serialize_config(scene.config));
            files.add_output_set(dir, stem);
            files.add(dir / "scene.json");
            files.add(dir / "scene_config.json");
            if (opt.zstack > 0)
            {
                const auto slices = render_zstack(scene, opt.zstack, ro);
                for (std::size_t k = 0; k < slices.size(); ++k)
                {
                    char slice_stem[64];
                    std::snprintf(slice_stem, sizeof slice_stem, "%s_z%03zu", stem.c_str(), k);
                    write_outputs(slices[k], scene, dir / "zstack", slice_stem);
                    files.add_output_set(dir / "zstack", slice_stem);
                }
            }
        });
    }
    catch (...)
    {
        for (std::size_t i = 0; i < opt.count; ++i)
            if (created[i])
            {
                std::error_code ec;
                fs::remove_all(out / stem_for(i), ec);
            }
        throw;
    }

    Manifest m;
    m.command = "generate";
    m.argv = argv;
    m.config = to_json(*checked);
    Json images = Json::array();
    for (std::size_t i = 0; i < opt.count; ++i)
        images.push_back({{"stem", stem_for(i)}, {"master_seed", seeds[i]}});
    m.seeds = {{"base_seed", opt.seed}, {"images", images}};
    m.inputs = inputs;
    m.parameters = {{"count", opt.count}, {"perturb", opt.perturb ? Json(*opt.perturb) : Json(nullptr)}, {"zstack", opt.zstack}};
    write_manifest(out, m, files);
    log << "generated " << opt.count << " scene(s) in " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// perturb
// ---------------------------------------------------------------------------

struct PerturbOptions
{
    fs::path dataset;
    std::string kind;
    std::vector<double> levels;
    fs::path out;
    std::uint64_t seed{0};
    unsigned jobs{1};
};

inline int cmd_perturb(const PerturbOptions& opt, const std::vector<std::string>& argv, std::ostream& log, std::ostream& err)
{
    const PerturbKind kind = perturb_kind_from_name(opt.kind);
    if (opt.levels.empty())
        throw ConfigError("perturb: at least one level is required");
    for (const double l : opt.levels)
        detail::require_level(l);
    const fs::path out = resolve_out(opt.out);
    const auto scenes = scene_dirs(opt.dataset);
    ensure_dir(out);
    FileLedger files(out);

    struct Task
    {
        std::size_t scene;
        std::size_t level;
    };
    std::vector<Task> tasks;
    for (std::size_t s = 0; s < scenes.size(); ++s)
        for (std::size_t l = 0; l < opt.levels.size(); ++l)
            tasks.push_back({s, l});
    std::vector<std::string> errors(tasks.size());
    std::vector<std::uint64_t> seeds(scenes.size(), 0);
    parallel_for(tasks.size(), opt.jobs, [&](std::size_t i) {
        const auto& task = tasks[i];
        const fs::path& src = scenes[task.scene];
        const std::string stem = src.filename().string();
        try
        {
            if (!fs::exists(src / "scene.json"))
                throw Error("missing scene.json in " + src.string());
            const SceneGraph scene = parse_scene(read_file(src / "scene.json"));
            PerturbationSpec spec{kind, opt.levels[task.level], derive_seed(scene.config.master_seed, "perturb", opt.seed)};
            seeds[task.scene] = spec.seed;
            const SceneGraph changed = apply_perturbation(scene, spec);
            const auto rendered = render_scene(changed, RenderOptions{1});
            const fs::path dir = out / level_dir_name(spec.level) / stem;
            ensure_dir(dir);
            const auto paths = output_paths(dir, stem);
            const auto orig = output_paths(src, stem);
            write_png(paths.image, rendered.image);
            // masks are perturbation-invariant: carry the originals over
            copy_file_exact(orig.semantic, paths.semantic);
            copy_file_exact(orig.instance, paths.instance);
            copy_file_exact(orig.depth, paths.depth);
            write_file_atomic(paths.meta, dump_canonical(output_meta(rendered, changed)));
            write_file_atomic(dir / "scene.json", serialize_scene(changed));
            write_file_atomic(dir / "scene_config.json", serialize_config(changed.config));
            files.add_output_set(dir, stem);
            files.add(dir / "scene.json");
            files.add(dir / "scene_config.json");
        }
        catch (const std::exception& e)
        {
            errors[i] = stem + " @ " + level_dir_name(opt.levels[task.level]) + ": " + e.what();
        }
    });

    bool failed = false;
    for (const auto& e : errors)
        if (!e.empty())
        {
            err << "error: " << e << "\n";
            failed = true;
        }
    if (failed)
        return 1;

    Manifest m;
    m.command = "perturb";
    m.argv = argv;
    Json scene_seeds = Json::object();
    for (std::size_t s = 0; s < scenes.size(); ++s)
        scene_seeds[scenes[s].filename().string()] = seeds[s];
    m.seeds = {{"seed", opt.seed}, {"placement", scene_seeds}};
    m.inputs = {{"dataset", opt.dataset.generic_string()}};
    m.parameters = {{"kind", opt.kind}, {"levels", opt.levels}};
    write_manifest(out, m, files);
    log << "perturbed " << scenes.size() << " scene(s) x " << opt.levels.size() << " level(s) into " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// labelnoise
// ---------------------------------------------------------------------------

struct LabelNoiseOptions
{
    fs::path dataset;
    fs::path out;
    std::string task{"semseg-flip"};
    LabelNoiseSpec spec;
    unsigned jobs{1};
};

inline LabelNoiseTask task_from_name(const std::string& name)
{
    if (name == "semseg-flip")
        return LabelNoiseTask::SemSegFlip;
    if (name == "fgbg-shape")
        return LabelNoiseTask::FgBgShape;
    throw ConfigError("unknown label-noise task '" + name + "' (expected semseg-flip or fgbg-shape)");
}

inline int cmd_labelnoise(const LabelNoiseOptions& opt, const std::vector<std::string>& argv, std::ostream& log, std::ostream& err)
{
    LabelNoiseSpec spec = opt.spec;
    spec.task = task_from_name(opt.task);
    validate(spec);
    const fs::path out = resolve_out(opt.out);
    const auto scenes = scene_dirs(opt.dataset);
    ensure_dir(out);
    FileLedger files(out);
    std::vector<std::string> errors(scenes.size());
    parallel_for(scenes.size(), opt.jobs, [&](std::size_t i) {
        const fs::path& src = scenes[i];
        const std::string stem = src.filename().string();
        try
        {
            const auto orig = output_paths(src, stem);
            const auto inst = read_png_gray16(orig.instance);
            const auto sem = read_png_gray8(orig.semantic);
            const auto classes = class_map_from_masks(inst, sem);
            LabelNoiseSpec local = spec;
            local.seed = derive_seed(spec.seed, stem, 0);
            Plane<std::uint16_t> new_inst = inst;
            ClassMap new_classes = classes;
            if (spec.task == LabelNoiseTask::SemSegFlip)
                new_classes = corrupt_semantic(inst, classes, local);
            else
                new_inst = corrupt_shapes(inst, local);
            const auto new_sem = semantic_from_classes(new_inst, new_classes);
            const fs::path dir = out / stem;
            ensure_dir(dir);
            const auto paths = output_paths(dir, stem);
            if (fs::exists(orig.image))
            {
                copy_file_exact(orig.image, paths.image);
                files.add(paths.image);
            }
            write_png(paths.semantic, new_sem);
            write_png(paths.instance, new_inst);
            write_png(dir / (stem + "_fgbg.png"), derive_fgbg(new_sem));
            files.add(paths.semantic);
            files.add(paths.instance);
            files.add(dir / (stem + "_fgbg.png"));
        }
        catch (const std::exception& e)
        {
            errors[i] = stem + ": " + e.what();
        }
    });
    bool failed = false;
    for (const auto& e : errors)
        if (!e.empty())
        {
            err << "error: " << e << "\n";
            failed = true;
        }
    if (failed)
        return 1;

    Manifest m;
    m.command = "labelnoise";
    m.argv = argv;
    m.seeds = {{"seed", spec.seed}};
    m.inputs = {{"dataset", opt.dataset.generic_string()}};
    m.parameters = to_json(spec);
    write_manifest(out, m, files);
    log << "label noise (" << opt.task << ", level " << spec.level << ") on " << scenes.size() << " scene(s) into " << out.string()
        << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// mockpred
// ---------------------------------------------------------------------------

struct MockOptions
{
    fs::path gt;
    fs::path out;
    MockSpec spec;
    std::optional<fs::path> confusion;
    unsigned jobs{1};
};

/// Ground-truth semantic masks of a directory: per-scene subdirectories or
/// flat <stem>_sem.png files. Returns (stem, path) sorted by stem.
inline std::vector<std::pair<std::string, fs::path>> semantic_masks(const fs::path& root)
{
    std::vector<std::pair<std::string, fs::path>> out;
    if (!fs::is_directory(root))
        throw Error("not a directory: " + root.string());
    const std::string suffix = "_sem.png";
    for (const auto& e : fs::directory_iterator(root))
    {
        const auto name = e.path().filename().string();
        if (e.is_directory() && fs::exists(e.path() / (name + suffix)))
            out.emplace_back(name, e.path() / (name + suffix));
        else if (e.is_regular_file() && name.size() > suffix.size() && name.ends_with(suffix))
            out.emplace_back(name.substr(0, name.size() - suffix.size()), e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline int cmd_mockpred(const MockOptions& opt, const std::vector<std::string>& argv, std::ostream& log)
{
    MockSpec spec = opt.spec;
    Json inputs{{"gt", opt.gt.generic_string()}};
    if (opt.confusion)
    {
        const auto text = read_file(*opt.confusion);
        try
        {
            spec.confusion = Json::parse(text).get<std::vector<std::vector<double>>>();
        }
        catch (const Json::exception& e)
        {
            throw ConfigError(opt.confusion->string() + ": " + e.what());
        }
        inputs["confusion"] = {{"path", opt.confusion->generic_string()}, {"hash", hex64(fnv1a64(text))}};
    }
    validate(spec);
    const auto masks = semantic_masks(opt.gt);
    if (masks.empty())
        throw Error("no *_sem.png masks under " + opt.gt.string());
    const fs::path out = resolve_out(opt.out);
    ensure_dir(out);
    FileLedger files(out);
    parallel_for(masks.size(), opt.jobs, [&](std::size_t i) {
        const auto& [stem, path] = masks[i];
        auto gt = read_png_gray8(path);
        if (spec.C == 2)
            for (auto& v : gt.values())
                v = v != 0 ? 1 : 0;
        MockSpec local = spec;
        local.seed = derive_seed(spec.seed, stem, 0);
        const auto stack = generate_stack(gt, local);
        write_probstack(out, stem, stack);
        files.add(probs_bin_path(out, stem));
        files.add(probs_json_path(out, stem));
    });

    Manifest m;
    m.command = "mockpred";
    m.argv = argv;
    m.seeds = {{"seed", spec.seed}};
    m.inputs = inputs;
    m.parameters = {{"T", spec.T},
                    {"C", spec.C},
                    {"softness", spec.softness},
                    {"jitter", spec.jitter},
                    {"boundary_sigma", spec.boundary_sigma},
                    {"source_tag", spec.source_tag}};
    write_manifest(out, m, files);
    log << "wrote " << masks.size() << " prediction stack(s) to " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOptions
{
    fs::path pred;
    fs::path gt;
    std::string agg{"threshold-mean:0.9"};
    fs::path out_csv;
    std::optional<fs::path> summary;
    unsigned jobs{1};
};

inline int cmd_evaluate(const EvaluateOptions& opt, const std::vector<std::string>& argv, std::ostream& log)
{
    const auto agg = parse_aggregation(opt.agg);
    const auto report = benchmark_run(discover_levels(opt.pred), opt.gt, agg, opt.jobs);
    const fs::path csv = resolve_out(opt.out_csv);
    if (csv.has_parent_path())
        ensure_dir(csv.parent_path());
    fs::path summary = opt.summary ? resolve_out(*opt.summary) : fs::path(csv).replace_extension(".json");
    write_file_atomic(csv, report_csv(report));
    Json sj = report_summary(report);
    sj["argv"] = argv;
    write_file_atomic(summary, dump_canonical(sj));
    log << "level        images  accuracy  pu        au        eu\n";
    for (const auto& s : report.summaries)
    {
        char line[160];
        std::snprintf(line, sizeof line, "%-12s %6zu  %.6f  %.6f  %.6f  %.6f\n", s.level_label.c_str(), s.images, s.accuracy, s.pu,
                      s.au, s.eu);
        log << line;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& log, std::ostream& err);

/// The argument list minus the output path and worker count, so manifests do
/// not depend on where or how wide a run was executed.
inline std::vector<std::string> recorded_args(const std::vector<std::string>& args)
{
    std::vector<std::string> kept;
    for (std::size_t i = 0; i < args.size(); ++i)
    {
        const auto& a = args[i];
        if (a == "--out" || a == "-o" || a == "--jobs" || a == "-j")
            ++i;
        else if (a.starts_with("--out=") || a.starts_with("--jobs="))
            continue;
        else if (a.size() > 2 && !a.starts_with("--") && (a.starts_with("-o") || a.starts_with("-j")))
            continue;
        else
            kept.push_back(a);
    }
    return kept;
}

inline int cmd_replay(const fs::path& manifest_path, const std::optional<fs::path>& out_override, std::ostream& log, std::ostream& err)
{
    Json m;
    try
    {
        m = Json::parse(read_file(manifest_path));
    }
    catch (const Json::exception& e)
    {
        throw Error(manifest_path.string() + ": " + e.what());
    }
    auto argv = m.at("argv").get<std::vector<std::string>>();
    argv.push_back("--out");
    argv.push_back((out_override ? *out_override : manifest_path.parent_path()).string());
    return run(argv, log, err);
}

inline int run(const std::vector<std::string>& args, std::ostream& log, std::ostream& err)
{
    CLI::App app{"Procedural histology scenes with exact masks, noise sliders and an uncertainty benchmark", "histosynth"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    unsigned jobs = default_jobs();
    const auto add_jobs = [&](CLI::App* sub) {
        sub->add_option("-j,--jobs", jobs, "Worker threads")->envname(kJobsEnv)->check(CLI::PositiveNumber);
    };

    GenerateOptions gen;
    std::string gen_config;
    auto* g = app.add_subcommand("generate", "Render scenes from a config");
    g->add_option("-c,--config", gen_config, "Scene config (JSON); defaults when omitted")->check(CLI::ExistingFile);
    g->add_option("-o,--out", gen.out, "Output directory")->required();
    g->add_option("-n,--count", gen.count, "Number of scenes")->default_val(1);
    g->add_option("-s,--seed", gen.seed, "Base seed")->default_val(0);
    g->add_option("--perturb", gen.perturb, "Perturbation, e.g. kind=nuclei-intensity,level=0.6");
    g->add_option("--zstack", gen.zstack, "Also render this many sub-slab slices per scene")->default_val(0);
    add_jobs(g);

    PerturbOptions pert;
    auto* p = app.add_subcommand("perturb", "Re-render a dataset under an image perturbation");
    p->add_option("-d,--dataset", pert.dataset, "Dataset written by generate")->required()->check(CLI::ExistingDirectory);
    p->add_option("-k,--kind", pert.kind, "nuclei-intensity | blood-stain")->required();
    p->add_option("-l,--levels", pert.levels, "Comma-separated levels in [0,1]")->delimiter(',')->default_str("0,0.25,0.5,0.75,1");
    p->add_option("-o,--out", pert.out, "Output directory")->required();
    p->add_option("-s,--seed", pert.seed, "Placement seed")->default_val(0);
    add_jobs(p);

    LabelNoiseOptions ln;
    double scale_range[2] = {ln.spec.scale_min, ln.spec.scale_max};
    std::vector<double> op_weights(ln.spec.op_weights.begin(), ln.spec.op_weights.end());
    auto* l = app.add_subcommand("labelnoise", "Corrupt ground-truth masks");
    l->add_option("-d,--dataset", ln.dataset, "Dataset written by generate")->required()->check(CLI::ExistingDirectory);
    l->add_option("-o,--out", ln.out, "Output directory")->required();
    l->add_option("-t,--task", ln.task, "semseg-flip | fgbg-shape")->default_val("semseg-flip");
    l->add_option("--level", ln.spec.level, "Per-instance corruption probability")->required();
    l->add_option("-s,--seed", ln.spec.seed, "Seed")->default_val(0);
    l->add_option("--shift-max", ln.spec.shift_max, "Max shift, fraction of the equivalent diameter")->default_val(ln.spec.shift_max);
    l->add_option("--scale-min", scale_range[0], "Smallest scale factor")->default_val(scale_range[0]);
    l->add_option("--scale-max", scale_range[1], "Largest scale factor")->default_val(scale_range[1]);
    l->add_option("--elastic-sigma", ln.spec.elastic_sigma, "Displacement smoothing (px)")->default_val(ln.spec.elastic_sigma);
    l->add_option("--elastic-alpha", ln.spec.elastic_alpha, "Largest displacement (px)")->default_val(ln.spec.elastic_alpha);
    l->add_option("--op-weights", op_weights, "Weights of shift,scale,elastic,drop")->delimiter(',')->expected(4);
    add_jobs(l);

    MockOptions mock;
    std::string mock_confusion;
    auto* k = app.add_subcommand("mockpred", "Write synthetic prediction stacks from ground truth");
    k->add_option("-g,--gt", mock.gt, "Directory with *_sem.png masks")->required()->check(CLI::ExistingDirectory);
    k->add_option("-o,--out", mock.out, "Output directory")->required();
    k->add_option("-T,--samples", mock.spec.T, "Members per stack")->default_val(mock.spec.T);
    k->add_option("-C,--classes", mock.spec.C, "Classes (2 = foreground/background)")->default_val(mock.spec.C);
    k->add_option("--softness", mock.spec.softness, "Within-member spread")->default_val(0.0);
    k->add_option("--jitter", mock.spec.jitter, "Between-member logit noise")->default_val(0.0);
    k->add_option("--boundary-sigma", mock.spec.boundary_sigma, "Label smoothing (px)")->default_val(0.0);
    k->add_option("--confusion", mock_confusion, "JSON C x C row-stochastic matrix")->check(CLI::ExistingFile);
    k->add_option("--source-tag", mock.spec.source_tag, "Tag stored in each stack")->default_val("mock");
    k->add_option("-s,--seed", mock.spec.seed, "Seed")->default_val(0);
    add_jobs(k);

    EvaluateOptions ev;
    std::string ev_summary;
    auto* e = app.add_subcommand("evaluate", "Score prediction stacks against ground truth");
    e->add_option("-p,--pred", ev.pred, "Prediction root (level_<x>/ subdirectories or flat)")->required()->check(CLI::ExistingDirectory);
    e->add_option("-g,--gt", ev.gt, "Ground-truth root")->required()->check(CLI::ExistingDirectory);
    e->add_option("-a,--agg", ev.agg, "image-mean | patch-max[:patch[:stride]] | threshold-mean[:p]")->default_val(ev.agg);
    e->add_option("-o,--out", ev.out_csv, "Report CSV")->required();
    e->add_option("--summary", ev_summary, "Summary JSON (default: CSV path with .json)");
    add_jobs(e);

    std::string manifest;
    std::string replay_out;
    auto* r = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
    r->add_option("manifest", manifest, "manifest.json")->required()->check(CLI::ExistingFile);
    r->add_option("-o,--out", replay_out, "Write to this directory instead");

    const auto recorded = recorded_args(args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try
    {
        app.parse(reversed);
    }
    catch (const CLI::ParseError& pe)
    {
        return app.exit(pe, log, err);
    }

    try
    {
        if (g->parsed())
        {
            gen.jobs = jobs;
            if (!gen_config.empty())
                gen.config = gen_config;
            return cmd_generate(gen, recorded, log);
        }
        if (p->parsed())
        {
            pert.jobs = jobs;
            return cmd_perturb(pert, recorded, log, err);
        }
        if (l->parsed())
        {
            ln.jobs = jobs;
            ln.spec.scale_min = scale_range[0];
            ln.spec.scale_max = scale_range[1];
            if (!op_weights.empty())
                std::copy(op_weights.begin(), op_weights.end(), ln.spec.op_weights.begin());
            return cmd_labelnoise(ln, recorded, log, err);
        }
        if (k->parsed())
        {
            mock.jobs = jobs;
            if (!mock_confusion.empty())
                mock.confusion = mock_confusion;
            return cmd_mockpred(mock, recorded, log);
        }
        if (e->parsed())
        {
            ev.jobs = jobs;
            if (!ev_summary.empty())
                ev.summary = ev_summary;
            return cmd_evaluate(ev, recorded, log);
        }
        if (r->parsed())
            return cmd_replay(manifest, replay_out.empty() ? std::nullopt : std::optional<fs::path>(replay_out), log, err);
    }
    catch (const ConfigError& ce)
    {
        err << "config error: " << ce.what() << "\n";
        return 2;
    }
    catch (const std::exception& ex)
    {
        err << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace cli

}  // namespace histosynth
