#pragma once

#include <cmath>
#include <filesystem>
#include <vector>
#include <random>
#include <string>
#include <utility>

#include "histosynth/config.hpp"
#include "histosynth/render.hpp"
#include "histosynth/uq.hpp"
#include "histosynth/scenegen.hpp"

namespace testing_support
{

namespace fs = std::filesystem;

/// A smaller field of view at the default pixel size; keeps render tests fast.
inline histosynth::SceneConfig small_config(std::uint64_t seed, std::uint32_t pixels = 256)
{
    histosynth::SceneConfig c;
    c.image_width = pixels;
    c.image_height = pixels;
    c.world_extent = pixels * 0.5;
    c.master_seed = seed;
    return c;
}

inline histosynth::SceneGraph small_scene(std::uint64_t seed, std::uint32_t pixels = 256)
{
    return histosynth::assemble_scene(histosynth::validate(small_config(seed, pixels)));
}

/// Pixels breaking the mask contract: unknown id, semantic label not the
/// instance's class, a non-nucleus class in either mask, or a label without
/// an instance.
inline std::size_t mask_violations(const histosynth::SceneGraph& scene, const histosynth::RenderOutput& out)
{
    using namespace histosynth;
    std::size_t bad = 0;
    for (std::size_t i = 0; i < out.instance_mask.size(); ++i)
    {
        const auto id = out.instance_mask[i];
        const auto sem = out.semantic_mask[i];
        if (id == 0)
        {
            bad += sem != 0;
            continue;
        }
        const CellInstance* cell = scene.find(id);
        if (!cell || !has_nucleus_label(cell->cell_class) || sem != static_cast<std::uint8_t>(cell->cell_class))
            ++bad;
    }
    return bad;
}

/// Random valid stack: each member pixel is a normalized vector of
/// exponentials raised to a random sharpness, so some pixels are nearly
/// one-hot and some nearly uniform. About one pixel in ten has identical
/// members.
inline histosynth::ProbStack random_stack(histosynth::Rng& rng, std::size_t T, std::size_t C, std::size_t H, std::size_t W)
{
    histosynth::ProbStack s(T, C, H, W);
    std::vector<double> v(C);
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
        {
            const bool shared = rng.uniform() < 0.1;
            for (std::size_t t = 0; t < T; ++t)
            {
                if (shared && t > 0)
                {
                    for (std::size_t c = 0; c < C; ++c)
                        s(t, c, h, w) = s(0, c, h, w);
                    continue;
                }
                const double sharp = std::exp(rng.uniform(-1.0, 3.0));
                double sum = 0.0;
                for (auto& x : v)
                {
                    x = std::pow(-std::log(1.0 - rng.uniform()), sharp);
                    sum += x;
                }
                for (std::size_t c = 0; c < C; ++c)
                    s(t, c, h, w) = static_cast<float>(v[c] / sum);
            }
        }
    return s;
}

/// Central interval [q(a/2), q(1 - a/2)] of Binomial(n, p), where q(u) is the
/// smallest k with CDF(k) >= u. Exact summation of the pmf in log space.
inline std::pair<long, long> binomial_interval(long n, double p, double coverage)
{
    const double tail = (1.0 - coverage) / 2.0;
    double cdf = 0.0;
    long lo = -1, hi = -1;
    for (long k = 0; k <= n; ++k)
    {
        const double logpmf = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
                              (n - k) * std::log1p(-p);
        cdf += std::exp(logpmf);
        if (lo < 0 && cdf >= tail)
            lo = k;
        if (hi < 0 && cdf >= 1.0 - tail)
        {
            hi = k;
            break;
        }
    }
    return {lo, hi < 0 ? n : hi};
}

/// Distance between the mean colour of nucleus-mask pixels and the mean
/// colour of a ring of `ring` pixels around them (square dilation minus every
/// nucleus pixel). Colours in [0,1]^3; Euclidean distance. NaN without nuclei.
inline double nucleus_contrast(const histosynth::RenderOutput& out, int ring = 3)
{
    const auto& inst = out.instance_mask;
    const int w = static_cast<int>(inst.width());
    const int h = static_cast<int>(inst.height());
    std::vector<std::uint8_t> near(inst.size(), 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
        {
            if (inst(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) == 0)
                continue;
            for (int dy = -ring; dy <= ring; ++dy)
                for (int dx = -ring; dx <= ring; ++dx)
                {
                    const int xx = x + dx, yy = y + dy;
                    if (xx >= 0 && yy >= 0 && xx < w && yy < h)
                        near[static_cast<std::size_t>(yy * w + xx)] = 1;
                }
        }
    double in[3] = {0, 0, 0}, around[3] = {0, 0, 0};
    std::size_t n_in = 0, n_around = 0;
    for (std::size_t i = 0; i < inst.size(); ++i)
    {
        const auto& c = out.image[i];
        const double rgb[3] = {c.r / 255.0, c.g / 255.0, c.b / 255.0};
        double* acc = inst[i] != 0 ? in : (near[i] ? around : nullptr);
        if (!acc)
            continue;
        (inst[i] != 0 ? n_in : n_around) += 1;
        for (int k = 0; k < 3; ++k)
            acc[k] += rgb[k];
    }
    if (n_in == 0 || n_around == 0)
        return std::nan("");
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k)
    {
        const double d = in[k] / n_in - around[k] / n_around;
        d2 += d * d;
    }
    return std::sqrt(d2);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir
{
public:
    explicit TempDir(const std::string& tag)
    {
        std::random_device rd;
        path_ = fs::temp_directory_path() / ("histosynth_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

}  // namespace testing_support
