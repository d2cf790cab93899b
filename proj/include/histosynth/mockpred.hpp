// Synthetic softmax stacks derived from ground truth, with separate knobs
// for within-member spread (softness) and between-member spread (jitter).
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "histosynth/config.hpp"
#include "histosynth/core.hpp"
#include "histosynth/filter.hpp"
#include "histosynth/uq.hpp"

namespace histosynth
{

inline constexpr double kMockLogFloor = -12.0;  // log-probability given to absent classes

struct MockSpec
{
    std::size_t T{8};
    std::size_t C{kNucleusClassCount + 1};  // background + nucleus classes
    double softness{0.0};
    double jitter{0.0};
    std::optional<std::vector<std::vector<double>>> confusion;  // C x C, rows = true label
    double boundary_sigma{0.0};  // pixels
    std::uint64_t seed{0};
    std::vector<std::string> class_names;  // defaults from C when empty
    std::string source_tag{"mock"};
};

inline std::vector<std::string> default_class_names(std::size_t C)
{
    if (C == 2)
        return {"background", "foreground"};
    std::vector<std::string> names{"background"};
    for (std::size_t c = 1; c < C; ++c)
        names.push_back(c <= kNucleusClassCount ? std::string(class_name(class_from_index(c - 1))) : "class_" + std::to_string(c));
    return names;
}

inline void validate(const MockSpec& s)
{
    using detail::require;
    require(s.T >= 1, "T", "must be >= 1");
    require(s.C >= 2 && s.C <= 256, "C", "must be in [2, 256]");
    require(s.softness >= 0.0 && std::isfinite(s.softness), "softness", "must be >= 0");
    require(s.jitter >= 0.0 && std::isfinite(s.jitter), "jitter", "must be >= 0");
    require(s.boundary_sigma >= 0.0 && std::isfinite(s.boundary_sigma), "boundary_sigma", "must be >= 0");
    require(s.class_names.empty() || s.class_names.size() == s.C, "class_names", "must have C entries");
    if (s.confusion)
    {
        const auto& m = *s.confusion;
        require(m.size() == s.C, "confusion", "must have C rows");
        for (std::size_t r = 0; r < m.size(); ++r)
        {
            const std::string path = "confusion[" + std::to_string(r) + "]";
            require(m[r].size() == s.C, path, "must have C entries");
            double sum = 0.0;
            for (const double v : m[r])
            {
                require(v >= 0.0, path, "entries must be >= 0");
                sum += v;
            }
            require(std::abs(sum - 1.0) <= 1e-9, path, "sum = " + detail::fmt_number(sum));
        }
    }
}

namespace detail
{

/// Standard normal from counter hashes (Box-Muller on two uniforms in (0,1)).
inline double hashed_normal(std::uint64_t seed, std::uint64_t t, std::uint64_t h, std::uint64_t w, std::uint64_t c)
{
    const double u1 = (static_cast<double>(hash_counter(seed, {1, t, h, w, c}) >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = to_unit(hash_counter(seed, {2, t, h, w, c}));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

/// Per pixel: one-hot of the (confusion-resampled) label, class planes
/// blurred by boundary_sigma, log-probabilities divided by (1 + softness),
/// member-specific jitter * N(0,1) added, then softmax. With softness and
/// jitter both 0 every member is the blurred one-hot map itself.
inline ProbStack generate_stack(const Plane<std::uint8_t>& gt, const MockSpec& spec)
{
    validate(spec);
    const std::size_t H = gt.height();
    const std::size_t W = gt.width();
    const std::size_t C = spec.C;
    for (std::size_t i = 0; i < gt.size(); ++i)
        if (gt[i] >= C)
            throw Error("mockpred: label " + std::to_string(gt[i]) + " at pixel (" + std::to_string(i % W) + ", " +
                        std::to_string(i / W) + ") >= C = " + std::to_string(C));

    std::vector<std::uint8_t> labels(gt.values().begin(), gt.values().end());
    if (spec.confusion)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w)
            {
                auto& label = labels[h * W + w];
                const auto& row = (*spec.confusion)[label];
                const double u = to_unit(hash_counter(spec.seed, {0, h, w}));
                double acc = 0.0;
                std::size_t pick = C - 1;
                for (std::size_t c = 0; c < C; ++c)
                {
                    acc += row[c];
                    if (u < acc && row[c] > 0.0)
                    {
                        pick = c;
                        break;
                    }
                }
                while (row[pick] == 0.0 && pick > 0)  // rounding fell off the end
                    --pick;
                label = static_cast<std::uint8_t>(pick);
            }

    std::vector<std::vector<float>> q(C, std::vector<float>(H * W, 0.0f));
    for (std::size_t i = 0; i < H * W; ++i)
        q[labels[i]][i] = 1.0f;
    const auto kernel = detail::gaussian_kernel(spec.boundary_sigma);
    if (kernel.size() > 1)
    {
        for (auto& plane : q)
            detail::blur_plane(plane, static_cast<int>(W), static_cast<int>(H), kernel);
        for (std::size_t i = 0; i < H * W; ++i)
        {
            double sum = 0.0;
            for (std::size_t c = 0; c < C; ++c)
                sum += q[c][i];
            for (std::size_t c = 0; c < C; ++c)
                q[c][i] = static_cast<float>(q[c][i] / sum);
        }
    }

    ProbStack out(spec.T, C, H, W);
    out.class_names = spec.class_names.empty() ? default_class_names(C) : spec.class_names;
    out.source_tag = spec.source_tag;
    const bool exact = spec.softness == 0.0 && spec.jitter == 0.0;
    const double inv_temp = 1.0 / (1.0 + spec.softness);
    std::vector<double> z(C);
    for (std::size_t t = 0; t < spec.T; ++t)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w)
            {
                const std::size_t i = h * W + w;
                if (exact)
                {
                    for (std::size_t c = 0; c < C; ++c)
                        out(t, c, h, w) = q[c][i];
                    continue;
                }
                double zmax = -std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < C; ++c)
                {
                    const double logp = q[c][i] > 0.0f ? std::max(kMockLogFloor, std::log(static_cast<double>(q[c][i]))) : kMockLogFloor;
                    z[c] = logp * inv_temp;
                    if (spec.jitter > 0.0)
                        z[c] += spec.jitter * detail::hashed_normal(spec.seed, t, h, w, c);
                    zmax = std::max(zmax, z[c]);
                }
                double sum = 0.0;
                for (auto& v : z)
                {
                    v = std::exp(v - zmax);
                    sum += v;
                }
                for (std::size_t c = 0; c < C; ++c)
                    out(t, c, h, w) = static_cast<float>(z[c] / sum);
            }
    return out;
}

}  // namespace histosynth
