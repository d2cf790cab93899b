// Gaussian filtering on float planes.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace histosynth
{

inline constexpr double kBlurTruncation = 3.0;  // kernel radius in sigmas

namespace detail
{

/// Normalized Gaussian taps; a single unit tap below a quarter pixel.
inline std::vector<float> gaussian_kernel(double sigma)
{
    if (!(sigma >= 0.25))
        return {1.0f};
    const int radius = static_cast<int>(std::ceil(kBlurTruncation * sigma));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i)
    {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        taps[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    std::vector<float> out(taps.size());
    for (std::size_t i = 0; i < taps.size(); ++i)
        out[i] = static_cast<float>(taps[i] / sum);
    return out;
}

inline int kernel_radius(const std::vector<float>& k) { return static_cast<int>(k.size() / 2); }

/// Separable blur with clamp-to-edge borders, in place.
inline void blur_plane(std::vector<float>& data, int w, int h, const std::vector<float>& kernel)
{
    const int r = kernel_radius(kernel);
    if (r == 0 || w == 0 || h == 0)
        return;
    std::vector<float> tmp(data.size());
    for (int y = 0; y < h; ++y)
    {
        const float* row = &data[static_cast<std::size_t>(y) * w];
        float* out = &tmp[static_cast<std::size_t>(y) * w];
        for (int x = 0; x < w; ++x)
        {
            float acc = 0.0f;
            for (int k = -r; k <= r; ++k)
                acc += kernel[static_cast<std::size_t>(k + r)] * row[std::clamp(x + k, 0, w - 1)];
            out[x] = acc;
        }
    }
    for (int y = 0; y < h; ++y)
    {
        float* out = &data[static_cast<std::size_t>(y) * w];
        for (int x = 0; x < w; ++x)
        {
            float acc = 0.0f;
            for (int k = -r; k <= r; ++k)
                acc += kernel[static_cast<std::size_t>(k + r)] * tmp[static_cast<std::size_t>(std::clamp(y + k, 0, h - 1)) * w + x];
            out[x] = acc;
        }
    }
}

}  // namespace detail

}  // namespace histosynth
