// Small shared vocabulary: errors, vectors, rotations, image planes,
// hashing and the seeded random stream used by every generator.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace histosynth
{

class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Raised by config validation; the message starts with the field path.
class ConfigError : public Error
{
public:
    using Error::Error;
};

struct Vec2
{
    double x{0.0};
    double y{0.0};

    friend bool operator==(const Vec2&, const Vec2&) = default;
};

struct Vec3
{
    double x{0.0};
    double y{0.0};
    double z{0.0};

    friend bool operator==(const Vec3&, const Vec3&) = default;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
};

/// Unit quaternion (w, x, y, z).
struct Quat
{
    double w{1.0};
    double x{0.0};
    double y{0.0};
    double z{0.0};

    friend bool operator==(const Quat&, const Quat&) = default;

    static Quat about_z(double angle)
    {
        return {std::cos(angle / 2), 0.0, 0.0, std::sin(angle / 2)};
    }

    Quat conjugate() const { return {w, -x, -y, -z}; }

    Quat operator*(const Quat& o) const
    {
        return {w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w};
    }

    Vec3 rotate(const Vec3& v) const
    {
        // v + 2w(q x v) + 2 q x (q x v)
        const Vec3 q{x, y, z};
        const Vec3 t{2 * (q.y * v.z - q.z * v.y), 2 * (q.z * v.x - q.x * v.z), 2 * (q.x * v.y - q.y * v.x)};
        return {v.x + w * t.x + (q.y * t.z - q.z * t.y),
                v.y + w * t.y + (q.z * t.x - q.x * t.z),
                v.z + w * t.z + (q.x * t.y - q.y * t.x)};
    }
};

/// Row-major 2D plane of values.
template <typename T>
class Plane
{
public:
    Plane() = default;
    Plane(std::size_t width, std::size_t height, T fill = T{})
        : width_(width), height_(height), data_(width * height, fill)
    {
    }

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t size() const { return data_.size(); }

    T& operator()(std::size_t col, std::size_t row) { return data_[row * width_ + col]; }
    const T& operator()(std::size_t col, std::size_t row) const { return data_[row * width_ + col]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    friend bool operator==(const Plane&, const Plane&) = default;

private:
    std::size_t width_{0};
    std::size_t height_{0};
    std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Hashing and seeding
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = kFnvOffset)
{
    for (const auto b : bytes)
    {
        h ^= b;
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view text, std::uint64_t h = kFnvOffset)
{
    return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), h);
}

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z)
{
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace detail
{
inline std::uint64_t fnv_u64_le(std::uint64_t v, std::uint64_t h)
{
    for (int i = 0; i < 8; ++i)
    {
        h ^= (v >> (8 * i)) & 0xffU;
        h *= kFnvPrime;
    }
    return h;
}
}  // namespace detail

/// Sub-seed for a named stream: FNV-1a over (master LE, label bytes, index LE),
/// then the SplitMix64 finalizer.
inline std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view stream_label, std::uint64_t index)
{
    std::uint64_t h = detail::fnv_u64_le(master_seed, kFnvOffset);
    h = fnv1a64(stream_label, h);
    h = detail::fnv_u64_le(index, h);
    return mix64(h);
}

/// Counter-based hash of a key tuple; order-independent of any iteration.
inline std::uint64_t hash_counter(std::uint64_t seed, std::initializer_list<std::uint64_t> counters)
{
    std::uint64_t h = mix64(seed ^ 0x9e3779b97f4a7c15ULL);
    for (const auto c : counters)
        h = mix64(h ^ (c + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
    return h;
}

/// 53-bit uniform in [0, 1).
constexpr double to_unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

inline std::string hex64(std::uint64_t v)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4)
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return out;
}

/// Seeded random stream. The engine is std::mt19937_64, whose output
/// sequence is fixed by the standard; conversions to real values are done
/// here so results do not depend on the standard library implementation.
class Rng
{
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t bits() { return engine_(); }

    double uniform() { return to_unit(engine_()); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n)
    {
        // high word of the 128-bit product bits * n
        const std::uint64_t x = engine_();
        const std::uint64_t xl = x & 0xffffffffULL, xh = x >> 32;
        const std::uint64_t nl = n & 0xffffffffULL, nh = n >> 32;
        const std::uint64_t lh = xl * nh, hl = xh * nl;
        const std::uint64_t mid = ((xl * nl) >> 32) + (lh & 0xffffffffULL) + (hl & 0xffffffffULL);
        return xh * nh + (lh >> 32) + (hl >> 32) + (mid >> 32);
    }

    /// Box-Muller; one variate per call.
    double normal()
    {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Knuth's multiplication method, summed over chunks of mean <= 16.
    std::uint64_t poisson(double mean)
    {
        std::uint64_t total = 0;
        while (mean > 0.0)
        {
            const double chunk = std::min(mean, 16.0);
            mean -= chunk;
            const double limit = std::exp(-chunk);
            double p = uniform();
            while (p > limit)
            {
                ++total;
                p *= uniform();
            }
        }
        return total;
    }

    /// Index drawn from non-negative weights (need not be normalized).
    std::size_t categorical(std::span<const double> weights)
    {
        double total = 0.0;
        for (const auto w : weights)
            total += w;
        double u = uniform() * total;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < weights.size(); ++i)
        {
            if (weights[i] <= 0.0)
                continue;
            last_positive = i;
            if (u < weights[i])
                return i;
            u -= weights[i];
        }
        return last_positive;
    }

    /// Uniformly distributed rotation (Shoemake).
    Quat rotation()
    {
        const double u1 = uniform();
        const double u2 = uniform() * 2.0 * std::numbers::pi;
        const double u3 = uniform() * 2.0 * std::numbers::pi;
        const double a = std::sqrt(1.0 - u1);
        const double b = std::sqrt(u1);
        return {a * std::sin(u2), a * std::cos(u2), b * std::sin(u3), b * std::cos(u3)};
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace histosynth
