// File formats: PNG planes (libpng), raw little-endian float planes, and
// atomic whole-file writes.
#pragma once

#include <png.h>

#include <bit>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "histosynth/core.hpp"
#include "histosynth/render.hpp"
#include "histosynth/scenegen.hpp"

namespace histosynth
{

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        throw Error("read failed: " + path.string());
    return data;
}

/// Writes via a sibling temp file and rename, so readers never see a torn file.
inline void write_file_atomic(const fs::path& path, std::string_view data)
{
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error("cannot open " + tmp.string() + " for writing");
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        out.flush();
        if (!out)
        {
            out.close();
            std::error_code ec;
            fs::remove(tmp, ec);
            throw Error("write failed: " + path.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec)
    {
        fs::remove(tmp, ec);
        throw Error("cannot rename into " + path.string() + ": " + ec.message());
    }
}

inline std::uint64_t file_hash(const fs::path& path) { return fnv1a64(read_file(path)); }

/// Directory name for a noise level: two decimals unless more are needed to
/// round-trip the value.
inline std::string level_dir_name(double level)
{
    char buf[64];
    for (int digits = 2; digits <= 17; ++digits)
    {
        std::snprintf(buf, sizeof buf, "%.*f", digits, level);
        if (std::stod(buf) == level)
            break;
    }
    return std::string("level_") + buf;
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

namespace detail
{

struct PngError
{
    std::jmp_buf jump;
    char message[256];
};

inline void png_error_fn(png_structp png, png_const_charp msg)
{
    auto* err = static_cast<PngError*>(png_get_error_ptr(png));
    std::snprintf(err->message, sizeof err->message, "%s", msg);
    std::longjmp(err->jump, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

// Only trivially destructible locals below: longjmp unwinds through here.
inline bool png_write_raw(std::FILE* fp, std::uint32_t w, std::uint32_t h, int bit_depth, int color_type,
                          std::uint8_t** rows, PngError* err)
{
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, err, png_error_fn, png_warning_fn);
    if (!png)
    {
        std::snprintf(err->message, sizeof err->message, "out of memory");
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(err->jump))
    {
        png_destroy_write_struct(&png, info ? &info : nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, w, h, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16 && std::endian::native == std::endian::little)
        png_set_swap(png);
    png_write_image(png, rows);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

struct PngHeader
{
    std::uint32_t width;
    std::uint32_t height;
    int bit_depth;
    int channels;
};

using PngAlloc = std::uint8_t** (*)(void* ctx, const PngHeader& header);

inline bool png_read_raw(std::FILE* fp, void* ctx, PngAlloc alloc, PngError* err)
{
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, err, png_error_fn, png_warning_fn);
    if (!png)
    {
        std::snprintf(err->message, sizeof err->message, "out of memory");
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(err->jump))
    {
        png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA)
        png_set_strip_alpha(png);
    if (png_get_bit_depth(png, info) == 16 && std::endian::native == std::endian::little)
        png_set_swap(png);
    png_read_update_info(png, info);
    PngHeader header{png_get_image_width(png, info), png_get_image_height(png, info), png_get_bit_depth(png, info),
                     png_get_channels(png, info)};
    std::uint8_t** rows = alloc(ctx, header);
    if (!rows)
    {
        std::snprintf(err->message, sizeof err->message, "unexpected format: %d channel(s), %d-bit", header.channels,
                      header.bit_depth);
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    png_read_image(png, rows);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

template <typename T>
void write_png_plane(const fs::path& path, const Plane<T>& plane, int bit_depth, int color_type)
{
    if (plane.width() == 0 || plane.height() == 0)
        throw Error("cannot write empty image " + path.string());
    std::vector<std::uint8_t*> rows(plane.height());
    auto* base = reinterpret_cast<std::uint8_t*>(const_cast<T*>(plane.values().data()));
    for (std::size_t y = 0; y < plane.height(); ++y)
        rows[y] = base + y * plane.width() * sizeof(T);

    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp)
        throw Error("cannot open " + path.string() + " for writing");
    PngError err{};
    const bool ok = png_write_raw(fp, static_cast<std::uint32_t>(plane.width()), static_cast<std::uint32_t>(plane.height()),
                                  bit_depth, color_type, rows.data(), &err);
    const bool closed = std::fclose(fp) == 0;
    if (!ok || !closed)
        throw Error("png write failed for " + path.string() + (ok ? std::string(": close failed") : ": " + std::string(err.message)));
}

template <typename T>
Plane<T> read_png_plane(const fs::path& path, int bit_depth, int channels)
{
    struct Ctx
    {
        Plane<T> plane;
        std::vector<std::uint8_t*> rows;
        int bit_depth;
        int channels;
    } ctx{{}, {}, bit_depth, channels};
    const PngAlloc alloc = [](void* p, const PngHeader& h) -> std::uint8_t** {
        auto* c = static_cast<Ctx*>(p);
        if (h.bit_depth != c->bit_depth || h.channels != c->channels)
            return nullptr;
        c->plane = Plane<T>(h.width, h.height);
        c->rows.resize(h.height);
        auto* base = reinterpret_cast<std::uint8_t*>(c->plane.values().data());
        for (std::size_t y = 0; y < h.height; ++y)
            c->rows[y] = base + y * h.width * sizeof(T);
        return c->rows.data();
    };
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp)
        throw Error("cannot open " + path.string());
    PngError err{};
    const bool ok = png_read_raw(fp, &ctx, alloc, &err);
    std::fclose(fp);
    if (!ok)
        throw Error("png read failed for " + path.string() + ": " + err.message);
    return std::move(ctx.plane);
}

}  // namespace detail

static_assert(sizeof(Rgb8) == 3);

inline void write_png(const fs::path& path, const Plane<Rgb8>& image) { detail::write_png_plane(path, image, 8, PNG_COLOR_TYPE_RGB); }
inline void write_png(const fs::path& path, const Plane<std::uint8_t>& gray) { detail::write_png_plane(path, gray, 8, PNG_COLOR_TYPE_GRAY); }
inline void write_png(const fs::path& path, const Plane<std::uint16_t>& gray) { detail::write_png_plane(path, gray, 16, PNG_COLOR_TYPE_GRAY); }

inline Plane<Rgb8> read_png_rgb(const fs::path& path) { return detail::read_png_plane<Rgb8>(path, 8, 3); }
inline Plane<std::uint8_t> read_png_gray8(const fs::path& path) { return detail::read_png_plane<std::uint8_t>(path, 8, 1); }
inline Plane<std::uint16_t> read_png_gray16(const fs::path& path) { return detail::read_png_plane<std::uint16_t>(path, 16, 1); }

// ---------------------------------------------------------------------------
// Raw float planes
// ---------------------------------------------------------------------------

inline std::string encode_f32le(std::span<const float> values)
{
    std::string out(values.size() * 4, '\0');
    for (std::size_t i = 0; i < values.size(); ++i)
    {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b)
            out[i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
    return out;
}

inline std::vector<float> decode_f32le(std::string_view bytes)
{
    if (bytes.size() % 4 != 0)
        throw Error("float buffer size " + std::to_string(bytes.size()) + " is not a multiple of 4");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i)
    {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + static_cast<std::size_t>(b)])) << (8 * b);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

inline void write_depth(const fs::path& path, const Plane<float>& depth) { write_file_atomic(path, encode_f32le(depth.values())); }

inline Plane<float> read_depth(const fs::path& path, std::size_t width, std::size_t height)
{
    const auto values = decode_f32le(read_file(path));
    if (values.size() != width * height)
        throw Error(path.string() + ": expected " + std::to_string(width * height) + " floats, found " + std::to_string(values.size()));
    Plane<float> out(width, height);
    std::copy(values.begin(), values.end(), out.values().begin());
    return out;
}

// ---------------------------------------------------------------------------
// Per-scene file set
// ---------------------------------------------------------------------------

struct OutputPaths
{
    fs::path image;
    fs::path semantic;
    fs::path instance;
    fs::path depth;
    fs::path meta;
};

inline OutputPaths output_paths(const fs::path& dir, const std::string& stem)
{
    return {dir / (stem + ".png"), dir / (stem + "_sem.png"), dir / (stem + "_inst.png"), dir / (stem + "_depth.bin"),
            dir / (stem + "_meta.json")};
}

inline Json output_meta(const RenderOutput& out, const SceneGraph& scene)
{
    std::size_t instances = 0;
    for (const auto& c : scene.cells)
        instances += has_nucleus_label(c.cell_class) ? 1 : 0;
    return Json{{"width", out.image.width()},
                {"height", out.image.height()},
                {"scene_hash", hex64(scene_hash(scene))},
                {"config_hash", hex64(config_hash(scene.config))},
                {"nucleus_instances", instances},
                {"objects", scene.cells.size()}};
}

/// Writes the image, masks, depth and meta files. Existing files with the
/// same stem are overwritten.
inline void write_outputs(const RenderOutput& out, const SceneGraph& scene, const fs::path& dir, const std::string& stem)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw Error("cannot create " + dir.string() + ": " + ec.message());
    const auto paths = output_paths(dir, stem);
    write_png(paths.image, out.image);
    write_png(paths.semantic, out.semantic_mask);
    write_png(paths.instance, out.instance_mask);
    write_depth(paths.depth, out.depth_map);
    write_file_atomic(paths.meta, dump_canonical(output_meta(out, scene)));
}

/// Reads back everything write_outputs wrote except the meta file.
inline RenderOutput read_outputs(const fs::path& dir, const std::string& stem)
{
    const auto paths = output_paths(dir, stem);
    RenderOutput out;
    out.image = read_png_rgb(paths.image);
    out.semantic_mask = read_png_gray8(paths.semantic);
    out.instance_mask = read_png_gray16(paths.instance);
    out.depth_map = read_depth(paths.depth, out.image.width(), out.image.height());
    if (out.semantic_mask.width() != out.image.width() || out.instance_mask.width() != out.image.width() ||
        out.semantic_mask.height() != out.image.height() || out.instance_mask.height() != out.image.height())
        throw Error(dir.string() + "/" + stem + ": plane dimensions disagree");
    return out;
}

}  // namespace histosynth
