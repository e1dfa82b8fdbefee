#include "layerav/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <png.h>

namespace layerav {

std::uint8_t quantize_unit(float v) {
    if (!(v > 0.0f)) return 0;
    if (v >= 1.0f) return 255;
    return static_cast<std::uint8_t>(std::lround(v * 255.0f));
}

namespace {

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::vector<std::uint8_t> out;

    PngWriter() {
        png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        if (!png) throw IoError("png: cannot create write struct");
        info = png_create_info_struct(png);
        if (!info) {
            png_destroy_write_struct(&png, nullptr);
            throw IoError("png: cannot create info struct");
        }
    }
    ~PngWriter() { png_destroy_write_struct(&png, &info); }
    PngWriter(const PngWriter&) = delete;
    PngWriter& operator=(const PngWriter&) = delete;

    static void write_cb(png_structp p, png_bytep data, png_size_t len) {
        auto* self = static_cast<PngWriter*>(png_get_io_ptr(p));
        self->out.insert(self->out.end(), data, data + len);
    }
    static void flush_cb(png_structp) {}
};

// libpng reports errors through longjmp; keep the setjmp frame free of
// objects with non-trivial destructors.
bool write_rows(PngWriter& w, int width, int height, int color_type, const std::vector<png_bytep>& rows,
                const std::vector<png_color>* palette) {
    if (setjmp(png_jmpbuf(w.png))) return false;
    png_set_write_fn(w.png, &w, &PngWriter::write_cb, &PngWriter::flush_cb);
    png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    if (palette) png_set_PLTE(w.png, w.info, palette->data(), static_cast<int>(palette->size()));
    png_write_info(w.png, w.info);
    png_write_image(w.png, const_cast<png_bytepp>(rows.data()));
    png_write_end(w.png, nullptr);
    return true;
}

}  // namespace

std::vector<std::uint8_t> encode_png_rgb(int width, int height, std::span<const float> rgb) {
    if (width < 1 || height < 1 || rgb.size() != static_cast<std::size_t>(width) * height * 3)
        throw IoError("encode_png_rgb: buffer size does not match image size");
    std::vector<std::uint8_t> pixels(rgb.size());
    std::transform(rgb.begin(), rgb.end(), pixels.begin(), quantize_unit);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * width * 3;
    PngWriter w;
    if (!write_rows(w, width, height, PNG_COLOR_TYPE_RGB, rows, nullptr)) throw IoError("encode_png_rgb: libpng error");
    return std::move(w.out);
}

std::vector<std::uint8_t> encode_png_indexed(int width, int height, std::span<const std::uint8_t> indices,
                                             std::span<const Rgb8> palette) {
    if (width < 1 || height < 1 || indices.size() != static_cast<std::size_t>(width) * height)
        throw IoError("encode_png_indexed: buffer size does not match image size");
    if (palette.empty() || palette.size() > 256) throw IoError("encode_png_indexed: palette must have 1..256 entries");
    for (std::uint8_t i : indices) {
        if (i >= palette.size()) throw IoError("encode_png_indexed: index outside palette");
    }
    std::vector<png_color> pal(palette.size());
    for (std::size_t i = 0; i < palette.size(); ++i) pal[i] = {palette[i].r, palette[i].g, palette[i].b};
    std::vector<std::uint8_t> pixels(indices.begin(), indices.end());
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * width;
    PngWriter w;
    if (!write_rows(w, width, height, PNG_COLOR_TYPE_PALETTE, rows, &pal))
        throw IoError("encode_png_indexed: libpng error");
    return std::move(w.out);
}

DecodedImage decode_png(std::span<const std::uint8_t> bytes) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw IoError(std::string("decode_png: ") + image.message);

    DecodedImage out;
    out.width = static_cast<int>(image.width);
    out.height = static_cast<int>(image.height);
    const std::size_t n = static_cast<std::size_t>(out.width) * out.height;

    if (image.format & PNG_FORMAT_FLAG_COLORMAP) {
        image.format = PNG_FORMAT_RGB_COLORMAP;
        std::vector<std::uint8_t> colormap(PNG_IMAGE_COLORMAP_SIZE(image));
        out.indices.resize(n);
        if (!png_image_finish_read(&image, nullptr, out.indices.data(), 0, colormap.data())) {
            const std::string msg = image.message;
            png_image_free(&image);
            throw IoError("decode_png: " + msg);
        }
        out.channels = 1;
        out.palette.resize(image.colormap_entries);
        for (std::size_t i = 0; i < out.palette.size(); ++i)
            out.palette[i] = {colormap[3 * i], colormap[3 * i + 1], colormap[3 * i + 2]};
        return out;
    }

    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw IoError("decode_png: " + msg);
    }
    out.channels = 3;
    out.values.resize(3 * n);
    for (std::size_t i = 0; i < 3 * n; ++i) out.values[i] = buf[i] / 255.0f;
    return out;
}

std::vector<std::uint8_t> encode_pfm(int width, int height, std::span<const float> values) {
    if (width < 1 || height < 1 || values.size() != static_cast<std::size_t>(width) * height)
        throw IoError("encode_pfm: buffer size does not match image size");
    std::ostringstream header;
    header << "Pf\n" << width << " " << height << "\n-1.0\n";
    const std::string h = header.str();
    std::vector<std::uint8_t> out(h.begin(), h.end());
    out.reserve(h.size() + values.size() * 4);
    for (int y = height - 1; y >= 0; --y) {
        for (int x = 0; x < width; ++x) {
            std::uint32_t bits = std::bit_cast<std::uint32_t>(values[static_cast<std::size_t>(y) * width + x]);
            for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
        }
    }
    return out;
}

DecodedImage decode_pfm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
        return t;
    };
    if (token() != "Pf") throw IoError("decode_pfm: only grayscale Pf is supported");
    DecodedImage out;
    out.width = std::stoi(token());
    out.height = std::stoi(token());
    const double scale = std::stod(token());
    ++pos;  // single whitespace after the scale
    if (scale >= 0.0) throw IoError("decode_pfm: only little-endian files are supported");
    const std::size_t n = static_cast<std::size_t>(out.width) * out.height;
    if (bytes.size() < pos + 4 * n) throw IoError("decode_pfm: truncated payload");
    out.channels = 1;
    out.values.resize(n);
    for (int y = out.height - 1; y >= 0; --y) {
        for (int x = 0; x < out.width; ++x) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * b);
            out.values[static_cast<std::size_t>(y) * out.width + x] = std::bit_cast<float>(bits);
        }
    }
    return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace layerav
