#include "gmark/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>

#include "gmark/errors.hpp"
#include "gmark/fsio.hpp"

namespace gmark {
namespace {

constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

std::uint32_t get_u32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void append_chunk(std::vector<unsigned char>& out, const char type[4],
                  const std::vector<unsigned char>& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const auto crc = crc32(crc32(0L, Z_NULL, 0), out.data() + start,
                           static_cast<uInt>(out.size() - start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

std::vector<unsigned char> zlib_deflate(const std::vector<unsigned char>& raw) {
    uLongf cap = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> out(cap);
    if (compress2(out.data(), &cap, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw IoError(IoError::Kind::WriteFailed, "png: deflate failed");
    out.resize(cap);
    return out;
}

std::vector<unsigned char> zlib_inflate(const std::vector<unsigned char>& comp,
                                        size_t expected_size) {
    std::vector<unsigned char> out(expected_size);
    uLongf got = static_cast<uLongf>(expected_size);
    const int rc =
        uncompress(out.data(), &got, comp.data(), static_cast<uLong>(comp.size()));
    if (rc != Z_OK || got != expected_size)
        throw IoError(IoError::Kind::BadData, "png: inflate failed or wrong size");
    return out;
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

Image Image::blank(int width, int height, unsigned char value) {
    if (width < 1 || height < 1) throw ValueError("image dimensions must be positive");
    Image img;
    img.width = width;
    img.height = height;
    img.pixels.assign(static_cast<size_t>(width) * height * 3, value);
    return img;
}

std::vector<unsigned char> encode_png(const Image& img) {
    if (img.width < 1 || img.height < 1 ||
        img.pixels.size() != static_cast<size_t>(img.width) * img.height * 3)
        throw ValueError("encode_png: malformed image buffer");
    const size_t stride = static_cast<size_t>(img.width) * 3;
    std::vector<unsigned char> raw;
    raw.reserve((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), img.pixels.begin() + y * stride,
                   img.pixels.begin() + (y + 1) * stride);
    }
    std::vector<unsigned char> out(kPngSig, kPngSig + 8);
    std::vector<unsigned char> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // truecolor
    ihdr.push_back(0);   // deflate
    ihdr.push_back(0);   // adaptive filtering
    ihdr.push_back(0);   // no interlace
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", zlib_deflate(raw));
    append_chunk(out, "IEND", {});
    return out;
}

Image decode_png(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0)
        throw IoError(IoError::Kind::BadMagic, "png: bad signature");
    size_t off = 8;
    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<unsigned char> idat;
    bool saw_ihdr = false, saw_iend = false;
    while (off + 8 <= bytes.size() && !saw_iend) {
        const std::uint32_t len = get_u32(bytes.data() + off);
        if (off + 12 + len > bytes.size())
            throw IoError(IoError::Kind::Truncated, "png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + off + 4);
        const unsigned char* payload = bytes.data() + off + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IoError(IoError::Kind::BadData, "png: bad IHDR length");
            width = static_cast<int>(get_u32(payload));
            height = static_cast<int>(get_u32(payload + 4));
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0)
                throw IoError(IoError::Kind::BadData, "png: interlaced images not supported");
            if (bit_depth != 8 || (color_type != 2 && color_type != 6))
                throw IoError(IoError::Kind::BadData,
                              "png: only 8-bit RGB/RGBA supported (depth " +
                                  std::to_string(bit_depth) + ", color type " +
                                  std::to_string(color_type) + ")");
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        off += 12 + len;
    }
    if (!saw_ihdr || width < 1 || height < 1)
        throw IoError(IoError::Kind::BadData, "png: missing or bad IHDR");
    if (idat.empty()) throw IoError(IoError::Kind::BadData, "png: no IDAT");

    const int bpp = color_type == 6 ? 4 : 3;
    const size_t stride = static_cast<size_t>(width) * bpp;
    auto raw = zlib_inflate(idat, (stride + 1) * height);

    Image img = Image::blank(width, height);
    std::vector<unsigned char> prev(stride, 0), cur(stride);
    for (int y = 0; y < height; ++y) {
        const unsigned char* line = raw.data() + static_cast<size_t>(y) * (stride + 1);
        const int filter = line[0];
        for (size_t x = 0; x < stride; ++x) {
            const int rx = line[1 + x];
            const int a = x >= static_cast<size_t>(bpp) ? cur[x - bpp] : 0;
            const int b = prev[x];
            const int c = x >= static_cast<size_t>(bpp) ? prev[x - bpp] : 0;
            int v;
            switch (filter) {
                case 0: v = rx; break;
                case 1: v = rx + a; break;
                case 2: v = rx + b; break;
                case 3: v = rx + (a + b) / 2; break;
                case 4: v = rx + paeth(a, b, c); break;
                default:
                    throw IoError(IoError::Kind::BadData,
                                  "png: unknown filter " + std::to_string(filter));
            }
            cur[x] = static_cast<unsigned char>(v & 0xff);
        }
        unsigned char* dst = img.at(0, y);
        for (int x = 0; x < width; ++x)
            std::memcpy(dst + 3 * x, cur.data() + static_cast<size_t>(x) * bpp, 3);
        std::swap(prev, cur);
    }
    return img;
}

std::vector<unsigned char> encode_ppm(const Image& img) {
    if (img.width < 1 || img.height < 1 ||
        img.pixels.size() != static_cast<size_t>(img.width) * img.height * 3)
        throw ValueError("encode_ppm: malformed image buffer");
    std::string head =
        "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<unsigned char> out(head.begin(), head.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

Image decode_ppm(const std::vector<unsigned char>& bytes) {
    size_t off = 0;
    auto skip_space = [&] {
        while (off < bytes.size()) {
            if (std::isspace(bytes[off])) {
                ++off;
            } else if (bytes[off] == '#') {
                while (off < bytes.size() && bytes[off] != '\n') ++off;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> int {
        skip_space();
        long v = 0;
        bool any = false;
        while (off < bytes.size() && std::isdigit(bytes[off])) {
            v = v * 10 + (bytes[off++] - '0');
            any = true;
            if (v > 1 << 24) throw IoError(IoError::Kind::BadData, "ppm: absurd header value");
        }
        if (!any) throw IoError(IoError::Kind::BadData, "ppm: expected integer in header");
        return static_cast<int>(v);
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        throw IoError(IoError::Kind::BadMagic, "ppm: not a P6 file");
    off = 2;
    const int width = read_int();
    const int height = read_int();
    const int maxval = read_int();
    if (width < 1 || height < 1 || maxval != 255)
        throw IoError(IoError::Kind::BadData, "ppm: unsupported header");
    ++off;  // single whitespace byte after maxval
    const size_t need = static_cast<size_t>(width) * height * 3;
    if (bytes.size() < off + need)
        throw IoError(IoError::Kind::Truncated, "ppm: pixel data truncated");
    Image img = Image::blank(width, height);
    std::memcpy(img.pixels.data(), bytes.data() + off, need);
    return img;
}

Image read_image(const std::string& path) {
    const auto bytes = read_file(path);
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return decode_png(bytes);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
    throw IoError(IoError::Kind::BadMagic, path + ": not a PNG or PPM file");
}

void write_image(const Image& img, const std::string& path) {
    std::vector<unsigned char> bytes;
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0)
        bytes = encode_png(img);
    else if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".ppm") == 0)
        bytes = encode_ppm(img);
    else
        throw ValueError("write_image: unsupported extension on " + path);
    write_file_atomic(path, bytes.data(), bytes.size());
}

Image resize_bilinear(const Image& img, int out_width, int out_height) {
    if (img.width < 1 || img.height < 1) throw ValueError("resize_bilinear: empty source");
    if (out_width < 1 || out_height < 1) throw ValueError("resize_bilinear: empty target");
    Image out = Image::blank(out_width, out_height);
    const double sx = out_width > 1 ? static_cast<double>(img.width - 1) / (out_width - 1) : 0.0;
    const double sy = out_height > 1 ? static_cast<double>(img.height - 1) / (out_height - 1) : 0.0;
    for (int y = 0; y < out_height; ++y) {
        const double fy = y * sy;
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_width; ++x) {
            const double fx = x * sx;
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            const unsigned char* p00 = img.at(x0, y0);
            const unsigned char* p10 = img.at(x1, y0);
            const unsigned char* p01 = img.at(x0, y1);
            const unsigned char* p11 = img.at(x1, y1);
            unsigned char* dst = out.at(x, y);
            for (int ch = 0; ch < 3; ++ch) {
                const double top = p00[ch] * (1.0 - wx) + p10[ch] * wx;
                const double bot = p01[ch] * (1.0 - wx) + p11[ch] * wx;
                const double v = top * (1.0 - wy) + bot * wy;
                dst[ch] = static_cast<unsigned char>(
                    std::clamp<long>(std::llround(v), 0, 255));
            }
        }
    }
    return out;
}

Tensor<float> image_to_tensor(const Image& img) {
    if (img.width < 1 || img.height < 1 ||
        img.pixels.size() != static_cast<size_t>(img.width) * img.height * 3)
        throw ValueError("image_to_tensor: malformed image buffer");
    std::vector<float> data(static_cast<size_t>(3) * img.height * img.width);
    const size_t plane = static_cast<size_t>(img.height) * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const unsigned char* px = img.at(x, y);
            const size_t idx = static_cast<size_t>(y) * img.width + x;
            for (int ch = 0; ch < 3; ++ch)
                data[plane * ch + idx] = static_cast<float>(px[ch]) / 255.0f;
        }
    return Tensor<float>::from_data({3, img.height, img.width}, std::move(data));
}

Image tensor_to_image(const Tensor<float>& t) {
    const Shape& shp = t.shape();
    if (shp.size() != 3 || shp[0] != 3)
        throw ShapeError("tensor_to_image: expected [3,H,W], got " + shape_str(shp));
    const int height = shp[1], width = shp[2];
    Image img = Image::blank(width, height);
    const size_t plane = static_cast<size_t>(height) * width;
    const auto& data = t.data();
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            unsigned char* px = img.at(x, y);
            const size_t idx = static_cast<size_t>(y) * width + x;
            for (int ch = 0; ch < 3; ++ch) {
                const double v = static_cast<double>(data[plane * ch + idx]) * 255.0;
                px[ch] = static_cast<unsigned char>(std::clamp<long>(std::llround(v), 0, 255));
            }
        }
    return img;
}

}  // namespace gmark
