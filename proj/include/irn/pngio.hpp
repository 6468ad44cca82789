#pragma once

// Minimal PNG codec: 8-bit RGB / RGBA, non-interlaced, with tEXt chunk
// support for metadata payloads. Encoding is fully pinned (filter 0 on
// every scanline, one IDAT, fixed deflate level), so writing the same
// pixels twice produces the same bytes. Decoding handles all five scanline
// filters and grayscale expansion so externally produced files load too.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "irn/errors.hpp"
#include "irn/latent_codec.hpp"
#include "irn/model.hpp"
#include "irn/tensor.hpp"

namespace irn {

struct PngImage {
    int width = 0;
    int height = 0;
    int channels = 3;  // 3 (RGB) or 4 (RGBA)
    std::vector<uint8_t> pixels;  // interleaved, row-major
    std::vector<std::pair<std::string, std::vector<uint8_t>>> text_chunks;

    const std::vector<uint8_t>* find_text(const std::string& keyword) const {
        for (const auto& [k, v] : text_chunks)
            if (k == keyword) return &v;
        return nullptr;
    }
};

constexpr const char* kLatentChunkKeyword = "irn-m-latent";

// ---- base64 ----

inline std::string base64_encode(const std::vector<uint8_t>& in) {
    static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= in.size(); i += 3) {
        const uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back(tbl[v & 63]);
    }
    const size_t rem = in.size() - i;
    if (rem == 1) {
        const uint32_t v = in[i] << 16;
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out += "==";
    } else if (rem == 2) {
        const uint32_t v = (in[i] << 16) | (in[i + 1] << 8);
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

inline std::vector<uint8_t> base64_decode(const std::string& in) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (in.size() % 4 != 0) throw FormatError("base64: length not a multiple of 4");
    std::vector<uint8_t> out;
    out.reserve(in.size() / 4 * 3);
    for (size_t i = 0; i < in.size(); i += 4) {
        int pad = 0;
        uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = in[i + k];
            if (c == '=') {
                if (i + 4 != in.size() || k < 2) throw FormatError("base64: misplaced padding");
                ++pad;
                v <<= 6;
            } else {
                if (pad) throw FormatError("base64: data after padding");
                const int d = val(c);
                if (d < 0) throw FormatError(std::string("base64: invalid character '") + c + "'");
                v = (v << 6) | static_cast<uint32_t>(d);
            }
        }
        out.push_back(static_cast<uint8_t>(v >> 16));
        if (pad < 2) out.push_back(static_cast<uint8_t>(v >> 8));
        if (pad < 1) out.push_back(static_cast<uint8_t>(v));
    }
    return out;
}

// ---- container ----

namespace pngdetail {

inline void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_u32be(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

inline void append_chunk(std::vector<uint8_t>& out, const char type[4],
                         const std::vector<uint8_t>& data) {
    put_u32be(out, static_cast<uint32_t>(data.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uint32_t crc = static_cast<uint32_t>(
        ::crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32be(out, crc);
}

inline uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
    if (pb <= pc) return static_cast<uint8_t>(b);
    return static_cast<uint8_t>(c);
}

}  // namespace pngdetail

inline std::vector<uint8_t> png_encode(const PngImage& img) {
    if (img.channels != 3 && img.channels != 4)
        throw FormatError("png: only RGB and RGBA images can be written");
    if (img.width < 1 || img.height < 1) throw FormatError("png: bad image extents");
    if (img.pixels.size() !=
        static_cast<size_t>(img.width) * img.height * img.channels)
        throw FormatError("png: pixel buffer does not match extents");

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

    std::vector<uint8_t> ihdr;
    pngdetail::put_u32be(ihdr, static_cast<uint32_t>(img.width));
    pngdetail::put_u32be(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);                                   // bit depth
    ihdr.push_back(img.channels == 3 ? 2 : 6);           // color type
    ihdr.push_back(0);                                   // compression
    ihdr.push_back(0);                                   // filter method
    ihdr.push_back(0);                                   // no interlace
    pngdetail::append_chunk(out, "IHDR", ihdr);

    for (const auto& [keyword, data] : img.text_chunks) {
        if (keyword.empty() || keyword.size() > 79)
            throw FormatError("png: text chunk keyword must be 1..79 characters");
        std::vector<uint8_t> chunk(keyword.begin(), keyword.end());
        chunk.push_back(0);
        chunk.insert(chunk.end(), data.begin(), data.end());
        pngdetail::append_chunk(out, "tEXt", chunk);
    }

    // raw scanlines, filter type 0 everywhere
    const size_t stride = static_cast<size_t>(img.width) * img.channels;
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(img.height) * (stride + 1));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), img.pixels.begin() + y * stride, img.pixels.begin() + (y + 1) * stride);
    }
    uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> idat(bound);
    if (::compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw FormatError("png: deflate failed");
    idat.resize(bound);
    pngdetail::append_chunk(out, "IDAT", idat);
    pngdetail::append_chunk(out, "IEND", {});
    return out;
}

inline PngImage png_decode(const std::vector<uint8_t>& bytes) {
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw FormatError("png: bad signature");

    PngImage img;
    int bit_depth = 0, color_type = -1, src_channels = 0;
    std::vector<uint8_t> idat;
    bool saw_ihdr = false, saw_iend = false;

    size_t pos = 8;
    while (pos + 12 <= bytes.size() && !saw_iend) {
        const uint32_t len = pngdetail::get_u32be(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw FormatError("png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const uint8_t* data = bytes.data() + pos + 8;
        const uint32_t crc_stored = pngdetail::get_u32be(data + len);
        const uint32_t crc_actual =
            static_cast<uint32_t>(::crc32(0L, bytes.data() + pos + 4, static_cast<uInt>(4 + len)));
        if (crc_stored != crc_actual)
            throw FormatError(std::string("png: crc mismatch in chunk ") + std::string(type, 4));

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw FormatError("png: bad IHDR length");
            img.width = static_cast<int>(pngdetail::get_u32be(data));
            img.height = static_cast<int>(pngdetail::get_u32be(data + 4));
            bit_depth = data[8];
            color_type = data[9];
            if (data[12] != 0) throw FormatError("png: interlaced images are not supported");
            if (bit_depth != 8) throw FormatError("png: only 8-bit depth is supported");
            switch (color_type) {
                case 0: src_channels = 1; break;
                case 2: src_channels = 3; break;
                case 4: src_channels = 2; break;
                case 6: src_channels = 4; break;
                case 3: throw FormatError("png: palette images are not supported");
                default: throw FormatError("png: unknown color type");
            }
            if (img.width < 1 || img.height < 1) throw FormatError("png: bad IHDR extents");
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "tEXt", 4) == 0) {
            const uint8_t* nul = static_cast<const uint8_t*>(std::memchr(data, 0, len));
            if (!nul) throw FormatError("png: tEXt chunk without keyword separator");
            std::string keyword(reinterpret_cast<const char*>(data), nul - data);
            img.text_chunks.emplace_back(std::move(keyword),
                                         std::vector<uint8_t>(nul + 1, data + len));
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr) throw FormatError("png: missing IHDR");
    if (!saw_iend) throw FormatError("png: missing IEND");
    if (idat.empty()) throw FormatError("png: missing IDAT");

    const size_t stride = static_cast<size_t>(img.width) * src_channels;
    const size_t raw_size = static_cast<size_t>(img.height) * (stride + 1);
    std::vector<uint8_t> raw(raw_size);
    uLongf out_len = static_cast<uLongf>(raw_size);
    const int zrc = ::uncompress(raw.data(), &out_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || out_len != raw_size) throw FormatError("png: inflate failed on IDAT");

    // undo scanline filters in place
    std::vector<uint8_t> prev(stride, 0);
    std::vector<uint8_t> cur(stride);
    std::vector<uint8_t> interleaved(static_cast<size_t>(img.height) * stride);
    const int bpp = src_channels;
    for (int y = 0; y < img.height; ++y) {
        const uint8_t* line = raw.data() + static_cast<size_t>(y) * (stride + 1);
        const uint8_t filter = line[0];
        const uint8_t* src = line + 1;
        switch (filter) {
            case 0:
                std::copy(src, src + stride, cur.begin());
                break;
            case 1:
                for (size_t i = 0; i < stride; ++i)
                    cur[i] = static_cast<uint8_t>(src[i] + (i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0));
                break;
            case 2:
                for (size_t i = 0; i < stride; ++i) cur[i] = static_cast<uint8_t>(src[i] + prev[i]);
                break;
            case 3:
                for (size_t i = 0; i < stride; ++i) {
                    const int left = i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0;
                    cur[i] = static_cast<uint8_t>(src[i] + ((left + prev[i]) >> 1));
                }
                break;
            case 4:
                for (size_t i = 0; i < stride; ++i) {
                    const int left = i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0;
                    const int ul = i >= static_cast<size_t>(bpp) ? prev[i - bpp] : 0;
                    cur[i] = static_cast<uint8_t>(src[i] + pngdetail::paeth(left, prev[i], ul));
                }
                break;
            default:
                throw FormatError("png: unknown scanline filter " + std::to_string(filter));
        }
        std::copy(cur.begin(), cur.end(), interleaved.begin() + static_cast<size_t>(y) * stride);
        std::swap(prev, cur);
    }

    // normalize to RGB / RGBA
    const size_t npix = static_cast<size_t>(img.width) * img.height;
    if (color_type == 2 || color_type == 6) {
        img.channels = src_channels;
        img.pixels = std::move(interleaved);
    } else if (color_type == 0) {
        img.channels = 3;
        img.pixels.resize(npix * 3);
        for (size_t i = 0; i < npix; ++i)
            img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] = interleaved[i];
    } else {  // gray + alpha
        img.channels = 4;
        img.pixels.resize(npix * 4);
        for (size_t i = 0; i < npix; ++i) {
            img.pixels[4 * i] = img.pixels[4 * i + 1] = img.pixels[4 * i + 2] = interleaved[2 * i];
            img.pixels[4 * i + 3] = interleaved[2 * i + 1];
        }
    }
    return img;
}

inline void png_write_file(const std::string& path, const PngImage& img) {
    const std::vector<uint8_t> bytes = png_encode(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("failed while writing: " + path);
}

inline PngImage png_read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return png_decode(bytes);
}

// ---- planar float <-> 8-bit conversions ----

inline uint8_t to_byte(float v) {
    const float q = std::nearbyint(v * 255.0f);
    return static_cast<uint8_t>(std::min(std::max(q, 0.0f), 255.0f));
}

template <typename T>
PngImage planes_to_png(const TensorT<T>& rgb, const TensorT<T>* alpha) {
    detail::check_chw(rgb, "planes_to_png");
    if (rgb.dim(0) != 3) throw std::invalid_argument("planes_to_png: expected 3 channels");
    PngImage img;
    img.height = rgb.dim(1);
    img.width = rgb.dim(2);
    img.channels = alpha ? 4 : 3;
    const size_t plane = static_cast<size_t>(img.width) * img.height;
    img.pixels.resize(plane * img.channels);
    for (size_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c)
            img.pixels[i * img.channels + c] = to_byte(static_cast<float>(rgb.data()[c * plane + i]));
        if (alpha) img.pixels[i * 4 + 3] = to_byte(static_cast<float>(alpha->data()[i]));
    }
    return img;
}

// RGB planes in [0,1]; a PNG alpha channel, if present, is dropped here.
template <typename T = float>
TensorT<T> png_to_rgb(const PngImage& img) {
    TensorT<T> out = TensorT<T>::zeros({3, img.height, img.width});
    const size_t plane = static_cast<size_t>(img.width) * img.height;
    for (size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c)
            out.data()[c * plane + i] = static_cast<T>(img.pixels[i * img.channels + c] / 255.0);
    return out;
}

template <typename T = float>
TensorT<T> png_to_alpha(const PngImage& img) {
    if (img.channels != 4) throw FormatError("png: no alpha channel present");
    TensorT<T> out = TensorT<T>::zeros({1, img.height, img.width});
    const size_t plane = static_cast<size_t>(img.width) * img.height;
    for (size_t i = 0; i < plane; ++i)
        out.data()[i] = static_cast<T>(img.pixels[i * 4 + 3] / 255.0);
    return out;
}

template <typename T = float>
TensorT<T> read_image(const std::string& path) {
    return png_to_rgb<T>(png_read_file(path));
}

// ---- artifact container I/O ----

template <typename T>
void write_artifact(const RescaleArtifactT<T>& a, const std::string& path) {
    PngImage img;
    switch (a.variant()) {
        case Variant::alpha:
            img = planes_to_png(a.lr_rgb, &*a.alpha);
            break;
        case Variant::meta: {
            img = planes_to_png<T>(a.lr_rgb, nullptr);
            const std::string b64 = base64_encode(serialize_code(*a.meta));
            img.text_chunks.emplace_back(kLatentChunkKeyword,
                                         std::vector<uint8_t>(b64.begin(), b64.end()));
            break;
        }
        case Variant::baseline:
            img = planes_to_png<T>(a.lr_rgb, nullptr);
            break;
    }
    png_write_file(path, img);
}

template <typename T = float>
RescaleArtifactT<T> read_artifact(const std::string& path) {
    const PngImage img = png_read_file(path);
    RescaleArtifactT<T> a;
    a.lr_rgb = png_to_rgb<T>(img);
    if (img.channels == 4) {
        a.alpha = png_to_alpha<T>(img);
        return a;
    }
    if (const auto* chunk = img.find_text(kLatentChunkKeyword)) {
        const std::string b64(chunk->begin(), chunk->end());
        a.meta = parse_code(base64_decode(b64));
    }
    return a;
}

}  // namespace irn
