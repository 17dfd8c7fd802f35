#include "image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace cfmn {

namespace {

unsigned char to_byte(real v) {
    if (v < 0) v = 0;
    if (v > 1) v = 1;
    return static_cast<unsigned char>(std::lround(static_cast<double>(v) * 255.0));
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(f),
                                      std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path);
}

// --- PNM -------------------------------------------------------------

// skips whitespace and '#' comments, returns next non-negative integer
int pnm_int(const std::vector<unsigned char>& b, size_t& pos, const std::string& path) {
    while (pos < b.size()) {
        if (std::isspace(b[pos])) {
            ++pos;
        } else if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    if (pos >= b.size() || !std::isdigit(b[pos])) throw IoError(path + ": malformed PNM header");
    int v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) v = v * 10 + (b[pos++] - '0');
    return v;
}

Tensor read_pnm(const std::vector<unsigned char>& b, const std::string& path) {
    const int channels = b[1] == '5' ? 1 : 3;
    size_t pos = 2;
    const int w = pnm_int(b, pos, path);
    const int h = pnm_int(b, pos, path);
    const int maxval = pnm_int(b, pos, path);
    if (maxval != 255) throw IoError(path + ": only maxval 255 PNM supported");
    ++pos;  // single whitespace after maxval
    const size_t need = static_cast<size_t>(w) * h * channels;
    if (b.size() - pos < need) throw IoError(path + ": truncated PNM pixel data");
    Tensor img({channels, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                img.at(c, y, x) =
                    static_cast<real>(b[pos + (static_cast<size_t>(y) * w + x) * channels + c]) /
                    real(255);
    return img;
}

void write_pnm(const std::string& path, const Tensor& img, bool color) {
    const int c = img.extent(0), h = img.extent(1), w = img.extent(2);
    std::string header = std::string(color ? "P6" : "P5") + "\n" + std::to_string(w) + " " +
                         std::to_string(h) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(out.size() + static_cast<size_t>(h) * w * c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) out.push_back(to_byte(img.at(ch, y, x)));
    write_file(path, out);
}

// --- PNG -------------------------------------------------------------

const unsigned char kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

uint32_t get_u32(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void put_chunk(std::vector<unsigned char>& out, const char type[4],
               const std::vector<unsigned char>& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = crc32(0L, nullptr, 0);
    crc = crc32(crc, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, crc);
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

Tensor read_png(const std::vector<unsigned char>& b, const std::string& path) {
    if (b.size() < 8 || std::memcmp(b.data(), kPngSig, 8) != 0)
        throw IoError(path + ": not a PNG file");
    size_t pos = 8;
    int w = 0, h = 0, depth = 0, color = 0, interlace = 0;
    std::vector<unsigned char> idat;
    while (pos + 12 <= b.size()) {
        const uint32_t len = get_u32(b.data() + pos);
        const char* type = reinterpret_cast<const char*>(b.data() + pos + 4);
        const unsigned char* payload = b.data() + pos + 8;
        if (pos + 12 + len > b.size()) throw IoError(path + ": truncated PNG chunk");
        if (std::memcmp(type, "IHDR", 4) == 0) {
            w = static_cast<int>(get_u32(payload));
            h = static_cast<int>(get_u32(payload + 4));
            depth = payload[8];
            color = payload[9];
            interlace = payload[12];
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0) throw IoError(path + ": missing PNG IHDR");
    if (depth != 8 || interlace != 0)
        throw IoError(path + ": only 8-bit non-interlaced PNG supported");
    int src_ch;
    switch (color) {
        case 0: src_ch = 1; break;   // gray
        case 2: src_ch = 3; break;   // rgb
        case 4: src_ch = 2; break;   // gray+alpha
        case 6: src_ch = 4; break;   // rgba
        default: throw IoError(path + ": unsupported PNG color type " + std::to_string(color));
    }

    const size_t stride = static_cast<size_t>(w) * src_ch;
    std::vector<unsigned char> raw((stride + 1) * static_cast<size_t>(h));
    uLongf raw_len = raw.size();
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw IoError(path + ": PNG inflate failed");

    // undo per-row filters in place
    std::vector<unsigned char> img(stride * static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) {
        const unsigned char filter = raw[(stride + 1) * static_cast<size_t>(y)];
        const unsigned char* src = raw.data() + (stride + 1) * static_cast<size_t>(y) + 1;
        unsigned char* dst = img.data() + stride * static_cast<size_t>(y);
        const unsigned char* prev = y > 0 ? img.data() + stride * static_cast<size_t>(y - 1)
                                          : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            const int a = x >= static_cast<size_t>(src_ch) ? dst[x - src_ch] : 0;
            const int up = prev ? prev[x] : 0;
            const int c = (prev && x >= static_cast<size_t>(src_ch)) ? prev[x - src_ch] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += up; break;
                case 3: v += (a + up) / 2; break;
                case 4: v += paeth(a, up, c); break;
                default: throw IoError(path + ": bad PNG filter " + std::to_string(filter));
            }
            dst[x] = static_cast<unsigned char>(v & 0xff);
        }
    }

    const int out_ch = src_ch >= 3 ? 3 : 1;
    const bool has_alpha = src_ch == 2 || src_ch == 4;
    Tensor out({out_ch, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const unsigned char* px = img.data() + stride * static_cast<size_t>(y) +
                                      static_cast<size_t>(x) * src_ch;
            const real alpha = has_alpha ? static_cast<real>(px[src_ch - 1]) / real(255) : real(1);
            for (int c = 0; c < out_ch; ++c) {
                const real v = static_cast<real>(px[c]) / real(255);
                // composite over white
                out.at(c, y, x) = alpha * v + (real(1) - alpha);
            }
        }
    }
    return out;
}

}  // namespace

Tensor read_image(const std::string& path) {
    std::vector<unsigned char> b = read_file(path);
    if (b.size() < 8) throw IoError(path + ": file too small to be an image");
    if (b[0] == 'P' && (b[1] == '5' || b[1] == '6')) return read_pnm(b, path);
    if (std::memcmp(b.data(), kPngSig, 8) == 0) return read_png(b, path);
    throw IoError(path + ": unsupported image format (want PGM/PPM/PNG)");
}

void write_pgm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.extent(0) != 1)
        throw IoError("write_pgm: want [1xHxW], got " + img.shape_str());
    write_pnm(path, img, false);
}

void write_ppm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.extent(0) != 3)
        throw IoError("write_ppm: want [3xHxW], got " + img.shape_str());
    write_pnm(path, img, true);
}

void write_png(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || (img.extent(0) != 1 && img.extent(0) != 3))
        throw IoError("write_png: want [1xHxW] or [3xHxW], got " + img.shape_str());
    const int c = img.extent(0), h = img.extent(1), w = img.extent(2);
    const size_t stride = static_cast<size_t>(w) * c;
    std::vector<unsigned char> raw((stride + 1) * static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) {
        unsigned char* row = raw.data() + (stride + 1) * static_cast<size_t>(y);
        row[0] = 0;  // filter: none
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                row[1 + static_cast<size_t>(x) * c + ch] = to_byte(img.at(ch, y, x));
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) !=
        Z_OK)
        throw IoError("write_png: deflate failed for " + path);
    compressed.resize(bound);

    std::vector<unsigned char> out(kPngSig, kPngSig + 8);
    std::vector<unsigned char> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(w));
    put_u32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);                       // bit depth
    ihdr.push_back(c == 1 ? 0 : 2);          // gray / rgb
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", compressed);
    put_chunk(out, "IEND", {});
    write_file(path, out);
}

}  // namespace cfmn
