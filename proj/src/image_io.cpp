#include "omnirestore/image_io.hpp"

#include <zlib.h>

#include <cctype>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include "omnirestore/error.hpp"

namespace omnirestore {

std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

namespace {

// PPM whitespace per the spec: blanks, newlines, and '#' comments to end of line.
void skip_ppm_space(const std::vector<unsigned char>& b, size_t& at) {
    while (at < b.size()) {
        if (std::isspace(b[at])) {
            ++at;
        } else if (b[at] == '#') {
            while (at < b.size() && b[at] != '\n') ++at;
        } else {
            return;
        }
    }
}

long parse_ppm_int(const std::vector<unsigned char>& b, size_t& at, const char* what) {
    skip_ppm_space(b, at);
    if (at >= b.size() || !std::isdigit(b[at]))
        throw ParseError(std::string("ppm: expected ") + what + " at byte offset " + std::to_string(at));
    long v = 0;
    while (at < b.size() && std::isdigit(b[at])) {
        v = v * 10 + (b[at] - '0');
        if (v > 1 << 20) throw ParseError(std::string("ppm: unreasonable ") + what);
        ++at;
    }
    return v;
}

}  // namespace

ImageBuffer decode_ppm(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P')
        throw ParseError("ppm: missing magic at byte offset 0");
    if (bytes[1] != '6')
        throw ParseError(std::string("ppm: unsupported magic P") + static_cast<char>(bytes[1]) +
                         " at byte offset 1 (only P6 RGB is supported)");
    size_t at = 2;
    const long w = parse_ppm_int(bytes, at, "width");
    const long h = parse_ppm_int(bytes, at, "height");
    const long maxval = parse_ppm_int(bytes, at, "maxval");
    if (maxval != 255)
        throw ParseError("ppm: maxval must be 255, got " + std::to_string(maxval) +
                         " at byte offset " + std::to_string(at));
    if (at >= bytes.size() || !std::isspace(bytes[at]))
        throw ParseError("ppm: expected single whitespace before payload at byte offset " +
                         std::to_string(at));
    ++at;
    const size_t need = static_cast<size_t>(w) * h * 3;
    if (bytes.size() - at < need)
        throw IoError("ppm: truncated payload, need " + std::to_string(need) + " bytes, have " +
                      std::to_string(bytes.size() - at));
    ImageBuffer img(static_cast<int>(h), static_cast<int>(w));
    for (size_t i = 0; i < need; ++i) img.data[i] = static_cast<float>(bytes[at + i]) / 255.f;
    return img;
}

std::vector<unsigned char> encode_ppm(const ImageBuffer& img) {
    std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                         "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(out.size() + img.data.size());
    for (float v : img.data) out.push_back(ImageBuffer::quantize(v));
    return out;
}

namespace {

constexpr unsigned char kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

std::uint32_t read_be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

void push_chunk(std::vector<unsigned char>& out, const char type[4],
                const std::vector<unsigned char>& payload) {
    push_be32(out, static_cast<std::uint32_t>(payload.size()));
    const size_t crc_from = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const auto crc = crc32(0L, out.data() + crc_from, static_cast<uInt>(out.size() - crc_from));
    push_be32(out, static_cast<std::uint32_t>(crc));
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

ImageBuffer decode_png(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSignature, 8) != 0)
        throw ParseError("png: bad signature at byte offset 0");
    size_t at = 8;
    long w = 0, h = 0;
    bool have_ihdr = false, have_iend = false;
    std::vector<unsigned char> idat;
    while (at < bytes.size()) {
        if (bytes.size() - at < 12)
            throw ParseError("png: truncated chunk header at byte offset " + std::to_string(at));
        const std::uint32_t len = read_be32(&bytes[at]);
        const char* type = reinterpret_cast<const char*>(&bytes[at + 4]);
        if (bytes.size() - at - 12 < len)
            throw IoError("png: truncated chunk payload at byte offset " + std::to_string(at));
        const unsigned char* payload = &bytes[at + 8];
        const std::uint32_t stored_crc = read_be32(&bytes[at + 8 + len]);
        const auto crc = crc32(0L, &bytes[at + 4], static_cast<uInt>(len + 4));
        if (static_cast<std::uint32_t>(crc) != stored_crc)
            throw ParseError("png: bad chunk crc at byte offset " + std::to_string(at));
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw ParseError("png: IHDR length must be 13");
            w = read_be32(payload);
            h = read_be32(payload + 4);
            const int depth = payload[8], color = payload[9], interlace = payload[12];
            if (depth != 8 || color != 2)
                throw FormatError("png: only 8-bit RGB (color type 2) is supported");
            if (interlace != 0) throw FormatError("png: interlaced images are not supported");
            have_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            have_iend = true;
            break;
        }
        at += 12 + len;
    }
    if (!have_ihdr || !have_iend || w <= 0 || h <= 0)
        throw ParseError("png: missing IHDR or IEND");

    const size_t stride = static_cast<size_t>(w) * 3;
    std::vector<unsigned char> raw(static_cast<size_t>(h) * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    const int zrc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || raw_len != raw.size())
        throw IoError("png: inflate failed or payload truncated");

    ImageBuffer img(static_cast<int>(h), static_cast<int>(w));
    std::vector<unsigned char> prev(stride, 0), cur(stride, 0);
    for (long y = 0; y < h; ++y) {
        const unsigned char* row = raw.data() + static_cast<size_t>(y) * (stride + 1);
        const int filter = row[0];
        for (size_t x = 0; x < stride; ++x) {
            const int rv = row[1 + x];
            const int a = x >= 3 ? cur[x - 3] : 0;
            const int b = prev[x];
            const int c = x >= 3 ? prev[x - 3] : 0;
            int v;
            switch (filter) {
                case 0: v = rv; break;
                case 1: v = rv + a; break;
                case 2: v = rv + b; break;
                case 3: v = rv + (a + b) / 2; break;
                case 4: v = rv + paeth(a, b, c); break;
                default:
                    throw ParseError("png: unknown filter type " + std::to_string(filter) +
                                     " in row " + std::to_string(y));
            }
            cur[x] = static_cast<unsigned char>(v & 0xff);
            img.data[static_cast<size_t>(y) * stride + x] = static_cast<float>(cur[x]) / 255.f;
        }
        std::swap(prev, cur);
    }
    return img;
}

std::vector<unsigned char> encode_png(const ImageBuffer& img) {
    const size_t stride = static_cast<size_t>(img.width) * 3;
    std::vector<unsigned char> raw(static_cast<size_t>(img.height) * (stride + 1), 0);
    for (int y = 0; y < img.height; ++y) {
        unsigned char* row = raw.data() + static_cast<size_t>(y) * (stride + 1);
        row[0] = 0;  // no per-row filtering
        for (size_t x = 0; x < stride; ++x)
            row[1 + x] = ImageBuffer::quantize(img.data[static_cast<size_t>(y) * stride + x]);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("png: deflate failed");
    compressed.resize(bound);

    std::vector<unsigned char> out(kPngSignature, kPngSignature + 8);
    std::vector<unsigned char> ihdr;
    push_be32(ihdr, static_cast<std::uint32_t>(img.width));
    push_be32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // RGB
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // no interlace
    push_chunk(out, "IHDR", ihdr);
    push_chunk(out, "IDAT", compressed);
    push_chunk(out, "IEND", {});
    return out;
}

namespace {

bool has_suffix(const std::string& s, const char* suffix) {
    const size_t n = std::strlen(suffix);
    if (s.size() < n) return false;
    for (size_t i = 0; i < n; ++i) {
        const char c = s[s.size() - n + i];
        if (std::tolower(c) != suffix[i]) return false;
    }
    return true;
}

}  // namespace

ImageBuffer read_image(const std::string& path) {
    if (has_suffix(path, ".ppm")) return decode_ppm(read_file_bytes(path));
    if (has_suffix(path, ".png")) return decode_png(read_file_bytes(path));
    throw FormatError("unsupported image extension (expected .ppm or .png): " + path);
}

void write_image(const ImageBuffer& img, const std::string& path) {
    if (has_suffix(path, ".ppm")) {
        write_file_bytes(path, encode_ppm(img));
    } else if (has_suffix(path, ".png")) {
        write_file_bytes(path, encode_png(img));
    } else {
        throw FormatError("unsupported image extension (expected .ppm or .png): " + path);
    }
}

}  // namespace omnirestore
