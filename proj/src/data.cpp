#include "terse/data.hpp"

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "terse/compositor.hpp"
#include "terse/rng.hpp"

namespace terse {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::istream& is, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error(path + ": truncated at byte " + std::to_string(offset) +
                                 " (expected 4 more bytes)");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

void write_be32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::size_t file_size(const std::string& path) {
    std::error_code ec;
    const auto n = std::filesystem::file_size(path, ec);
    return ec ? 0 : static_cast<std::size_t>(n);
}

}  // namespace

DatasetSplit load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw std::runtime_error("cannot open " + images_path);
    const std::uint32_t imagic = read_be32(imgs, images_path, 0);
    if (imagic != kImagesMagic)
        throw std::runtime_error(images_path + ": bad magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%08x", imagic);
            return std::string(buf);
        }() + " at byte 0 (want 0x00000803)");
    const std::uint32_t count = read_be32(imgs, images_path, 4);
    const std::uint32_t rows = read_be32(imgs, images_path, 8);
    const std::uint32_t cols = read_be32(imgs, images_path, 12);
    const std::size_t want = static_cast<std::size_t>(count) * rows * cols;
    const std::size_t have = file_size(images_path);
    if (have != 16 + want)
        throw std::runtime_error(images_path + ": payload is " + std::to_string(have - 16) +
                                 " bytes at offset 16, header promises " + std::to_string(want));

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw std::runtime_error("cannot open " + labels_path);
    const std::uint32_t lmagic = read_be32(labs, labels_path, 0);
    if (lmagic != kLabelsMagic)
        throw std::runtime_error(labels_path + ": bad magic at byte 0 (want 0x00000801)");
    const std::uint32_t lcount = read_be32(labs, labels_path, 4);
    if (lcount != count)
        throw std::runtime_error(labels_path + ": " + std::to_string(lcount) + " labels for " +
                                 std::to_string(count) + " images in " + images_path);
    if (file_size(labels_path) != 8 + lcount)
        throw std::runtime_error(labels_path + ": payload is " +
                                 std::to_string(file_size(labels_path) - 8) +
                                 " bytes at offset 8, header promises " + std::to_string(lcount));

    DatasetSplit split;
    split.images.reserve(count);
    split.labels.reserve(count);
    std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
    for (std::uint32_t i = 0; i < count; ++i) {
        imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        TensorF img({static_cast<int>(rows), static_cast<int>(cols)});
        for (std::size_t p = 0; p < buf.size(); ++p) img[p] = static_cast<float>(buf[p]) / 255.0f;
        split.images.push_back(std::move(img));
        int lab = labs.get();
        if (lab < 0)
            throw std::runtime_error(labels_path + ": truncated at byte " + std::to_string(8 + i));
        split.labels.push_back(lab);
    }
    return split;
}

void save_idx(const std::string& images_path, const std::string& labels_path,
              const DatasetSplit& split) {
    if (split.images.empty()) throw std::invalid_argument("save_idx: empty split");
    const int rows = split.images[0].dim(0), cols = split.images[0].dim(1);
    std::ofstream imgs(images_path, std::ios::binary | std::ios::trunc);
    if (!imgs) throw std::runtime_error("cannot open " + images_path + " for writing");
    write_be32(imgs, kImagesMagic);
    write_be32(imgs, static_cast<std::uint32_t>(split.size()));
    write_be32(imgs, static_cast<std::uint32_t>(rows));
    write_be32(imgs, static_cast<std::uint32_t>(cols));
    std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
    for (const TensorF& img : split.images) {
        for (std::size_t p = 0; p < buf.size(); ++p)
            buf[p] = static_cast<unsigned char>(
                std::lround(std::min(1.0f, std::max(0.0f, img[p])) * 255.0f));
        imgs.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    std::ofstream labs(labels_path, std::ios::binary | std::ios::trunc);
    if (!labs) throw std::runtime_error("cannot open " + labels_path + " for writing");
    write_be32(labs, kLabelsMagic);
    write_be32(labs, static_cast<std::uint32_t>(split.size()));
    for (int lab : split.labels) labs.put(static_cast<char>(lab));
}

TensorF pad_to_40(const TensorF& image) {
    require_shape(image, {28, 28}, "pad_to_40");
    TensorF out({40, 40});
    for (int y = 0; y < 28; ++y)
        for (int x = 0; x < 28; ++x) out.at2(y + 6, x + 6) = image.at2(y, x);
    return out;
}

bool touches_border(const TensorF& image, float threshold) {
    const int H = image.dim(0), W = image.dim(1);
    for (int x = 0; x < W; ++x)
        if (image.at2(0, x) > threshold || image.at2(H - 1, x) > threshold) return true;
    for (int y = 0; y < H; ++y)
        if (image.at2(y, 0) > threshold || image.at2(y, W - 1) > threshold) return true;
    return false;
}

DatasetSplit gen_affine_testset(const DatasetSplit& base, const ClampRanges& ranges,
                                int n_per_digit, std::uint64_t seed) {
    ranges.validate();
    std::array<std::vector<std::size_t>, 10> by_class;
    for (std::size_t i = 0; i < base.size(); ++i)
        by_class[static_cast<std::size_t>(base.labels[i])].push_back(i);

    DatasetSplit out;
    out.provenance = Provenance::RandomAugment;
    out.images.reserve(static_cast<std::size_t>(n_per_digit) * 10);
    out.labels.reserve(static_cast<std::size_t>(n_per_digit) * 10);
    for (int cls = 0; cls < 10; ++cls) {
        const auto& pool = by_class[static_cast<std::size_t>(cls)];
        if (pool.empty())
            throw std::invalid_argument("gen_affine_testset: base split has no digits of class " +
                                        std::to_string(cls));
        for (int k = 0; k < n_per_digit; ++k) {
            const TensorF& digit = base.images[pool[static_cast<std::size_t>(k) % pool.size()]];
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(cls) * 1000003u,
                                static_cast<std::uint64_t>(k)));
            TensorF warped;
            for (int attempt = 0; attempt < 8; ++attempt) {
                const auto p = draw_affine_params<float>(ranges, rng);
                warped = warp_by_matrix(digit, affine_to_matrix(p));
                if (!touches_border(warped)) break;
            }
            out.images.push_back(std::move(warped));
            out.labels.push_back(cls);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// PGM / PNG / manifest
// ---------------------------------------------------------------------------

void write_pgm(const std::string& path, const TensorF& image) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "P5\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
    for (std::size_t i = 0; i < image.size(); ++i)
        os.put(static_cast<char>(
            std::lround(std::min(1.0f, std::max(0.0f, image[i])) * 255.0f)));
    if (!os) throw std::runtime_error("write failure on " + path);
}

TensorF read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    is >> magic >> w >> h >> maxval;
    if (magic != "P5" || maxval != 255)
        throw std::runtime_error(path + ": expected binary P5 with maxval 255");
    is.get();  // single whitespace after header
    TensorF img({h, w});
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h);
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
        throw std::runtime_error(path + ": truncated pixel payload");
    for (std::size_t i = 0; i < buf.size(); ++i) img[i] = static_cast<float>(buf[i]) / 255.0f;
    return img;
}

void write_png_gray(const std::string& path, const TensorF& image) {
    const int W = image.dim(1), H = image.dim(0);
    // filter byte 0 per row, then zlib stream, wrapped in IHDR/IDAT/IEND
    std::vector<unsigned char> rawdata(static_cast<std::size_t>(H) * (W + 1));
    for (int y = 0; y < H; ++y) {
        rawdata[static_cast<std::size_t>(y) * (W + 1)] = 0;
        for (int x = 0; x < W; ++x)
            rawdata[static_cast<std::size_t>(y) * (W + 1) + 1 + x] = static_cast<unsigned char>(
                std::lround(std::min(1.0f, std::max(0.0f, image.at2(y, x))) * 255.0f));
    }
    uLongf comp_len = compressBound(static_cast<uLong>(rawdata.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, rawdata.data(), static_cast<uLong>(rawdata.size()), 9) != Z_OK)
        throw std::runtime_error("png: zlib compression failed for " + path);
    comp.resize(comp_len);

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    os.write(reinterpret_cast<const char*>(sig), 8);
    auto chunk = [&](const char type[4], const unsigned char* data, std::size_t len) {
        write_be32(os, static_cast<std::uint32_t>(len));
        os.write(type, 4);
        if (len) os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(len));
        uLong crc = crc32(0, reinterpret_cast<const Bytef*>(type), 4);
        if (len) crc = crc32(crc, data, static_cast<uInt>(len));
        write_be32(os, static_cast<std::uint32_t>(crc));
    };
    unsigned char ihdr[13];
    const std::uint32_t wbe = static_cast<std::uint32_t>(W), hbe = static_cast<std::uint32_t>(H);
    ihdr[0] = static_cast<unsigned char>(wbe >> 24);
    ihdr[1] = static_cast<unsigned char>(wbe >> 16);
    ihdr[2] = static_cast<unsigned char>(wbe >> 8);
    ihdr[3] = static_cast<unsigned char>(wbe);
    ihdr[4] = static_cast<unsigned char>(hbe >> 24);
    ihdr[5] = static_cast<unsigned char>(hbe >> 16);
    ihdr[6] = static_cast<unsigned char>(hbe >> 8);
    ihdr[7] = static_cast<unsigned char>(hbe);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 0;   // grayscale
    ihdr[10] = ihdr[11] = ihdr[12] = 0;
    chunk("IHDR", ihdr, sizeof(ihdr));
    chunk("IDAT", comp.data(), comp.size());
    chunk("IEND", nullptr, 0);
    if (!os) throw std::runtime_error("write failure on " + path);
}

int export_samples(const std::vector<ExportSample>& samples, const std::string& dir,
                   ImageFormat format) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (!std::filesystem::is_directory(dir))
        throw std::runtime_error("export: cannot create directory " + dir);
    {
        std::ofstream probe(dir + "/.write_probe");
        if (!probe) throw std::runtime_error("export: directory " + dir + " is not writable");
    }
    std::filesystem::remove(dir + "/.write_probe", ec);

    std::ofstream manifest(dir + "/manifest.csv", std::ios::trunc);
    if (!manifest) throw std::runtime_error("export: cannot write manifest in " + dir);
    manifest << "file,cycle,index,label,hardness\n";
    int written = 0;
    char hard[32];
    for (const ExportSample& s : samples) {
        const std::string stem = std::to_string(s.cycle) + "_" + std::to_string(s.index) + "_" +
                                 std::to_string(s.label);
        const std::string fname = stem + (format == ImageFormat::Pgm ? ".pgm" : ".png");
        if (format == ImageFormat::Pgm)
            write_pgm(dir + "/" + fname, s.image);
        else
            write_png_gray(dir + "/" + fname, s.image);
        std::snprintf(hard, sizeof(hard), "%.6f", s.hardness);
        manifest << fname << "," << s.cycle << "," << s.index << "," << s.label << "," << hard
                 << "\n";
        ++written;
    }
    if (!manifest) throw std::runtime_error("export: write failure on manifest in " + dir);
    return written;
}

}  // namespace terse
