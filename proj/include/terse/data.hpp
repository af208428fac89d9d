#pragma once

#include <string>
#include <vector>

#include "terse/affine.hpp"
#include "terse/tensor.hpp"

namespace terse {

enum class Provenance { Real = 0, RandomAugment = 1, Synthesized = 2 };

inline const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::Real: return "real";
        case Provenance::RandomAugment: return "random-augment";
        case Provenance::Synthesized: return "synthesized";
    }
    return "?";
}

struct DatasetSplit {
    std::vector<TensorF> images;  // each HxW, values in [0,1]
    std::vector<int> labels;
    Provenance provenance = Provenance::Real;

    std::size_t size() const { return images.size(); }
};

// ---------------------------------------------------------------------------
// IDX ingestion (the MNIST distribution format): big-endian u32 magic
// (0x803 images / 0x801 labels), big-endian extents, u8 payload scaled by
// 1/255. Errors carry byte offsets.
// ---------------------------------------------------------------------------
DatasetSplit load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const std::string& images_path, const std::string& labels_path,
              const DatasetSplit& split);

// Center a 28x28 image in a 40x40 frame with a 6-pixel black border.
TensorF pad_to_40(const TensorF& image);

// Surrogate affine test set: every base digit is warped by parameters drawn
// uniformly from the ranges; warps that clip the digit against the frame are
// redrawn. Deterministic per seed.
DatasetSplit gen_affine_testset(const DatasetSplit& base, const ClampRanges& ranges,
                                int n_per_digit, std::uint64_t seed);

// True when any pixel of the 1-px frame ring exceeds the threshold.
bool touches_border(const TensorF& image, float threshold = 0.02f);

// Draw affine parameters uniformly from the clamp ranges.
template <typename T, typename RngT>
AffineParamsT<T> draw_affine_params(const ClampRanges& r, RngT& rng) {
    AffineParamsT<T> p;
    for (int i = 0; i < 6; ++i) p[i] = T(rng.uniform(r.lo[i], r.hi[i]));
    return p;
}

// ---------------------------------------------------------------------------
// Sample export: 8-bit binary PGM (P5), optional PNG, plus a manifest CSV
// `file,cycle,index,label,hardness`.
// ---------------------------------------------------------------------------
struct ExportSample {
    TensorF image;
    int cycle = 0;
    int index = 0;
    int label = 0;
    double hardness = 0;
};

enum class ImageFormat { Pgm, Png };

// Returns the number of image files written. Filenames are
// `<cycle>_<index>_<label>.<ext>`; the manifest is `manifest.csv`.
int export_samples(const std::vector<ExportSample>& samples, const std::string& dir,
                   ImageFormat format);

void write_pgm(const std::string& path, const TensorF& image);
TensorF read_pgm(const std::string& path);
void write_png_gray(const std::string& path, const TensorF& image);

}  // namespace terse
