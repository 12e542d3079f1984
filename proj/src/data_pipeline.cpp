#include "surge/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace surge {

namespace fs = std::filesystem;

std::string DatasetManifest::full_path(size_t i) const {
    fs::path p(entries.at(i));
    if (p.is_absolute()) return p.string();
    return (fs::path(root_path) / p).string();
}

DatasetManifest load_manifest(const std::string& path, const std::string& split_tag) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("manifest: cannot open " + path);
    DatasetManifest m;
    m.root_path = fs::path(path).parent_path().string();
    if (m.root_path.empty()) m.root_path = ".";
    m.split_tag = split_tag;
    std::string line;
    while (std::getline(in, line)) {
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r'))
            line.pop_back();
        size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        m.entries.push_back(line.substr(start));
    }
    if (m.entries.empty()) throw PreconditionError("manifest: no entries in " + path);
    return m;
}

ValidatedDataset validate_manifest(const DatasetManifest& manifest, int64_t min_side) {
    ValidatedDataset out;
    out.manifest.root_path = manifest.root_path;
    out.manifest.split_tag = manifest.split_tag;
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
        const std::string path = manifest.full_path(i);
        Image img = load_image(path);  // decode errors propagate
        if (std::min(img.h, img.w) < min_side) {
            out.warnings.push_back("excluded " + path + ": short side " +
                                   std::to_string(std::min(img.h, img.w)) + " < " +
                                   std::to_string(min_side));
            continue;
        }
        out.manifest.entries.push_back(manifest.entries[i]);
    }
    return out;
}

namespace {

// Catmull-Rom kernel, the a = -0.5 member of the cubic family.
double cubic_kernel(double x) {
    constexpr double a = -0.5;
    x = std::fabs(x);
    if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
}

// One separable resampling pass along the row axis; H x W -> out_h x W.
// scale > 1 shrinks. The kernel support is stretched by max(scale, 1) so a
// reduction low-passes before sampling.
std::vector<double> resample_rows(const std::vector<double>& src, int64_t h, int64_t w,
                                  int64_t out_h, double scale) {
    std::vector<double> dst(static_cast<size_t>(out_h * w * 3));
    const double support = 2.0 * std::max(scale, 1.0);
    const double kscale = 1.0 / std::max(scale, 1.0);
    for (int64_t oy = 0; oy < out_h; ++oy) {
        const double center = (double(oy) + 0.5) * scale - 0.5;
        const int64_t lo = static_cast<int64_t>(std::floor(center - support + 0.5));
        const int64_t hi = static_cast<int64_t>(std::floor(center + support + 0.5));
        double wsum = 0.0;
        std::vector<double> weights;
        weights.reserve(static_cast<size_t>(hi - lo + 1));
        for (int64_t sy = lo; sy <= hi; ++sy) {
            const double wgt = cubic_kernel((double(sy) - center) * kscale);
            weights.push_back(wgt);
            wsum += wgt;
        }
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int64_t sy = lo; sy <= hi; ++sy) {
                    const int64_t cy = std::clamp<int64_t>(sy, 0, h - 1);  // edge clamp
                    acc += weights[static_cast<size_t>(sy - lo)] *
                           src[static_cast<size_t>((cy * w + x) * 3 + c)];
                }
                dst[static_cast<size_t>((oy * w + x) * 3 + c)] = acc / wsum;
            }
    }
    return dst;
}

std::vector<double> transpose_hw(const std::vector<double>& src, int64_t h, int64_t w) {
    std::vector<double> dst(src.size());
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                dst[static_cast<size_t>((x * h + y) * 3 + c)] =
                    src[static_cast<size_t>((y * w + x) * 3 + c)];
    return dst;
}

Image resample(const Image& img, int64_t out_h, int64_t out_w) {
    std::vector<double> buf(img.pixels.begin(), img.pixels.end());
    buf = resample_rows(buf, img.h, img.w, out_h, double(img.h) / double(out_h));
    buf = transpose_hw(buf, out_h, img.w);
    buf = resample_rows(buf, img.w, out_h, out_w, double(img.w) / double(out_w));
    buf = transpose_hw(buf, out_w, out_h);
    Image out(out_h, out_w, img.source_id);
    for (size_t i = 0; i < out.pixels.size(); ++i)
        out.pixels[i] = float(std::clamp(buf[i], 0.0, 1.0));
    return out;
}

}  // namespace

Image bicubic_downscale(const Image& img, int64_t factor) {
    if (factor < 2) throw PreconditionError("bicubic_downscale: factor must be >= 2");
    if (img.h % factor != 0 || img.w % factor != 0)
        throw PreconditionError("bicubic_downscale: dimensions " + std::to_string(img.h) + "x" +
                                std::to_string(img.w) + " not divisible by " +
                                std::to_string(factor));
    return resample(img, img.h / factor, img.w / factor);
}

Image bicubic_upscale(const Image& img, int64_t factor) {
    if (factor < 2) throw PreconditionError("bicubic_upscale: factor must be >= 2");
    return resample(img, img.h * factor, img.w * factor);
}

PatchCrop extract_random_patch(const Image& img, int64_t size, Rng& rng) {
    if (img.h < size || img.w < size)
        throw PreconditionError("extract_random_patch: image " + std::to_string(img.h) + "x" +
                                std::to_string(img.w) + " smaller than patch size " +
                                std::to_string(size));
    PatchCrop crop;
    crop.row = rng.uniform_int(img.h - size + 1);
    crop.col = rng.uniform_int(img.w - size + 1);
    crop.patch = Image(size, size, img.source_id);
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x)
            for (int64_t c = 0; c < 3; ++c)
                crop.patch.at(y, x, c) = img.at(crop.row + y, crop.col + x, c);
    return crop;
}

PatchPair make_patch_pair(const Image& img, int64_t patch_size, int64_t factor, Rng& rng) {
    PatchCrop crop = extract_random_patch(img, patch_size, rng);
    PatchPair pair;
    pair.lr = bicubic_downscale(crop.patch, factor);
    pair.hr = std::move(crop.patch);
    pair.source_id = img.source_id;
    pair.crop_row = crop.row;
    pair.crop_col = crop.col;
    return pair;
}

std::vector<Batch> make_epoch_batches(const DatasetManifest& manifest, int64_t batch_size,
                                      const Rng& seed_rng, uint64_t epoch, int64_t patch_size,
                                      int64_t factor) {
    if (batch_size < 2) throw ConfigError("make_epoch_batches: batch_size must be >= 2");
    const int64_t n = static_cast<int64_t>(manifest.entries.size());
    if (n < batch_size)
        throw ConfigError("make_epoch_batches: " + std::to_string(n) +
                          " usable images < batch size " + std::to_string(batch_size));

    std::vector<PatchPair> patches;
    patches.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        Image img = load_image(manifest.full_path(static_cast<size_t>(i)));
        Rng sub = seed_rng.substream(epoch, static_cast<uint64_t>(i));
        patches.push_back(make_patch_pair(img, patch_size, factor, sub));
    }

    // Fisher-Yates on a dedicated stream, independent of the patch streams.
    Rng shuffle_rng = seed_rng.substream(epoch, 0xfffffffffffffULL);
    for (int64_t i = n - 1; i > 0; --i) {
        const int64_t j = shuffle_rng.uniform_int(i + 1);
        std::swap(patches[static_cast<size_t>(i)], patches[static_cast<size_t>(j)]);
    }

    std::vector<Batch> batches;
    for (int64_t b = 0; b + batch_size <= n; b += batch_size) {
        Batch batch;
        for (int64_t k = 0; k < batch_size; ++k)
            batch.pairs.push_back(std::move(patches[static_cast<size_t>(b + k)]));
        batches.push_back(std::move(batch));
    }
    return batches;
}

}  // namespace surge
