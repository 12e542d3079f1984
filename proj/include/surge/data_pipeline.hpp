#pragma once

#include <string>
#include <vector>

#include "surge/image.hpp"
#include "surge/rng.hpp"

namespace surge {

// Aligned training pair: a random HR crop and its bicubic 4x reduction.
struct PatchPair {
    Image hr;  // 256x256x3 under the default patch size
    Image lr;  // 64x64x3
    std::string source_id;
    int64_t crop_row = 0, crop_col = 0;
};

struct Batch {
    std::vector<PatchPair> pairs;
    int64_t size() const { return static_cast<int64_t>(pairs.size()); }
};

struct DatasetManifest {
    std::string root_path;
    std::vector<std::string> entries;  // image paths relative to root_path
    std::string split_tag;

    std::string full_path(size_t i) const;
};

// Parses a line-delimited manifest ('#' starts a comment). The manifest's
// directory becomes the root for relative entries.
DatasetManifest load_manifest(const std::string& path, const std::string& split_tag = "train");

// Decodes every entry, drops images whose short side is below min_side and
// reports one warning line per dropped entry.
struct ValidatedDataset {
    DatasetManifest manifest;  // usable entries only
    std::vector<std::string> warnings;
};
ValidatedDataset validate_manifest(const DatasetManifest& manifest, int64_t min_side = 256);

// Catmull-Rom (a = -0.5) resampling with edge clamping. Downscale prefilters
// by stretching the kernel support with the scale factor; weights are
// renormalized per output pixel so constant images stay constant.
Image bicubic_downscale(const Image& img, int64_t factor);
Image bicubic_upscale(const Image& img, int64_t factor);

struct PatchCrop {
    Image patch;
    int64_t row = 0, col = 0;
};
PatchCrop extract_random_patch(const Image& img, int64_t size, Rng& rng);

PatchPair make_patch_pair(const Image& img, int64_t patch_size, int64_t factor, Rng& rng);

// One random patch per source image, shuffled, grouped into batches of
// batch_size with the trailing partial batch dropped. Deterministic in
// (manifest, batch_size, seed, epoch): randomness comes from per-(epoch,
// image) substreams plus a per-epoch shuffle stream, never from iteration
// order.
std::vector<Batch> make_epoch_batches(const DatasetManifest& manifest, int64_t batch_size,
                                      const Rng& seed_rng, uint64_t epoch,
                                      int64_t patch_size = 256, int64_t factor = 4);

}  // namespace surge
