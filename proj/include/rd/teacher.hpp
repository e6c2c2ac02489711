#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rd/numerics.hpp"
#include "rd/ril.hpp"

namespace rd {

// Generator parameters for a synthetic dataset. Patterns depend only on
// (pattern_seed, class id), so two datasets sharing those fields share
// class semantics and can be cross-evaluated.
struct DatasetSpec {
    std::uint32_t image_count = 80;
    std::uint32_t grid_size = 64;
    std::uint32_t class_count = 8;
    double noise_level = 0.1;
    std::uint64_t generator_seed = 1;
    std::uint64_t pattern_seed = 1234;
    std::uint32_t class_offset = 0;  // global id of local class 0

    static DatasetSpec from_json_file(const std::string& path);
    std::string to_json() const;
};

struct SyntheticImage {
    std::uint64_t image_id = 0;
    std::uint32_t planted_class = 0;  // local class index
    CropBox pattern_box;
    std::uint32_t size = 0;           // grid is size x size
    Vec64 grid;

    double at(std::uint32_t r, std::uint32_t c) const { return grid[r * size + c]; }
};

inline constexpr std::uint32_t kPatternRes = 16;

class SyntheticDataset {
public:
    static SyntheticDataset generate(const DatasetSpec& spec);

    const DatasetSpec& spec() const { return spec_; }
    std::size_t size() const { return images_.size(); }
    const SyntheticImage& image(std::size_t i) const { return images_.at(i); }
    std::uint32_t class_of(std::size_t i) const { return images_.at(i).planted_class; }

    // High-contrast class pattern at kPatternRes resolution, a pure function
    // of (pattern_seed, global class id).
    static Vec64 make_pattern(std::uint64_t pattern_seed, std::uint32_t global_class);

private:
    DatasetSpec spec_;
    std::vector<SyntheticImage> images_;
};

// Bilinear resample of a square field onto an n_dst x n_dst patch.
Vec64 resample_square(const Vec64& src, std::uint32_t n_src, std::uint32_t n_dst);

// Extracts the crop region, resamples to patch_size x patch_size (bilinear)
// and applies the augmentation. Throws InvalidInputError for sub-pixel crops.
Vec64 extract_patch(const SyntheticImage& img, const CropBox& box, AugmentTag tag,
                    std::uint32_t patch_size);

// Subtracts the patch mean in place.
void center_patch(Vec64& patch);

struct CropDesc {
    CropBox box;
    AugmentTag augment = AugmentTag::None;
};

// Random-resized-crop law: area uniform in [0.08, 1], aspect log-uniform in
// [3/4, 4/3], clipped to bounds, horizontal flip with probability 0.5.
std::vector<CropDesc> sample_crops(std::uint32_t m, std::uint64_t seed);

// Per-image crop sequence used by both the offline builder and the online
// label source, so the two modes see identical geometry.
std::vector<CropDesc> crops_for_image(std::uint64_t build_seed, std::uint64_t image_id,
                                      std::uint32_t m);

struct TeacherConfig {
    std::uint32_t embed_dim = 256;
    double temperature = 0.1;
    std::uint32_t patch_size = 16;
    std::uint64_t seed = 7;
    std::uint32_t cost_multiplier = 1;  // inflates per-crop compute in benchmarks
};

// Frozen synthetic dual encoder: a fixed random projection of the centered
// crop patch against fixed per-class prototype embeddings. Deterministic:
// the same crop bytes always produce the same soft label.
class TeacherOracle {
public:
    TeacherOracle(const TeacherConfig& cfg, std::uint64_t pattern_seed,
                  std::uint32_t class_offset, std::uint32_t class_count);

    Distribution predict(const SyntheticImage& img, const CropBox& box,
                         AugmentTag tag) const;
    Vec64 embed_patch(Vec64 raw_patch) const;  // center, project, unit-normalize

    const TeacherConfig& config() const { return cfg_; }
    std::uint32_t class_count() const { return static_cast<std::uint32_t>(prototypes_.size()); }
    const Vec64& prototype(std::uint32_t local_class) const { return prototypes_.at(local_class); }
    const Mat& projection() const { return projection_; }

private:
    TeacherConfig cfg_;
    Mat projection_;  // embed_dim x patch_size^2
    std::vector<Vec64> prototypes_;
};

struct BuildSummary {
    std::uint64_t record_count = 0;
    double mean_info_weight = 0.0;
    double wall_seconds = 0.0;
    std::uint64_t bytes_written = 0;
};

BuildSummary build_ril(const SyntheticDataset& dataset, const TeacherOracle& oracle,
                       std::uint32_t crops_per_image, std::uint32_t top_k,
                       SparsifyMode mode, std::uint64_t seed,
                       const std::string& destination);

}  // namespace rd
