#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rd/numerics.hpp"

namespace rd {

enum class SparsifyMode : std::uint8_t { Full = 0, MS = 1, MR = 2 };

std::string mode_name(SparsifyMode m);
SparsifyMode mode_from_name(const std::string& name);

// Top-K compressed soft label. Top entries are ordered by descending
// probability, ties broken by ascending class id.
struct SparsifiedLabel {
    SparsifyMode mode = SparsifyMode::Full;
    std::uint32_t class_count = 0;
    std::vector<std::uint32_t> top_indices;
    std::vector<float> top_probs;
    float tail_value = 0.0f;         // MS only
    std::vector<float> full_probs;   // Full only
};

enum class AugmentTag : std::uint8_t { None = 0, HFlip = 1 };

// Crop geometry as fractions of the image extent.
struct CropBox {
    float x = 0, y = 0, w = 0, h = 0;
    bool valid() const {
        return x >= 0 && y >= 0 && w > 0 && h > 0 && x + w <= 1.0f + 1e-6f &&
               y + h <= 1.0f + 1e-6f;
    }
};

struct RilRecord {
    std::uint64_t image_id = 0;
    CropBox crop;
    AugmentTag augment = AugmentTag::None;
    SparsifiedLabel label;
    float info_weight = 0.0f;       // from the FULL teacher distribution
    std::uint32_t pseudo_label = 0; // argmax of the FULL teacher distribution
};

struct RilHeader {
    std::uint16_t version = 1;
    SparsifyMode mode = SparsifyMode::Full;
    std::uint32_t class_count = 0;
    std::uint16_t top_k = 0;        // == class_count in Full mode
    std::uint32_t crops_per_image = 0;
    std::uint64_t record_count = 0;
};

SparsifiedLabel sparsify_ms(const Distribution& p, std::uint32_t k);
SparsifiedLabel sparsify_mr(const Distribution& p, std::uint32_t k);
SparsifiedLabel sparsify_full(const Distribution& p);
SparsifiedLabel sparsify(const Distribution& p, SparsifyMode mode, std::uint32_t k);
Distribution densify(const SparsifiedLabel& label);

// w = 1 - H(p)/log(C), clamped to [0,1]. C == 1 yields 1.
double info_weight(const Distribution& p);

// Serialized record size in bytes for one (mode, K) configuration.
std::size_t record_byte_size(SparsifyMode mode, std::uint32_t k);

// Atomically writes the container (temp file + rename). Returns bytes written.
std::uint64_t write_table(const std::vector<RilRecord>& records, RilHeader header,
                          const std::string& path);

// Random-access reader. Immutable once opened; reads use pread, so a single
// instance is safe to share across concurrent readers.
class RilTable {
public:
    static RilTable open(const std::string& path);
    RilTable(RilTable&&) noexcept;
    RilTable& operator=(RilTable&&) noexcept;
    ~RilTable();

    const RilHeader& header() const { return header_; }
    std::uint64_t record_count() const { return header_.record_count; }
    RilRecord read_record(std::uint64_t index) const;
    std::uint64_t file_size() const { return file_size_; }

private:
    RilTable() = default;
    RilHeader header_;
    std::vector<std::uint64_t> offsets_;
    std::uint64_t file_size_ = 0;
    int fd_ = -1;
};

}  // namespace rd
