#include "rd/teacher.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "rd/rng.hpp"
#include "rd/simd.hpp"

#include <nlohmann/json.hpp>

namespace rd {

using nlohmann::json;

DatasetSpec DatasetSpec::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("dataset spec: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("dataset spec: bad JSON in " + path + ": " + e.what());
    }
    DatasetSpec s;
    const std::vector<std::string> known = {
        "image_count", "grid_size", "class_count", "noise_level",
        "generator_seed", "pattern_seed", "class_offset"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError("dataset spec: unknown key '" + key + "'");
        }
    }
    s.image_count = j.value("image_count", s.image_count);
    s.grid_size = j.value("grid_size", s.grid_size);
    s.class_count = j.value("class_count", s.class_count);
    s.noise_level = j.value("noise_level", s.noise_level);
    s.generator_seed = j.value("generator_seed", s.generator_seed);
    s.pattern_seed = j.value("pattern_seed", s.pattern_seed);
    s.class_offset = j.value("class_offset", s.class_offset);
    if (s.image_count == 0 || s.class_count == 0 || s.grid_size < 8) {
        throw ConfigError("dataset spec: image_count/class_count must be positive, grid_size >= 8");
    }
    return s;
}

std::string DatasetSpec::to_json() const {
    json j;
    j["image_count"] = image_count;
    j["grid_size"] = grid_size;
    j["class_count"] = class_count;
    j["noise_level"] = noise_level;
    j["generator_seed"] = generator_seed;
    j["pattern_seed"] = pattern_seed;
    j["class_offset"] = class_offset;
    return j.dump(2);
}

Vec64 SyntheticDataset::make_pattern(std::uint64_t pattern_seed, std::uint32_t global_class) {
    auto rng = make_rng(mix64(pattern_seed, 0x5eedULL + global_class));
    std::normal_distribution<double> n01(0.0, 1.0);
    Vec64 pat(kPatternRes * kPatternRes);
    for (double& v : pat) v = n01(rng);
    return pat;
}

namespace {

double bilinear(const Vec64& grid, std::uint32_t n, double px, double py) {
    const auto clampi = [&](long i) {
        return static_cast<std::uint32_t>(std::clamp<long>(i, 0, n - 1));
    };
    const long x0 = static_cast<long>(std::floor(px));
    const long y0 = static_cast<long>(std::floor(py));
    const double fx = px - x0;
    const double fy = py - y0;
    const double v00 = grid[clampi(y0) * n + clampi(x0)];
    const double v01 = grid[clampi(y0) * n + clampi(x0 + 1)];
    const double v10 = grid[clampi(y0 + 1) * n + clampi(x0)];
    const double v11 = grid[clampi(y0 + 1) * n + clampi(x0 + 1)];
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
}

CropBox sample_box(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double area = 0.08 + 0.92 * u01(rng);
    const double log_ar = std::log(3.0 / 4.0) +
                          (std::log(4.0 / 3.0) - std::log(3.0 / 4.0)) * u01(rng);
    const double aspect = std::exp(log_ar);
    const double w = std::min(1.0, std::sqrt(area * aspect));
    const double h = std::min(1.0, std::sqrt(area / aspect));
    const double x = (1.0 - w) * u01(rng);
    const double y = (1.0 - h) * u01(rng);
    CropBox box;
    box.w = static_cast<float>(w);
    box.h = static_cast<float>(h);
    box.x = std::min(static_cast<float>(x), 1.0f - box.w);
    box.y = std::min(static_cast<float>(y), 1.0f - box.h);
    return box;
}

}  // namespace

Vec64 resample_square(const Vec64& src, std::uint32_t n_src, std::uint32_t n_dst) {
    Vec64 out(n_dst * n_dst);
    for (std::uint32_t r = 0; r < n_dst; ++r) {
        for (std::uint32_t c = 0; c < n_dst; ++c) {
            const double u = (c + 0.5) / n_dst;
            const double v = (r + 0.5) / n_dst;
            out[r * n_dst + c] = bilinear(src, n_src, u * n_src - 0.5, v * n_src - 0.5);
        }
    }
    return out;
}

Vec64 extract_patch(const SyntheticImage& img, const CropBox& box, AugmentTag tag,
                    std::uint32_t patch_size) {
    if (box.w * img.size < 1.0f || box.h * img.size < 1.0f) {
        throw InvalidInputError("extract_patch: sub-pixel crop");
    }
    Vec64 out(static_cast<std::size_t>(patch_size) * patch_size);
    for (std::uint32_t r = 0; r < patch_size; ++r) {
        for (std::uint32_t c = 0; c < patch_size; ++c) {
            double u = (c + 0.5) / patch_size;
            const double v = (r + 0.5) / patch_size;
            if (tag == AugmentTag::HFlip) u = 1.0 - u;
            const double px = (box.x + u * box.w) * img.size - 0.5;
            const double py = (box.y + v * box.h) * img.size - 0.5;
            out[r * patch_size + c] = bilinear(img.grid, img.size, px, py);
        }
    }
    return out;
}

void center_patch(Vec64& patch) {
    const double mean = simd::sum(patch.data(), patch.size()) / patch.size();
    for (double& v : patch) v -= mean;
}

SyntheticDataset SyntheticDataset::generate(const DatasetSpec& spec) {
    SyntheticDataset ds;
    ds.spec_ = spec;
    ds.images_.reserve(spec.image_count);

    std::vector<Vec64> patterns;
    for (std::uint32_t c = 0; c < spec.class_count; ++c) {
        patterns.push_back(make_pattern(spec.pattern_seed, spec.class_offset + c));
    }

    for (std::uint32_t i = 0; i < spec.image_count; ++i) {
        auto rng = make_rng(mix64(spec.generator_seed, 0x1a6eULL + i));
        std::normal_distribution<double> n01(0.0, 1.0);
        std::uniform_real_distribution<double> u01(0.0, 1.0);

        SyntheticImage img;
        img.image_id = i;
        img.planted_class = i % spec.class_count;  // round-robin
        img.size = spec.grid_size;
        img.grid.resize(static_cast<std::size_t>(spec.grid_size) * spec.grid_size);
        for (double& v : img.grid) v = spec.noise_level * n01(rng);

        // pattern occupies 40-80% of the image area
        const double area = 0.4 + 0.4 * u01(rng);
        const double aspect = std::exp(std::log(0.75) + std::log(16.0 / 9.0) * u01(rng));
        const double w = std::min(1.0, std::sqrt(area * aspect));
        const double h = std::min(1.0, std::sqrt(area / aspect));
        img.pattern_box.w = static_cast<float>(w);
        img.pattern_box.h = static_cast<float>(h);
        img.pattern_box.x = std::min(static_cast<float>((1.0 - w) * u01(rng)),
                                     1.0f - img.pattern_box.w);
        img.pattern_box.y = std::min(static_cast<float>((1.0 - h) * u01(rng)),
                                     1.0f - img.pattern_box.h);

        const Vec64& pat = patterns[img.planted_class];
        const std::uint32_t n = spec.grid_size;
        const std::uint32_t r0 = static_cast<std::uint32_t>(img.pattern_box.y * n);
        const std::uint32_t c0 = static_cast<std::uint32_t>(img.pattern_box.x * n);
        const std::uint32_t r1 =
            std::min(n, static_cast<std::uint32_t>(std::ceil((img.pattern_box.y + img.pattern_box.h) * n)));
        const std::uint32_t c1 =
            std::min(n, static_cast<std::uint32_t>(std::ceil((img.pattern_box.x + img.pattern_box.w) * n)));
        for (std::uint32_t r = r0; r < r1; ++r) {
            for (std::uint32_t c = c0; c < c1; ++c) {
                const double u = ((c + 0.5) / n - img.pattern_box.x) / img.pattern_box.w;
                const double v = ((r + 0.5) / n - img.pattern_box.y) / img.pattern_box.h;
                if (u < 0.0 || u >= 1.0 || v < 0.0 || v >= 1.0) continue;
                img.grid[r * n + c] +=
                    bilinear(pat, kPatternRes, u * kPatternRes - 0.5, v * kPatternRes - 0.5);
            }
        }
        ds.images_.push_back(std::move(img));
    }
    return ds;
}

std::vector<CropDesc> sample_crops(std::uint32_t m, std::uint64_t seed) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<CropDesc> out;
    out.reserve(m);
    for (std::uint32_t i = 0; i < m; ++i) {
        CropDesc d;
        d.box = sample_box(rng);
        d.augment = u01(rng) < 0.5 ? AugmentTag::HFlip : AugmentTag::None;
        out.push_back(d);
    }
    return out;
}

std::vector<CropDesc> crops_for_image(std::uint64_t build_seed, std::uint64_t image_id,
                                      std::uint32_t m) {
    return sample_crops(m, mix64(build_seed, 0xc509ULL + image_id));
}

TeacherOracle::TeacherOracle(const TeacherConfig& cfg, std::uint64_t pattern_seed,
                             std::uint32_t class_offset, std::uint32_t class_count)
    : cfg_(cfg) {
    if (!(cfg.temperature > 0.0)) throw ConfigError("teacher: temperature must be positive");
    if (cfg.embed_dim == 0 || cfg.patch_size == 0 || class_count == 0) {
        throw ConfigError("teacher: zero dimension");
    }
    const std::size_t patch_dim = static_cast<std::size_t>(cfg.patch_size) * cfg.patch_size;
    projection_ = Mat(cfg.embed_dim, patch_dim);
    auto rng = make_rng(mix64(cfg.seed, 0xe3bedULL));
    std::normal_distribution<double> n01(0.0, 1.0);
    for (double& v : projection_.data) v = n01(rng);

    prototypes_.reserve(class_count);
    for (std::uint32_t c = 0; c < class_count; ++c) {
        Vec64 pat = SyntheticDataset::make_pattern(pattern_seed, class_offset + c);
        if (cfg.patch_size != kPatternRes) {
            pat = resample_square(pat, kPatternRes, cfg.patch_size);
        }
        center_patch(pat);
        prototypes_.push_back(l2_normalize(matvec(projection_, pat)));
    }
}

Vec64 TeacherOracle::embed_patch(Vec64 raw_patch) const {
    center_patch(raw_patch);
    return l2_normalize(matvec(projection_, raw_patch));
}

Distribution TeacherOracle::predict(const SyntheticImage& img, const CropBox& box,
                                    AugmentTag tag) const {
    const Vec64 patch = extract_patch(img, box, tag, cfg_.patch_size);
    Vec64 emb;
    // The multiplier emulates an expensive teacher by repeating the
    // embedding computation; the result is unchanged.
    const std::uint32_t reps = std::max<std::uint32_t>(1, cfg_.cost_multiplier);
    for (std::uint32_t i = 0; i < reps; ++i) emb = embed_patch(patch);
    Vec64 logits(prototypes_.size());
    for (std::size_t c = 0; c < prototypes_.size(); ++c) {
        logits[c] = simd::dot(emb.data(), prototypes_[c].data(), emb.size());
    }
    return softmax(logits, cfg_.temperature);
}

BuildSummary build_ril(const SyntheticDataset& dataset, const TeacherOracle& oracle,
                       std::uint32_t crops_per_image, std::uint32_t top_k,
                       SparsifyMode mode, std::uint64_t seed,
                       const std::string& destination) {
    if (dataset.size() == 0) throw ConfigError("build_ril: empty dataset");
    {
        // fail before any teacher work if the destination is unwritable
        std::ofstream probe(destination + ".tmp", std::ios::binary | std::ios::app);
        if (!probe) throw IoError("build_ril: destination unwritable: " + destination);
    }
    std::remove((destination + ".tmp").c_str());

    const auto t0 = std::chrono::steady_clock::now();
    const std::uint32_t c = oracle.class_count();
    RilHeader header;
    header.mode = mode;
    header.class_count = c;
    header.top_k = mode == SparsifyMode::Full ? static_cast<std::uint16_t>(c)
                                              : static_cast<std::uint16_t>(top_k);
    header.crops_per_image = crops_per_image;

    std::vector<RilRecord> records;
    records.reserve(dataset.size() * crops_per_image);
    double weight_sum = 0.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const SyntheticImage& img = dataset.image(i);
        for (const CropDesc& d : crops_for_image(seed, img.image_id, crops_per_image)) {
            const Distribution full = oracle.predict(img, d.box, d.augment);
            RilRecord r;
            r.image_id = img.image_id;
            r.crop = d.box;
            r.augment = d.augment;
            r.info_weight = static_cast<float>(info_weight(full));
            r.pseudo_label = static_cast<std::uint32_t>(full.argmax());
            r.label = sparsify(full, mode, top_k);
            weight_sum += r.info_weight;
            records.push_back(std::move(r));
        }
    }

    BuildSummary s;
    s.bytes_written = write_table(records, header, destination);
    s.record_count = records.size();
    s.mean_info_weight = records.empty() ? 0.0 : weight_sum / records.size();
    s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return s;
}

}  // namespace rd
