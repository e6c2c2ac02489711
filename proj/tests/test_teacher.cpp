#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <numeric>

#include "rd/student.hpp"
#include "rd/teacher.hpp"

using namespace rd;

namespace {

DatasetSpec small_spec() {
    DatasetSpec s;
    s.image_count = 32;
    s.class_count = 8;
    return s;
}

std::string temp_path(const char* tag) {
    return std::string("/tmp/rd_teach_") + tag + "_" + std::to_string(::getpid()) + ".ril";
}

}  // namespace

TEST_CASE("crop sampler is deterministic, in bounds, and covers the area range") {
    const auto a = sample_crops(200, 99);
    const auto b = sample_crops(200, 99);
    const auto c = sample_crops(200, 100);
    REQUIRE(a.size() == 200);
    bool any_differs = false;
    double min_area = 1.0, max_area = 0.0;
    std::size_t flips = 0;
    for (std::size_t i = 0; i < 200; ++i) {
        CHECK(a[i].box.x == b[i].box.x);
        CHECK(a[i].box.w == b[i].box.w);
        CHECK(a[i].augment == b[i].augment);
        if (a[i].box.x != c[i].box.x || a[i].box.y != c[i].box.y) any_differs = true;
        CHECK(a[i].box.valid());
        const double area = static_cast<double>(a[i].box.w) * a[i].box.h;
        min_area = std::min(min_area, area);
        max_area = std::max(max_area, area);
        if (a[i].augment == AugmentTag::HFlip) ++flips;
    }
    CHECK(any_differs);          // different seeds give different geometry
    CHECK(min_area < 0.25);      // the law reaches small crops...
    CHECK(max_area > 0.5);       // ...and large ones
    CHECK(flips > 50);           // flip probability is near one half
    CHECK(flips < 150);
}

TEST_CASE("per-image crop streams depend on image id and build seed only") {
    const auto a = crops_for_image(21, 5, 10);
    const auto b = crops_for_image(21, 5, 10);
    const auto other_img = crops_for_image(21, 6, 10);
    const auto other_seed = crops_for_image(22, 5, 10);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(a[i].box.x == b[i].box.x);
        CHECK(a[i].box.y == b[i].box.y);
    }
    CHECK((a[0].box.x != other_img[0].box.x || a[0].box.y != other_img[0].box.y));
    CHECK((a[0].box.x != other_seed[0].box.x || a[0].box.y != other_seed[0].box.y));
}

TEST_CASE("dataset generation is deterministic and plants classes round-robin") {
    const DatasetSpec spec = small_spec();
    const SyntheticDataset d1 = SyntheticDataset::generate(spec);
    const SyntheticDataset d2 = SyntheticDataset::generate(spec);
    REQUIRE(d1.size() == spec.image_count);
    for (std::size_t i = 0; i < d1.size(); ++i) {
        CHECK(d1.class_of(i) == i % spec.class_count);
        CHECK(d1.image(i).grid == d2.image(i).grid);
        CHECK(d1.image(i).pattern_box.valid());
        CHECK(d1.image(i).size == spec.grid_size);
    }
    DatasetSpec other = spec;
    other.generator_seed = 2;
    const SyntheticDataset d3 = SyntheticDataset::generate(other);
    CHECK(d1.image(0).grid != d3.image(0).grid);
}

TEST_CASE("class patterns depend only on pattern seed and global class") {
    const Vec64 p0 = SyntheticDataset::make_pattern(1234, 3);
    CHECK(p0 == SyntheticDataset::make_pattern(1234, 3));
    CHECK(p0 != SyntheticDataset::make_pattern(1234, 4));
    CHECK(p0 != SyntheticDataset::make_pattern(1235, 3));
    CHECK(p0.size() == kPatternRes * kPatternRes);
}

TEST_CASE("patch extraction resamples bilinearly and flips horizontally") {
    // constant image: any crop at any size stays constant
    SyntheticImage img;
    img.size = 16;
    img.grid.assign(16 * 16, 2.5);
    const Vec64 flat = extract_patch(img, {0.1f, 0.2f, 0.7f, 0.5f}, AugmentTag::None, 8);
    for (double v : flat) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));

    // horizontal ramp: a flip reverses each row
    SyntheticImage ramp;
    ramp.size = 16;
    ramp.grid.resize(16 * 16);
    for (std::uint32_t r = 0; r < 16; ++r) {
        for (std::uint32_t c = 0; c < 16; ++c) ramp.grid[r * 16 + c] = c;
    }
    const CropBox full{0.0f, 0.0f, 1.0f, 1.0f};
    const Vec64 plain = extract_patch(ramp, full, AugmentTag::None, 16);
    const Vec64 flipped = extract_patch(ramp, full, AugmentTag::HFlip, 16);
    for (std::uint32_t r = 0; r < 16; ++r) {
        for (std::uint32_t c = 0; c < 16; ++c) {
            CHECK(flipped[r * 16 + c] == doctest::Approx(plain[r * 16 + (15 - c)]).epsilon(1e-12));
        }
    }

    // full-extent identity resample returns the grid itself
    for (std::uint32_t r = 0; r < 16; ++r) {
        for (std::uint32_t c = 0; c < 16; ++c) {
            CHECK(plain[r * 16 + c] == doctest::Approx(ramp.at(r, c)).epsilon(1e-12));
        }
    }

    CHECK_THROWS_AS(extract_patch(ramp, {0.5f, 0.5f, 0.01f, 0.01f}, AugmentTag::None, 8),
                    InvalidInputError);
}

TEST_CASE("centering removes the patch mean") {
    Vec64 patch = {1.0, 2.0, 3.0, 6.0};
    center_patch(patch);
    CHECK(std::accumulate(patch.begin(), patch.end(), 0.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(patch[3] == doctest::Approx(3.0));
}

TEST_CASE("teacher is deterministic and confident exactly where the pattern is") {
    const DatasetSpec spec = small_spec();
    const SyntheticDataset data = SyntheticDataset::generate(spec);
    const TeacherConfig cfg;
    const TeacherOracle oracle(cfg, spec.pattern_seed, spec.class_offset, spec.class_count);
    REQUIRE(oracle.class_count() == spec.class_count);

    double w_pattern = 0.0, w_noise = 0.0, noise_entropy = 0.0;
    std::size_t correct = 0, noise_count = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const SyntheticImage& img = data.image(i);
        const Distribution on = oracle.predict(img, img.pattern_box, AugmentTag::None);
        CHECK(on.valid(1e-9));
        const Distribution again = oracle.predict(img, img.pattern_box, AugmentTag::None);
        CHECK(on.probs == again.probs);
        w_pattern += info_weight(on);
        if (on.argmax() == img.planted_class) ++correct;

        // the first corner crop that misses the pattern, when one exists
        const CropBox corners[] = {{0.0f, 0.0f, 0.12f, 0.12f},
                                   {0.88f, 0.0f, 0.12f, 0.12f},
                                   {0.0f, 0.88f, 0.12f, 0.12f},
                                   {0.88f, 0.88f, 0.12f, 0.12f}};
        for (const CropBox& box : corners) {
            const CropBox& pb = img.pattern_box;
            const bool overlaps = box.x < pb.x + pb.w && pb.x < box.x + box.w &&
                                  box.y < pb.y + pb.h && pb.y < box.y + box.h;
            if (overlaps) continue;
            const Distribution off = oracle.predict(img, box, AugmentTag::None);
            w_noise += info_weight(off);
            noise_entropy += entropy(off);
            ++noise_count;
            break;
        }
    }
    w_pattern /= static_cast<double>(data.size());
    REQUIRE(noise_count > 4);
    w_noise /= static_cast<double>(noise_count);
    noise_entropy /= static_cast<double>(noise_count);
    CHECK(correct == data.size());  // object crops classified perfectly
    CHECK(w_pattern > 0.5);         // pattern crops are high-information
    CHECK(w_noise < 0.3);           // noise crops are low-information
    CHECK(noise_entropy > 0.8 * std::log(8.0));
}

TEST_CASE("prototype embeddings are unit norm and distinct") {
    const TeacherConfig cfg;
    const TeacherOracle oracle(cfg, 1234, 0, 8);
    for (std::uint32_t c = 0; c < 8; ++c) {
        CHECK(norm2(oracle.prototype(c)) == doctest::Approx(1.0).epsilon(1e-9));
        for (std::uint32_t c2 = c + 1; c2 < 8; ++c2) {
            CHECK(std::abs(cosine(oracle.prototype(c), oracle.prototype(c2))) < 0.5);
        }
    }
}

TEST_CASE("table builds are reproducible and rebuilds preserve geometry") {
    const DatasetSpec spec = small_spec();
    const SyntheticDataset data = SyntheticDataset::generate(spec);
    const TeacherOracle oracle(TeacherConfig{}, spec.pattern_seed, spec.class_offset,
                               spec.class_count);
    const std::string p1 = temp_path("b1"), p2 = temp_path("b2"), p3 = temp_path("b3");
    const BuildSummary s1 = build_ril(data, oracle, 6, 3, SparsifyMode::MR, 21, p1);
    const BuildSummary s2 = build_ril(data, oracle, 6, 3, SparsifyMode::MR, 21, p2);
    CHECK(s1.record_count == spec.image_count * 6);
    CHECK(s1.bytes_written == s2.bytes_written);
    CHECK(hash_file(p1) == hash_file(p2));
    CHECK(s1.mean_info_weight > 0.0);
    CHECK(s1.mean_info_weight < 1.0);

    // a rebuild at another K keeps crops, weights, and pseudo labels
    build_ril(data, oracle, 6, 5, SparsifyMode::MS, 21, p3);
    const RilTable t1 = RilTable::open(p1);
    const RilTable t3 = RilTable::open(p3);
    REQUIRE(t1.record_count() == t3.record_count());
    for (std::uint64_t i = 0; i < t1.record_count(); i += 17) {
        const RilRecord a = t1.read_record(i);
        const RilRecord b = t3.read_record(i);
        CHECK(a.image_id == b.image_id);
        CHECK(a.crop.x == b.crop.x);
        CHECK(a.crop.y == b.crop.y);
        CHECK(a.crop.w == b.crop.w);
        CHECK(a.crop.h == b.crop.h);
        CHECK(a.augment == b.augment);
        CHECK(a.info_weight == b.info_weight);
        CHECK(a.pseudo_label == b.pseudo_label);
        CHECK(a.label.top_indices[0] == b.label.top_indices[0]);
    }
    std::remove(p1.c_str());
    std::remove(p2.c_str());
    std::remove(p3.c_str());
}

TEST_CASE("builder fails fast on an unwritable destination") {
    const DatasetSpec spec = small_spec();
    const SyntheticDataset data = SyntheticDataset::generate(spec);
    const TeacherOracle oracle(TeacherConfig{}, spec.pattern_seed, spec.class_offset,
                               spec.class_count);
    CHECK_THROWS_AS(build_ril(data, oracle, 2, 3, SparsifyMode::MR, 21,
                              "/nonexistent_dir/out.ril"),
                    IoError);
}

TEST_CASE("dataset spec json round trip rejects unknown keys") {
    const DatasetSpec spec = small_spec();
    const std::string path = "/tmp/rd_spec_" + std::to_string(::getpid()) + ".json";
    {
        std::FILE* f = std::fopen(path.c_str(), "w");
        REQUIRE(f);
        std::fputs(spec.to_json().c_str(), f);
        std::fclose(f);
    }
    const DatasetSpec back = DatasetSpec::from_json_file(path);
    CHECK(back.image_count == spec.image_count);
    CHECK(back.pattern_seed == spec.pattern_seed);
    CHECK(back.noise_level == spec.noise_level);
    {
        std::FILE* f = std::fopen(path.c_str(), "w");
        std::fputs("{\"image_count\": 4, \"bogus\": 1}", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(DatasetSpec::from_json_file(path), ConfigError);
    std::remove(path.c_str());
}
