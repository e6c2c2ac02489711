#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rd/losses.hpp"
#include "rd/ril.hpp"
#include "rd/student.hpp"
#include "rd/teacher.hpp"

namespace rd {

struct SplitSpec {
    std::vector<std::uint32_t> base_classes = {0, 1, 2, 3, 4, 5};
    std::vector<std::uint32_t> novel_classes = {6, 7};
};

struct TrainConfig {
    std::uint32_t shots = 4;
    std::uint32_t epochs = 30;
    std::uint32_t batch_size = 32;
    double lr0 = 0.1;
    double momentum = 0.0;
    std::uint64_t seed = 0;
    LossConfig loss;
    SplitSpec split;

    void validate() const;
};

// lr0 * (1 + cos(pi * step/total)) / 2
double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr0);

// Exactly `shots` images per base class, deterministic per seed; novel-class
// images are never selected. Throws ConfigError listing deficient classes.
std::vector<std::size_t> few_shot_sample(const SyntheticDataset& dataset,
                                         std::uint32_t shots,
                                         std::span<const std::uint32_t> base_classes,
                                         std::uint64_t seed);

// Geometry plus supervision for one crop, independent of where the label
// came from (offline table or online teacher).
struct SupervisionRecord {
    std::uint64_t image_id = 0;
    CropBox crop;
    AugmentTag augment = AugmentTag::None;
    Distribution target;
    double weight = 0.0;
    std::uint32_t pseudo_label = 0;
};

class LabelSource {
public:
    virtual ~LabelSource() = default;
    virtual SupervisionRecord get(std::uint64_t index) const = 0;
    virtual std::uint64_t count() const = 0;
    virtual std::uint32_t crops_per_image() const = 0;
    virtual std::uint32_t class_count() const = 0;
};

// Reads supervision from a RIL table (the fast path).
class CachedLabelSource final : public LabelSource {
public:
    explicit CachedLabelSource(const RilTable& table) : table_(table) {}
    SupervisionRecord get(std::uint64_t index) const override;
    std::uint64_t count() const override { return table_.record_count(); }
    std::uint32_t crops_per_image() const override { return table_.header().crops_per_image; }
    std::uint32_t class_count() const override { return table_.header().class_count; }

private:
    const RilTable& table_;
};

// Recomputes supervision with the teacher every call (the slow baseline).
// Labels are passed through the same f32 codec the table stores, so a
// FULL-mode cached run and an online run see bit-identical supervision.
class OnlineLabelSource final : public LabelSource {
public:
    OnlineLabelSource(const SyntheticDataset& dataset, const TeacherOracle& oracle,
                      std::uint32_t crops_per_image, std::uint64_t build_seed);
    SupervisionRecord get(std::uint64_t index) const override;
    std::uint64_t count() const override;
    std::uint32_t crops_per_image() const override { return crops_per_image_; }
    std::uint32_t class_count() const override { return oracle_.class_count(); }

private:
    const SyntheticDataset& dataset_;
    const TeacherOracle& oracle_;
    std::uint32_t crops_per_image_;
    std::uint64_t build_seed_;
};

struct EpochStats {
    double pos = 0, neg = 0, diff1 = 0, diff2 = 0, total = 0;
    double lr = 0;
    double seconds = 0;
};

struct TrainResult {
    std::vector<EpochStats> trace;
    std::vector<std::size_t> train_images;
};

TrainResult train(StudentState& student, const LabelSource& labels,
                  const SyntheticDataset& dataset, const TrainConfig& cfg);

struct EvalReport {
    double base_acc = 0;
    double novel_acc = 0;
    double hm = 0;
    double rejection = 0;
    std::vector<double> per_class_acc;

    std::string to_json() const;
};

double harmonic_mean(double a, double b);

// Pure forward inference on the object regions of held-out images; never
// touches a RIL table. The oracle only labels low-information crops for the
// rejection metric.
EvalReport evaluate(const StudentState& student, const SyntheticDataset& dataset,
                    const SplitSpec& split, const TeacherOracle& oracle,
                    std::span<const std::size_t> excluded_images = {});

// Zero-shot accuracy on a foreign dataset sharing class prototypes with the
// training one. Throws ConfigError when the class ranges do not overlap.
double cross_eval(const StudentState& student, const SyntheticDataset& foreign,
                  const DatasetSpec& train_spec);

void write_trace_csv(const std::string& path, std::span<const EpochStats> trace);

}  // namespace rd
