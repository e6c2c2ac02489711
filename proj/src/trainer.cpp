#include "rd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "rd/rng.hpp"

#include <nlohmann/json.hpp>

namespace rd {

using nlohmann::json;

void TrainConfig::validate() const {
    if (shots < 1) throw ConfigError("train: shots must be >= 1");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(lr0 >= 0.0) || !(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("train: lr0 must be >= 0 and momentum in [0,1)");
    }
    loss.validate();
    if (split.base_classes.empty()) throw ConfigError("train: empty base class set");
}

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr0) {
    if (total_steps == 0) return lr0;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

std::vector<std::size_t> few_shot_sample(const SyntheticDataset& dataset,
                                         std::uint32_t shots,
                                         std::span<const std::uint32_t> base_classes,
                                         std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(dataset.spec().class_count);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        by_class[dataset.class_of(i)].push_back(i);
    }
    std::string deficient;
    for (std::uint32_t c : base_classes) {
        if (c >= by_class.size() || by_class[c].size() < shots) {
            deficient += (deficient.empty() ? "" : ", ") + std::to_string(c);
        }
    }
    if (!deficient.empty()) {
        throw ConfigError("few_shot_sample: not enough images for classes " + deficient);
    }
    std::vector<std::size_t> out;
    for (std::uint32_t c : base_classes) {
        auto rng = make_rng(mix64(seed, 0xf5c0ULL + c));
        std::vector<std::size_t> pool = by_class[c];
        std::shuffle(pool.begin(), pool.end(), rng);
        out.insert(out.end(), pool.begin(), pool.begin() + shots);
    }
    std::sort(out.begin(), out.end());
    return out;
}

SupervisionRecord CachedLabelSource::get(std::uint64_t index) const {
    const RilRecord r = table_.read_record(index);
    SupervisionRecord s;
    s.image_id = r.image_id;
    s.crop = r.crop;
    s.augment = r.augment;
    s.target = densify(r.label);
    s.weight = r.info_weight;
    s.pseudo_label = r.pseudo_label;
    return s;
}

OnlineLabelSource::OnlineLabelSource(const SyntheticDataset& dataset,
                                     const TeacherOracle& oracle,
                                     std::uint32_t crops_per_image,
                                     std::uint64_t build_seed)
    : dataset_(dataset),
      oracle_(oracle),
      crops_per_image_(crops_per_image),
      build_seed_(build_seed) {}

std::uint64_t OnlineLabelSource::count() const {
    return dataset_.size() * static_cast<std::uint64_t>(crops_per_image_);
}

SupervisionRecord OnlineLabelSource::get(std::uint64_t index) const {
    if (index >= count()) throw std::out_of_range("online source: index out of range");
    const std::uint64_t image_idx = index / crops_per_image_;
    const std::uint32_t crop_idx = static_cast<std::uint32_t>(index % crops_per_image_);
    const SyntheticImage& img = dataset_.image(image_idx);
    const auto crops = crops_for_image(build_seed_, img.image_id, crops_per_image_);
    const CropDesc& d = crops[crop_idx];
    const Distribution full = oracle_.predict(img, d.box, d.augment);
    SupervisionRecord s;
    s.image_id = img.image_id;
    s.crop = d.box;
    s.augment = d.augment;
    // round-trip through the storage codec so cached and online training
    // see the same bits
    s.target = densify(sparsify_full(full));
    s.weight = static_cast<float>(info_weight(full));
    s.pseudo_label = static_cast<std::uint32_t>(full.argmax());
    return s;
}

TrainResult train(StudentState& student, const LabelSource& labels,
                  const SyntheticDataset& dataset, const TrainConfig& cfg) {
    cfg.validate();
    if (labels.class_count() != student.class_count()) {
        throw ConfigError("train: label source class count " +
                          std::to_string(labels.class_count()) +
                          " does not match student " + std::to_string(student.class_count()));
    }
    const std::uint32_t m = labels.crops_per_image();
    if (m == 0) throw ConfigError("train: label source has no crops per image");
    if (labels.count() != dataset.size() * static_cast<std::uint64_t>(m)) {
        throw ConfigError("train: label source record count does not match dataset");
    }
    for (std::uint32_t c : cfg.split.base_classes) {
        if (c >= student.class_count()) {
            throw ConfigError("train: base class " + std::to_string(c) + " out of range");
        }
    }

    TrainResult result;
    result.train_images =
        few_shot_sample(dataset, cfg.shots, cfg.split.base_classes, cfg.seed);

    std::vector<std::uint64_t> pool;
    for (std::size_t img : result.train_images) {
        for (std::uint32_t k = 0; k < m; ++k) {
            pool.push_back(static_cast<std::uint64_t>(img) * m + k);
        }
    }

    const std::uint64_t batches_per_epoch = pool.size() / cfg.batch_size;
    if (batches_per_epoch == 0) {
        throw ConfigError("train: fewer crops than one batch");
    }
    const std::uint64_t total_steps = batches_per_epoch * cfg.epochs;

    Vec64 params = student.flatten_params();
    Vec64 velocity(params.size(), 0.0);
    std::uint64_t step = 0;

    for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        auto rng = make_rng(mix64(cfg.seed, 0xe90cULL + epoch));
        std::shuffle(pool.begin(), pool.end(), rng);

        EpochStats stats;
        for (std::uint64_t b = 0; b < batches_per_epoch; ++b) {
            std::vector<BatchItem> batch;
            batch.reserve(cfg.batch_size);
            for (std::uint32_t k = 0; k < cfg.batch_size; ++k) {
                const SupervisionRecord rec = labels.get(pool[b * cfg.batch_size + k]);
                BatchItem item;
                item.feature = student.image_feature(dataset.image(rec.image_id),
                                                     rec.crop, rec.augment);
                item.target = rec.target;
                item.weight = rec.weight;
                item.pseudo_label = rec.pseudo_label;
                batch.push_back(std::move(item));
            }
            const LossReport report = loss_total(student, batch, cfg.loss);
            const double lr = cosine_lr(step, total_steps, cfg.lr0);
            for (std::size_t i = 0; i < params.size(); ++i) {
                velocity[i] = cfg.momentum * velocity[i] + report.grad[i];
                params[i] -= lr * velocity[i];
            }
            student.set_params(params);
            ++step;
            stats.pos += report.pos;
            stats.neg += report.neg;
            stats.diff1 += report.diff1;
            stats.diff2 += report.diff2;
            stats.total += report.total;
            stats.lr = lr;
        }
        const double inv = 1.0 / static_cast<double>(batches_per_epoch);
        stats.pos *= inv;
        stats.neg *= inv;
        stats.diff1 *= inv;
        stats.diff2 *= inv;
        stats.total *= inv;
        stats.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.trace.push_back(stats);
    }
    return result;
}

double harmonic_mean(double a, double b) {
    if (a <= 0.0 || b <= 0.0) return 0.0;
    return 2.0 * a * b / (a + b);
}

namespace {

// argmax over a class subset of cos(feature, positive text embedding)
std::uint32_t classify(const StudentState& student, const Vec64& feature,
                       std::span<const std::uint32_t> classes,
                       const std::vector<Vec64>& embeddings) {
    std::uint32_t best = classes[0];
    double best_sim = -2.0;
    for (std::uint32_t c : classes) {
        const double s = cosine(feature, embeddings[c]);
        if (s > best_sim) {
            best_sim = s;
            best = c;
        }
    }
    (void)student;
    return best;
}

}  // namespace

EvalReport evaluate(const StudentState& student, const SyntheticDataset& dataset,
                    const SplitSpec& split, const TeacherOracle& oracle,
                    std::span<const std::size_t> excluded_images) {
    if (split.base_classes.empty() && split.novel_classes.empty()) {
        throw ConfigError("evaluate: empty split");
    }
    const std::set<std::size_t> excluded(excluded_images.begin(), excluded_images.end());

    std::vector<Vec64> embeddings;
    for (std::uint32_t c = 0; c < student.class_count(); ++c) {
        embeddings.push_back(student.text_embedding(PromptSpace::Positive, c));
    }

    EvalReport r;
    r.per_class_acc.assign(student.class_count(), 0.0);
    std::vector<std::uint32_t> per_class_total(student.class_count(), 0);
    std::uint64_t base_hits = 0, base_total = 0, novel_hits = 0, novel_total = 0;
    std::uint64_t reject_hits = 0, reject_total = 0;

    const std::set<std::uint32_t> base_set(split.base_classes.begin(),
                                           split.base_classes.end());
    const std::set<std::uint32_t> novel_set(split.novel_classes.begin(),
                                            split.novel_classes.end());

    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (excluded.count(i)) continue;
        const SyntheticImage& img = dataset.image(i);
        const std::uint32_t truth = img.planted_class;
        const bool is_base = base_set.count(truth) > 0;
        const bool is_novel = novel_set.count(truth) > 0;
        if (!is_base && !is_novel) continue;

        const Vec64 feature =
            student.image_feature(img, img.pattern_box, AugmentTag::None);
        const auto& classes = is_base ? split.base_classes : split.novel_classes;
        const std::uint32_t pred = classify(student, feature, classes, embeddings);
        const bool hit = pred == truth;
        per_class_total[truth] += 1;
        if (hit) r.per_class_acc[truth] += 1.0;
        if (is_base) {
            base_total += 1;
            base_hits += hit;
        } else {
            novel_total += 1;
            novel_hits += hit;
        }

        // rejection metric: low-information crops (fresh teacher pass) should
        // sit closer to uniform under the negative prompt than the positive
        auto rng = make_rng(mix64(0x777ULL, img.image_id));
        for (const CropDesc& d : sample_crops(4, rng())) {
            const Distribution full = oracle.predict(img, d.box, d.augment);
            if (info_weight(full) >= 0.3) continue;
            const Vec64 f = student.image_feature(img, d.box, d.augment);
            const Distribution p = student.predict_positive(f);
            const Distribution pbar = student.predict_negative(f);
            Distribution uniform;
            uniform.probs.assign(student.class_count(), 1.0 / student.class_count());
            reject_total += 1;
            reject_hits += kl_divergence(uniform, pbar) < kl_divergence(uniform, p);
        }
    }

    for (std::uint32_t c = 0; c < student.class_count(); ++c) {
        if (per_class_total[c] > 0) r.per_class_acc[c] /= per_class_total[c];
    }
    r.base_acc = base_total ? static_cast<double>(base_hits) / base_total : 0.0;
    r.novel_acc = novel_total ? static_cast<double>(novel_hits) / novel_total : 0.0;
    r.hm = harmonic_mean(r.base_acc, r.novel_acc);
    r.rejection = reject_total ? static_cast<double>(reject_hits) / reject_total : 0.0;
    return r;
}

double cross_eval(const StudentState& student, const SyntheticDataset& foreign,
                  const DatasetSpec& train_spec) {
    const DatasetSpec& fs = foreign.spec();
    if (fs.pattern_seed != train_spec.pattern_seed) {
        throw ConfigError("cross_eval: datasets use different pattern seeds");
    }
    const std::uint32_t lo = std::max(fs.class_offset, train_spec.class_offset);
    const std::uint32_t hi = std::min(fs.class_offset + fs.class_count,
                                      train_spec.class_offset + train_spec.class_count);
    if (lo >= hi) throw ConfigError("cross_eval: class sets are disjoint");

    // train-local indices of the shared classes
    std::vector<std::uint32_t> shared;
    for (std::uint32_t g = lo; g < hi; ++g) shared.push_back(g - train_spec.class_offset);

    std::vector<Vec64> embeddings;
    for (std::uint32_t c = 0; c < student.class_count(); ++c) {
        embeddings.push_back(student.text_embedding(PromptSpace::Positive, c));
    }

    std::uint64_t hits = 0, total = 0;
    for (std::size_t i = 0; i < foreign.size(); ++i) {
        const SyntheticImage& img = foreign.image(i);
        const std::uint32_t global = fs.class_offset + img.planted_class;
        if (global < lo || global >= hi) continue;
        const Vec64 feature =
            student.image_feature(img, img.pattern_box, AugmentTag::None);
        const std::uint32_t pred = classify(student, feature, shared, embeddings);
        total += 1;
        hits += pred == global - train_spec.class_offset;
    }
    if (total == 0) throw ConfigError("cross_eval: no foreign images in shared classes");
    return static_cast<double>(hits) / total;
}

std::string EvalReport::to_json() const {
    json j;
    j["base_acc"] = base_acc;
    j["novel_acc"] = novel_acc;
    j["hm"] = hm;
    j["rejection"] = rejection;
    j["per_class_acc"] = per_class_acc;
    return j.dump(2);
}

void write_trace_csv(const std::string& path, std::span<const EpochStats> trace) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("trace: cannot open " + path);
    out << "epoch,L_pos,L_neg,L_diff1,L_diff2,L_total,lr,epoch_seconds\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const EpochStats& s = trace[i];
        out << i << ',' << s.pos << ',' << s.neg << ',' << s.diff1 << ',' << s.diff2
            << ',' << s.total << ',' << s.lr << ',' << s.seconds << '\n';
    }
}

}  // namespace rd
