#include "rd/student.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "rd/rng.hpp"
#include "rd/simd.hpp"

#include <nlohmann/json.hpp>

namespace rd {

using nlohmann::json;

std::uint64_t fnv1a64(const void* data, std::size_t bytes, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("hash_file: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    }
    return h;
}

StudentState StudentState::init(const StudentConfig& cfg, const TeacherOracle& teacher) {
    if (cfg.context_len == 0) throw ConfigError("student: context_len must be >= 1");
    if (!(cfg.temperature > 0.0)) throw ConfigError("student: temperature must be positive");
    StudentState s;
    s.cfg_ = cfg;
    s.text_dim_ = teacher.config().embed_dim;
    s.patch_size_ = teacher.config().patch_size;

    auto rng = make_rng(mix64(cfg.seed, 0x57edULL));
    std::normal_distribution<double> n01(0.0, 1.0);

    s.text_proj_ = Mat(cfg.embed_dim, s.text_dim_);
    const double gscale = 1.0 / std::sqrt(static_cast<double>(s.text_dim_));
    for (double& v : s.text_proj_.data) v = gscale * n01(rng);

    // image path = text projection composed with the teacher patch
    // embedding, so the frozen encoders share an embedding space
    const Mat& e = teacher.projection();
    s.image_proj_ = Mat(cfg.embed_dim, e.cols);
    for (std::size_t r = 0; r < s.image_proj_.rows; ++r) {
        for (std::size_t k = 0; k < e.rows; ++k) {
            const double g = s.text_proj_.at(r, k);
            if (g == 0.0) continue;
            simd::axpy(g, e.data.data() + k * e.cols,
                       s.image_proj_.data.data() + r * e.cols, e.cols);
        }
    }

    s.class_tokens_.reserve(teacher.class_count());
    for (std::uint32_t c = 0; c < teacher.class_count(); ++c) {
        s.class_tokens_.push_back(teacher.prototype(c));
    }

    s.positive_.space = PromptSpace::Positive;
    s.negative_.space = PromptSpace::Negative;
    for (std::uint32_t l = 0; l < cfg.context_len; ++l) {
        Vec64 v(s.text_dim_);
        for (double& x : v) x = cfg.context_init_sigma * n01(rng);
        s.positive_.context.push_back(std::move(v));
    }
    for (std::uint32_t l = 0; l < cfg.context_len; ++l) {
        Vec64 v = s.positive_.context[l];
        for (double& x : v) x += cfg.negative_perturb_sigma * n01(rng);
        s.negative_.context.push_back(std::move(v));
    }
    return s;
}

Vec64 StudentState::image_feature(const SyntheticImage& img, const CropBox& box,
                                  AugmentTag tag) const {
    Vec64 patch = extract_patch(img, box, tag, patch_size_);
    center_patch(patch);
    return l2_normalize(matvec(image_proj_, patch));
}

Vec64 StudentState::text_embedding(PromptSpace space, std::uint32_t c) const {
    const PromptContext& ctx = space == PromptSpace::Positive ? positive_ : negative_;
    Vec64 mean = class_token(c);
    for (const Vec64& v : ctx.context) {
        simd::axpy(1.0, v.data(), mean.data(), mean.size());
    }
    const double inv = 1.0 / (ctx.context.size() + 1);
    for (double& x : mean) x *= inv;
    return l2_normalize(matvec(text_proj_, mean));
}

Distribution StudentState::predict(PromptSpace space, const Vec64& feature) const {
    Vec64 logits(class_count());
    for (std::uint32_t c = 0; c < class_count(); ++c) {
        logits[c] = cosine(feature, text_embedding(space, c));
    }
    return softmax(logits, cfg_.temperature);
}

Distribution StudentState::predict_positive(const Vec64& feature) const {
    return predict(PromptSpace::Positive, feature);
}

Distribution StudentState::predict_negative(const Vec64& feature) const {
    return predict(PromptSpace::Negative, feature);
}

Vec64 StudentState::flatten_params() const {
    Vec64 out;
    out.reserve(param_count());
    for (const Vec64& v : positive_.context) out.insert(out.end(), v.begin(), v.end());
    for (const Vec64& v : negative_.context) out.insert(out.end(), v.begin(), v.end());
    return out;
}

void StudentState::set_params(const Vec64& params) {
    if (params.size() != param_count()) throw ShapeError("set_params: size mismatch");
    std::size_t off = 0;
    for (Vec64& v : positive_.context) {
        std::copy(params.begin() + off, params.begin() + off + v.size(), v.begin());
        off += v.size();
    }
    for (Vec64& v : negative_.context) {
        std::copy(params.begin() + off, params.begin() + off + v.size(), v.begin());
        off += v.size();
    }
}

void StudentState::swap_prompts() {
    std::swap(positive_.context, negative_.context);
}

std::uint64_t StudentState::frozen_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv1a64(text_proj_.data.data(), text_proj_.data.size() * sizeof(double), h);
    h = fnv1a64(image_proj_.data.data(), image_proj_.data.size() * sizeof(double), h);
    for (const Vec64& t : class_tokens_) {
        h = fnv1a64(t.data(), t.size() * sizeof(double), h);
    }
    return h;
}

void StudentState::save_checkpoint(const std::string& path) const {
    json header;
    header["context_len"] = cfg_.context_len;
    header["text_dim"] = text_dim_;
    header["embed_dim"] = cfg_.embed_dim;
    header["class_count"] = class_count();
    header["temperature"] = cfg_.temperature;
    header["seed"] = cfg_.seed;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open " + path);
    out << header.dump() << "\n";
    const Vec64 params = flatten_params();
    out.write(reinterpret_cast<const char*>(params.data()),
              static_cast<std::streamsize>(params.size() * sizeof(double)));
    if (!out) throw IoError("checkpoint: write failed for " + path);
}

void StudentState::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("checkpoint: missing header");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header: ") + e.what());
    }
    if (header.value("context_len", 0u) != cfg_.context_len ||
        header.value("text_dim", 0u) != text_dim_ ||
        header.value("class_count", 0u) != class_count()) {
        throw ConfigError("checkpoint: architecture mismatch");
    }
    Vec64 params(param_count());
    in.read(reinterpret_cast<char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(params.size() * sizeof(double))) {
        throw FormatError("checkpoint: truncated payload");
    }
    set_params(params);
}

}  // namespace rd
