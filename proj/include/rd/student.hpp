#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rd/numerics.hpp"
#include "rd/teacher.hpp"

namespace rd {

enum class PromptSpace : std::uint8_t { Positive = 0, Negative = 1 };

// L learnable context vectors shared across classes. Class tokens live in
// StudentState and are frozen.
struct PromptContext {
    std::vector<Vec64> context;  // L x text_dim
    PromptSpace space = PromptSpace::Positive;
};

struct StudentConfig {
    std::uint32_t context_len = 4;
    std::uint32_t embed_dim = 32;
    double temperature = 0.07;
    double context_init_sigma = 0.02;
    double negative_perturb_sigma = 0.02;
    std::uint64_t seed = 11;
};

// Frozen toy dual encoder plus the two learnable prompt contexts. Only the
// 2*L context vectors ever receive gradient updates.
class StudentState {
public:
    // Class tokens are the teacher prototypes (text_dim == teacher embed
    // dim) and the image path composes the text projection with the
    // teacher's patch embedding, so the frozen encoders start aligned the
    // way pretrained dual encoders do.
    static StudentState init(const StudentConfig& cfg, const TeacherOracle& teacher);

    std::uint32_t class_count() const { return static_cast<std::uint32_t>(class_tokens_.size()); }
    std::uint32_t context_len() const { return cfg_.context_len; }
    std::uint32_t text_dim() const { return text_dim_; }
    std::uint32_t embed_dim() const { return cfg_.embed_dim; }
    double temperature() const { return cfg_.temperature; }
    const StudentConfig& config() const { return cfg_; }

    const PromptContext& positive() const { return positive_; }
    const PromptContext& negative() const { return negative_; }
    const Mat& text_proj() const { return text_proj_; }
    const Mat& image_proj() const { return image_proj_; }
    const Vec64& class_token(std::uint32_t c) const { return class_tokens_.at(c); }
    std::uint32_t patch_size() const { return patch_size_; }

    // f(x): centered crop patch -> frozen projection -> unit norm.
    Vec64 image_feature(const SyntheticImage& img, const CropBox& box, AugmentTag tag) const;

    // g(mean([v_1..v_L, w_c])), unit norm.
    Vec64 text_embedding(PromptSpace space, std::uint32_t c) const;

    Distribution predict_positive(const Vec64& feature) const;
    Distribution predict_negative(const Vec64& feature) const;

    // Trainable parameters flattened as [positive contexts | negative
    // contexts], row-major over (context index, text dim).
    std::size_t param_count() const { return 2ull * cfg_.context_len * text_dim_; }
    Vec64 flatten_params() const;
    void set_params(const Vec64& params);
    void swap_prompts();  // exchanges the positive and negative contexts

    // FNV-1a over the frozen tensors; parameter-isolation checks compare it
    // across training.
    std::uint64_t frozen_hash() const;

    void save_checkpoint(const std::string& path) const;
    // Restores the context payload into an architecture-compatible state.
    void load_checkpoint(const std::string& path);

private:
    StudentConfig cfg_;
    std::uint32_t text_dim_ = 0;
    std::uint32_t patch_size_ = 0;
    PromptContext positive_, negative_;
    Mat text_proj_;   // embed_dim x text_dim
    Mat image_proj_;  // embed_dim x patch_dim (text_proj composed with teacher projection)
    std::vector<Vec64> class_tokens_;  // C x text_dim, frozen

    Distribution predict(PromptSpace space, const Vec64& feature) const;
};

std::uint64_t fnv1a64(const void* data, std::size_t bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t hash_file(const std::string& path);

}  // namespace rd
