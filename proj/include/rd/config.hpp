#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rd/bench.hpp"
#include "rd/trainer.hpp"

namespace rd {

// Merged run configuration: defaults <- REGION_DISTILL_SEED <- config file
// <- command-line flags. Flat namespaced keys (loss.alpha, train.shots).
// Unknown keys are rejected; the effective config is echoed into output
// artifacts for provenance.
struct RunConfig {
    LossConfig loss;
    TrainConfig train;
    StudentConfig student;
    TeacherConfig teacher;

    SparsifyMode ril_mode = SparsifyMode::MR;
    std::uint32_t ril_topk = 5;
    std::uint32_t ril_crops = 50;
    std::uint64_t ril_seed = 21;

    static RunConfig defaults();

    // Applies REGION_DISTILL_SEED (lowest precedence of the three sources).
    void apply_env();
    void apply_json_text(const std::string& text);
    void apply_file(const std::string& path);
    void set_key(const std::string& key, const std::string& value);

    std::string to_json() const;
    void validate() const;
};

}  // namespace rd
