#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rd/trainer.hpp"

namespace rd {

struct BenchSetup {
    DatasetSpec dataset;
    TeacherConfig teacher;
    StudentConfig student;
    TrainConfig train;
    std::uint32_t crops_per_image = 50;
    std::uint32_t top_k = 5;
    std::uint64_t build_seed = 21;
    std::string workdir = ".";
};

// Fig-8-style comparison: identical training twice, labels recomputed
// online vs read from a FULL-mode table. Identical checkpoints are a hard
// correctness gate, not a statistic.
struct ModeBenchReport {
    double cached_seconds = 0;
    double online_seconds = 0;
    double speedup = 0;  // online / cached
    bool checkpoints_match = false;
    std::uint64_t checkpoint_hash = 0;
    double cost_multiplier = 1;
    std::vector<double> cached_epoch_seconds;
    std::vector<double> online_epoch_seconds;
};

ModeBenchReport bench_modes(const BenchSetup& setup, double cost_multiplier);

struct KSweepEntry {
    std::uint32_t top_k = 0;
    std::uint64_t file_size = 0;
    std::uint64_t record_bytes = 0;
    double read_ms_min = 0, read_ms_median = 0, read_ms_max = 0;  // over repetitions
    double base_acc = 0;
};

struct KSweepReport {
    SparsifyMode mode = SparsifyMode::MR;
    std::uint32_t reads_per_trial = 500;
    std::uint32_t repetitions = 3;
    std::vector<KSweepEntry> entries;
};

KSweepReport bench_k_sweep(const BenchSetup& setup,
                           const std::vector<std::uint32_t>& k_list, SparsifyMode mode);

// Process peak resident set size in bytes (stand-in for device memory).
std::uint64_t peak_rss_bytes();

std::string mode_report_json(const ModeBenchReport& r);
std::string ksweep_report_json(const KSweepReport& r);
std::string mode_report_table(const ModeBenchReport& r);
std::string ksweep_report_table(const KSweepReport& r);

}  // namespace rd
