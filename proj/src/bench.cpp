#include "rd/bench.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <sstream>

#include "rd/rng.hpp"

#include <nlohmann/json.hpp>

namespace rd {

using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> epoch_seconds(const TrainResult& r) {
    std::vector<double> out;
    for (const EpochStats& s : r.trace) out.push_back(s.seconds);
    return out;
}

}  // namespace

ModeBenchReport bench_modes(const BenchSetup& setup, double cost_multiplier) {
    if (cost_multiplier < 1.0) {
        throw ConfigError("bench: cost multiplier must be >= 1");
    }
    const SyntheticDataset dataset = SyntheticDataset::generate(setup.dataset);
    const TeacherOracle build_oracle(setup.teacher, setup.dataset.pattern_seed,
                                     setup.dataset.class_offset,
                                     setup.dataset.class_count);

    const std::string table_path = setup.workdir + "/bench_modes_full.ril";
    build_ril(dataset, build_oracle, setup.crops_per_image, 0, SparsifyMode::Full,
              setup.build_seed, table_path);

    ModeBenchReport report;
    report.cost_multiplier = cost_multiplier;

    // cached run
    {
        const RilTable table = RilTable::open(table_path);
        CachedLabelSource source(table);
        StudentState student = StudentState::init(setup.student, build_oracle);
        const auto t0 = std::chrono::steady_clock::now();
        const TrainResult r = train(student, source, dataset, setup.train);
        report.cached_seconds = seconds_since(t0);
        report.cached_epoch_seconds = epoch_seconds(r);
        student.save_checkpoint(setup.workdir + "/bench_cached.ckpt");
    }

    // online run with an inflated teacher
    {
        TeacherConfig expensive = setup.teacher;
        expensive.cost_multiplier = static_cast<std::uint32_t>(cost_multiplier);
        const TeacherOracle online_oracle(expensive, setup.dataset.pattern_seed,
                                          setup.dataset.class_offset,
                                          setup.dataset.class_count);
        OnlineLabelSource source(dataset, online_oracle, setup.crops_per_image,
                                 setup.build_seed);
        StudentState student = StudentState::init(setup.student, online_oracle);
        const auto t0 = std::chrono::steady_clock::now();
        const TrainResult r = train(student, source, dataset, setup.train);
        report.online_seconds = seconds_since(t0);
        report.online_epoch_seconds = epoch_seconds(r);
        student.save_checkpoint(setup.workdir + "/bench_online.ckpt");
    }

    report.checkpoint_hash = hash_file(setup.workdir + "/bench_cached.ckpt");
    report.checkpoints_match =
        report.checkpoint_hash == hash_file(setup.workdir + "/bench_online.ckpt");
    report.speedup = report.online_seconds / report.cached_seconds;
    if (!report.checkpoints_match) {
        throw NumericError("bench: cached and online checkpoints diverged in FULL mode");
    }
    return report;
}

KSweepReport bench_k_sweep(const BenchSetup& setup,
                           const std::vector<std::uint32_t>& k_list, SparsifyMode mode) {
    const SyntheticDataset dataset = SyntheticDataset::generate(setup.dataset);
    const TeacherOracle oracle(setup.teacher, setup.dataset.pattern_seed,
                               setup.dataset.class_offset, setup.dataset.class_count);

    KSweepReport report;
    report.mode = mode;
    for (std::uint32_t k : k_list) {
        if (k >= setup.dataset.class_count) {
            throw ConfigError("bench: K must be < class count");
        }
        KSweepEntry entry;
        entry.top_k = k;
        entry.record_bytes = record_byte_size(mode, k);
        const std::string path =
            setup.workdir + "/bench_k" + std::to_string(k) + ".ril";
        build_ril(dataset, oracle, setup.crops_per_image, k, mode, setup.build_seed, path);

        const RilTable table = RilTable::open(path);
        entry.file_size = table.file_size();

        std::vector<double> rep_ms;
        for (std::uint32_t rep = 0; rep < report.repetitions; ++rep) {
            auto rng = make_rng(mix64(0xbe9cULL, k * 16 + rep));
            std::uniform_int_distribution<std::uint64_t> pick(0, table.record_count() - 1);
            std::vector<std::uint64_t> indices(report.reads_per_trial);
            for (auto& i : indices) i = pick(rng);
            const auto t0 = std::chrono::steady_clock::now();
            double sink = 0.0;
            for (std::uint64_t i : indices) sink += table.read_record(i).info_weight;
            const double ms = seconds_since(t0) * 1000.0;
            rep_ms.push_back(ms + (sink < -1 ? 1 : 0));  // keep the reads alive
        }
        std::sort(rep_ms.begin(), rep_ms.end());
        entry.read_ms_min = rep_ms.front();
        entry.read_ms_median = rep_ms[rep_ms.size() / 2];
        entry.read_ms_max = rep_ms.back();

        CachedLabelSource source(table);
        StudentState student = StudentState::init(setup.student, oracle);
        train(student, source, dataset, setup.train);
        entry.base_acc =
            evaluate(student, dataset, setup.train.split, oracle).base_acc;
        report.entries.push_back(entry);
    }
    return report;
}

std::uint64_t peak_rss_bytes() {
    rusage ru{};
    getrusage(RUSAGE_SELF, &ru);
    return static_cast<std::uint64_t>(ru.ru_maxrss) * 1024;
}

std::string mode_report_json(const ModeBenchReport& r) {
    json j;
    j["cached_seconds"] = r.cached_seconds;
    j["online_seconds"] = r.online_seconds;
    j["speedup"] = r.speedup;
    j["checkpoints_match"] = r.checkpoints_match;
    j["checkpoint_hash"] = r.checkpoint_hash;
    j["cost_multiplier"] = r.cost_multiplier;
    j["cached_epoch_seconds"] = r.cached_epoch_seconds;
    j["online_epoch_seconds"] = r.online_epoch_seconds;
    j["peak_rss_bytes"] = peak_rss_bytes();
    j["note"] = "speedup is relative, measured under an explicit teacher cost multiplier";
    return j.dump(2);
}

std::string ksweep_report_json(const KSweepReport& r) {
    json j;
    j["mode"] = mode_name(r.mode);
    j["reads_per_trial"] = r.reads_per_trial;
    j["repetitions"] = r.repetitions;
    j["peak_rss_bytes"] = peak_rss_bytes();
    j["entries"] = json::array();
    for (const KSweepEntry& e : r.entries) {
        json je;
        je["top_k"] = e.top_k;
        je["file_size"] = e.file_size;
        je["record_bytes"] = e.record_bytes;
        je["read_ms_min"] = e.read_ms_min;
        je["read_ms_median"] = e.read_ms_median;
        je["read_ms_max"] = e.read_ms_max;
        je["base_acc"] = e.base_acc;
        j["entries"].push_back(je);
    }
    return j.dump(2);
}

std::string mode_report_table(const ModeBenchReport& r) {
    std::ostringstream os;
    os << "mode      wall_s   epochs\n";
    char buf[128];
    std::snprintf(buf, sizeof(buf), "cached  %8.3f %8zu\n", r.cached_seconds,
                  r.cached_epoch_seconds.size());
    os << buf;
    std::snprintf(buf, sizeof(buf), "online  %8.3f %8zu\n", r.online_seconds,
                  r.online_epoch_seconds.size());
    os << buf;
    std::snprintf(buf, sizeof(buf), "speedup %8.2fx (cost multiplier %.0f, checkpoints %s)\n",
                  r.speedup, r.cost_multiplier,
                  r.checkpoints_match ? "identical" : "DIVERGED");
    os << buf;
    return os.str();
}

std::string ksweep_report_table(const KSweepReport& r) {
    std::ostringstream os;
    os << "K    rec_bytes   file_bytes   read_ms(min/med/max)   base_acc\n";
    char buf[160];
    for (const KSweepEntry& e : r.entries) {
        std::snprintf(buf, sizeof(buf), "%-4u %9llu %12llu   %.3f/%.3f/%.3f   %.3f\n",
                      e.top_k, static_cast<unsigned long long>(e.record_bytes),
                      static_cast<unsigned long long>(e.file_size), e.read_ms_min,
                      e.read_ms_median, e.read_ms_max, e.base_acc);
        os << buf;
    }
    return os.str();
}

}  // namespace rd
