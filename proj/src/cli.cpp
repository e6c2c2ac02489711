#include "rd/cli.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>

#include "rd/bench.hpp"
#include "rd/config.hpp"
#include "rd/rng.hpp"
#include "rd/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

namespace rd {

using nlohmann::json;

namespace {

RunConfig load_config(const std::string& config_path,
                      const std::vector<std::string>& overrides) {
    RunConfig cfg = RunConfig::defaults();
    cfg.apply_env();
    if (!config_path.empty()) cfg.apply_file(config_path);
    for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        }
        cfg.set_key(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void check_split(const RunConfig& cfg, std::uint32_t class_count) {
    for (std::uint32_t c : cfg.train.split.base_classes) {
        if (c >= class_count) throw ConfigError("split: base class out of range");
    }
    for (std::uint32_t c : cfg.train.split.novel_classes) {
        if (c >= class_count) throw ConfigError("split: novel class out of range");
    }
}

int cmd_build_ril(const std::string& dataset_path, const RunConfig& cfg,
                  const std::string& out_path) {
    cfg.validate();
    const DatasetSpec spec = DatasetSpec::from_json_file(dataset_path);
    if (cfg.ril_mode != SparsifyMode::Full && cfg.ril_topk >= spec.class_count) {
        throw ConfigError("build-ril: topk must be < class_count for ms/mr modes");
    }
    const SyntheticDataset dataset = SyntheticDataset::generate(spec);
    const TeacherOracle oracle(cfg.teacher, spec.pattern_seed, spec.class_offset,
                               spec.class_count);
    const BuildSummary s = build_ril(dataset, oracle, cfg.ril_crops, cfg.ril_topk,
                                     cfg.ril_mode, cfg.ril_seed, out_path);
    json j;
    j["record_count"] = s.record_count;
    j["mean_info_weight"] = s.mean_info_weight;
    j["build_seconds"] = s.wall_seconds;
    j["bytes_written"] = s.bytes_written;
    j["config"] = json::parse(cfg.to_json());
    j["dataset"] = json::parse(spec.to_json());
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_train(const std::string& ril_path, const std::string& dataset_path,
              const RunConfig& cfg, const std::string& out_path,
              const std::string& trace_path) {
    cfg.validate();
    const DatasetSpec spec = DatasetSpec::from_json_file(dataset_path);
    check_split(cfg, spec.class_count);
    const SyntheticDataset dataset = SyntheticDataset::generate(spec);
    const RilTable table = RilTable::open(ril_path);
    if (table.header().class_count != spec.class_count) {
        throw ConfigError("train: RIL class count " +
                          std::to_string(table.header().class_count) +
                          " does not match dataset " + std::to_string(spec.class_count));
    }
    const TeacherOracle oracle(cfg.teacher, spec.pattern_seed, spec.class_offset,
                               spec.class_count);
    StudentState student = StudentState::init(cfg.student, oracle);
    CachedLabelSource source(table);
    TrainConfig tc = cfg.train;
    tc.loss = cfg.loss;
    const TrainResult result = train(student, source, dataset, tc);
    student.save_checkpoint(out_path);
    if (!trace_path.empty()) write_trace_csv(trace_path, result.trace);
    std::cout << "trained " << result.trace.size() << " epochs, final L_total "
              << result.trace.back().total << ", checkpoint " << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_path,
             const RunConfig& cfg, const std::string& out_path) {
    cfg.validate();
    const DatasetSpec spec = DatasetSpec::from_json_file(dataset_path);
    check_split(cfg, spec.class_count);
    const SyntheticDataset dataset = SyntheticDataset::generate(spec);
    const TeacherOracle oracle(cfg.teacher, spec.pattern_seed, spec.class_offset,
                               spec.class_count);
    StudentState student = StudentState::init(cfg.student, oracle);
    student.load_checkpoint(checkpoint_path);
    // evaluation excludes the few-shot training images, reproduced from the seed
    const std::vector<std::size_t> train_images = few_shot_sample(
        dataset, cfg.train.shots, cfg.train.split.base_classes, cfg.train.seed);
    const EvalReport r = evaluate(student, dataset, cfg.train.split, oracle, train_images);

    json j = json::parse(r.to_json());
    j["config"] = json::parse(cfg.to_json());
    j["dataset"] = json::parse(spec.to_json());
    const std::string text = j.dump(2);
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw IoError("eval: cannot open " + out_path);
        out << text << "\n";
    }
    std::cout << text << "\n";
    std::printf("split      accuracy\n");
    std::printf("base       %8.4f\n", r.base_acc);
    std::printf("novel      %8.4f\n", r.novel_acc);
    std::printf("HM         %8.4f\n", r.hm);
    std::printf("rejection  %8.4f\n", r.rejection);
    return 0;
}

int cmd_cross_eval(const std::string& checkpoint_path, const std::string& dataset_path,
                   const std::string& foreign_path, const RunConfig& cfg) {
    cfg.validate();
    const DatasetSpec spec = DatasetSpec::from_json_file(dataset_path);
    const DatasetSpec foreign_spec = DatasetSpec::from_json_file(foreign_path);
    const SyntheticDataset foreign = SyntheticDataset::generate(foreign_spec);
    const TeacherOracle oracle(cfg.teacher, spec.pattern_seed, spec.class_offset,
                               spec.class_count);
    StudentState student = StudentState::init(cfg.student, oracle);
    student.load_checkpoint(checkpoint_path);
    const double acc = cross_eval(student, foreign, spec);
    json j;
    j["cross_accuracy"] = acc;
    j["config"] = json::parse(cfg.to_json());
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_inspect(const std::string& ril_path, std::int64_t record_index) {
    const RilTable table = RilTable::open(ril_path);
    const RilHeader& h = table.header();
    std::cout << "magic: RILT\nversion: " << h.version << "\nmode: " << mode_name(h.mode)
              << "\nclass_count: " << h.class_count << "\ntop_k: " << h.top_k
              << "\ncrops_per_image: " << h.crops_per_image
              << "\nrecord_count: " << h.record_count
              << "\nfile_size: " << table.file_size() << "\n";
    if (record_index >= 0) {
        const RilRecord r = table.read_record(static_cast<std::uint64_t>(record_index));
        json j;
        j["image_id"] = r.image_id;
        j["crop_box"] = {r.crop.x, r.crop.y, r.crop.w, r.crop.h};
        j["augment"] = r.augment == AugmentTag::HFlip ? "hflip" : "none";
        j["info_weight"] = r.info_weight;
        j["pseudo_label"] = r.pseudo_label;
        if (h.mode == SparsifyMode::Full) {
            j["full_probs"] = r.label.full_probs;
        } else {
            j["top_indices"] = r.label.top_indices;
            j["top_probs"] = r.label.top_probs;
            if (h.mode == SparsifyMode::MS) j["tail_value"] = r.label.tail_value;
        }
        std::cout << "record " << record_index << ": " << j.dump(2) << "\n";
    }
    return 0;
}

int cmd_bench(const std::string& suite, const std::string& dataset_path,
              const RunConfig& cfg, double cost_multiplier,
              const std::string& out_path, const std::string& workdir,
              std::vector<std::uint32_t> k_list) {
    cfg.validate();
    BenchSetup setup;
    if (!dataset_path.empty()) setup.dataset = DatasetSpec::from_json_file(dataset_path);
    setup.teacher = cfg.teacher;
    setup.student = cfg.student;
    setup.train = cfg.train;
    setup.train.loss = cfg.loss;
    setup.crops_per_image = cfg.ril_crops;
    setup.top_k = cfg.ril_topk;
    setup.build_seed = cfg.ril_seed;
    setup.workdir = workdir;
    if (k_list.empty()) k_list = {1, 2, 4, setup.dataset.class_count - 1};

    json j;
    j["config"] = json::parse(cfg.to_json());
    std::string tables;
    if (suite == "modes" || suite == "all") {
        const ModeBenchReport r = bench_modes(setup, cost_multiplier);
        j["modes"] = json::parse(mode_report_json(r));
        tables += mode_report_table(r) + "\n";
    }
    if (suite == "ksweep" || suite == "all") {
        const KSweepReport r = bench_k_sweep(setup, k_list, SparsifyMode::MR);
        j["ksweep"] = json::parse(ksweep_report_json(r));
        tables += ksweep_report_table(r) + "\n";
    }
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw IoError("bench: cannot open " + out_path);
        out << j.dump(2) << "\n";
    }
    std::cout << tables;
    return 0;
}

// ---- selftest ----

struct ToyInstance {
    TeacherOracle teacher;
    StudentState student;
    std::vector<BatchItem> batch;
};

ToyInstance make_toy(std::uint64_t seed, std::uint32_t classes, std::uint32_t batch_size) {
    TeacherConfig tc;
    tc.embed_dim = 8;
    tc.patch_size = 4;
    tc.seed = seed;
    TeacherOracle teacher(tc, seed, 0, classes);
    StudentConfig sc;
    sc.context_len = 2;
    sc.embed_dim = 6;
    sc.seed = seed;
    StudentState student = StudentState::init(sc, teacher);

    auto rng = make_rng(mix64(seed, 0x70bULL));
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<BatchItem> batch;
    for (std::uint32_t i = 0; i < batch_size; ++i) {
        BatchItem item;
        Vec64 f(sc.embed_dim);
        for (double& x : f) x = n01(rng);
        item.feature = l2_normalize(f);
        Vec64 logits(classes);
        for (double& x : logits) x = n01(rng);
        item.target = softmax(logits, 1.0);
        item.weight = u01(rng);
        item.pseudo_label = static_cast<std::uint32_t>(item.target.argmax());
        batch.push_back(std::move(item));
    }
    return ToyInstance{std::move(teacher), std::move(student), std::move(batch)};
}

double toy_gradcheck(const ToyInstance& toy,
                     const std::function<double(const StudentState&, Vec64*)>& lossfn) {
    const Vec64 params = toy.student.flatten_params();
    return check_gradients(
        [&](const Vec64& p, Vec64* grad) {
            StudentState s = toy.student;
            s.set_params(p);
            return lossfn(s, grad);
        },
        params, 1e-5);
}

}  // namespace

int run_selftest() {
    int failures = 0;
    int passes = 0;
    const auto expect = [&](bool ok, const std::string& what) {
        if (ok) {
            ++passes;
        } else {
            ++failures;
            std::cout << "FAIL: " << what << "\n";
        }
    };

    // sparsification vs brute-force oracles
    auto rng = make_rng(0x5e1f);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::uint32_t c = 3 + static_cast<std::uint32_t>(trial % 8);
        const std::uint32_t k = 1 + static_cast<std::uint32_t>(trial) % (c - 1);
        Vec64 logits(c);
        for (double& x : logits) x = n01(rng);
        const Distribution p = softmax(logits, 1.0);
        const Distribution ms = densify(sparsify_ms(p, k));
        const Distribution mr = densify(sparsify_mr(p, k));
        expect(ms.valid(1e-6) && mr.valid(1e-6), "sparsified labels densify to distributions");
        expect(ms.argmax() == p.argmax() && mr.argmax() == p.argmax(),
               "sparsification preserves argmax");
    }

    // gradient checks on random toy instances
    const LossConfig lc;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const ToyInstance toy = make_toy(seed, 4, 3);
        const std::span<const BatchItem> batch(toy.batch);
        expect(toy_gradcheck(toy, [&](const StudentState& s, Vec64* g) {
                   return loss_pos(s, batch, lc.tau, g);
               }) < 1e-4, "loss_pos gradient");
        expect(toy_gradcheck(toy, [&](const StudentState& s, Vec64* g) {
                   return loss_neg(s, batch, lc.tau, g);
               }) < 1e-4, "loss_neg gradient");
        expect(toy_gradcheck(toy, [&](const StudentState& s, Vec64* g) {
                   return loss_diff1(s, batch, lc.alpha, g);
               }) < 1e-4, "loss_diff1 gradient");
        expect(toy_gradcheck(toy, [&](const StudentState& s, Vec64* g) {
                   return loss_diff2(s, batch, lc.delta, g);
               }) < 1e-4, "loss_diff2 gradient");
        expect(toy_gradcheck(toy, [&](const StudentState& s, Vec64* g) {
                   const LossReport r = loss_total(s, batch, lc);
                   if (g) *g = r.grad;
                   return r.total;
               }) < 1e-4, "loss_total gradient");
    }

    // kernel spot values
    expect(std::abs(kl_divergence(Distribution{{1.0, 0.0}}, Distribution{{0.5, 0.5}}) -
                    std::log(2.0)) < 1e-12, "kl hand value");
    expect(std::abs(info_weight(Distribution{{0.5, 0.5, 0.0, 0.0}}) - 0.5) < 1e-5,
           "info_weight hand value");

    std::cout << "selftest: " << passes << " passed, " << failures << " failed\n";
    return failures;
}

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"region-level distillation prompt trainer"};
    app.require_subcommand(1);

    std::string config_path, dataset_path, out_path, ril_path, trace_path;
    std::string checkpoint_path, foreign_path, suite = "all", workdir = ".";
    std::vector<std::string> overrides;
    std::vector<std::uint32_t> k_list;
    double cost_multiplier = 1.0;
    std::int64_t record_index = -1;
    std::uint32_t crops = 0, topk = 0;
    std::string mode_str;
    std::uint64_t seed_flag = 0;
    bool seed_set = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file (flat keys)");
        cmd->add_option("--set", overrides, "override config entries as key=value");
    };

    CLI::App* build = app.add_subcommand("build-ril", "build the offline supervision table");
    build->add_option("--dataset", dataset_path, "dataset spec JSON")->required();
    build->add_option("--crops", crops, "crops per image (M)");
    build->add_option("--topk", topk, "top-K kept per label");
    build->add_option("--mode", mode_str, "full|ms|mr");
    build->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { seed_flag = s; seed_set = true; },
        "crop sampling seed");
    build->add_option("--out", out_path, "output table path")->required();
    add_common(build);

    CLI::App* trn = app.add_subcommand("train", "train prompt contexts from a RIL table");
    trn->add_option("--ril", ril_path, "RIL table path")->required();
    trn->add_option("--dataset", dataset_path, "dataset spec JSON")->required();
    trn->add_option("--out", out_path, "checkpoint output")->required();
    trn->add_option("--trace", trace_path, "per-epoch loss trace CSV");
    add_common(trn);

    CLI::App* ev = app.add_subcommand("eval", "base-to-new evaluation of a checkpoint");
    ev->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
    ev->add_option("--dataset", dataset_path, "dataset spec JSON")->required();
    ev->add_option("--out", out_path, "report JSON output");
    add_common(ev);

    CLI::App* cev = app.add_subcommand("cross-eval", "zero-shot accuracy on a foreign dataset");
    cev->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
    cev->add_option("--dataset", dataset_path, "training dataset spec JSON")->required();
    cev->add_option("--foreign", foreign_path, "foreign dataset spec JSON")->required();
    add_common(cev);

    CLI::App* bench = app.add_subcommand("bench", "efficiency benchmarks");
    bench->add_option("--suite", suite, "modes|ksweep|all")
        ->check(CLI::IsMember({"modes", "ksweep", "all"}));
    bench->add_option("--cost-multiplier", cost_multiplier, "teacher cost inflation");
    bench->add_option("--dataset", dataset_path, "dataset spec JSON");
    bench->add_option("--out", out_path, "report JSON output");
    bench->add_option("--workdir", workdir, "scratch directory for tables");
    bench->add_option("--klist", k_list, "K values for the sweep");
    add_common(bench);

    CLI::App* insp = app.add_subcommand("inspect", "print a table header and records");
    insp->add_option("--ril", ril_path, "RIL table path")->required();
    insp->add_option("--record", record_index, "record index to decode");

    app.add_subcommand("selftest", "run gradient-check and oracle suites");

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        RunConfig cfg = load_config(config_path, overrides);
        if (build->parsed()) {
            if (crops > 0) cfg.ril_crops = crops;
            if (topk > 0) cfg.ril_topk = topk;
            if (!mode_str.empty()) cfg.ril_mode = mode_from_name(mode_str);
            if (seed_set) cfg.ril_seed = seed_flag;
            return cmd_build_ril(dataset_path, cfg, out_path);
        }
        if (trn->parsed()) return cmd_train(ril_path, dataset_path, cfg, out_path, trace_path);
        if (ev->parsed()) return cmd_eval(checkpoint_path, dataset_path, cfg, out_path);
        if (cev->parsed()) return cmd_cross_eval(checkpoint_path, dataset_path, foreign_path, cfg);
        if (bench->parsed())
            return cmd_bench(suite, dataset_path, cfg, cost_multiplier, out_path, workdir, k_list);
        if (insp->parsed()) return cmd_inspect(ril_path, record_index);
        return run_selftest() == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace rd
