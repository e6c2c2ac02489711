#include "rd/config.hpp"

#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

namespace rd {

using nlohmann::json;

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.train.loss = c.loss;
    return c;
}

void RunConfig::apply_env() {
    if (const char* env = std::getenv("REGION_DISTILL_SEED")) {
        const std::uint64_t seed = std::strtoull(env, nullptr, 10);
        train.seed = seed;
        ril_seed = seed;
        student.seed = seed;
        teacher.seed = seed;
    }
}

namespace {

void apply_one(RunConfig& c, const std::string& key, const json& v) {
    try {
        if (key == "loss.lambda_neg") c.loss.lambda_neg = v.get<double>();
        else if (key == "loss.lambda_diff1") c.loss.lambda_diff1 = v.get<double>();
        else if (key == "loss.lambda_diff2") c.loss.lambda_diff2 = v.get<double>();
        else if (key == "loss.alpha") c.loss.alpha = v.get<double>();
        else if (key == "loss.delta") c.loss.delta = v.get<double>();
        else if (key == "loss.tau") c.loss.tau = v.get<double>();
        else if (key == "train.shots") c.train.shots = v.get<std::uint32_t>();
        else if (key == "train.epochs") c.train.epochs = v.get<std::uint32_t>();
        else if (key == "train.batch_size") c.train.batch_size = v.get<std::uint32_t>();
        else if (key == "train.lr0") c.train.lr0 = v.get<double>();
        else if (key == "train.momentum") c.train.momentum = v.get<double>();
        else if (key == "train.seed") c.train.seed = v.get<std::uint64_t>();
        else if (key == "train.base_classes")
            c.train.split.base_classes = v.get<std::vector<std::uint32_t>>();
        else if (key == "train.novel_classes")
            c.train.split.novel_classes = v.get<std::vector<std::uint32_t>>();
        else if (key == "student.context_len") c.student.context_len = v.get<std::uint32_t>();
        else if (key == "student.embed_dim") c.student.embed_dim = v.get<std::uint32_t>();
        else if (key == "student.temperature") c.student.temperature = v.get<double>();
        else if (key == "student.context_init_sigma") c.student.context_init_sigma = v.get<double>();
        else if (key == "student.negative_perturb_sigma") c.student.negative_perturb_sigma = v.get<double>();
        else if (key == "student.seed") c.student.seed = v.get<std::uint64_t>();
        else if (key == "teacher.embed_dim") c.teacher.embed_dim = v.get<std::uint32_t>();
        else if (key == "teacher.temperature") c.teacher.temperature = v.get<double>();
        else if (key == "teacher.patch_size") c.teacher.patch_size = v.get<std::uint32_t>();
        else if (key == "teacher.seed") c.teacher.seed = v.get<std::uint64_t>();
        else if (key == "ril.mode") c.ril_mode = mode_from_name(v.get<std::string>());
        else if (key == "ril.topk") c.ril_topk = v.get<std::uint32_t>();
        else if (key == "ril.crops") c.ril_crops = v.get<std::uint32_t>();
        else if (key == "ril.seed") c.ril_seed = v.get<std::uint64_t>();
        else throw ConfigError("config: unknown key '" + key + "'");
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for '" + key + "': " + e.what());
    }
}

}  // namespace

void RunConfig::apply_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    for (const auto& [key, value] : j.items()) apply_one(*this, key, value);
    train.loss = loss;
}

void RunConfig::apply_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    apply_json_text(text);
}

void RunConfig::set_key(const std::string& key, const std::string& value) {
    json v;
    try {
        v = json::parse(value);
    } catch (const json::exception&) {
        v = value;  // bare strings (e.g. mode names)
    }
    apply_one(*this, key, v);
    train.loss = loss;
}

std::string RunConfig::to_json() const {
    json j;
    j["loss.lambda_neg"] = loss.lambda_neg;
    j["loss.lambda_diff1"] = loss.lambda_diff1;
    j["loss.lambda_diff2"] = loss.lambda_diff2;
    j["loss.alpha"] = loss.alpha;
    j["loss.delta"] = loss.delta;
    j["loss.tau"] = loss.tau;
    j["train.shots"] = train.shots;
    j["train.epochs"] = train.epochs;
    j["train.batch_size"] = train.batch_size;
    j["train.lr0"] = train.lr0;
    j["train.momentum"] = train.momentum;
    j["train.seed"] = train.seed;
    j["train.base_classes"] = train.split.base_classes;
    j["train.novel_classes"] = train.split.novel_classes;
    j["student.context_len"] = student.context_len;
    j["student.embed_dim"] = student.embed_dim;
    j["student.temperature"] = student.temperature;
    j["student.context_init_sigma"] = student.context_init_sigma;
    j["student.negative_perturb_sigma"] = student.negative_perturb_sigma;
    j["student.seed"] = student.seed;
    j["teacher.embed_dim"] = teacher.embed_dim;
    j["teacher.temperature"] = teacher.temperature;
    j["teacher.patch_size"] = teacher.patch_size;
    j["teacher.seed"] = teacher.seed;
    j["ril.mode"] = mode_name(ril_mode);
    j["ril.topk"] = ril_topk;
    j["ril.crops"] = ril_crops;
    j["ril.seed"] = ril_seed;
    return j.dump(2);
}

void RunConfig::validate() const {
    loss.validate();
    TrainConfig t = train;
    t.loss = loss;
    t.validate();
    if (ril_crops == 0) throw ConfigError("config: ril.crops must be >= 1");
}

}  // namespace rd
