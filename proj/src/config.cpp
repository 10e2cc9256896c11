#include "iat/config.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace iat {

using nlohmann::json;

void TrainConfig::validate() const {
    check_config(epochs > 0 && steps_per_epoch > 0 && batch_size > 0, "train: counts must be positive");
    check_config(lr > 0.0 && lr_decay > 0.0, "train: lr and decay must be positive");
    check_config(momentum >= 0.0 && momentum <= 1.0, "train: momentum must be in [0,1]");
    for (size_t i = 0; i < decay_epochs.size(); ++i) {
        check_config(decay_epochs[i] >= 1 && decay_epochs[i] < epochs,
                     "train: decay epochs must lie inside the schedule");
        if (i > 0)
            check_config(decay_epochs[i] > decay_epochs[i - 1],
                         "train: decay epochs must be strictly increasing");
    }
    check_config(weights.cls >= 0 && weights.reg >= 0 && weights.ins >= 0,
                 "train: loss weights must be non-negative");
}

double TrainConfig::lr_at_step(int64_t step) const {
    int epoch = epoch_of_step(step);
    double f = lr;
    for (int d : decay_epochs)
        if (epoch >= d) f *= lr_decay;
    return f;
}

void FullConfig::validate() const {
    data.validate();
    train.validate();
    check_config(enc.crop_size == sampler.crop_size,
                 "config: sampler.crop_size must match enc.crop_size");
    check_config(inst.K >= 0, "config: inst.K must be >= 0");
    check_config(inst.tau > 0.0, "config: inst.tau must be positive");
    check_config(inst.F >= 1, "config: inst.F must be >= 1");
    check_config(cls.reg_factor >= 0.0, "config: cls.reg_factor must be >= 0");
    for (double s : reg.sigma_y) check_config(s > 0.0, "config: reg.sigma_y must be positive");
}

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json dataset_to_json(const DatasetSpec& d) {
    return json{{"num_videos", d.num_videos},   {"frames_per_video", d.frames_per_video},
                {"image_size", d.image_size},   {"distractor_min", d.distractor_min},
                {"distractor_max", d.distractor_max}, {"occlusion_prob", d.occlusion_prob},
                {"speed_min", d.speed_min},     {"speed_max", d.speed_max},
                {"seed", d.seed}};
}

void dataset_from_json(const json& j, DatasetSpec& d) {
    get_if(j, "num_videos", d.num_videos);
    get_if(j, "frames_per_video", d.frames_per_video);
    get_if(j, "image_size", d.image_size);
    get_if(j, "distractor_min", d.distractor_min);
    get_if(j, "distractor_max", d.distractor_max);
    get_if(j, "occlusion_prob", d.occlusion_prob);
    get_if(j, "speed_min", d.speed_min);
    get_if(j, "speed_max", d.speed_max);
    get_if(j, "seed", d.seed);
}

}  // namespace

FullConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    FullConfig c;
    if (j.contains("data")) dataset_from_json(j.at("data"), c.data);
    if (j.contains("enc")) {
        const json& e = j.at("enc");
        get_if(e, "in_channels", c.enc.in_channels);
        get_if(e, "crop_size", c.enc.crop_size);
        get_if(e, "widths", c.enc.widths);
        get_if(e, "strides", c.enc.strides);
        get_if(e, "kernel", c.enc.kernel);
        c.sampler.crop_size = c.enc.crop_size;
    }
    if (j.contains("cls")) {
        const json& e = j.at("cls");
        get_if(e, "reg_factor", c.cls.reg_factor);
        get_if(e, "sigma", c.cls.sigma);
        get_if(e, "filter_size", c.cls.filter_size);
        get_if(e, "inner_steps", c.cls.inner_steps);
        get_if(e, "inner_step_size", c.cls.inner_step_size);
        get_if(e, "augment_count", c.cls.augment_count);
        get_if(e, "peak_ratio", c.cls.peak_ratio);
        get_if(e, "max_set_size", c.cls.max_set_size);
        get_if(e, "peak_exclusion_radius", c.cls.peak_exclusion_radius);
    }
    if (j.contains("reg")) {
        const json& e = j.at("reg");
        get_if(e, "sigma_y", c.reg.sigma_y);
        get_if(e, "num_candidates", c.reg.num_candidates);
        get_if(e, "refine_steps", c.reg.refine_steps);
        get_if(e, "refine_step_size", c.reg.refine_step_size);
        get_if(e, "roi_size", c.reg.roi_size);
        get_if(e, "hidden_dim", c.reg.hidden_dim);
        get_if(e, "uniform_log_lo", c.reg.uniform_log_lo);
        get_if(e, "uniform_log_hi", c.reg.uniform_log_hi);
    }
    if (j.contains("inst")) {
        const json& e = j.at("inst");
        if (e.contains("variant")) c.inst.variant = variant_from_string(e.at("variant").get<std::string>());
        get_if(e, "K", c.inst.K);
        get_if(e, "tau", c.inst.tau);
        get_if(e, "F", c.inst.F);
        get_if(e, "embed_dim", c.inst.embed_dim);
        if (e.contains("video_pool"))
            c.inst.video_pool = e.at("video_pool").get<std::string>() == "max" ? GlobalPoolKind::kMax
                                                                               : GlobalPoolKind::kAvg;
    }
    if (j.contains("sampler")) {
        const json& e = j.at("sampler");
        get_if(e, "search_area_scale", c.sampler.search_area_scale);
        get_if(e, "template_area_scale", c.sampler.template_area_scale);
        get_if(e, "translation_jitter", c.sampler.translation_jitter);
        get_if(e, "scale_jitter", c.sampler.scale_jitter);
    }
    if (j.contains("train")) {
        const json& e = j.at("train");
        get_if(e, "epochs", c.train.epochs);
        get_if(e, "steps_per_epoch", c.train.steps_per_epoch);
        get_if(e, "batch_size", c.train.batch_size);
        get_if(e, "lr", c.train.lr);
        get_if(e, "lr_decay", c.train.lr_decay);
        get_if(e, "decay_epochs", c.train.decay_epochs);
        get_if(e, "momentum", c.train.momentum);
        get_if(e, "seed", c.train.seed);
        get_if(e, "num_threads", c.train.num_threads);
        get_if(e, "checkpoint_every", c.train.checkpoint_every);
        if (e.contains("weights")) {
            const json& w = e.at("weights");
            get_if(w, "cls", c.train.weights.cls);
            get_if(w, "reg", c.train.weights.reg);
            get_if(w, "ins", c.train.weights.ins);
        }
    }
    if (j.contains("tracker")) {
        const json& e = j.at("tracker");
        get_if(e, "search_area_scale", c.tracker.search_area_scale);
        get_if(e, "low_conf_ratio", c.tracker.low_conf_ratio);
        get_if(e, "update_enabled", c.tracker.update_enabled);
    }
    c.validate();
    return c;
}

std::string config_to_json_text(const FullConfig& c, int indent) {
    json j;
    j["data"] = dataset_to_json(c.data);
    j["enc"] = {{"in_channels", c.enc.in_channels}, {"crop_size", c.enc.crop_size},
                {"widths", c.enc.widths},           {"strides", c.enc.strides},
                {"kernel", c.enc.kernel}};
    j["cls"] = {{"reg_factor", c.cls.reg_factor},
                {"sigma", c.cls.sigma},
                {"filter_size", c.cls.filter_size},
                {"inner_steps", c.cls.inner_steps},
                {"inner_step_size", c.cls.inner_step_size},
                {"augment_count", c.cls.augment_count},
                {"peak_ratio", c.cls.peak_ratio},
                {"max_set_size", c.cls.max_set_size},
                {"peak_exclusion_radius", c.cls.peak_exclusion_radius}};
    j["reg"] = {{"sigma_y", c.reg.sigma_y},
                {"num_candidates", c.reg.num_candidates},
                {"refine_steps", c.reg.refine_steps},
                {"refine_step_size", c.reg.refine_step_size},
                {"roi_size", c.reg.roi_size},
                {"hidden_dim", c.reg.hidden_dim},
                {"uniform_log_lo", c.reg.uniform_log_lo},
                {"uniform_log_hi", c.reg.uniform_log_hi}};
    j["inst"] = {{"variant", to_string(c.inst.variant)},
                 {"K", c.inst.K},
                 {"tau", c.inst.tau},
                 {"F", c.inst.F},
                 {"embed_dim", c.inst.embed_dim},
                 {"video_pool", c.inst.video_pool == GlobalPoolKind::kMax ? "max" : "avg"}};
    j["sampler"] = {{"search_area_scale", c.sampler.search_area_scale},
                    {"template_area_scale", c.sampler.template_area_scale},
                    {"translation_jitter", c.sampler.translation_jitter},
                    {"scale_jitter", c.sampler.scale_jitter}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"steps_per_epoch", c.train.steps_per_epoch},
                  {"batch_size", c.train.batch_size},
                  {"lr", c.train.lr},
                  {"lr_decay", c.train.lr_decay},
                  {"decay_epochs", c.train.decay_epochs},
                  {"momentum", c.train.momentum},
                  {"seed", c.train.seed},
                  {"num_threads", c.train.num_threads},
                  {"checkpoint_every", c.train.checkpoint_every},
                  {"weights",
                   {{"cls", c.train.weights.cls}, {"reg", c.train.weights.reg}, {"ins", c.train.weights.ins}}}};
    j["tracker"] = {{"search_area_scale", c.tracker.search_area_scale},
                    {"low_conf_ratio", c.tracker.low_conf_ratio},
                    {"update_enabled", c.tracker.update_enabled}};
    return j.dump(indent);
}

FullConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

void save_config(const FullConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("config: cannot write " + path);
    os << config_to_json_text(cfg) << "\n";
}

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

uint64_t config_hash(const FullConfig& cfg) { return fnv1a(config_to_json_text(cfg, -1)); }

uint64_t config_hash_excluding(const FullConfig& cfg, const std::string& dotted_key) {
    json j = json::parse(config_to_json_text(cfg, -1));
    auto pos = dotted_key.find('.');
    check_contract(pos != std::string::npos, "config_hash_excluding: key must be section.field");
    std::string section = dotted_key.substr(0, pos);
    std::string field = dotted_key.substr(pos + 1);
    check_contract(j.contains(section) && j.at(section).contains(field),
                   "config_hash_excluding: unknown key " + dotted_key);
    j[section][field] = nullptr;
    return fnv1a(j.dump(-1));
}

}  // namespace iat
