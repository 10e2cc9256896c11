#ifndef IAT_CONFIG_HPP_
#define IAT_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "iat/clsbranch.hpp"
#include "iat/encoders.hpp"
#include "iat/instbranch.hpp"
#include "iat/regbranch.hpp"
#include "iat/synthvid.hpp"

namespace iat {

struct LossWeights {
    double cls = 100.0;
    double reg = 0.01;
    double ins = 0.01;
};

struct TrainConfig {
    int epochs = 50;
    int steps_per_epoch = 100;
    int batch_size = 16;
    double lr = 1e-3;
    double lr_decay = 0.2;
    std::vector<int> decay_epochs = {15, 30, 45};
    double momentum = 0.999;  // memory-encoder EMA coefficient
    uint64_t seed = 0;
    int num_threads = 0;  // 0 = hardware concurrency
    int checkpoint_every = 1000;
    LossWeights weights;

    void validate() const;
    // 1-indexed epoch of a 0-indexed step.
    int epoch_of_step(int64_t step) const { return static_cast<int>(step / steps_per_epoch) + 1; }
    double lr_at_step(int64_t step) const;
};

struct TrackerConfig {
    double search_area_scale = 4.0;  // search-region area relative to box area
    double low_conf_ratio = 0.1;     // of the init-frame peak
    bool update_enabled = true;
};

struct FullConfig {
    DatasetSpec data;
    EncoderConfig enc;
    ClsConfig cls;
    RegConfig reg;
    InstConfig inst;
    PairSamplerConfig sampler;
    TrainConfig train;
    TrackerConfig tracker;

    void validate() const;
};

// JSON round trip; absent keys keep their defaults.
FullConfig parse_config(const std::string& json_text);
std::string config_to_json_text(const FullConfig& cfg, int indent = 2);
FullConfig load_config(const std::string& path);
void save_config(const FullConfig& cfg, const std::string& path);

// FNV-1a over the canonical (sorted-key) JSON form.
uint64_t config_hash(const FullConfig& cfg);
// Same hash with one dotted key (e.g. "inst.K") nulled out; used to verify
// that ablation rows differ only in the swept parameter.
uint64_t config_hash_excluding(const FullConfig& cfg, const std::string& dotted_key);

}  // namespace iat

#endif  // IAT_CONFIG_HPP_
