#ifndef IAT_EVALKIT_HPP_
#define IAT_EVALKIT_HPP_

#include <string>
#include <vector>

#include "iat/common.hpp"
#include "iat/config.hpp"
#include "iat/synthvid.hpp"

namespace iat {

// Intersection over union; requires positive areas.
double iou(const Box& a, const Box& b);

struct RunResult {
    std::string sequence_id;
    std::vector<Box> pred;
    std::vector<Box> gt;
};

std::vector<double> per_frame_iou(const RunResult& r);
std::vector<double> per_frame_center_error(const RunResult& r);

struct Curve {
    std::vector<double> thresholds;
    std::vector<double> values;
    double headline = 0.0;  // AUC for success, precision@20 for precision
};

// OTB-style success plot over the pooled frames of all results: strict
// `IoU > t` on a 21-point grid; headline is the mean of the curve.
Curve success_curve(const std::vector<RunResult>& results);
// Precision plot: `err <= t` on a 0..50 px grid; headline at 20 px.
Curve precision_curve(const std::vector<RunResult>& results);

// Per-sequence means (the ablation tables' aggregation).
double mean_sequence_auc(const std::vector<RunResult>& results);
double mean_sequence_precision20(const std::vector<RunResult>& results);

// ---- ablation harness ----

struct AblationRow {
    std::string value;
    double auc = 0.0;
    double precision20 = 0.0;
    bool failed = false;
    std::string error;
};

struct AblationReport {
    std::string axis;
    std::vector<AblationRow> rows;
    uint64_t masked_config_hash = 0;  // identical across rows by construction

    std::string table_text() const;
};

// Trains one model per axis value on the same seeded dataset, tracks the
// held-out split and reports AUC / precision per value. Failed rows are
// recorded and the sweep continues.
AblationReport ablate(const std::string& axis, const std::vector<std::string>& values,
                      const FullConfig& base, const std::vector<VideoSample>& train_data,
                      const std::vector<VideoSample>& eval_data, const std::string& out_dir);

void save_ablation_report(const AblationReport& report, const std::string& dir);

// Applies one swept value onto a config copy; returns the dotted key that
// changed (for hash masking).
std::string apply_ablation_value(FullConfig& cfg, const std::string& axis, const std::string& value);

}  // namespace iat

#endif  // IAT_EVALKIT_HPP_
