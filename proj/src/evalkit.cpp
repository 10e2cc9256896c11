#include "iat/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "iat/tracker.hpp"

namespace fs = std::filesystem;

namespace iat {

double iou(const Box& a, const Box& b) {
    check_contract(a.w > 0.0 && a.h > 0.0 && b.w > 0.0 && b.h > 0.0, "iou: non-positive box area");
    double ix = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
    double iy = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
    double inter = ix * iy;
    double uni = a.area() + b.area() - inter;
    return inter / uni;
}

std::vector<double> per_frame_iou(const RunResult& r) {
    check_contract(r.pred.size() == r.gt.size(), "run result: pred/gt length mismatch");
    std::vector<double> out;
    out.reserve(r.pred.size());
    for (size_t i = 0; i < r.pred.size(); ++i) out.push_back(iou(r.pred[i], r.gt[i]));
    return out;
}

std::vector<double> per_frame_center_error(const RunResult& r) {
    check_contract(r.pred.size() == r.gt.size(), "run result: pred/gt length mismatch");
    std::vector<double> out;
    out.reserve(r.pred.size());
    for (size_t i = 0; i < r.pred.size(); ++i)
        out.push_back(std::hypot(r.pred[i].cx - r.gt[i].cx, r.pred[i].cy - r.gt[i].cy));
    return out;
}

namespace {

std::vector<double> collect_ious(const std::vector<RunResult>& results) {
    check_contract(!results.empty(), "metrics: empty result set");
    std::vector<double> all;
    for (const auto& r : results) {
        auto v = per_frame_iou(r);
        all.insert(all.end(), v.begin(), v.end());
    }
    check_contract(!all.empty(), "metrics: no frames");
    return all;
}

std::vector<double> collect_errors(const std::vector<RunResult>& results) {
    check_contract(!results.empty(), "metrics: empty result set");
    std::vector<double> all;
    for (const auto& r : results) {
        auto v = per_frame_center_error(r);
        all.insert(all.end(), v.begin(), v.end());
    }
    check_contract(!all.empty(), "metrics: no frames");
    return all;
}

Curve success_from_ious(const std::vector<double>& ious) {
    Curve c;
    double auc = 0.0;
    for (int k = 0; k <= 20; ++k) {
        double t = 0.05 * k;
        int hits = 0;
        for (double v : ious)
            if (v > t) ++hits;
        double frac = static_cast<double>(hits) / static_cast<double>(ious.size());
        c.thresholds.push_back(t);
        c.values.push_back(frac);
        auc += frac;
    }
    c.headline = auc / 21.0;
    return c;
}

Curve precision_from_errors(const std::vector<double>& errs) {
    Curve c;
    for (int t = 0; t <= 50; ++t) {
        int hits = 0;
        for (double v : errs)
            if (v <= t) ++hits;
        c.thresholds.push_back(t);
        c.values.push_back(static_cast<double>(hits) / static_cast<double>(errs.size()));
    }
    c.headline = c.values[20];
    return c;
}

}  // namespace

Curve success_curve(const std::vector<RunResult>& results) {
    return success_from_ious(collect_ious(results));
}

Curve precision_curve(const std::vector<RunResult>& results) {
    return precision_from_errors(collect_errors(results));
}

double mean_sequence_auc(const std::vector<RunResult>& results) {
    check_contract(!results.empty(), "metrics: empty result set");
    double s = 0.0;
    for (const auto& r : results) s += success_from_ious(per_frame_iou(r)).headline;
    return s / static_cast<double>(results.size());
}

double mean_sequence_precision20(const std::vector<RunResult>& results) {
    check_contract(!results.empty(), "metrics: empty result set");
    double s = 0.0;
    for (const auto& r : results) s += precision_from_errors(per_frame_center_error(r)).headline;
    return s / static_cast<double>(results.size());
}

// ---------------- ablation harness ----------------

std::string apply_ablation_value(FullConfig& cfg, const std::string& axis, const std::string& value) {
    if (axis == "K") {
        cfg.inst.K = std::stoi(value);
        return "inst.K";
    }
    if (axis == "F") {
        cfg.inst.F = std::stoi(value);
        return "inst.F";
    }
    if (axis == "fusion") {
        cfg.inst.variant = value == "shared"      ? InstVariant::kFusedShared
                           : value == "separated" ? InstVariant::kFusedSeparated
                                                  : variant_from_string(value);
        return "inst.variant";
    }
    if (axis == "variant") {
        cfg.inst.variant = variant_from_string(value);
        return "inst.variant";
    }
    throw ConfigError("ablate: unknown axis " + axis + " (expected K, F, fusion or variant)");
}

AblationReport ablate(const std::string& axis, const std::vector<std::string>& values,
                      const FullConfig& base, const std::vector<VideoSample>& train_data,
                      const std::vector<VideoSample>& eval_data, const std::string& out_dir) {
    check_contract(!values.empty(), "ablate: no values given");
    check_contract(!eval_data.empty(), "ablate: empty eval split");
    fs::create_directories(out_dir);

    AblationReport report;
    report.axis = axis;
    bool first = true;
    for (const auto& value : values) {
        AblationRow row;
        row.value = value;
        FullConfig cfg = base;
        std::string key;
        try {
            key = apply_ablation_value(cfg, axis, value);
            cfg.validate();
            uint64_t masked = config_hash_excluding(cfg, key);
            if (first) {
                report.masked_config_hash = masked;
                first = false;
            } else {
                check_contract(masked == report.masked_config_hash,
                               "ablate: rows differ outside the swept parameter");
            }

            std::string row_dir = (fs::path(out_dir) / ("row_" + axis + "_" + value)).string();
            FitResult fitres = fit(cfg, train_data, row_dir);
            Tracker tracker = Tracker::from_checkpoint(fitres.final_checkpoint, cfg);

            std::vector<RunResult> runs;
            for (const auto& video : eval_data) {
                RunResult r;
                r.sequence_id = std::to_string(video.video_id);
                auto tracked = tracker.track_sequence(video, video.boxes.front());
                for (const auto& t : tracked) r.pred.push_back(t.box);
                r.gt = video.boxes;
                runs.push_back(std::move(r));
            }
            row.auc = mean_sequence_auc(runs);
            row.precision20 = mean_sequence_precision20(runs);
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
        }
        report.rows.push_back(std::move(row));
    }
    save_ablation_report(report, out_dir);
    return report;
}

std::string AblationReport::table_text() const {
    char line[256];
    std::string out;
    std::snprintf(line, sizeof(line), "%-12s %10s %12s  %s\n", axis.c_str(), "AUC", "Prec@20", "status");
    out += line;
    out += std::string(48, '-') + "\n";
    for (const auto& row : rows) {
        if (row.failed)
            std::snprintf(line, sizeof(line), "%-12s %10s %12s  failed: %s\n", row.value.c_str(), "-",
                          "-", row.error.c_str());
        else
            std::snprintf(line, sizeof(line), "%-12s %10.4f %12.4f  ok\n", row.value.c_str(), row.auc,
                          row.precision20);
        out += line;
    }
    return out;
}

void save_ablation_report(const AblationReport& report, const std::string& dir) {
    fs::create_directories(dir);
    {
        std::ofstream os(fs::path(dir) / "report.txt");
        os << report.table_text();
    }
    nlohmann::json j;
    j["axis"] = report.axis;
    j["masked_config_hash"] = report.masked_config_hash;
    j["rows"] = nlohmann::json::array();
    for (const auto& row : report.rows) {
        nlohmann::json r;
        r["value"] = row.value;
        r["failed"] = row.failed;
        if (row.failed)
            r["error"] = row.error;
        else {
            r["auc"] = row.auc;
            r["precision_at_20"] = row.precision20;
        }
        j["rows"].push_back(r);
    }
    std::ofstream os(fs::path(dir) / "report.json");
    os << j.dump(2) << "\n";
}

}  // namespace iat
