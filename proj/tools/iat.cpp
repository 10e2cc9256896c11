// iat command line: synthetic data generation, training, tracking,
// evaluation and the ablation sweeps.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "iat/evalkit.hpp"
#include "iat/tracker.hpp"
#include "iat/trainer.hpp"

namespace fs = std::filesystem;
using namespace iat;

namespace {

FullConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return FullConfig{};
    return load_config(path);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

// Loads a single sequence directory (frames/ + groundtruth.txt).
VideoSample load_sequence(const std::string& dir) {
    VideoSample video;
    video.video_id = 0;
    video.boxes = load_groundtruth((fs::path(dir) / "groundtruth.txt").string());
    for (size_t i = 0; i < video.boxes.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%05zu.png", i);
        video.frames.push_back(read_png((fs::path(dir) / "frames" / name).string()));
    }
    return video;
}

int run_gen_data(const std::string& config_path, const std::string& out) {
    FullConfig cfg = load_config_or_default(config_path);
    auto dataset = generate_dataset(cfg.data);
    for (const auto& v : dataset) validate_video(v);
    save_dataset(dataset, out);
    std::printf("wrote %zu videos to %s\n", dataset.size(), out.c_str());
    return 0;
}

int run_train(const std::string& config_path, const std::string& data_root, const std::string& out,
              const std::string& variant, const std::string& resume) {
    FullConfig cfg = load_config_or_default(config_path);
    if (!variant.empty()) cfg.inst.variant = variant_from_string(variant);
    std::vector<VideoSample> dataset =
        data_root.empty() ? generate_dataset(cfg.data) : load_dataset(data_root);
    FitResult res = fit(cfg, dataset, out, resume);
    std::printf("trained %zu steps, checkpoint: %s\n", res.metrics.size(), res.final_checkpoint.c_str());
    if (!res.metrics.empty()) {
        const StepMetrics& m = res.metrics.back();
        std::printf("final: L_cls=%.4f L_reg=%.4f L_ins=%.4f total=%.4f\n", m.l_cls, m.l_reg, m.l_ins,
                    m.total);
    }
    return 0;
}

int run_track(const std::string& checkpoint, const std::string& config_path, const std::string& video_dir,
              const std::string& out) {
    FullConfig cfg = load_config_or_default(config_path);
    Tracker tracker = Tracker::from_checkpoint(checkpoint, cfg);
    VideoSample video = load_sequence(video_dir);
    check_contract(!video.boxes.empty(), "track: sequence has no annotations");
    auto results = tracker.track_sequence(video, video.boxes.front());
    save_results(out, results);
    Instrumentation ins = tracker.instrumentation();
    std::printf("tracked %zu frames -> %s (bank reads %zu, writes %zu, psi forwards %zu)\n",
                results.size(), out.c_str(), ins.bank_reads, ins.bank_writes, ins.psi_forwards);
    return 0;
}

int run_eval(const std::string& results_path, const std::string& gt_path) {
    auto tracked = load_results(results_path);
    auto gt = load_groundtruth(gt_path);
    check_contract(tracked.size() == gt.size(), "eval: results/groundtruth length mismatch");
    RunResult r;
    r.sequence_id = results_path;
    for (const auto& t : tracked) r.pred.push_back(t.box);
    r.gt = gt;
    Curve s = success_curve({r});
    Curve p = precision_curve({r});
    std::printf("frames: %zu\n", r.pred.size());
    std::printf("success AUC: %.4f\n", s.headline);
    std::printf("precision@20px: %.4f\n", p.headline);
    return 0;
}

int run_ablate(const std::string& axis, const std::string& values_csv, const std::string& config_path,
               const std::string& out) {
    FullConfig cfg = load_config_or_default(config_path);
    auto values = split_csv(values_csv);
    // Same seeded generator, disjoint train/eval splits.
    DatasetSpec train_spec = cfg.data;
    DatasetSpec eval_spec = cfg.data;
    eval_spec.seed = derive_seed(cfg.data.seed, 0xE7A1, 0);
    eval_spec.num_videos = std::max(2, cfg.data.num_videos / 4);
    auto train_data = generate_dataset(train_spec);
    auto eval_data = generate_dataset(eval_spec);
    AblationReport report = ablate(axis, values, cfg, train_data, eval_data, out);
    std::printf("%s", report.table_text().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"instance-aware tracker toolkit"};
    app.require_subcommand(1);

    std::string config_path, out, data_root, variant, resume, checkpoint, video_dir, results_path,
        gt_path, axis, values;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--spec,--config", config_path, "config file (data section)");
    gen->add_option("--out", out, "output dataset root")->required();

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", config_path, "config file");
    train->add_option("--data", data_root, "dataset root (generated on the fly when omitted)");
    train->add_option("--out", out, "output directory")->required();
    train->add_option("--variant", variant, "video|object|fused_shared|fused_separated");
    train->add_option("--resume", resume, "checkpoint to resume from");

    auto* track = app.add_subcommand("track", "run the tracker over a sequence");
    track->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    track->add_option("--config", config_path, "config file (must match the checkpoint)");
    track->add_option("--video", video_dir, "sequence directory")->required();
    track->add_option("--out", out, "results file")->required();

    auto* eval = app.add_subcommand("eval", "OPE metrics for a results file");
    eval->add_option("--results", results_path, "tracker results file")->required();
    eval->add_option("--gt", gt_path, "groundtruth.txt")->required();

    auto* abl = app.add_subcommand("ablate", "sweep one axis and report a table");
    abl->add_option("--axis", axis, "K | F | fusion | variant")->required();
    abl->add_option("--values", values, "comma-separated values")->required();
    abl->add_option("--config", config_path, "base config file");
    abl->add_option("--out", out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen_data(config_path, out);
        if (train->parsed()) return run_train(config_path, data_root, out, variant, resume);
        if (track->parsed()) return run_track(checkpoint, config_path, video_dir, out);
        if (eval->parsed()) return run_eval(results_path, gt_path);
        if (abl->parsed()) return run_ablate(axis, values, config_path, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
