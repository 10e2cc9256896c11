#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "iat/evalkit.hpp"
#include "iat/tracker.hpp"

using namespace iat;
namespace fs = std::filesystem;

namespace {

FullConfig tracker_config() {
    FullConfig cfg;
    cfg.data.num_videos = 4;
    cfg.data.frames_per_video = 6;
    cfg.data.image_size = 120;
    cfg.data.distractor_min = 0;
    cfg.data.distractor_max = 0;
    cfg.data.occlusion_prob = 0.0;
    cfg.data.speed_min = 0.5;
    cfg.data.speed_max = 1.5;
    cfg.data.seed = 31;
    cfg.enc.crop_size = 64;
    cfg.enc.widths = {8, 12, 16, 16};
    cfg.sampler.crop_size = 64;
    cfg.cls.filter_size = 3;
    cfg.cls.inner_steps = 40;
    cfg.reg.num_candidates = 6;
    cfg.reg.hidden_dim = 16;
    cfg.reg.refine_steps = 5;
    cfg.inst.K = 8;
    cfg.inst.F = 2;
    cfg.inst.embed_dim = 16;
    cfg.train.batch_size = 2;
    cfg.train.num_threads = 1;
    cfg.train.seed = 7;
    cfg.train.decay_epochs = {};
    return cfg;
}

VideoSample static_video(const DatasetSpec& spec, int frames) {
    // Identical frames: the easiest possible tracking scenario.
    auto data = generate_dataset(spec);
    VideoSample v = data[0];
    VideoSample out;
    out.video_id = v.video_id;
    out.meta = v.meta;
    for (int i = 0; i < frames; ++i) {
        out.frames.push_back(v.frames[0]);
        out.boxes.push_back(v.boxes[0]);
    }
    return out;
}

}  // namespace

TEST_SUITE("tracker") {

TEST_CASE("init scores the annotated frame at the annotated center and keeps counters at zero") {
    FullConfig cfg = tracker_config();
    Tracker tracker(init_model(cfg));
    auto data = generate_dataset(cfg.data);
    const VideoSample& video = data[0];

    TrackState state = tracker.init(video.frames[0], video.boxes[0]);
    CHECK(state.frame_index == 0);
    CHECK(state.init_peak > 0.0);

    // Self-consistency: the fitted filter localizes the annotation.
    Box box_in_crop;
    Tensor crop = crop_search_region(video.frames[0], video.boxes[0], cfg.tracker.search_area_scale,
                                     cfg.enc.crop_size, &box_in_crop);
    Tensor feats = tracker.model().encoder.extract(crop);
    Tensor score = score_map(feats, state.target_model.filter);
    auto [iy, ix] = argmax_cell(score);
    auto [ccx, ccy] = box_center_in_cells(box_in_crop, cfg.enc.crop_size, cfg.enc.feature_cells());
    CHECK(std::abs(iy - static_cast<int>(std::lround(ccy))) <= 1);
    CHECK(std::abs(ix - static_cast<int>(std::lround(ccx))) <= 1);

    Instrumentation ins = tracker.instrumentation();
    CHECK(ins.bank_reads == 0);
    CHECK(ins.bank_writes == 0);
    CHECK(ins.psi_forwards == 0);
}

TEST_CASE("two inits with the same weights produce identical filters") {
    FullConfig cfg = tracker_config();
    Tracker tracker(init_model(cfg));
    auto data = generate_dataset(cfg.data);
    TrackState a = tracker.init(data[0].frames[0], data[0].boxes[0]);
    TrackState b = tracker.init(data[0].frames[0], data[0].boxes[0]);
    CHECK(bit_equal(a.target_model.filter, b.target_model.filter));
}

TEST_CASE("static video tracks with high overlap even with untrained weights") {
    FullConfig cfg = tracker_config();
    Tracker tracker(init_model(cfg));
    VideoSample video = static_video(cfg.data, 8);
    auto results = tracker.track_sequence(video, video.boxes[0]);
    REQUIRE(results.size() == video.frames.size());
    for (size_t t = 0; t < results.size(); ++t) {
        CHECK(iou(results[t].box, video.boxes[t]) >= 0.9);
    }
}

TEST_CASE("the instance branch stays silent for an entire run") {
    FullConfig cfg = tracker_config();
    Tracker tracker(init_model(cfg));
    VideoSample video = static_video(cfg.data, 12);
    tracker.track_sequence(video, video.boxes[0]);
    Instrumentation ins = tracker.instrumentation();
    CHECK(ins.bank_reads == 0);
    CHECK(ins.bank_writes == 0);
    CHECK(ins.psi_forwards == 0);
}

TEST_CASE("every emitted box lies inside the frame with positive area") {
    FullConfig cfg = tracker_config();
    cfg.data.speed_min = 2.0;
    cfg.data.speed_max = 5.0;
    Tracker tracker(init_model(cfg));
    auto data = generate_dataset(cfg.data);
    for (const auto& video : data) {
        auto results = tracker.track_sequence(video, video.boxes[0]);
        for (const auto& r : results) {
            CHECK(r.box.w > 0.0);
            CHECK(r.box.h > 0.0);
            CHECK(r.box.inside(video.frames[0].w, video.frames[0].h));
        }
    }
}

TEST_CASE("tracking is deterministic") {
    FullConfig cfg = tracker_config();
    Tracker tracker(init_model(cfg));
    auto data = generate_dataset(cfg.data);
    auto r1 = tracker.track_sequence(data[1], data[1].boxes[0]);
    auto r2 = tracker.track_sequence(data[1], data[1].boxes[0]);
    REQUIRE(r1.size() == r2.size());
    for (size_t i = 0; i < r1.size(); ++i) {
        CHECK(r1[i].box == r2[i].box);
        CHECK(r1[i].score == r2[i].score);
    }
}

TEST_CASE("one-frame video echoes the annotation") {
    FullConfig cfg = tracker_config();
    Tracker tracker(init_model(cfg));
    auto data = generate_dataset(cfg.data);
    VideoSample one;
    one.video_id = 0;
    one.frames = {data[0].frames[0]};
    one.boxes = {data[0].boxes[0]};
    one.meta = data[0].meta;
    auto results = tracker.track_sequence(one, one.boxes[0]);
    REQUIRE(results.size() == 1);
    CHECK(results[0].box == one.boxes[0]);
    CHECK(results[0].score == 1.0);
}

TEST_CASE("frame zero output equals the annotation") {
    FullConfig cfg = tracker_config();
    Tracker tracker(init_model(cfg));
    auto data = generate_dataset(cfg.data);
    auto results = tracker.track_sequence(data[2], data[2].boxes[0]);
    CHECK(results[0].box == data[2].boxes[0]);
}

TEST_CASE("results file round trips through the eval parser") {
    FullConfig cfg = tracker_config();
    Tracker tracker(init_model(cfg));
    auto data = generate_dataset(cfg.data);
    auto results = tracker.track_sequence(data[0], data[0].boxes[0]);

    fs::path dir = fs::temp_directory_path() / "iat_tests" / "results";
    fs::create_directories(dir);
    std::string path = (dir / "run.txt").string();
    save_results(path, results);
    auto loaded = load_results(path);
    REQUIRE(loaded.size() == results.size());
    for (size_t i = 0; i < results.size(); ++i) {
        CHECK(loaded[i].box == results[i].box);
        CHECK(loaded[i].score == results[i].score);
    }
}

TEST_CASE("checkpointed model drives the tracker") {
    FullConfig cfg = tracker_config();
    auto data = generate_dataset(cfg.data);
    Trainer trainer(init_model(cfg));
    for (int s = 0; s < 2; ++s) trainer.train_step_on(data);
    fs::path dir = fs::temp_directory_path() / "iat_tests" / "tracker_ckpt";
    fs::create_directories(dir);
    std::string path = (dir / "model.ckpt").string();
    trainer.save_checkpoint(path);

    Tracker tracker = Tracker::from_checkpoint(path, cfg);
    auto results = tracker.track_sequence(data[0], data[0].boxes[0]);
    CHECK(results.size() == data[0].frames.size());
    Instrumentation ins = tracker.instrumentation();
    CHECK(ins.bank_reads + ins.bank_writes + ins.psi_forwards == 0);
}

}  // TEST_SUITE
