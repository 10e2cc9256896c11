#include "iat/tracker.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace iat {

namespace {

double search_side(const Box& box, double area_scale) {
    double side = std::sqrt(area_scale * box.w * box.h);
    return std::max(side, 1.05 * std::max(box.w, box.h));
}

}  // namespace

Tracker::Tracker(Model model) : model_(std::move(model)) {}

Tracker Tracker::from_checkpoint(const std::string& path, const FullConfig& cfg) {
    Trainer t = Trainer::load_checkpoint(path, cfg);
    return Tracker(std::move(t.model()));
}

TrackState Tracker::init(const Image8& frame, const Box& annotation) const {
    check_contract(annotation.w > 0.0 && annotation.h > 0.0, "tracker init: bad annotation");
    const FullConfig& cfg = model_.cfg;
    Box box_in_crop;
    Tensor crop = crop_search_region(frame, annotation, cfg.tracker.search_area_scale,
                                     cfg.enc.crop_size, &box_in_crop);
    TrackState state;
    state.target_model = init_target_model(model_.encoder, model_.filter_gen, crop, box_in_crop, cfg.cls);
    Tensor score = score_map(state.target_model.samples.front().features, state.target_model.filter);
    auto [iy, ix] = argmax_cell(score);
    state.init_peak = score.at(iy, ix);
    state.box = annotation;
    state.frame_index = 0;
    return state;
}

TrackedBox Tracker::step(TrackState& state, const Image8& frame) const {
    const FullConfig& cfg = model_.cfg;
    int crop_size = cfg.enc.crop_size;
    int cells = cfg.enc.feature_cells();
    Box prev = state.box;

    double side = search_side(prev, cfg.tracker.search_area_scale);
    Tensor crop = crop_resize(frame, prev.cx, prev.cy, side, crop_size);
    Tensor feats = model_.encoder.extract(crop);
    Tensor score = score_map(feats, state.target_model.filter);
    auto [iy, ix] = argmax_cell(score);
    double peak = score.at(iy, ix);

    ++state.frame_index;
    if (peak < cfg.tracker.low_conf_ratio * state.init_peak) {
        state.low_confidence_last = true;
        return {prev, peak};
    }
    state.low_confidence_last = false;

    double stride_px = static_cast<double>(crop_size) / cells;
    auto [ccx, ccy] = locate_center_cells(score, cfg.cls.sigma);
    double cx_crop = (ccx + 0.5) * stride_px;
    double cy_crop = (ccy + 0.5) * stride_px;

    BoxParam y_init;
    y_init.v = {cx_crop / crop_size, cy_crop / crop_size, std::log(prev.w / side),
                std::log(prev.h / side)};
    BoxParam refined = refine_box(model_.reg, feats, y_init, cfg.reg.refine_steps,
                                  cfg.reg.refine_step_size);
    Box box_crop = from_boxparam(refined, crop_size);
    Box box_img = box_from_crop(box_crop, prev.cx, prev.cy, side, crop_size)
                      .clipped(static_cast<double>(frame.w), static_cast<double>(frame.h), 2.0);

    if (cfg.tracker.update_enabled) {
        auto [ucx, ucy] = box_center_in_cells(box_crop, crop_size, cells);
        TrainSample sample{feats, make_label_map(cells, cells, ucx, ucy, cfg.cls.sigma)};
        maybe_update_target_model(state.target_model, sample, score, cfg.cls);
    }

    state.box = box_img;
    return {box_img, peak};
}

std::vector<TrackedBox> Tracker::track_sequence(const VideoSample& video, const Box& annotation0) const {
    check_contract(!video.frames.empty(), "track_sequence: empty video");
    std::vector<TrackedBox> out;
    out.reserve(video.frames.size());
    out.push_back({annotation0, 1.0});
    if (video.frames.size() == 1) return out;
    TrackState state = init(video.frames[0], annotation0);
    for (size_t t = 1; t < video.frames.size(); ++t) out.push_back(step(state, video.frames[t]));
    return out;
}

Instrumentation Tracker::instrumentation() const {
    Instrumentation ins;
    ins.bank_reads = model_.bank.read_count();
    ins.bank_writes = model_.bank.write_count();
    ins.psi_forwards = model_.psi_main.forward_count();
    if (model_.psi_aux) ins.psi_forwards += model_.psi_aux->forward_count();
    return ins;
}

void save_results(const std::string& path, const std::vector<TrackedBox>& results) {
    std::ofstream os(path);
    if (!os) throw IoError("save_results: cannot write " + path);
    char line[256];
    for (const auto& r : results) {
        std::snprintf(line, sizeof(line), "%.17g %.17g %.17g %.17g %.17g\n", r.box.x0(), r.box.y0(),
                      r.box.w, r.box.h, r.score);
        os << line;
    }
}

std::vector<TrackedBox> load_results(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_results: cannot open " + path);
    std::vector<TrackedBox> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        double x, y, w, h, s;
        if (!(ss >> x >> y >> w >> h >> s))
            throw ParseError(path + ": malformed results line " + std::to_string(lineno));
        out.push_back({Box::from_xywh(x, y, w, h), s});
    }
    return out;
}

}  // namespace iat
