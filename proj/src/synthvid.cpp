#include "iat/synthvid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace iat {

namespace {

struct Rgb {
    double r, g, b;
};

enum class ShapeKind { kEllipse, kRect, kTriangle, kDiamond };

// Everything that makes a target recognizable across frames and videos.
struct Appearance {
    ShapeKind shape;
    Rgb primary;
    Rgb secondary;
    double stripe_freq;
    double stripe_angle;
};

Rgb hsv_to_rgb(double h, double s, double v) {
    double c = v * s;
    double hp = h * 6.0;
    double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    double m = v - c;
    return {r + m, g + m, b + m};
}

// Appearance is a pure function of (dataset seed, id) so distractors can
// borrow the look of other videos' targets.
Appearance make_appearance(uint64_t dataset_seed, int64_t id) {
    Rng rng(derive_seed(dataset_seed, static_cast<uint64_t>(id), 0xA11CE));
    Appearance a;
    a.shape = static_cast<ShapeKind>(rng.uniform_int(0, 3));
    double hue = std::fmod(0.61803398875 * static_cast<double>(id) + rng.uniform() * 0.08, 1.0);
    a.primary = hsv_to_rgb(hue, 0.75 + 0.2 * rng.uniform(), 0.8 + 0.2 * rng.uniform());
    a.secondary = hsv_to_rgb(std::fmod(hue + 0.45 + 0.1 * rng.uniform(), 1.0), 0.7, 0.85);
    a.stripe_freq = rng.uniform(0.5, 1.6);
    a.stripe_angle = rng.uniform(0.0, M_PI);
    return a;
}

bool inside_shape(ShapeKind kind, double dx, double dy, double rx, double ry) {
    switch (kind) {
        case ShapeKind::kEllipse: {
            double u = dx / rx, v = dy / ry;
            return u * u + v * v <= 1.0;
        }
        case ShapeKind::kRect:
            return std::fabs(dx) <= rx && std::fabs(dy) <= ry;
        case ShapeKind::kTriangle: {
            // Apex up, base along the bottom edge of the bounding box.
            if (dy < -ry || dy > ry) return false;
            double half = rx * (dy + ry) / (2.0 * ry);
            return std::fabs(dx) <= half;
        }
        case ShapeKind::kDiamond:
            return std::fabs(dx) / rx + std::fabs(dy) / ry <= 1.0;
    }
    return false;
}

Rgb shade(const Appearance& a, double dx, double dy) {
    double u = dx * std::cos(a.stripe_angle) + dy * std::sin(a.stripe_angle);
    double s = std::sin(u * a.stripe_freq);
    return s > 0.0 ? a.primary : a.secondary;
}

// 2x2 supersampled composite of a shape onto the frame.
void draw_shape(Image8& frame, const Appearance& a, double cx, double cy, double rx, double ry) {
    int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)) - 1);
    int x1 = std::min(frame.w - 1, static_cast<int>(std::ceil(cx + rx)) + 1);
    int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)) - 1);
    int y1 = std::min(frame.h - 1, static_cast<int>(std::ceil(cy + ry)) + 1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double cov = 0.0;
            Rgb acc{0, 0, 0};
            for (int sy = 0; sy < 2; ++sy)
                for (int sx = 0; sx < 2; ++sx) {
                    double px = x + 0.25 + 0.5 * sx;
                    double py = y + 0.25 + 0.5 * sy;
                    double dx = px - cx, dy = py - cy;
                    if (inside_shape(a.shape, dx, dy, rx, ry)) {
                        Rgb c = shade(a, dx, dy);
                        acc.r += c.r;
                        acc.g += c.g;
                        acc.b += c.b;
                        cov += 1.0;
                    }
                }
            if (cov == 0.0) continue;
            uint8_t* p = frame.px(y, x);
            double w = cov / 4.0;
            p[0] = static_cast<uint8_t>(std::lround(std::clamp((1 - w) * p[0] + w * 255.0 * acc.r / cov, 0.0, 255.0)));
            p[1] = static_cast<uint8_t>(std::lround(std::clamp((1 - w) * p[1] + w * 255.0 * acc.g / cov, 0.0, 255.0)));
            p[2] = static_cast<uint8_t>(std::lround(std::clamp((1 - w) * p[2] + w * 255.0 * acc.b / cov, 0.0, 255.0)));
        }
}

Image8 make_background(int size, Rng& rng) {
    Image8 bg(size, size);
    Rgb base = hsv_to_rgb(rng.uniform(), 0.25, 0.3 + 0.15 * rng.uniform());
    double gx = rng.uniform(-1.0, 1.0), gy = rng.uniform(-1.0, 1.0);
    double fx = rng.uniform(0.02, 0.06), fy = rng.uniform(0.02, 0.06);
    double ph1 = rng.uniform(0.0, 2 * M_PI), ph2 = rng.uniform(0.0, 2 * M_PI);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double grad = 0.08 * (gx * x + gy * y) / size;
            double tex = 0.04 * std::sin(fx * x + ph1) * std::sin(fy * y + ph2);
            uint8_t* p = bg.px(y, x);
            p[0] = static_cast<uint8_t>(std::lround(std::clamp((base.r + grad + tex) * 255.0, 0.0, 255.0)));
            p[1] = static_cast<uint8_t>(std::lround(std::clamp((base.g + grad + tex) * 255.0, 0.0, 255.0)));
            p[2] = static_cast<uint8_t>(std::lround(std::clamp((base.b + grad + tex) * 255.0, 0.0, 255.0)));
        }
    return bg;
}

struct Mover {
    double x, y, vx, vy;
    double rx, ry;  // base half extents

    void advance(double margin_x, double margin_y, double lo_x, double hi_x, double lo_y, double hi_y) {
        x += vx;
        y += vy;
        double min_x = lo_x + margin_x, max_x = hi_x - margin_x;
        double min_y = lo_y + margin_y, max_y = hi_y - margin_y;
        if (x < min_x) { x = 2 * min_x - x; vx = -vx; }
        if (x > max_x) { x = 2 * max_x - x; vx = -vx; }
        if (y < min_y) { y = 2 * min_y - y; vy = -vy; }
        if (y > max_y) { y = 2 * max_y - y; vy = -vy; }
        x = std::clamp(x, min_x, max_x);
        y = std::clamp(y, min_y, max_y);
    }
};

Mover spawn_mover(Rng& rng, int size, double rx, double ry, double speed, double scale_max) {
    Mover m;
    m.rx = rx;
    m.ry = ry;
    double mx = rx * scale_max + 2.0, my = ry * scale_max + 2.0;
    m.x = rng.uniform(mx, size - mx);
    m.y = rng.uniform(my, size - my);
    double ang = rng.uniform(0.0, 2 * M_PI);
    m.vx = speed * std::cos(ang);
    m.vy = speed * std::sin(ang);
    return m;
}

VideoSample generate_video(const DatasetSpec& spec, int64_t id) {
    Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(id), 0xF00D));
    VideoSample video;
    video.video_id = id;
    video.meta.distractor_count = rng.uniform_int(spec.distractor_min, spec.distractor_max);
    video.meta.occlusion = rng.bernoulli(spec.occlusion_prob);
    video.meta.speed = rng.uniform(spec.speed_min, spec.speed_max);

    Appearance target_look = make_appearance(spec.seed, id);
    Image8 background = make_background(spec.image_size, rng);

    constexpr double kPulse = 0.1;  // sinusoidal size modulation amplitude
    double scale_max = 1.0 + kPulse;

    double base_r = rng.uniform(12.0, 22.0);
    double aspect = rng.uniform(0.7, 1.4);
    double trx = base_r * std::sqrt(aspect);
    double try_ = base_r / std::sqrt(aspect);
    Mover target = spawn_mover(rng, spec.image_size, trx, try_, video.meta.speed, scale_max);
    double pulse_phase = rng.uniform(0.0, 2 * M_PI);
    double pulse_period = rng.uniform(14.0, 26.0);

    struct Distractor {
        Appearance look;
        Mover mover;
    };
    std::vector<Distractor> distractors;
    for (int d = 0; d < video.meta.distractor_count; ++d) {
        int64_t other = id;
        if (spec.num_videos > 1) {
            other = rng.uniform_int(0, spec.num_videos - 2);
            if (other >= id) ++other;
        } else {
            other = id + 1 + rng.uniform_int(0, 7);
        }
        Appearance look = make_appearance(spec.seed, other);
        double r = rng.uniform(10.0, 20.0);
        double asp = rng.uniform(0.7, 1.4);
        double drx = r * std::sqrt(asp), dry = r / std::sqrt(asp);
        double dspeed = rng.uniform(spec.speed_min, spec.speed_max);
        distractors.push_back({look, spawn_mover(rng, spec.image_size, drx, dry, dspeed, 1.0)});
    }

    // Occluder: a bar narrower than the target that sweeps over it in
    // bursts; geometric bound keeps coverage of the target box <= 0.8.
    Appearance occ_look = make_appearance(spec.seed, id + 0x10000);
    occ_look.shape = ShapeKind::kRect;
    int occ_period = rng.uniform_int(8, 14);
    int occ_duration = rng.uniform_int(3, 5);

    for (int t = 0; t < spec.frames_per_video; ++t) {
        double pulse = 1.0 + kPulse * std::sin(2 * M_PI * t / pulse_period + pulse_phase);
        double rx = trx * pulse, ry = try_ * pulse;

        Image8 frame = background;
        for (auto& d : distractors) {
            d.mover.advance(d.mover.rx + 1.0, d.mover.ry + 1.0, 0, spec.image_size, 0, spec.image_size);
            draw_shape(frame, d.look, d.mover.x, d.mover.y, d.mover.rx, d.mover.ry);
        }
        target.advance(trx * scale_max + 2.0, try_ * scale_max + 2.0, 0, spec.image_size, 0,
                       spec.image_size);
        draw_shape(frame, target_look, target.x, target.y, rx, ry);

        if (video.meta.occlusion && (t % occ_period) < occ_duration) {
            double sweep = static_cast<double>(t % occ_period) / occ_duration - 0.5;
            double ox = target.x + sweep * rx;
            double oy = target.y;
            draw_shape(frame, occ_look, ox, oy, 0.35 * rx, 1.2 * ry);
        }

        video.frames.push_back(std::move(frame));
        video.boxes.push_back(Box{target.x, target.y, 2 * rx, 2 * ry});
    }
    return video;
}

}  // namespace

void DatasetSpec::validate() const {
    check_config(num_videos > 0, "dataset spec: num_videos must be positive");
    check_config(frames_per_video >= 2, "dataset spec: frames_per_video must be >= 2");
    check_config(image_size >= 64, "dataset spec: image_size must be >= 64");
    check_config(distractor_min >= 0 && distractor_max >= distractor_min,
                 "dataset spec: bad distractor range");
    check_config(occlusion_prob >= 0.0 && occlusion_prob <= 1.0, "dataset spec: bad occlusion prob");
    check_config(speed_min >= 0.0 && speed_max >= speed_min, "dataset spec: bad speed range");
}

std::vector<VideoSample> generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    std::vector<VideoSample> out(static_cast<size_t>(spec.num_videos));
    for (int i = 0; i < spec.num_videos; ++i) out[static_cast<size_t>(i)] = generate_video(spec, i);
    return out;
}

void validate_video(const VideoSample& video) {
    check_contract(video.video_id >= 0, "video invariant: id must be >= 0");
    check_contract(video.frames.size() == video.boxes.size(),
                   "video invariant: frame/box count mismatch in video " + std::to_string(video.video_id));
    check_contract(video.frames.size() >= 2,
                   "video invariant: need at least 2 frames in video " + std::to_string(video.video_id));
    for (size_t i = 0; i < video.frames.size(); ++i) {
        const Image8& f = video.frames[i];
        const Box& b = video.boxes[i];
        check_contract(f.h > 0 && f.w > 0, "video invariant: empty frame");
        check_contract(b.w > 0.0 && b.h > 0.0 && b.inside(f.w, f.h),
                       "video invariant: box outside frame " + std::to_string(i) + " of video " +
                           std::to_string(video.video_id));
    }
}

Tensor crop_search_region(const Image8& frame, const Box& box, double area_scale, int crop_size,
                          Box* box_in_crop) {
    double side = std::sqrt(area_scale * box.w * box.h);
    side = std::max(side, 1.05 * std::max(box.w, box.h));
    Tensor crop = crop_resize(frame, box.cx, box.cy, side, crop_size);
    if (box_in_crop) *box_in_crop = box_to_crop(box, box.cx, box.cy, side, crop_size);
    return crop;
}

TrainingPair sample_pair(const std::vector<VideoSample>& dataset, const PairSamplerConfig& cfg, Rng& rng) {
    check_contract(!dataset.empty(), "sample_pair: empty dataset");
    const VideoSample& video = dataset[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(dataset.size()) - 1))];
    int frames = static_cast<int>(video.frames.size());
    check_contract(frames >= 2, "sample_pair: video " + std::to_string(video.video_id) +
                                    " has fewer than 2 frames");
    int ti = rng.uniform_int(0, frames - 1);
    int si = rng.uniform_int(0, frames - 2);
    if (si >= ti) ++si;

    auto make_crop = [&](int frame_idx, double area_scale, Tensor& img, Box& box_in_crop) {
        const Box& gt = video.boxes[static_cast<size_t>(frame_idx)];
        double side = std::sqrt(area_scale * gt.w * gt.h);
        side *= 1.0 + cfg.scale_jitter * rng.uniform(-1.0, 1.0);
        side = std::max(side, 1.05 * std::max(gt.w, gt.h));
        double off_x = cfg.translation_jitter * side * rng.uniform(-1.0, 1.0);
        double off_y = cfg.translation_jitter * side * rng.uniform(-1.0, 1.0);
        // Keep the target entirely inside the crop window.
        double max_off_x = std::max(0.0, 0.5 * (side - gt.w) - 1e-9);
        double max_off_y = std::max(0.0, 0.5 * (side - gt.h) - 1e-9);
        off_x = std::clamp(off_x, -max_off_x, max_off_x);
        off_y = std::clamp(off_y, -max_off_y, max_off_y);
        double ccx = gt.cx + off_x, ccy = gt.cy + off_y;
        img = crop_resize(video.frames[static_cast<size_t>(frame_idx)], ccx, ccy, side, cfg.crop_size);
        box_in_crop = box_to_crop(gt, ccx, ccy, side, cfg.crop_size);
    };

    TrainingPair pair;
    pair.video_id = video.video_id;
    make_crop(ti, cfg.template_area_scale, pair.template_img, pair.template_box);
    make_crop(si, cfg.search_area_scale, pair.search_img, pair.search_box);
    return pair;
}

void validate_pair(const TrainingPair& pair, int crop_size) {
    double s = static_cast<double>(crop_size);
    for (const Box* b : {&pair.template_box, &pair.search_box}) {
        check_contract(b->w > 0.0 && b->h > 0.0, "pair invariant: non-positive box");
        check_contract(b->x0() >= -1e-6 && b->y0() >= -1e-6 && b->x1() <= s + 1e-6 && b->y1() <= s + 1e-6,
                       "pair invariant: box not contained in crop");
    }
    check_contract(pair.template_img.ndim() == 3 && pair.template_img.dim(1) == crop_size,
                   "pair invariant: template crop shape");
    check_contract(pair.search_img.ndim() == 3 && pair.search_img.dim(1) == crop_size,
                   "pair invariant: search crop shape");
}

// ---------------- persistence ----------------

namespace {

std::string video_dir_name(int64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04lld", static_cast<long long>(id));
    return buf;
}

std::string frame_file_name(size_t idx) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%05zu.png", idx);
    return buf;
}

}  // namespace

void save_dataset(const std::vector<VideoSample>& dataset, const std::string& root) {
    fs::create_directories(root);
    nlohmann::json manifest;
    manifest["num_videos"] = dataset.size();
    {
        std::ofstream os(fs::path(root) / "dataset.json");
        if (!os) throw IoError("save_dataset: cannot write manifest in " + root);
        os << manifest.dump(2) << "\n";
    }
    for (const auto& video : dataset) {
        fs::path vdir = fs::path(root) / video_dir_name(video.video_id);
        fs::create_directories(vdir / "frames");
        for (size_t i = 0; i < video.frames.size(); ++i)
            write_png((vdir / "frames" / frame_file_name(i)).string(), video.frames[i]);
        {
            std::ofstream os(vdir / "groundtruth.txt");
            if (!os) throw IoError("save_dataset: cannot write groundtruth for video " +
                                   std::to_string(video.video_id));
            char line[256];
            for (size_t i = 0; i < video.boxes.size(); ++i) {
                const Box& b = video.boxes[i];
                std::snprintf(line, sizeof(line), "%zu %.17g %.17g %.17g %.17g\n", i, b.cx, b.cy, b.w, b.h);
                os << line;
            }
        }
        {
            std::ofstream os(vdir / "meta.txt");
            char line[256];
            std::snprintf(line, sizeof(line), "distractors %d\nocclusion %d\nspeed %.17g\n",
                          video.meta.distractor_count, video.meta.occlusion ? 1 : 0, video.meta.speed);
            os << line;
        }
    }
}

std::vector<Box> load_groundtruth(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_groundtruth: cannot open " + path);
    std::vector<Box> boxes;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        size_t idx;
        Box b;
        if (!(ss >> idx >> b.cx >> b.cy >> b.w >> b.h))
            throw ParseError(path + ": malformed groundtruth at line " + std::to_string(lineno));
        if (idx != boxes.size())
            throw ParseError(path + ": unexpected frame index " + std::to_string(idx) + " at line " +
                             std::to_string(lineno));
        boxes.push_back(b);
    }
    return boxes;
}

std::vector<VideoSample> load_dataset(const std::string& root) {
    fs::path manifest_path = fs::path(root) / "dataset.json";
    std::ifstream ms(manifest_path);
    if (!ms) throw IoError("load_dataset: missing manifest " + manifest_path.string());
    nlohmann::json manifest;
    try {
        ms >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("load_dataset: bad manifest: " + std::string(e.what()));
    }
    size_t expected = manifest.at("num_videos").get<size_t>();

    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.size() != expected)
        throw ParseError("load_dataset: manifest expects " + std::to_string(expected) + " videos, found " +
                         std::to_string(dirs.size()));

    std::vector<VideoSample> out;
    for (const auto& vdir : dirs) {
        VideoSample video;
        try {
            video.video_id = std::stoll(vdir.filename().string());
        } catch (const std::exception&) {
            throw ParseError("load_dataset: non-numeric video directory " + vdir.filename().string());
        }
        video.boxes = load_groundtruth((vdir / "groundtruth.txt").string());

        std::ifstream meta(vdir / "meta.txt");
        if (!meta) throw IoError("load_dataset: missing meta.txt for video " + vdir.filename().string());
        std::string key;
        int occ = 0;
        if (!(meta >> key >> video.meta.distractor_count) || key != "distractors")
            throw ParseError("load_dataset: bad meta for video " + vdir.filename().string());
        if (!(meta >> key >> occ) || key != "occlusion")
            throw ParseError("load_dataset: bad meta for video " + vdir.filename().string());
        if (!(meta >> key >> video.meta.speed) || key != "speed")
            throw ParseError("load_dataset: bad meta for video " + vdir.filename().string());
        video.meta.occlusion = occ != 0;

        for (size_t i = 0; i < video.boxes.size(); ++i) {
            fs::path fpath = vdir / "frames" / frame_file_name(i);
            if (!fs::exists(fpath))
                throw ParseError("load_dataset: video " + vdir.filename().string() + " missing frame " +
                                 std::to_string(i));
            video.frames.push_back(read_png(fpath.string()));
        }
        size_t frame_count = 0;
        for (const auto& entry : fs::directory_iterator(vdir / "frames"))
            if (entry.is_regular_file()) ++frame_count;
        if (frame_count != video.boxes.size())
            throw ParseError("load_dataset: video " + vdir.filename().string() + " has " +
                             std::to_string(frame_count) + " frames but " +
                             std::to_string(video.boxes.size()) + " annotations");
        out.push_back(std::move(video));
    }
    return out;
}

}  // namespace iat
