#include "iat/clsbranch.hpp"

#include <cmath>

#include "iat/image.hpp"

namespace iat {

namespace {

Tensor kaiming(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    double s = std::sqrt(2.0 / fan_in);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, s);
    return t;
}

Tensor boxparam_from_crop_box(const Box& box, int crop_size) {
    check_contract(box.w > 0.0 && box.h > 0.0, "box must have positive extent");
    double s = static_cast<double>(crop_size);
    return Tensor::from({4}, {box.cx / s, box.cy / s, std::log(box.w / s), std::log(box.h / s)});
}

}  // namespace

TargetModelGenerator::TargetModelGenerator(int channels, int filter_size, Rng& rng)
    : channels_(channels), filter_size_(filter_size) {
    check_config(filter_size % 2 == 1, "filter size must be odd");
    params_.create("proj1.w", kaiming({channels, channels, 1, 1}, channels, rng));
    params_.create("proj2.w", kaiming({channels, channels, 1, 1}, channels, rng));
}

Var TargetModelGenerator::predict_filter(Graph& g, const BoundParams& bp, Var template_features,
                                         const Box& template_box, int crop_size) const {
    const Tensor& feats = g.val(template_features);
    check_contract(feats.ndim() == 3 && feats.dim(0) == channels_,
                   "predict_filter: feature shape mismatch");
    double cells_per_px = static_cast<double>(feats.dim(2)) / crop_size;
    check_contract(template_box.w * cells_per_px > 1.0 && template_box.h * cells_per_px > 1.0,
                   "predict_filter: degenerate box (not larger than one feature cell)");
    Var box = g.constant(boxparam_from_crop_box(template_box, crop_size));
    Var pooled = roi_align(g, template_features, box, filter_size_);
    Var h = relu(g, conv2d(g, pooled, bp["proj1.w"], std::nullopt, 1, 0));
    return conv2d(g, h, bp["proj2.w"], std::nullopt, 1, 0);
}

Tensor TargetModelGenerator::predict(const Tensor& template_features, const Box& template_box,
                                     int crop_size) const {
    Graph g;
    BoundParams bp(g, params_, false);
    Var out = predict_filter(g, bp, g.constant(template_features), template_box, crop_size);
    return g.val(out).clone();
}

Var score_map(Graph& g, Var search_features, Var filter) {
    const Tensor& f = g.val(filter);
    const Tensor& x = g.val(search_features);
    check_contract(f.ndim() == 3 && x.ndim() == 3 && f.dim(0) == x.dim(0),
                   "score_map: channel mismatch");
    int k = f.dim(1);
    Var w = reshape(g, filter, {1, f.dim(0), k, f.dim(2)});
    Var out = conv2d(g, search_features, w, std::nullopt, 1, k / 2);
    const Tensor& o = g.val(out);
    return reshape(g, out, {o.dim(1), o.dim(2)});
}

Tensor score_map(const Tensor& search_features, const Tensor& filter) {
    Graph g;
    Var out = score_map(g, g.constant(search_features), g.constant(filter));
    return g.val(out).clone();
}

Tensor make_label_map(int h, int w, double center_x_cells, double center_y_cells, double sigma) {
    check_contract(sigma > 0.0, "label sigma must be positive");
    Tensor c({h, w});
    double inv = 1.0 / (2.0 * sigma * sigma);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double dy = i - center_y_cells;
            double dx = j - center_x_cells;
            c.at(i, j) = std::exp(-(dx * dx + dy * dy) * inv);
        }
    return c;
}

std::pair<double, double> box_center_in_cells(const Box& box_in_crop, int crop_size, int cells) {
    double s = static_cast<double>(crop_size) / cells;
    return {box_in_crop.cx / s - 0.5, box_in_crop.cy / s - 0.5};
}

Var cls_loss(Graph& g, const std::vector<std::pair<Var, Tensor>>& scored_labels, Var filter,
             double reg_factor) {
    check_contract(!scored_labels.empty(), "cls_loss: empty batch");
    Var data = g.scalar_const(0.0);
    for (const auto& [score, label] : scored_labels) {
        check_contract(same_shape(g.val(score), label), "cls_loss: score/label shape mismatch");
        data = add(g, data, sum_sq(g, sub(g, score, g.constant(label))));
    }
    data = scale(g, data, 1.0 / static_cast<double>(scored_labels.size()));
    Var reg = sum_sq(g, scale(g, filter, reg_factor));
    return add(g, data, reg);
}

double cls_loss_value(const std::vector<std::pair<Tensor, Tensor>>& scored_labels, const Tensor& filter,
                      double reg_factor) {
    Graph g;
    std::vector<std::pair<Var, Tensor>> pairs;
    pairs.reserve(scored_labels.size());
    for (const auto& [s, c] : scored_labels) pairs.emplace_back(g.constant(s), c);
    Var loss = cls_loss(g, pairs, g.constant(filter), reg_factor);
    return g.val(loss)[0];
}

double filter_set_loss(const Tensor& filter, const std::vector<TrainSample>& samples,
                       double reg_factor) {
    std::vector<std::pair<Tensor, Tensor>> pairs;
    pairs.reserve(samples.size());
    for (const auto& s : samples) pairs.emplace_back(score_map(s.features, filter), s.label);
    return cls_loss_value(pairs, filter, reg_factor);
}

void fit_filter(Tensor& filter, const std::vector<TrainSample>& samples, double reg_factor, int steps,
                double step_size) {
    check_contract(!samples.empty(), "fit_filter: empty sample set");
    // The objective is an exact quadratic in g, so steepest descent with
    // the closed-form line search is parameter-free and monotone:
    //   alpha* = (d.d) / (d H d),  d H d = (2/N) sum ||corr(F_i, d)||^2
    //                                      + 2 reg^2 ||d||^2.
    // step_size only caps pathological steps when the curvature vanishes.
    double n = static_cast<double>(samples.size());
    for (int it = 0; it < steps; ++it) {
        Graph g;
        Var f = g.leaf(filter, /*requires_grad=*/true);
        std::vector<std::pair<Var, Tensor>> pairs;
        pairs.reserve(samples.size());
        for (const auto& s : samples) pairs.emplace_back(score_map(g, g.constant(s.features), f), s.label);
        Var loss = cls_loss(g, pairs, f, reg_factor);
        g.backward(loss);
        const Tensor& d = g.grad(f);

        double dd = dot(d, d);
        if (dd <= 0.0 || !std::isfinite(dd)) break;
        double dhd = 2.0 * reg_factor * reg_factor * dd;
        for (const auto& s : samples) {
            Tensor ad = score_map(s.features, d);
            dhd += 2.0 / n * dot(ad, ad);
        }
        double alpha = dhd > 0.0 ? dd / dhd : step_size;
        if (!std::isfinite(alpha)) alpha = step_size;

        Tensor next = filter.clone();
        add_scaled(next, d, -alpha);
        filter = std::move(next);
    }
}

OnlineTargetModel init_target_model(const Encoder& encoder, const TargetModelGenerator& gen,
                                    const Tensor& crop_img, const Box& box_in_crop,
                                    const ClsConfig& cfg) {
    int crop_size = encoder.config().crop_size;
    int cells = encoder.config().feature_cells();
    check_contract(crop_img.ndim() == 3 && crop_img.dim(1) == crop_size,
                   "init_target_model: crop shape mismatch");

    struct AugImage {
        Tensor img;
        Box box;
    };
    std::vector<AugImage> augs;
    augs.push_back({crop_img, box_in_crop});
    // Fixed augmentation menu; augment_count selects a prefix of it.
    std::vector<AugImage> menu;
    Box flipped = box_in_crop;
    flipped.cx = crop_size - box_in_crop.cx;
    menu.push_back({hflip(crop_img), flipped});
    for (auto [dx, dy] : {std::pair{8, 0}, std::pair{-8, 0}, std::pair{0, 8}, std::pair{0, -8}}) {
        Box b = box_in_crop;
        b.cx += dx;
        b.cy += dy;
        menu.push_back({shift(crop_img, dx, dy), b});
    }
    menu.push_back({box_blur3(crop_img), box_in_crop});
    for (int i = 0; i < cfg.augment_count && i < static_cast<int>(menu.size()); ++i)
        augs.push_back(menu[static_cast<size_t>(i)]);

    OnlineTargetModel model;
    for (const auto& aug : augs) {
        TrainSample s;
        s.features = encoder.extract(aug.img);
        auto [cx, cy] = box_center_in_cells(aug.box, crop_size, cells);
        s.label = make_label_map(cells, cells, cx, cy, cfg.sigma);
        model.samples.push_back(std::move(s));
    }

    model.filter = gen.predict(model.samples.front().features, box_in_crop, crop_size);
    std::vector<TrainSample> set(model.samples.begin(), model.samples.end());

    // G's output scale is arbitrary for a freshly initialized generator;
    // the optimal scalar along the ray {t*g} has a closed form and gives
    // the descent a sane starting point.
    double num = 0.0, den = 0.0;
    double n = static_cast<double>(set.size());
    for (const auto& s : set) {
        Tensor ag = score_map(s.features, model.filter);
        num += dot(ag, s.label) / n;
        den += dot(ag, ag) / n;
    }
    den += cfg.reg_factor * cfg.reg_factor * dot(model.filter, model.filter);
    if (den > 0.0 && std::isfinite(num / den)) {
        double t = num / den;
        for (int64_t i = 0; i < model.filter.numel(); ++i) model.filter[i] *= t;
    }

    fit_filter(model.filter, set, cfg.reg_factor, cfg.inner_steps, cfg.inner_step_size);
    return model;
}

double distractor_peak_ratio(const Tensor& score, int exclusion_radius) {
    check_contract(score.ndim() == 2, "distractor_peak_ratio: expects [h,w]");
    int h = score.dim(0), w = score.dim(1);
    auto [py, px] = argmax_cell(score);
    double primary = score.at(py, px);
    if (primary <= 0.0) return 0.0;
    double secondary = 0.0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            if (std::max(std::abs(i - py), std::abs(j - px)) <= exclusion_radius) continue;
            secondary = std::max(secondary, score.at(i, j));
        }
    return std::max(0.0, secondary) / primary;
}

bool maybe_update_target_model(OnlineTargetModel& model, const TrainSample& sample,
                               const Tensor& latest_score, const ClsConfig& cfg) {
    check_contract(model.filter.defined() && !model.samples.empty(),
                   "maybe_update_target_model: model not initialized");
    double ratio = distractor_peak_ratio(latest_score, cfg.peak_exclusion_radius);
    if (ratio <= cfg.peak_ratio) return false;

    model.samples.push_back({sample.features.clone(), sample.label.clone()});
    while (static_cast<int>(model.samples.size()) > cfg.max_set_size) model.samples.pop_front();

    // Per-sample fits from the current filter, then averaged.
    Tensor avg = Tensor::zeros(model.filter.shape());
    for (const auto& s : model.samples) {
        Tensor f = model.filter.clone();
        fit_filter(f, {s}, cfg.reg_factor, cfg.inner_steps, cfg.inner_step_size);
        add_scaled(avg, f, 1.0 / static_cast<double>(model.samples.size()));
    }
    model.filter = std::move(avg);
    return true;
}

std::pair<int, int> argmax_cell(const Tensor& map) {
    check_contract(map.ndim() == 2 && map.numel() > 0, "argmax_cell: expects non-empty [h,w]");
    int h = map.dim(0), w = map.dim(1);
    int by = 0, bx = 0;
    double best = map.at(0, 0);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            if (map.at(i, j) > best) {
                best = map.at(i, j);
                by = i;
                bx = j;
            }
    return {by, bx};
}

namespace {

double parabolic_offset(const Tensor& m, int iy, int ix, bool horizontal) {
    int h = m.dim(0), w = m.dim(1);
    double sm1, s0, sp1;
    if (horizontal) {
        if (ix <= 0 || ix >= w - 1) return 0.0;
        sm1 = m.at(iy, ix - 1);
        s0 = m.at(iy, ix);
        sp1 = m.at(iy, ix + 1);
    } else {
        if (iy <= 0 || iy >= h - 1) return 0.0;
        sm1 = m.at(iy - 1, ix);
        s0 = m.at(iy, ix);
        sp1 = m.at(iy + 1, ix);
    }
    double denom = sm1 - 2.0 * s0 + sp1;
    if (std::fabs(denom) < 1e-12) return 0.0;
    return std::clamp(0.5 * (sm1 - sp1) / denom, -0.5, 0.5);
}

}  // namespace

std::pair<double, double> locate_center_cells(const Tensor& score, double sigma) {
    check_contract(score.ndim() == 2 && score.numel() > 0, "locate_center_cells: expects [h,w]");
    int h = score.dim(0), w = score.dim(1);
    int r = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
    Tensor smooth({h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double acc = 0.0, wsum = 0.0;
            for (int di = -r; di <= r; ++di)
                for (int dj = -r; dj <= r; ++dj) {
                    int y = i + di, x = j + dj;
                    if (y < 0 || y >= h || x < 0 || x >= w) continue;
                    double g = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
                    acc += g * score.at(y, x);
                    wsum += g;
                }
            smooth.at(i, j) = acc / wsum;
        }
    auto [iy, ix] = argmax_cell(smooth);
    return {ix + parabolic_offset(smooth, iy, ix, true), iy + parabolic_offset(smooth, iy, ix, false)};
}

}  // namespace iat
