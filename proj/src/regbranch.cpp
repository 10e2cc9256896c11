#include "iat/regbranch.hpp"

#include <cmath>
#include <limits>

namespace iat {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Tensor kaiming(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    double s = std::sqrt(2.0 / fan_in);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, s);
    return t;
}

double log_gaussian(const BoxParam& y, const BoxParam& mean, const std::array<double, 4>& sigma) {
    double lp = 0.0;
    for (int i = 0; i < 4; ++i) {
        double z = (y.v[static_cast<size_t>(i)] - mean.v[static_cast<size_t>(i)]) / sigma[static_cast<size_t>(i)];
        lp += -0.5 * z * z - std::log(sigma[static_cast<size_t>(i)]) - 0.5 * kLog2Pi;
    }
    return lp;
}

bool in_uniform_support(const BoxParam& y, const RegConfig& cfg) {
    return y.v[0] >= 0.0 && y.v[0] <= 1.0 && y.v[1] >= 0.0 && y.v[1] <= 1.0 &&
           y.v[2] >= cfg.uniform_log_lo && y.v[2] <= cfg.uniform_log_hi && y.v[3] >= cfg.uniform_log_lo &&
           y.v[3] <= cfg.uniform_log_hi;
}

double log_uniform_density(const RegConfig& cfg) {
    double span = cfg.uniform_log_hi - cfg.uniform_log_lo;
    return -2.0 * std::log(span);  // centers contribute log(1*1) = 0
}

double logaddexp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

BoxParam clip_to_crop(BoxParam y, const RegConfig& cfg) {
    y.v[0] = std::clamp(y.v[0], 0.0, 1.0);
    y.v[1] = std::clamp(y.v[1], 0.0, 1.0);
    y.v[2] = std::clamp(y.v[2], cfg.uniform_log_lo, cfg.uniform_log_hi);
    y.v[3] = std::clamp(y.v[3], cfg.uniform_log_lo, cfg.uniform_log_hi);
    return y;
}

}  // namespace

BoxParam to_boxparam(const Box& box_in_crop, int crop_size) {
    check_contract(box_in_crop.w > 0.0 && box_in_crop.h > 0.0, "to_boxparam: non-positive box");
    double s = static_cast<double>(crop_size);
    BoxParam p;
    p.v = {box_in_crop.cx / s, box_in_crop.cy / s, std::log(box_in_crop.w / s),
           std::log(box_in_crop.h / s)};
    return p;
}

Box from_boxparam(const BoxParam& p, int crop_size) {
    double s = static_cast<double>(crop_size);
    return Box{p.v[0] * s, p.v[1] * s, std::exp(p.v[2]) * s, std::exp(p.v[3]) * s};
}

CandidateSet sample_candidates(const BoxParam& label, const RegConfig& cfg, int num, Rng& rng) {
    check_contract(num >= 2, "sample_candidates: need at least 2 candidates");
    double log_u = log_uniform_density(cfg);
    CandidateSet out;
    out.boxes.reserve(static_cast<size_t>(num));
    int gaussian_count = num / 2;
    for (int j = 0; j < num; ++j) {
        BoxParam y;
        if (j < gaussian_count) {
            for (int i = 0; i < 4; ++i)
                y.v[static_cast<size_t>(i)] =
                    label.v[static_cast<size_t>(i)] + cfg.sigma_y[static_cast<size_t>(i)] * rng.normal();
        } else {
            y.v[0] = rng.uniform();
            y.v[1] = rng.uniform();
            y.v[2] = rng.uniform(cfg.uniform_log_lo, cfg.uniform_log_hi);
            y.v[3] = rng.uniform(cfg.uniform_log_lo, cfg.uniform_log_hi);
        }
        double lg = log_gaussian(y, label, cfg.sigma_y);
        double lu = in_uniform_support(y, cfg) ? log_u : -std::numeric_limits<double>::infinity();
        out.boxes.push_back(y);
        out.log_proposal.push_back(logaddexp(lg, lu) + std::log(0.5));
        out.log_label.push_back(lg);
    }
    return out;
}

RegPredictor::RegPredictor(int channels, const RegConfig& cfg, Rng& rng) : channels_(channels), cfg_(cfg) {
    int din = channels * cfg.roi_size * cfg.roi_size;
    params_.create("fc1.w", kaiming({cfg.hidden_dim, din}, din, rng));
    params_.create("fc1.b", Tensor::zeros({cfg.hidden_dim}));
    params_.create("fc2.w", kaiming({1, cfg.hidden_dim}, cfg.hidden_dim, rng));
    params_.create("fc2.b", Tensor::zeros({1}));
}

Var RegPredictor::score(Graph& g, const BoundParams& bp, Var search_features, Var box_param) const {
    const Tensor& f = g.val(search_features);
    check_contract(f.ndim() == 3 && f.dim(0) == channels_, "reg score: feature shape mismatch");
    Var pooled = roi_align(g, search_features, box_param, cfg_.roi_size);
    Var flat = reshape(g, pooled, {channels_ * cfg_.roi_size * cfg_.roi_size});
    Var h = relu(g, linear(g, flat, bp["fc1.w"], bp["fc1.b"]));
    return linear(g, h, bp["fc2.w"], bp["fc2.b"]);  // [1]
}

double RegPredictor::score_value(const Tensor& search_features, const BoxParam& y) const {
    Graph g;
    BoundParams bp(g, params_, false);
    Var yv = g.constant(Tensor::from({4}, {y.v[0], y.v[1], y.v[2], y.v[3]}));
    Var s = score(g, bp, g.constant(search_features), yv);
    return g.val(s)[0];
}

std::pair<double, std::array<double, 4>> RegPredictor::score_with_box_grad(
    const Tensor& search_features, const BoxParam& y) const {
    Graph g;
    BoundParams bp(g, params_, false);
    Var yv = g.leaf(Tensor::from({4}, {y.v[0], y.v[1], y.v[2], y.v[3]}), /*requires_grad=*/true);
    Var s = score(g, bp, g.constant(search_features), yv);
    g.backward(s);
    std::array<double, 4> grad{0, 0, 0, 0};
    if (g.has_grad(yv)) {
        const Tensor& dv = g.grad(yv);
        for (int i = 0; i < 4; ++i) grad[static_cast<size_t>(i)] = dv[i];
    }
    return {g.val(s)[0], grad};
}

std::vector<double> predictive_logits(const RegPredictor& reg, const Tensor& search_features,
                                      const CandidateSet& cands) {
    std::vector<double> logits;
    logits.reserve(cands.boxes.size());
    for (size_t j = 0; j < cands.boxes.size(); ++j) {
        double s = reg.score_value(search_features, cands.boxes[j]);
        if (!std::isfinite(s))
            throw NumericError("predictive_logits: non-finite logit at candidate " + std::to_string(j));
        logits.push_back(s);
    }
    return logits;
}

std::vector<double> predictive_probs(const std::vector<double>& logits,
                                     const std::vector<double>& log_proposal) {
    check_contract(logits.size() == log_proposal.size() && !logits.empty(),
                   "predictive_probs: size mismatch");
    std::vector<double> z(logits.size());
    double m = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < logits.size(); ++j) {
        z[j] = logits[j] - log_proposal[j];
        m = std::max(m, z[j]);
    }
    double s = 0.0;
    for (double& v : z) {
        v = std::exp(v - m);
        s += v;
    }
    for (double& v : z) v /= s;
    return z;
}

std::vector<double> label_weights(const CandidateSet& cands) {
    std::vector<double> w(cands.boxes.size());
    double m = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < w.size(); ++j) {
        w[j] = cands.log_label[j] - cands.log_proposal[j];
        m = std::max(m, w[j]);
    }
    double s = 0.0;
    for (double& v : w) {
        v = std::exp(v - m);
        s += v;
    }
    for (double& v : w) v /= s;
    return w;
}

Var reg_loss(Graph& g, const RegPredictor& reg, const BoundParams& bp, Var search_features,
             const BoxParam& label, const RegConfig& cfg, Rng& rng) {
    CandidateSet cands = sample_candidates(label, cfg, cfg.num_candidates, rng);
    std::vector<Var> logit_vars;
    logit_vars.reserve(cands.boxes.size());
    for (const auto& y : cands.boxes) {
        Var yv = g.constant(Tensor::from({4}, {y.v[0], y.v[1], y.v[2], y.v[3]}));
        logit_vars.push_back(reg.score(g, bp, search_features, yv));
    }
    Var logits = concat_scalars(g, logit_vars);
    if (!g.val(logits).all_finite()) throw NumericError("reg_loss: non-finite candidate logits");

    int m = static_cast<int>(cands.boxes.size());
    Tensor neg_log_q({m});
    for (int j = 0; j < m; ++j) neg_log_q[j] = -cands.log_proposal[static_cast<size_t>(j)];
    Var weighted = add_const(g, logits, neg_log_q);

    std::vector<double> target = label_weights(cands);
    return cross_entropy_with_probs(g, weighted, Tensor::from({m}, std::move(target)));
}

BoxParam refine_box(const BoxScorer& scorer, const BoxParam& y_init, int steps, double step_size,
                    const RegConfig& cfg) {
    BoxParam best = clip_to_crop(y_init, cfg);
    auto [best_score, grad] = scorer(best);
    BoxParam cur = best;
    double cur_score = best_score;
    for (int it = 0; it < steps; ++it) {
        BoxParam next;
        for (int i = 0; i < 4; ++i)
            next.v[static_cast<size_t>(i)] = cur.v[static_cast<size_t>(i)] + step_size * grad[static_cast<size_t>(i)];
        next = clip_to_crop(next, cfg);
        auto [s, gnext] = scorer(next);
        cur = next;
        cur_score = s;
        grad = gnext;
        if (cur_score > best_score) {
            best = cur;
            best_score = cur_score;
        }
    }
    return best;
}

BoxParam refine_box(const RegPredictor& reg, const Tensor& search_features, const BoxParam& y_init,
                    int steps, double step_size) {
    BoxScorer scorer = [&](const BoxParam& y) { return reg.score_with_box_grad(search_features, y); };
    return refine_box(scorer, y_init, steps, step_size, reg.config());
}

}  // namespace iat
