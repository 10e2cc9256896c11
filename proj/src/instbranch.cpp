#include "iat/instbranch.hpp"

#include <cmath>

namespace iat {

std::string to_string(InstVariant v) {
    switch (v) {
        case InstVariant::kVideo: return "video";
        case InstVariant::kObject: return "object";
        case InstVariant::kFusedShared: return "fused_shared";
        case InstVariant::kFusedSeparated: return "fused_separated";
    }
    return "object";
}

InstVariant variant_from_string(const std::string& s) {
    if (s == "video") return InstVariant::kVideo;
    if (s == "object") return InstVariant::kObject;
    if (s == "fused_shared") return InstVariant::kFusedShared;
    if (s == "fused_separated") return InstVariant::kFusedSeparated;
    throw ConfigError("unknown instance variant: " + s);
}

namespace {

Tensor kaiming(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    double s = std::sqrt(2.0 / fan_in);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, s);
    return t;
}

}  // namespace

InstanceBoostingModule::InstanceBoostingModule(Kind kind, int in_channels, int roi_size, int embed_dim,
                                               GlobalPoolKind video_pool, Rng& rng)
    : kind_(kind),
      in_channels_(in_channels),
      roi_size_(roi_size),
      embed_dim_(embed_dim),
      video_pool_(video_pool) {
    check_config(in_channels % 2 == 0, "instance module: channel count must be even");
    check_config(roi_size >= 1 && embed_dim >= 1, "instance module: bad sizes");
    int half = in_channels / 2;
    params_.create("conv.w", kaiming({half, in_channels, 3, 3}, in_channels * 9, rng));
    params_.create("conv.b", Tensor::zeros({half}));
    int pooled = kind == Kind::kVideo ? half : half * roi_size * roi_size;
    params_.create("fc1.w", kaiming({embed_dim, pooled}, pooled, rng));
    params_.create("fc1.b", Tensor::zeros({embed_dim}));
    params_.create("fc2.w", kaiming({embed_dim, embed_dim}, embed_dim, rng));
    params_.create("fc2.b", Tensor::zeros({embed_dim}));
}

Var InstanceBoostingModule::forward(Graph& g, const BoundParams& bp, Var feature_map,
                                    const std::optional<Box>& box) const {
    const Tensor& f = g.val(feature_map);
    check_contract(f.ndim() == 3 && f.dim(0) == in_channels_, "ibm forward: feature shape mismatch");
    ++forward_count_;
    Var h = relu(g, conv2d(g, feature_map, bp["conv.w"], bp["conv.b"], 1, 1));
    Var pooled;
    if (kind_ == Kind::kVideo) {
        pooled = video_pool_ == GlobalPoolKind::kAvg ? global_avg_pool(g, h) : global_max_pool(g, h);
    } else {
        check_contract(box.has_value(), "ibm forward: object level requires a box");
        pooled = roi_max_pool(g, h, *box, roi_size_);
        pooled = reshape(g, pooled, {in_channels_ / 2 * roi_size_ * roi_size_});
    }
    Var e = relu(g, linear(g, pooled, bp["fc1.w"], bp["fc1.b"]));
    return linear(g, e, bp["fc2.w"], bp["fc2.b"]);
}

Var fused_forward(Graph& g, const InstanceBoostingModule& psi_video_path, const BoundParams& bp_video,
                  const InstanceBoostingModule& psi_object_path, const BoundParams& bp_object,
                  Var feature_map, const Box& box) {
    const Tensor& f = g.val(feature_map);
    Box whole{0.5 * f.dim(2), 0.5 * f.dim(1), static_cast<double>(f.dim(2)),
              static_cast<double>(f.dim(1))};
    Var video_emb = psi_video_path.forward(g, bp_video, feature_map, whole);
    Var object_emb = psi_object_path.forward(g, bp_object, feature_map, box);
    return add(g, video_emb, object_emb);
}

MemoryBank::MemoryBank(int capacity, double tau, int embed_dim)
    : capacity_(capacity), tau_(tau), embed_dim_(embed_dim) {
    if (tau <= 0.0) throw ConfigError("memory bank: temperature must be positive");
    check_config(capacity >= 0 && embed_dim >= 1, "memory bank: bad capacity or dim");
}

void MemoryBank::randomize(Rng& rng) {
    entries_.clear();
    for (int i = 0; i < capacity_; ++i) {
        Tensor k({embed_dim_});
        for (int j = 0; j < embed_dim_; ++j) k[j] = rng.normal();
        entries_.push_back({l2_normalized(k), -1});
    }
}

void MemoryBank::enqueue(const Tensor& key, int64_t video_id) {
    check_contract(key.numel() == embed_dim_, "enqueue: key dimension mismatch");
    check_contract(key.all_finite(), "enqueue: key must be finite");
    ++writes_;
    if (capacity_ == 0) return;
    entries_.push_back({key.clone(), video_id});
    while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
}

Tensor MemoryBank::negatives(int64_t video_id) const {
    ++reads_;
    std::vector<const Tensor*> keep;
    keep.reserve(entries_.size());
    for (const auto& e : entries_)
        if (e.tag != video_id) keep.push_back(&e.key);
    Tensor out({static_cast<int>(keep.size()), embed_dim_});
    for (size_t i = 0; i < keep.size(); ++i)
        for (int j = 0; j < embed_dim_; ++j) out.at(static_cast<int>(i), j) = (*keep[i])[j];
    return out;
}

void MemoryBank::restore(std::deque<Entry> entries) {
    check_contract(static_cast<int>(entries.size()) <= capacity_, "restore: too many bank entries");
    for (const auto& e : entries)
        check_contract(e.key.numel() == embed_dim_, "restore: key dimension mismatch");
    entries_ = std::move(entries);
}

Var infonce_loss(Graph& g, Var q, const Tensor& k_plus, const Tensor& negatives, double tau) {
    if (tau <= 0.0) throw ConfigError("infonce: temperature must be positive");
    const Tensor& tq = g.val(q);
    check_contract(k_plus.numel() == tq.numel(), "infonce: k_plus dimension mismatch");
    int d = static_cast<int>(tq.numel());
    int n = 0;
    if (negatives.defined() && negatives.numel() > 0) {
        check_contract(negatives.ndim() == 2 && negatives.dim(1) == d, "infonce: negatives shape mismatch");
        n = negatives.dim(0);
    }
    // Row 0 is the positive; a (n+1)-way classifier with true class 0.
    Tensor keys({n + 1, d});
    for (int j = 0; j < d; ++j) keys.at(0, j) = k_plus[j];
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) keys.at(i + 1, j) = negatives.at(i, j);
    Var sims = scale(g, matvec(g, keys, q), 1.0 / tau);
    return scale(g, pick(g, log_softmax(g, sims), 0), -1.0);
}

double infonce_loss_value(const Tensor& q, const Tensor& k_plus, const Tensor& negatives, double tau) {
    Graph g;
    Var loss = infonce_loss(g, g.constant(q), k_plus, negatives, tau);
    return g.val(loss)[0];
}

Tensor l2_normalized(const Tensor& v, double eps) {
    double n = std::sqrt(dot(v, v) + eps);
    Tensor out(v.shape());
    for (int64_t i = 0; i < v.numel(); ++i) out[i] = v[i] / n;
    return out;
}

}  // namespace iat
