#ifndef IAT_INSTBRANCH_HPP_
#define IAT_INSTBRANCH_HPP_

#include <cstdint>
#include <deque>
#include <optional>
#include <string>

#include "iat/graph.hpp"
#include "iat/params.hpp"
#include "iat/rng.hpp"

namespace iat {

enum class InstVariant { kVideo, kObject, kFusedShared, kFusedSeparated };

std::string to_string(InstVariant v);
InstVariant variant_from_string(const std::string& s);

enum class GlobalPoolKind { kAvg, kMax };

struct InstConfig {
    InstVariant variant = InstVariant::kObject;
    int K = 1000;       // memory bank capacity
    double tau = 0.07;  // temperature
    int F = 3;          // ROI pooling filter size (object level)
    int embed_dim = 128;
    GlobalPoolKind video_pool = GlobalPoolKind::kAvg;
};

// The instance boosting module psi: 3x3 conv halving the channels, a
// pooling stage (global for the video level, ROI max-pool for the object
// level), then two fully connected layers onto the embedding.
class InstanceBoostingModule {
  public:
    enum class Kind { kVideo, kObject };

    InstanceBoostingModule() = default;
    InstanceBoostingModule(Kind kind, int in_channels, int roi_size, int embed_dim,
                           GlobalPoolKind video_pool, Rng& rng);

    // `box` is required for the object kind, in feature-cell coordinates.
    Var forward(Graph& g, const BoundParams& bp, Var feature_map,
                const std::optional<Box>& box = std::nullopt) const;

    Kind kind() const { return kind_; }
    int embed_dim() const { return embed_dim_; }
    size_t forward_count() const { return forward_count_; }

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

  private:
    Kind kind_ = Kind::kObject;
    int in_channels_ = 0;
    int roi_size_ = 3;
    int embed_dim_ = 128;
    GlobalPoolKind video_pool_ = GlobalPoolKind::kAvg;
    ParamSet params_;
    mutable size_t forward_count_ = 0;
};

// Sum of a whole-map path and a box path. Pass the same module twice for
// the shared fusion; two same-architecture modules for the separated one.
Var fused_forward(Graph& g, const InstanceBoostingModule& psi_video_path, const BoundParams& bp_video,
                  const InstanceBoostingModule& psi_object_path, const BoundParams& bp_object,
                  Var feature_map, const Box& box);

// Fixed-capacity FIFO of (key, video tag) with instrumented access counts.
// Initialized full of random unit-norm keys tagged -1 so no real video is
// ever excluded by them.
class MemoryBank {
  public:
    MemoryBank() = default;
    MemoryBank(int capacity, double tau, int embed_dim);

    void randomize(Rng& rng);

    void enqueue(const Tensor& key, int64_t video_id);

    // All stored keys whose tag differs from video_id, FIFO order, as an
    // [n, embed_dim] matrix (n may be 0).
    Tensor negatives(int64_t video_id) const;

    int capacity() const { return capacity_; }
    double tau() const { return tau_; }
    int embed_dim() const { return embed_dim_; }
    size_t size() const { return entries_.size(); }

    size_t read_count() const { return reads_; }
    size_t write_count() const { return writes_; }

    // Checkpoint plumbing; does not count as bank access.
    struct Entry {
        Tensor key;
        int64_t tag;
    };
    const std::deque<Entry>& entries() const { return entries_; }
    void restore(std::deque<Entry> entries);

  private:
    int capacity_ = 0;
    double tau_ = 0.07;
    int embed_dim_ = 128;
    std::deque<Entry> entries_;
    mutable size_t reads_ = 0;
    size_t writes_ = 0;
};

// L_ins = -log( exp(q.k+ / tau) / sum_i exp(q.k_i / tau) ), the sum running
// over the positive key and the negatives. Gradient reaches q only.
Var infonce_loss(Graph& g, Var q, const Tensor& k_plus, const Tensor& negatives, double tau);
double infonce_loss_value(const Tensor& q, const Tensor& k_plus, const Tensor& negatives, double tau);

Tensor l2_normalized(const Tensor& v, double eps = 1e-12);

}  // namespace iat

#endif  // IAT_INSTBRANCH_HPP_
