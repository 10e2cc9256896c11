#ifndef IAT_ENCODERS_HPP_
#define IAT_ENCODERS_HPP_

#include <array>
#include <cstdint>

#include "iat/graph.hpp"
#include "iat/params.hpp"
#include "iat/rng.hpp"
#include "iat/tensor.hpp"

namespace iat {

// Small strided CNN backbone. The template and search branches run through
// the same Encoder object, so weight sharing is structural rather than a
// synchronization concern.
struct EncoderConfig {
    int in_channels = 3;
    int crop_size = 128;
    std::array<int, 4> widths = {16, 32, 64, 64};
    std::array<int, 4> strides = {2, 2, 2, 1};
    int kernel = 3;

    int out_channels() const { return widths[3]; }
    int total_stride() const { return strides[0] * strides[1] * strides[2] * strides[3]; }
    int feature_cells() const { return crop_size / total_stride(); }
};

class Encoder {
  public:
    Encoder() = default;
    Encoder(const EncoderConfig& cfg, Rng& rng);

    Var forward(Graph& g, const BoundParams& bp, Var image) const;

    // Convenience no-grad forward for inference paths.
    Tensor extract(const Tensor& image) const;

    const EncoderConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

  private:
    EncoderConfig cfg_;
    ParamSet params_;
};

// extract_features: the spec-level entry point for both f1 and f2.
Tensor extract_features(const Encoder& encoder, const Tensor& image);

// Gradient-free copy of the backbone, updated by exponential moving
// average only. Encodes the keys for the instance branch.
class MemoryEncoder {
  public:
    MemoryEncoder() = default;

    static MemoryEncoder init_from(const Encoder& f, double momentum_coef);

    // p <- momentum * p + (1 - momentum) * p_f, elementwise.
    void momentum_update(const Encoder& f);

    Tensor extract(const Tensor& image) const;

    double momentum_coef() const { return momentum_; }
    const EncoderConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

  private:
    EncoderConfig cfg_;
    ParamSet params_;
    double momentum_ = 0.999;
};

}  // namespace iat

#endif  // IAT_ENCODERS_HPP_
