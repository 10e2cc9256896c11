#include "iat/encoders.hpp"

#include <cmath>

namespace iat {

namespace {

Tensor he_init(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    double s = std::sqrt(2.0 / fan_in);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, s);
    return t;
}

std::string conv_w(int i) { return "conv" + std::to_string(i + 1) + ".w"; }
std::string conv_b(int i) { return "conv" + std::to_string(i + 1) + ".b"; }

Var backbone_forward(Graph& g, const EncoderConfig& cfg, const BoundParams& bp, Var image) {
    const Tensor& img = g.val(image);
    check_contract(img.ndim() == 3 && img.dim(0) == cfg.in_channels && img.dim(1) == cfg.crop_size &&
                       img.dim(2) == cfg.crop_size,
                   "encoder forward: image shape mismatch, got " + shape_str(img));
    int pad = cfg.kernel / 2;
    Var h = image;
    for (int i = 0; i < 4; ++i) {
        h = conv2d(g, h, bp[conv_w(i)], bp[conv_b(i)], cfg.strides[static_cast<size_t>(i)], pad);
        h = relu(g, h);
    }
    return h;
}

void init_backbone_params(const EncoderConfig& cfg, ParamSet& params, Rng& rng) {
    int in_c = cfg.in_channels;
    for (int i = 0; i < 4; ++i) {
        int out_c = cfg.widths[static_cast<size_t>(i)];
        int fan_in = in_c * cfg.kernel * cfg.kernel;
        params.create(conv_w(i), he_init({out_c, in_c, cfg.kernel, cfg.kernel}, fan_in, rng));
        params.create(conv_b(i), Tensor::zeros({out_c}));
        in_c = out_c;
    }
}

Tensor nograd_extract(const EncoderConfig& cfg, const ParamSet& params, const Tensor& image) {
    Graph g;
    BoundParams bp(g, params, /*requires_grad=*/false);
    Var out = backbone_forward(g, cfg, bp, g.constant(image));
    return g.val(out).clone();
}

}  // namespace

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    check_config(cfg.crop_size % cfg.total_stride() == 0, "encoder: crop_size must be divisible by stride");
    init_backbone_params(cfg_, params_, rng);
}

Var Encoder::forward(Graph& g, const BoundParams& bp, Var image) const {
    return backbone_forward(g, cfg_, bp, image);
}

Tensor Encoder::extract(const Tensor& image) const { return nograd_extract(cfg_, params_, image); }

Tensor extract_features(const Encoder& encoder, const Tensor& image) { return encoder.extract(image); }

MemoryEncoder MemoryEncoder::init_from(const Encoder& f, double momentum_coef) {
    check_config(momentum_coef >= 0.0 && momentum_coef <= 1.0, "momentum coefficient must be in [0,1]");
    MemoryEncoder m;
    m.cfg_ = f.config();
    m.momentum_ = momentum_coef;
    for (const auto& name : f.params().names()) m.params_.create(name, f.params().get(name).clone());
    return m;
}

void MemoryEncoder::momentum_update(const Encoder& f) {
    check_contract(params_.names() == f.params().names(), "momentum_update: parameter sets differ");
    for (const auto& name : params_.names()) {
        Tensor& p = params_.get(name);
        const Tensor& pf = f.params().get(name);
        check_contract(same_shape(p, pf), "momentum_update: shape mismatch for " + name);
        double* pp = p.data();
        const double* qq = pf.data();
        for (int64_t i = 0; i < p.numel(); ++i) pp[i] = momentum_ * pp[i] + (1.0 - momentum_) * qq[i];
    }
}

Tensor MemoryEncoder::extract(const Tensor& image) const { return nograd_extract(cfg_, params_, image); }

}  // namespace iat
