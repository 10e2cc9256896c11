#ifndef IAT_REGBRANCH_HPP_
#define IAT_REGBRANCH_HPP_

#include <array>
#include <functional>
#include <vector>

#include "iat/graph.hpp"
#include "iat/params.hpp"
#include "iat/rng.hpp"

namespace iat {

// Box parameterization used by the regression branch: (cx, cy, log w,
// log h), all normalized to the search crop.
struct BoxParam {
    std::array<double, 4> v{0, 0, 0, 0};

    double cx() const { return v[0]; }
    double cy() const { return v[1]; }
    double log_w() const { return v[2]; }
    double log_h() const { return v[3]; }
};

BoxParam to_boxparam(const Box& box_in_crop, int crop_size);
Box from_boxparam(const BoxParam& p, int crop_size);

struct RegConfig {
    std::array<double, 4> sigma_y = {0.05, 0.05, 0.1, 0.1};  // label-noise std-devs
    int num_candidates = 16;
    int refine_steps = 10;
    double refine_step_size = 0.02;
    int roi_size = 3;
    int hidden_dim = 64;
    // Uniform proposal support: centers in [0,1], log-sizes in [lo, hi].
    double uniform_log_lo = -3.0;
    double uniform_log_hi = 0.0;
};

struct CandidateSet {
    std::vector<BoxParam> boxes;
    std::vector<double> log_proposal;  // log q(y_j), mixture density
    std::vector<double> log_label;     // log p(y_j | y_i), Gaussian density
};

// Draws M candidates from 0.5 * N(y_i, sigma^2) + 0.5 * Uniform(support).
CandidateSet sample_candidates(const BoxParam& label, const RegConfig& cfg, int num, Rng& rng);

// The scorer s_theta: ROI-pooled search features at y -> scalar.
class RegPredictor {
  public:
    RegPredictor() = default;
    RegPredictor(int channels, const RegConfig& cfg, Rng& rng);

    Var score(Graph& g, const BoundParams& bp, Var search_features, Var box_param) const;
    double score_value(const Tensor& search_features, const BoxParam& y) const;
    // Score and its gradient in y, for refinement.
    std::pair<double, std::array<double, 4>> score_with_box_grad(const Tensor& search_features,
                                                                 const BoxParam& y) const;

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    const RegConfig& config() const { return cfg_; }

  private:
    int channels_ = 0;
    RegConfig cfg_;
    ParamSet params_;
};

// Raw scorer outputs for each candidate; throws NumericError naming the
// first non-finite candidate.
std::vector<double> predictive_logits(const RegPredictor& reg, const Tensor& search_features,
                                      const CandidateSet& cands);
// Softmax over importance-weighted logits (s_j - log q_j); sums to 1.
std::vector<double> predictive_probs(const std::vector<double>& logits,
                                     const std::vector<double>& log_proposal);

// Monte-Carlo KL(p(y|y_i) || p(y|x,theta)) up to the label entropy term,
// implemented as cross-entropy over the candidate set.
Var reg_loss(Graph& g, const RegPredictor& reg, const BoundParams& bp, Var search_features,
             const BoxParam& label, const RegConfig& cfg, Rng& rng);

// Normalized label weights over a candidate set (the cross-entropy target).
std::vector<double> label_weights(const CandidateSet& cands);

// Gradient ascent on an arbitrary scorer; returns the best-scoring iterate
// (never worse than y_init). Boxes are clipped to the crop.
using BoxScorer = std::function<std::pair<double, std::array<double, 4>>(const BoxParam&)>;
BoxParam refine_box(const BoxScorer& scorer, const BoxParam& y_init, int steps, double step_size,
                    const RegConfig& cfg);
BoxParam refine_box(const RegPredictor& reg, const Tensor& search_features, const BoxParam& y_init,
                    int steps, double step_size);

}  // namespace iat

#endif  // IAT_REGBRANCH_HPP_
