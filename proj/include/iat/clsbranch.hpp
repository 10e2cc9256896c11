#ifndef IAT_CLSBRANCH_HPP_
#define IAT_CLSBRANCH_HPP_

#include <deque>
#include <utility>
#include <vector>

#include "iat/encoders.hpp"
#include "iat/graph.hpp"
#include "iat/params.hpp"

namespace iat {

struct ClsConfig {
    double reg_factor = 0.01;  // Eq.-style filter regularization weight
    double sigma = 1.0;        // label width in feature cells
    int filter_size = 5;       // k, odd so correlation is center-aligned
    int inner_steps = 20;      // online filter fit: gradient steps
    double inner_step_size = 0.05;
    int augment_count = 5;     // extra samples built at init
    double peak_ratio = 0.8;   // distractor detection threshold
    int max_set_size = 15;
    int peak_exclusion_radius = 3;  // cells around the primary peak
};

// G: maps box-pooled template features to correlation filter weights g.
// Bias-free so an all-zero template yields an all-zero filter.
class TargetModelGenerator {
  public:
    TargetModelGenerator() = default;
    TargetModelGenerator(int channels, int filter_size, Rng& rng);

    // template_box is in crop pixels; crop_size maps it onto the feature map.
    Var predict_filter(Graph& g, const BoundParams& bp, Var template_features, const Box& template_box,
                       int crop_size) const;

    Tensor predict(const Tensor& template_features, const Box& template_box, int crop_size) const;

    int filter_size() const { return filter_size_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

  private:
    int channels_ = 0;
    int filter_size_ = 5;
    ParamSet params_;
};

// Correlation of g over the search features; zero-padded, same spatial size.
Var score_map(Graph& g, Var search_features, Var filter);
Tensor score_map(const Tensor& search_features, const Tensor& filter);

// Gaussian center label over an h x w cell grid; peak 1 at the center cell.
Tensor make_label_map(int h, int w, double center_x_cells, double center_y_cells, double sigma);

// Converts a box in crop pixels to its center in feature-cell coordinates.
std::pair<double, double> box_center_in_cells(const Box& box_in_crop, int crop_size, int cells);

// L_cls = (1/N) sum ||score - label||^2 + ||reg_factor * g||^2
Var cls_loss(Graph& g, const std::vector<std::pair<Var, Tensor>>& scored_labels, Var filter,
             double reg_factor);
double cls_loss_value(const std::vector<std::pair<Tensor, Tensor>>& scored_labels, const Tensor& filter,
                      double reg_factor);

// ---- online target model (inference side) ----

struct TrainSample {
    Tensor features;  // [C,h,w]
    Tensor label;     // [h,w]
};

struct OnlineTargetModel {
    Tensor filter;  // g
    std::deque<TrainSample> samples;
};

// Gradient descent on the Eq.-1 objective over a fixed sample set.
void fit_filter(Tensor& filter, const std::vector<TrainSample>& samples, double reg_factor, int steps,
                double step_size);
double filter_set_loss(const Tensor& filter, const std::vector<TrainSample>& samples, double reg_factor);

// Builds the initial training set (annotated crop + augmented variants),
// seeds g from G and descends the joint objective.
OnlineTargetModel init_target_model(const Encoder& encoder, const TargetModelGenerator& gen,
                                    const Tensor& crop_img, const Box& box_in_crop, const ClsConfig& cfg);

// Ratio of the strongest peak outside the exclusion radius to the primary
// peak; 0 when the map has no positive secondary peak.
double distractor_peak_ratio(const Tensor& score, int exclusion_radius);

// Appends the sample and re-fits when a distractor peak is detected. The
// refreshed filter is the average of per-sample fitted filters.
bool maybe_update_target_model(OnlineTargetModel& model, const TrainSample& sample,
                               const Tensor& latest_score, const ClsConfig& cfg);

std::pair<int, int> argmax_cell(const Tensor& map);  // (iy, ix)

// Continuous peak estimate in cell coordinates (cx, cy): the map is
// smoothed with the label Gaussian (matched filter) before the argmax and
// parabolic sub-cell refinement.
std::pair<double, double> locate_center_cells(const Tensor& score, double sigma);

}  // namespace iat

#endif  // IAT_CLSBRANCH_HPP_
