#ifndef IAT_SYNTHVID_HPP_
#define IAT_SYNTHVID_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "iat/common.hpp"
#include "iat/image.hpp"
#include "iat/rng.hpp"
#include "iat/tensor.hpp"

namespace iat {

struct VideoMeta {
    int distractor_count = 0;
    bool occlusion = false;
    double speed = 0.0;  // pixels per frame
};

// A synthetic sequence; the video id is the instance identity used by the
// contrastive branch.
struct VideoSample {
    int64_t video_id = 0;
    std::vector<Image8> frames;
    std::vector<Box> boxes;  // one per frame, always fully inside the frame
    VideoMeta meta;
};

struct DatasetSpec {
    int num_videos = 40;
    int frames_per_video = 20;
    int image_size = 160;
    int distractor_min = 2;
    int distractor_max = 4;
    double occlusion_prob = 0.3;
    double speed_min = 1.0;
    double speed_max = 4.0;
    uint64_t seed = 1;

    void validate() const;
};

std::vector<VideoSample> generate_dataset(const DatasetSpec& spec);

// Throws ContractError when any VideoSample invariant is violated.
void validate_video(const VideoSample& video);

// Crop geometry and jitter for template/search extraction.
struct PairSamplerConfig {
    int crop_size = 128;
    double search_area_scale = 4.0;    // crop area relative to box area
    double template_area_scale = 2.0;
    double translation_jitter = 0.1;   // fraction of the crop side
    double scale_jitter = 0.25;
};

struct TrainingPair {
    Tensor template_img;  // [3,S,S]
    Tensor search_img;    // [3,S,S]
    Box template_box;     // in template-crop pixels
    Box search_box;       // in search-crop pixels
    int64_t video_id = 0;
};

TrainingPair sample_pair(const std::vector<VideoSample>& dataset, const PairSamplerConfig& cfg, Rng& rng);

// Crop of one annotated frame with the search-region geometry (no jitter);
// shared by pair sampling and the online tracker.
Tensor crop_search_region(const Image8& frame, const Box& box, double area_scale, int crop_size,
                          Box* box_in_crop);

void validate_pair(const TrainingPair& pair, int crop_size);

// Directory layout: <root>/<video_id>/frames/%05d.png plus groundtruth.txt
// ("frame_idx cx cy w h" per line) and meta.txt; dataset.json holds the
// video count so an empty dataset round-trips.
void save_dataset(const std::vector<VideoSample>& dataset, const std::string& root);
std::vector<VideoSample> load_dataset(const std::string& root);

// Ground-truth file helpers, reused by the eval CLI.
std::vector<Box> load_groundtruth(const std::string& path);

}  // namespace iat

#endif  // IAT_SYNTHVID_HPP_
