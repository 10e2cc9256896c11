#ifndef IAT_TRACKER_HPP_
#define IAT_TRACKER_HPP_

#include <string>
#include <vector>

#include "iat/trainer.hpp"

namespace iat {

// Instance-branch usage during inference; must stay zero for a whole run.
struct Instrumentation {
    size_t bank_reads = 0;
    size_t bank_writes = 0;
    size_t psi_forwards = 0;
};

struct TrackState {
    OnlineTargetModel target_model;
    Box box;  // image coordinates
    int frame_index = 0;
    double init_peak = 0.0;
    bool low_confidence_last = false;
};

struct TrackedBox {
    Box box;
    double score = 0.0;
};

// Online tracker: classification branch localizes, regression branch
// refines, target model updates on distractor peaks. The instance branch
// is never touched.
class Tracker {
  public:
    explicit Tracker(Model model);

    static Tracker from_checkpoint(const std::string& path, const FullConfig& cfg);

    TrackState init(const Image8& frame, const Box& annotation) const;
    TrackedBox step(TrackState& state, const Image8& frame) const;

    // OPE driver: frame 0 echoes the annotation, then one step per frame.
    std::vector<TrackedBox> track_sequence(const VideoSample& video, const Box& annotation0) const;

    Instrumentation instrumentation() const;
    const Model& model() const { return model_; }

  private:
    Model model_;
};

// Results file: one line per frame, "x y w h score" (top-left convention).
void save_results(const std::string& path, const std::vector<TrackedBox>& results);
std::vector<TrackedBox> load_results(const std::string& path);

}  // namespace iat

#endif  // IAT_TRACKER_HPP_
