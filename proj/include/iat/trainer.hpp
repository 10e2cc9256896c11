#ifndef IAT_TRAINER_HPP_
#define IAT_TRAINER_HPP_

#include <optional>
#include <string>
#include <vector>

#include "iat/config.hpp"
#include "iat/params.hpp"

namespace iat {

// The full parameter bundle: shared backbone f1/f2, memory encoder, the
// three branch heads and the memory bank.
struct Model {
    FullConfig cfg;
    Encoder encoder;
    MemoryEncoder omega;
    TargetModelGenerator filter_gen;
    RegPredictor reg;
    // psi_main serves every variant; psi_aux is the second (object-path)
    // module of the separated fusion.
    InstanceBoostingModule psi_main;
    std::optional<InstanceBoostingModule> psi_aux;
    MemoryBank bank;

    // Named parameter groups the optimizer updates (omega excluded).
    std::vector<std::pair<std::string, ParamSet*>> trainable_groups();
    std::vector<std::pair<std::string, const ParamSet*>> all_groups() const;
};

Model init_model(const FullConfig& cfg);

struct StepMetrics {
    int64_t step = 0;  // 1-indexed in logs
    double l_cls = 0.0;
    double l_reg = 0.0;
    double l_ins = 0.0;
    double total = 0.0;
    double lr = 0.0;
    double cos_pos = 0.0;  // mean q . k+ over the batch
    double cos_neg = 0.0;  // mean q . negative over the batch
};

std::string metrics_to_json_line(const StepMetrics& m);
StepMetrics metrics_from_json_line(const std::string& line);

// Deterministic per-(step, pair) stream for the regression candidates.
uint64_t pair_reg_seed(uint64_t seed, int64_t step, int pair_index);

// Per-pair detached contrastive inputs (k+ through the memory encoder and
// the negatives snapshot). They carry no gradient by construction, so a
// finite-difference probe of the loss must hold them fixed to measure the
// same function the backward pass differentiates.
struct ContrastiveInputs {
    std::vector<Tensor> k_plus;
    std::vector<Tensor> negatives;
};

struct BatchEval {
    StepMetrics metrics;
    GradMap grads;
    ContrastiveInputs contrastive;
};

// Forward (and optionally backward) pass of one Algorithm-1 step without
// touching the optimizer or the momentum encoder. With update_bank=false
// the memory bank is left untouched and every pair sees the current bank
// state, which makes repeated evaluations pure — the form the finite
// difference checks need.
BatchEval eval_batch(Model& model, const std::vector<TrainingPair>& batch, int64_t step,
                     bool update_bank, bool want_grads, const ContrastiveInputs* frozen = nullptr);

class Trainer {
  public:
    explicit Trainer(Model model);

    // One Algorithm-1 step over an explicit batch.
    StepMetrics train_step(const std::vector<TrainingPair>& batch);

    // Samples the step's batch from the dataset with the seed derived from
    // (config seed, step counter), then runs train_step.
    StepMetrics train_step_on(const std::vector<VideoSample>& dataset);

    std::vector<TrainingPair> sample_batch(const std::vector<VideoSample>& dataset) const;

    int64_t step() const { return step_; }
    double current_lr() const { return model_.cfg.train.lr_at_step(step_); }

    Model& model() { return model_; }
    const Model& model() const { return model_; }
    Adam& adam() { return adam_; }

    // Gradients of the most recent step (post-accumulation), for tests.
    const GradMap& last_grads() const { return last_grads_; }

    void save_checkpoint(const std::string& path) const;
    static Trainer load_checkpoint(const std::string& path, const FullConfig& cfg);

  private:
    Model model_;
    Adam adam_;
    int64_t step_ = 0;
    GradMap last_grads_;
};

struct FitResult {
    std::string final_checkpoint;
    std::string metrics_path;
    std::vector<StepMetrics> metrics;
};

// Full Algorithm-1 loop with LR schedule, periodic checkpoints and a
// line-delimited metrics log under out_dir.
FitResult fit(const FullConfig& cfg, const std::vector<VideoSample>& dataset, const std::string& out_dir,
              const std::string& resume_checkpoint = {});

}  // namespace iat

#endif  // IAT_TRAINER_HPP_
