#ifndef IAT_PARAMS_HPP_
#define IAT_PARAMS_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "iat/graph.hpp"
#include "iat/tensor.hpp"

namespace iat {

// Ordered collection of named weight tensors owned by a module.
class ParamSet {
  public:
    Tensor& create(const std::string& name, Tensor init);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return tensors_.count(name) > 0; }
    const std::vector<std::string>& names() const { return order_; }
    size_t size() const { return order_.size(); }

  private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Tensor> tensors_;
};

// Leaf vars for one ParamSet inside one Graph. Bind once per graph so a
// parameter used twice (weight sharing) maps to a single node.
class BoundParams {
  public:
    BoundParams() = default;
    BoundParams(Graph& g, const ParamSet& ps, bool requires_grad);
    explicit BoundParams(std::unordered_map<std::string, Var> vars) : vars_(std::move(vars)) {}
    Var operator[](const std::string& name) const;

  private:
    std::unordered_map<std::string, Var> vars_;
};

// Accumulated gradients across a batch, keyed by "<prefix>.<param name>".
using GradMap = std::map<std::string, Tensor>;

// Pulls gradients for every bound parameter of `ps` out of `g` and adds
// them (in name order) into `grads` under the given prefix.
void accumulate_grads(const Graph& g, const BoundParams& bp, const ParamSet& ps,
                      const std::string& prefix, GradMap& grads);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with per-parameter first/second moment state, addressed by the same
// prefixed names as GradMap.
class Adam {
  public:
    using Config = AdamConfig;

    explicit Adam(Config cfg = Config{}) : cfg_(cfg) {}

    // Applies one update to every (prefix, set) pair using grads; missing
    // grads are treated as zero (still advances the moment estimates).
    void step(std::vector<std::pair<std::string, ParamSet*>> groups, const GradMap& grads, double lr);

    int64_t t() const { return t_; }
    Config config() const { return cfg_; }

    // Checkpoint plumbing.
    void export_state(std::map<std::string, Tensor>& out) const;
    void import_state(const std::map<std::string, Tensor>& in, int64_t t);

  private:
    struct Moments {
        Tensor m, v;
    };
    Config cfg_;
    std::map<std::string, Moments> state_;
    int64_t t_ = 0;
};

// Flat named-array archive: the on-disk checkpoint format. Little-endian,
// doubles only. Writes go through a temp file + rename so a failed write
// never leaves a partial archive behind.
struct Archive {
    std::map<std::string, Tensor> arrays;
    std::map<std::string, std::string> strings;

    void save(const std::string& path) const;
    static Archive load(const std::string& path);
};

}  // namespace iat

#endif  // IAT_PARAMS_HPP_
