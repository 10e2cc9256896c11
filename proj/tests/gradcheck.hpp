#ifndef IAT_TESTS_GRADCHECK_HPP_
#define IAT_TESTS_GRADCHECK_HPP_

// Central finite-difference oracle used to validate every autodiff path.
// Independent of the graph's backward implementation: it only re-runs
// forwards on perturbed copies.

#include <cmath>
#include <map>
#include <string>

#include "iat/graph.hpp"
#include "iat/rng.hpp"

namespace iat::testutil {

using BuildFn = std::function<Var(Graph&, const std::map<std::string, Var>&)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst;
    int checked = 0;
};

inline double rel_err(double a, double b) {
    double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
    return std::fabs(a - b) / denom;
}

inline double eval_loss(const std::map<std::string, Tensor>& inputs, const BuildFn& build) {
    Graph g;
    std::map<std::string, Var> vars;
    for (const auto& [name, t] : inputs) vars[name] = g.leaf(t, false);
    Var loss = build(g, vars);
    return g.val(loss)[0];
}

inline GradCheckReport check_gradients(const std::map<std::string, Tensor>& inputs, const BuildFn& build,
                                       int samples_per_tensor = 6, double base_h = 1e-5,
                                       uint64_t seed = 42) {
    // Autodiff gradients.
    Graph g;
    std::map<std::string, Var> vars;
    for (const auto& [name, t] : inputs) vars[name] = g.leaf(t, true);
    Var loss = build(g, vars);
    g.backward(loss);

    GradCheckReport report;
    Rng rng(seed);
    for (const auto& [name, t] : inputs) {
        int64_t n = t.numel();
        int count = std::min<int64_t>(samples_per_tensor, n);
        for (int s = 0; s < count; ++s) {
            int64_t k = n == 1 ? 0 : rng.uniform_int(0, static_cast<int>(n - 1));
            double ad = g.has_grad(vars.at(name)) ? g.grad(vars.at(name))[k] : 0.0;

            double h = base_h * std::max(1.0, std::fabs(t[k]));
            std::map<std::string, Tensor> plus, minus;
            for (const auto& [n2, t2] : inputs) {
                plus[n2] = t2.clone();
                minus[n2] = t2.clone();
            }
            plus[name][k] += h;
            minus[name][k] -= h;
            double fd = (eval_loss(plus, build) - eval_loss(minus, build)) / (2.0 * h);

            double err = rel_err(ad, fd);
            ++report.checked;
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst = name + "[" + std::to_string(k) + "] ad=" + std::to_string(ad) +
                               " fd=" + std::to_string(fd);
            }
        }
    }
    return report;
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
    return t;
}

}  // namespace iat::testutil

#endif  // IAT_TESTS_GRADCHECK_HPP_
