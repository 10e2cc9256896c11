#include "doctest.h"

#include <cmath>

#include "gradcheck.hpp"
#include "iat/regbranch.hpp"

using namespace iat;
using namespace iat::testutil;

namespace {

RegConfig small_cfg() {
    RegConfig cfg;
    cfg.num_candidates = 8;
    cfg.hidden_dim = 8;
    return cfg;
}

double entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

}  // namespace

TEST_SUITE("regbranch") {

TEST_CASE("boxparam round trip") {
    Box b{40.0, 70.0, 30.0, 20.0};
    BoxParam p = to_boxparam(b, 128);
    Box back = from_boxparam(p, 128);
    CHECK(back.cx == doctest::Approx(b.cx).epsilon(1e-12));
    CHECK(back.w == doctest::Approx(b.w).epsilon(1e-12));
}

TEST_CASE("candidate sampling: sigma -> 0 collapses the Gaussian half onto the label") {
    RegConfig cfg = small_cfg();
    cfg.sigma_y = {1e-12, 1e-12, 1e-12, 1e-12};
    BoxParam label;
    label.v = {0.5, 0.45, std::log(0.3), std::log(0.25)};
    Rng rng(1);
    CandidateSet cands = sample_candidates(label, cfg, 8, rng);
    for (int j = 0; j < 4; ++j)  // first half is Gaussian-drawn
        for (int i = 0; i < 4; ++i)
            CHECK(cands.boxes[j].v[i] == doctest::Approx(label.v[i]).epsilon(1e-9));
}

TEST_CASE("candidate sampling is deterministic under a fixed seed") {
    RegConfig cfg = small_cfg();
    BoxParam label;
    label.v = {0.5, 0.5, std::log(0.3), std::log(0.3)};
    Rng r1(42), r2(42);
    CandidateSet a = sample_candidates(label, cfg, 16, r1);
    CandidateSet b = sample_candidates(label, cfg, 16, r2);
    for (size_t j = 0; j < a.boxes.size(); ++j)
        for (int i = 0; i < 4; ++i) CHECK(a.boxes[j].v[i] == b.boxes[j].v[i]);
}

TEST_CASE("fewer than two candidates is a contract error") {
    RegConfig cfg = small_cfg();
    BoxParam label;
    Rng rng(1);
    CHECK_THROWS_AS(sample_candidates(label, cfg, 1, rng), ContractError);
}

TEST_CASE("Gaussian candidate mean is within 3 standard errors over 1e4 draws") {
    RegConfig cfg = small_cfg();
    BoxParam label;
    label.v = {0.5, 0.45, std::log(0.3), std::log(0.25)};
    Rng rng(7);
    const int n = 20000;  // half Gaussian
    CandidateSet cands = sample_candidates(label, cfg, n, rng);
    int gaussian = n / 2;
    for (int i = 0; i < 4; ++i) {
        double mean = 0.0;
        for (int j = 0; j < gaussian; ++j) mean += cands.boxes[static_cast<size_t>(j)].v[i];
        mean /= gaussian;
        double se = cfg.sigma_y[static_cast<size_t>(i)] / std::sqrt(static_cast<double>(gaussian));
        CHECK(std::fabs(mean - label.v[i]) < 3.0 * se);
    }
}

TEST_CASE("predictive probabilities: constant scorer follows the importance weights") {
    std::vector<double> logits = {1.3, 1.3, 1.3};
    std::vector<double> log_q = {std::log(0.2), std::log(0.5), std::log(0.3)};
    auto p = predictive_probs(logits, log_q);
    // p_j proportional to 1/q_j
    double z = 1.0 / 0.2 + 1.0 / 0.5 + 1.0 / 0.3;
    CHECK(p[0] == doctest::Approx((1.0 / 0.2) / z).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx((1.0 / 0.5) / z).epsilon(1e-12));
}

TEST_CASE("two equal-weight candidates with equal logits split evenly") {
    auto p = predictive_probs({0.0, 0.0}, {std::log(0.5), std::log(0.5)});
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("predictive probabilities sum to one") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> logits, log_q;
        for (int j = 0; j < 16; ++j) {
            logits.push_back(rng.normal(0.0, 3.0));
            log_q.push_back(rng.normal(-1.0, 1.0));
        }
        auto p = predictive_probs(logits, log_q);
        double s = 0.0;
        for (double v : p) s += v;
        CHECK(std::fabs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("matching predictive distribution leaves exactly the label entropy") {
    // Scorer logits equal to log p(y|y_i): then p_hat == p_tilde and the
    // cross-entropy equals the discrete entropy of the label weights.
    RegConfig cfg = small_cfg();
    BoxParam label;
    label.v = {0.5, 0.5, std::log(0.3), std::log(0.3)};
    Rng rng(11);
    CandidateSet cands = sample_candidates(label, cfg, 16, rng);
    std::vector<double> target = label_weights(cands);

    Graph g;
    int m = static_cast<int>(cands.boxes.size());
    Tensor logits({m});
    Tensor neg_log_q({m});
    for (int j = 0; j < m; ++j) {
        logits[j] = cands.log_label[static_cast<size_t>(j)];
        neg_log_q[j] = -cands.log_proposal[static_cast<size_t>(j)];
    }
    Var weighted = add_const(g, g.constant(logits), neg_log_q);
    Var loss = cross_entropy_with_probs(g, weighted, Tensor::from({m}, target));
    CHECK(g.val(loss)[0] == doctest::Approx(entropy(target)).epsilon(1e-9));
}

TEST_CASE("two-candidate toy cross entropy equals log 2") {
    Graph g;
    Var logits = g.constant(Tensor::from({2}, {0.0, 0.0}));  // p_hat = (0.5, 0.5)
    Var loss = cross_entropy_with_probs(g, logits, Tensor::from({2}, {1.0, 0.0}));
    CHECK(g.val(loss)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("reg_loss gradients match finite differences (theta and features)") {
    Rng rng(12);
    RegConfig cfg = small_cfg();
    RegPredictor reg(4, cfg, rng);
    BoxParam label;
    label.v = {0.55, 0.5, std::log(0.35), std::log(0.3)};
    std::map<std::string, Tensor> inputs = {{"feats", random_tensor({4, 8, 8}, rng)},
                                            {"fc1.w", reg.params().get("fc1.w")},
                                            {"fc1.b", reg.params().get("fc1.b")},
                                            {"fc2.w", reg.params().get("fc2.w")},
                                            {"fc2.b", reg.params().get("fc2.b")}};
    auto build = [&](Graph& g, const std::map<std::string, Var>& v) {
        BoundParams bp({{"fc1.w", v.at("fc1.w")},
                        {"fc1.b", v.at("fc1.b")},
                        {"fc2.w", v.at("fc2.w")},
                        {"fc2.b", v.at("fc2.b")}});
        Rng loss_rng(777);  // frozen candidates across evaluations
        return reg_loss(g, reg, bp, v.at("feats"), label, cfg, loss_rng);
    };
    auto rep = check_gradients(inputs, build, 6);
    CHECK_MESSAGE(rep.max_rel_err < 1e-4, rep.worst);
}

TEST_CASE("reg_loss is deterministic and never below the label entropy") {
    Rng rng(13);
    RegConfig cfg = small_cfg();
    RegPredictor reg(4, cfg, rng);
    Tensor feats = random_tensor({4, 8, 8}, rng);
    BoxParam label;
    label.v = {0.5, 0.45, std::log(0.4), std::log(0.35)};

    auto run = [&](uint64_t seed) {
        Graph g;
        BoundParams bp(g, reg.params(), false);
        Rng loss_rng(seed);
        Var loss = reg_loss(g, reg, bp, g.constant(feats), label, cfg, loss_rng);
        return g.val(loss)[0];
    };
    CHECK(run(5) == run(5));  // bit-identical under a fixed rng

    // KL non-negativity against the entropy of the matched candidate set.
    Rng cand_rng(5);
    CandidateSet cands = sample_candidates(label, cfg, cfg.num_candidates, cand_rng);
    CHECK(run(5) >= entropy(label_weights(cands)) - 1e-6);
}

TEST_CASE("refine_box: zero steps returns the initial box") {
    RegConfig cfg = small_cfg();
    BoxParam init;
    init.v = {0.4, 0.6, std::log(0.2), std::log(0.3)};
    auto scorer = [](const BoxParam&) {
        return std::pair<double, std::array<double, 4>>(1.0, {1.0, 1.0, 1.0, 1.0});
    };
    BoxParam out = refine_box(scorer, init, 0, 0.1, cfg);
    for (int i = 0; i < 4; ++i) CHECK(out.v[i] == init.v[i]);
}

TEST_CASE("refine_box climbs a concave quadratic to its maximum") {
    RegConfig cfg = small_cfg();
    std::array<double, 4> target = {0.6, 0.4, std::log(0.3), std::log(0.5)};
    auto scorer = [&](const BoxParam& y) {
        double s = 0.0;
        std::array<double, 4> grad{};
        for (int i = 0; i < 4; ++i) {
            double d = y.v[static_cast<size_t>(i)] - target[static_cast<size_t>(i)];
            s -= d * d;
            grad[static_cast<size_t>(i)] = -2.0 * d;
        }
        return std::pair<double, std::array<double, 4>>(s, grad);
    };
    BoxParam init;
    init.v = {0.5, 0.5, std::log(0.25), std::log(0.25)};
    BoxParam out = refine_box(scorer, init, 100, 0.2, cfg);
    for (int i = 0; i < 4; ++i) CHECK(std::fabs(out.v[i] - target[static_cast<size_t>(i)]) < 1e-3);
}

TEST_CASE("refined score never drops below the initial score") {
    Rng rng(14);
    RegConfig cfg = small_cfg();
    cfg.refine_steps = 10;
    RegPredictor reg(4, cfg, rng);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor feats = random_tensor({4, 8, 8}, rng);
        BoxParam init;
        init.v = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(-2.0, -0.5),
                  rng.uniform(-2.0, -0.5)};
        BoxParam out = refine_box(reg, feats, init, cfg.refine_steps, 0.02);
        CHECK(reg.score_value(feats, out) >= reg.score_value(feats, init) - 1e-12);
    }
}

TEST_CASE("score_with_box_grad matches finite differences in y") {
    Rng rng(15);
    RegConfig cfg = small_cfg();
    RegPredictor reg(3, cfg, rng);
    Tensor feats = random_tensor({3, 8, 8}, rng);
    BoxParam y;
    y.v = {0.55, 0.48, std::log(0.4), std::log(0.45)};
    auto [s, grad] = reg.score_with_box_grad(feats, y);
    for (int i = 0; i < 4; ++i) {
        double h = 1e-6;
        BoxParam p = y, m = y;
        p.v[static_cast<size_t>(i)] += h;
        m.v[static_cast<size_t>(i)] -= h;
        double fd = (reg.score_value(feats, p) - reg.score_value(feats, m)) / (2 * h);
        CHECK(rel_err(grad[static_cast<size_t>(i)], fd) < 1e-4);
    }
}

}  // TEST_SUITE
