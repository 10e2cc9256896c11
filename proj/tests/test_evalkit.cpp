#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "iat/evalkit.hpp"
#include "iat/rng.hpp"

using namespace iat;
namespace fs = std::filesystem;

namespace {

// Brute-force recount oracles, written independently of the curve code.
double oracle_auc(const std::vector<double>& ious) {
    double acc = 0.0;
    for (int k = 0; k <= 20; ++k) {
        double t = 0.05 * k;
        double hits = 0.0;
        for (double v : ious)
            if (v > t) hits += 1.0;
        acc += hits / static_cast<double>(ious.size());
    }
    return acc / 21.0;
}

double oracle_prec20(const std::vector<double>& errs) {
    double hits = 0.0;
    for (double v : errs)
        if (v <= 20.0) hits += 1.0;
    return hits / static_cast<double>(errs.size());
}

std::vector<RunResult> random_results(Rng& rng, int sequences, int frames) {
    std::vector<RunResult> out;
    for (int s = 0; s < sequences; ++s) {
        RunResult r;
        r.sequence_id = std::to_string(s);
        for (int f = 0; f < frames; ++f) {
            Box gt{rng.uniform(40.0, 200.0), rng.uniform(40.0, 200.0), rng.uniform(10.0, 60.0),
                   rng.uniform(10.0, 60.0)};
            Box pred = gt;
            pred.cx += rng.normal(0.0, 15.0);
            pred.cy += rng.normal(0.0, 15.0);
            pred.w = std::max(2.0, pred.w + rng.normal(0.0, 8.0));
            pred.h = std::max(2.0, pred.h + rng.normal(0.0, 8.0));
            r.gt.push_back(gt);
            r.pred.push_back(pred);
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

TEST_SUITE("evalkit") {

TEST_CASE("iou hand cases") {
    Box a{5.0, 5.0, 10.0, 10.0};
    CHECK(iou(a, a) == 1.0);
    Box b{50.0, 50.0, 10.0, 10.0};
    CHECK(iou(a, b) == 0.0);
    // unit squares offset by half a side: intersection 0.5, union 1.5
    Box u1{0.5, 0.5, 1.0, 1.0};
    Box u2{1.0, 0.5, 1.0, 1.0};
    CHECK(iou(u1, u2) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(iou(u2, u1) == doctest::Approx(iou(u1, u2)).epsilon(1e-15));
}

TEST_CASE("iou rejects non-positive areas") {
    Box a{5.0, 5.0, 10.0, 10.0};
    Box bad{5.0, 5.0, 0.0, 10.0};
    CHECK_THROWS_AS(iou(a, bad), ContractError);
}

TEST_CASE("iou is symmetric and clip-stable on random boxes") {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        Box a{rng.uniform(10, 90), rng.uniform(10, 90), rng.uniform(5, 40), rng.uniform(5, 40)};
        Box b{rng.uniform(10, 90), rng.uniform(10, 90), rng.uniform(5, 40), rng.uniform(5, 40)};
        double ab = iou(a, b);
        CHECK(iou(b, a) == doctest::Approx(ab).epsilon(1e-15));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
        // Clipping to a frame that already contains both boxes changes nothing
        // beyond center/size re-derivation rounding.
        CHECK(std::fabs(iou(a.clipped(200, 200), b.clipped(200, 200)) - ab) < 1e-9);
    }
}

TEST_CASE("perfect overlap: curve is 1 below t=1 and AUC is 20/21") {
    RunResult r;
    r.sequence_id = "perfect";
    for (int i = 0; i < 10; ++i) {
        Box b{50.0, 50.0, 20.0, 20.0};
        r.pred.push_back(b);
        r.gt.push_back(b);
    }
    Curve c = success_curve({r});
    for (int k = 0; k < 20; ++k) CHECK(c.values[static_cast<size_t>(k)] == 1.0);
    CHECK(c.values[20] == 0.0);  // strict > at t=1
    CHECK(c.headline == doctest::Approx(20.0 / 21.0).epsilon(1e-12));
}

TEST_CASE("zero overlap gives zero AUC; far centers give zero precision") {
    RunResult r;
    r.sequence_id = "zero";
    for (int i = 0; i < 5; ++i) {
        r.pred.push_back(Box{10.0, 10.0, 5.0, 5.0});
        r.gt.push_back(Box{100.0, 100.0, 5.0, 5.0});
    }
    CHECK(success_curve({r}).headline == 0.0);
    CHECK(precision_curve({r}).headline == 0.0);
}

TEST_CASE("perfect centers give precision@20 of one") {
    RunResult r;
    r.sequence_id = "centers";
    for (int i = 0; i < 5; ++i) {
        r.pred.push_back(Box{50.0, 50.0, 8.0, 8.0});
        r.gt.push_back(Box{50.0, 50.0, 30.0, 30.0});
    }
    CHECK(precision_curve({r}).headline == 1.0);
}

TEST_CASE("metric oracles agree on 1000 random result sets") {
    Rng rng(7);
    double worst_auc = 0.0, worst_prec = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        auto results = random_results(rng, 1 + rng.uniform_int(0, 2), 5 + rng.uniform_int(0, 20));
        std::vector<double> ious, errs;
        for (const auto& r : results) {
            auto vi = per_frame_iou(r);
            auto ve = per_frame_center_error(r);
            ious.insert(ious.end(), vi.begin(), vi.end());
            errs.insert(errs.end(), ve.begin(), ve.end());
        }
        worst_auc = std::max(worst_auc, std::fabs(success_curve(results).headline - oracle_auc(ious)));
        worst_prec =
            std::max(worst_prec, std::fabs(precision_curve(results).headline - oracle_prec20(errs)));
    }
    CHECK(worst_auc < 1e-12);
    CHECK(worst_prec < 1e-12);
}

TEST_CASE("empty result sets are contract errors") {
    CHECK_THROWS_AS(success_curve({}), ContractError);
    CHECK_THROWS_AS(precision_curve({}), ContractError);
    RunResult r;
    r.sequence_id = "mismatch";
    r.pred.push_back(Box{1, 1, 1, 1});
    CHECK_THROWS_AS(per_frame_iou(r), ContractError);
}

TEST_CASE("ablation value application touches exactly one key") {
    FullConfig cfg;
    CHECK(apply_ablation_value(cfg, "K", "123") == "inst.K");
    CHECK(cfg.inst.K == 123);
    CHECK(apply_ablation_value(cfg, "F", "5") == "inst.F");
    CHECK(cfg.inst.F == 5);
    CHECK(apply_ablation_value(cfg, "fusion", "shared") == "inst.variant");
    CHECK(cfg.inst.variant == InstVariant::kFusedShared);
    CHECK(apply_ablation_value(cfg, "variant", "video") == "inst.variant");
    CHECK(cfg.inst.variant == InstVariant::kVideo);
    CHECK_THROWS_AS(apply_ablation_value(cfg, "bogus", "1"), ConfigError);
}

TEST_CASE("masked config hashes coincide across swept values and differ otherwise") {
    FullConfig a;
    FullConfig b;
    b.inst.K = a.inst.K + 10;
    CHECK(config_hash(a) != config_hash(b));
    CHECK(config_hash_excluding(a, "inst.K") == config_hash_excluding(b, "inst.K"));
    b.cls.sigma += 1.0;
    CHECK(config_hash_excluding(a, "inst.K") != config_hash_excluding(b, "inst.K"));
}

TEST_CASE("ablation report renders failed rows and keeps going") {
    AblationReport report;
    report.axis = "K";
    report.rows.push_back({"0", 0.71, 0.9, false, ""});
    report.rows.push_back({"10", 0.0, 0.0, true, "boom"});
    std::string table = report.table_text();
    CHECK(table.find("0.7100") != std::string::npos);
    CHECK(table.find("failed: boom") != std::string::npos);

    fs::path dir = fs::temp_directory_path() / "iat_tests" / "ablation_report";
    save_ablation_report(report, dir.string());
    CHECK(fs::exists(dir / "report.txt"));
    CHECK(fs::exists(dir / "report.json"));
}

TEST_CASE("config json round trip preserves the hash") {
    FullConfig cfg;
    cfg.inst.K = 77;
    cfg.inst.variant = InstVariant::kFusedSeparated;
    cfg.train.decay_epochs = {2, 3};
    cfg.train.epochs = 5;
    FullConfig back = parse_config(config_to_json_text(cfg));
    CHECK(config_hash(back) == config_hash(cfg));
    CHECK(back.inst.K == 77);
    CHECK(back.inst.variant == InstVariant::kFusedSeparated);
}

}  // TEST_SUITE
