#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "osnet/eval.hpp"

using namespace osnet;

namespace {

// Independent brute-force CMC/mAP evaluator written straight from the
// definitions; the implementation under test must match it to 1e-9.
struct OracleOut {
    std::vector<double> cmc;
    double map = 0;
    int64_t valid = 0;
};

OracleOut oracle_eval(const std::vector<double>& dist, int64_t nq, int64_t ng,
                      const std::vector<int64_t>& qp, const std::vector<int64_t>& gp,
                      const std::vector<int64_t>& qc, const std::vector<int64_t>& gc, int64_t max_rank) {
    OracleOut out;
    out.cmc.assign(static_cast<size_t>(max_rank), 0.0);
    double ap_total = 0.0;
    for (int64_t q = 0; q < nq; ++q) {
        // collect the kept gallery entries as (distance, is_match) pairs
        std::vector<std::pair<double, bool>> kept;
        for (int64_t g = 0; g < ng; ++g) {
            if (gp[static_cast<size_t>(g)] == qp[static_cast<size_t>(q)] &&
                gc[static_cast<size_t>(g)] == qc[static_cast<size_t>(q)])
                continue;
            kept.emplace_back(dist[static_cast<size_t>(q * ng + g)],
                              gp[static_cast<size_t>(g)] == qp[static_cast<size_t>(q)]);
        }
        std::stable_sort(kept.begin(), kept.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        int64_t hits = 0;
        double ap = 0.0;
        int64_t first = -1;
        for (size_t r = 0; r < kept.size(); ++r)
            if (kept[r].second) {
                ++hits;
                if (first < 0) first = static_cast<int64_t>(r) + 1;
                ap += static_cast<double>(hits) / static_cast<double>(r + 1);
            }
        if (hits == 0) continue;
        ++out.valid;
        ap_total += ap / static_cast<double>(hits);
        for (int64_t k = first - 1; k < max_rank; ++k) out.cmc[static_cast<size_t>(k)] += 1.0;
    }
    for (auto& v : out.cmc) v /= static_cast<double>(out.valid);
    out.map = ap_total / static_cast<double>(out.valid);
    return out;
}

}  // namespace

TEST_CASE("perfect ranking scores 1.0 on both metrics") {
    // 3 queries, each with a unique nearest true match in a 6-entry gallery
    const int64_t nq = 3, ng = 6;
    std::vector<double> dist(static_cast<size_t>(nq * ng), 10.0);
    std::vector<int64_t> qp{0, 1, 2}, qc{0, 0, 0};
    std::vector<int64_t> gp{0, 1, 2, 3, 4, 5}, gc{1, 1, 1, 1, 1, 1};
    for (int64_t q = 0; q < nq; ++q) dist[static_cast<size_t>(q * ng + q)] = 0.1;
    auto r = evaluate(dist, nq, ng, qp, gp, qc, gc, 5);
    CHECK(r.cmc[0] == doctest::Approx(1.0));
    CHECK(r.map == doctest::Approx(1.0));
    for (size_t k = 1; k < r.cmc.size(); ++k) CHECK(r.cmc[k] >= r.cmc[k - 1]);
}

TEST_CASE("hand-computed average precision for (wrong, right, right)") {
    const int64_t nq = 1, ng = 3;
    std::vector<double> dist{1.0, 2.0, 3.0};  // gallery 0 nearest (wrong), then two matches
    std::vector<int64_t> qp{5}, qc{0};
    std::vector<int64_t> gp{9, 5, 5}, gc{1, 1, 1};
    auto r = evaluate(dist, nq, ng, qp, gp, qc, gc, 3);
    CHECK(r.map == doctest::Approx((1.0 / 2 + 2.0 / 3) / 2).epsilon(1e-12));
    CHECK(r.cmc[0] == doctest::Approx(0.0));
    CHECK(r.cmc[1] == doctest::Approx(1.0));
}

TEST_CASE("random instances match the brute-force oracle to 1e-9") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const int64_t nq = 20, ng = 50, max_rank = 10;
        std::vector<double> dist(static_cast<size_t>(nq * ng));
        for (auto& d : dist) d = rng.uniform(0, 10);
        std::vector<int64_t> qp(nq), gp(ng), qc(nq), gc(ng);
        for (auto& v : qp) v = rng.uniform_int(0, 6);
        for (auto& v : gp) v = rng.uniform_int(0, 6);
        for (auto& v : qc) v = rng.uniform_int(0, 2);
        for (auto& v : gc) v = rng.uniform_int(0, 2);
        // ensure at least one query has a valid match
        gp[0] = qp[0];
        gc[0] = (qc[0] + 1) % 3;

        auto got = evaluate(dist, nq, ng, qp, gp, qc, gc, max_rank);
        auto want = oracle_eval(dist, nq, ng, qp, gp, qc, gc, max_rank);
        CHECK(got.valid_queries == want.valid);
        CHECK(std::abs(got.map - want.map) <= 1e-9);
        for (int64_t k = 0; k < max_rank; ++k)
            CHECK(std::abs(got.cmc[static_cast<size_t>(k)] - want.cmc[static_cast<size_t>(k)]) <= 1e-9);
    }
}

TEST_CASE("camera filtering skips fully-masked queries and rejects all-invalid runs") {
    // query 0 only matches same-camera entries (skipped); query 1 is fine
    std::vector<double> dist{1, 2, 3, 1, 2, 3};
    std::vector<int64_t> qp{1, 2}, qc{0, 0};
    std::vector<int64_t> gp{1, 2, 3}, gc{0, 1, 1};
    auto r = evaluate(dist, 2, 3, qp, gp, qc, gc, 3);
    CHECK(r.skipped_queries == 1);
    CHECK(r.valid_queries == 1);

    std::vector<int64_t> qp2{7, 7}, qc2{0, 0};
    std::vector<int64_t> gp2{7, 9, 9}, gc2{0, 1, 1};
    CHECK_THROWS_WITH_AS(evaluate(dist, 2, 3, qp2, gp2, qc2, gc2, 3), doctest::Contains("valid"),
                         std::invalid_argument);

    std::vector<double> nan_dist{1, 2, 3, std::nan(""), 2, 3};
    CHECK_THROWS_AS(evaluate(nan_dist, 2, 3, qp, gp, qc, gc, 3), std::invalid_argument);
}

TEST_CASE("evaluation is invariant under strictly monotone distance transforms") {
    Rng rng(33);
    const int64_t nq = 8, ng = 20;
    std::vector<double> dist(static_cast<size_t>(nq * ng));
    for (auto& d : dist) d = rng.uniform(0.1, 5);
    std::vector<int64_t> qp(nq), gp(ng), qc(nq, 0), gc(ng, 1);
    for (auto& v : qp) v = rng.uniform_int(0, 3);
    for (auto& v : gp) v = rng.uniform_int(0, 3);
    auto base = evaluate(dist, nq, ng, qp, gp, qc, gc, 5);
    auto warped = dist;
    for (auto& d : warped) d = std::exp(2.0 * d) - 0.5;
    auto after = evaluate(warped, nq, ng, qp, gp, qc, gc, 5);
    CHECK(after.map == doctest::Approx(base.map).epsilon(1e-12));
    for (size_t k = 0; k < base.cmc.size(); ++k) CHECK(after.cmc[k] == doctest::Approx(base.cmc[k]));
}

TEST_CASE("feature extraction: fixed dimension, unit norms, batch-size independence") {
    const std::string dir = "/tmp/osnet_eval_unit";
    std::filesystem::remove_all(dir);
    auto ds = make_synthetic_dataset(dir, 2, 6, 32, 16, 3, 2);

    NetworkSpec spec;
    spec.width_multiplier = 0.25;  // feature dim stays 512 regardless of beta
    spec.input_height = 32;
    spec.input_width = 16;
    spec.streams = 2;
    OSNetModelT<float> model(spec, 4);

    auto f32 = extract_features(model, ds.train, dir, 32, true);
    CHECK(f32.dim == 512);
    CHECK(f32.count == static_cast<int64_t>(ds.train.records.size()));
    for (int64_t i = 0; i < f32.count; ++i) {
        double norm = 0;
        for (int64_t j = 0; j < f32.dim; ++j) {
            const double v = f32.data[static_cast<size_t>(i * f32.dim + j)];
            norm += v * v;
        }
        CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-6);
    }

    auto f1 = extract_features(model, ds.train, dir, 1, true);
    double max_diff = 0;
    for (size_t i = 0; i < f32.data.size(); ++i)
        max_diff = std::max(max_diff, static_cast<double>(std::abs(f32.data[i] - f1.data[i])));
    CHECK(max_diff <= 1e-5);  // eval-mode statistics: batching cannot change features
}
