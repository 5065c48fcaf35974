#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "osnet/engine.hpp"
#include "osnet/introspect.hpp"

using namespace osnet;

TEST_CASE("activation map: proportional single channel, absolute values, formula oracle") {
    // single positive channel: map proportional to it with unit spatial l2 norm
    auto f = make_tensor<double>({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    auto m = activation_map(f);
    CHECK(m->shape() == Shape{1, 2, 2});
    const double norm = std::sqrt(1.0 + 4 + 9 + 16);
    for (int64_t i = 0; i < 4; ++i) CHECK(m->at(i) == doctest::Approx((i + 1) / norm));
    double l2 = 0;
    for (int64_t i = 0; i < 4; ++i) l2 += m->at(i) * m->at(i);
    CHECK(l2 == doctest::Approx(1.0));

    // channels f and -f: 2|f| normalized
    auto pm = make_tensor<double>({1, 2, 1, 3});
    pm->at(0) = 0.5; pm->at(1) = -1.5; pm->at(2) = 2.0;
    pm->at(3) = -0.5; pm->at(4) = 1.5; pm->at(5) = -2.0;
    auto m2 = activation_map(pm);
    const double n2 = std::sqrt(1.0 + 9.0 + 16.0);  // norm of (1,3,4)
    CHECK(m2->at(0) == doctest::Approx(1.0 / n2));
    CHECK(m2->at(1) == doctest::Approx(3.0 / n2));
    CHECK(m2->at(2) == doctest::Approx(4.0 / n2));

    // random case against the direct two-line formula
    Rng rng(3);
    auto r = random_tensor<double>({2, 5, 3, 4}, rng);
    auto got = activation_map(r);
    for (int64_t ni = 0; ni < 2; ++ni) {
        std::vector<double> m3(12, 0.0);
        for (int64_t c = 0; c < 5; ++c)
            for (int64_t i = 0; i < 12; ++i) m3[static_cast<size_t>(i)] += std::abs(r->at((ni * 5 + c) * 12 + i));
        double nn = 0;
        for (double v : m3) nn += v * v;
        nn = std::sqrt(nn);
        for (int64_t i = 0; i < 12; ++i)
            CHECK(std::abs(got->at(ni * 12 + i) - m3[static_cast<size_t>(i)] / nn) <= 1e-6);
    }
}

TEST_CASE("kmeans: k=1 mean, separated blobs, monotone objective") {
    Rng rng(7);
    std::vector<float> pts;
    for (int i = 0; i < 10; ++i) {
        pts.push_back(static_cast<float>(rng.uniform(0, 1)));
        pts.push_back(static_cast<float>(rng.uniform(0, 1)));
    }
    auto one = kmeans(pts, 10, 2, 1, 50, 5);
    double mx = 0, my = 0;
    for (int i = 0; i < 10; ++i) {
        mx += pts[static_cast<size_t>(2 * i)] / 10.0;
        my += pts[static_cast<size_t>(2 * i + 1)] / 10.0;
    }
    CHECK(one.centers[0] == doctest::Approx(mx));
    CHECK(one.centers[1] == doctest::Approx(my));

    // two tight, well separated blobs
    std::vector<float> blobs;
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) {
        const bool hi = i >= 10;
        blobs.push_back(static_cast<float>((hi ? 10.0 : 0.0) + rng.uniform(-0.1, 0.1)));
        blobs.push_back(static_cast<float>((hi ? 10.0 : 0.0) + rng.uniform(-0.1, 0.1)));
        labels.push_back(hi);
    }
    auto two = kmeans(blobs, 20, 2, 2, 100, 11);
    for (int i = 1; i < 20; ++i)
        CHECK((two.assignments[static_cast<size_t>(i)] == two.assignments[0]) == (labels[static_cast<size_t>(i)] == labels[0]));

    // objective never increases across iterations
    std::vector<float> cloud;
    for (int i = 0; i < 200; ++i) cloud.push_back(static_cast<float>(rng.uniform(0, 5)));
    auto res = kmeans(cloud, 50, 4, 5, 100, 13);
    for (size_t i = 1; i < res.objective_per_iter.size(); ++i)
        CHECK(res.objective_per_iter[i] <= res.objective_per_iter[i - 1] + 1e-9);

    auto top = nearest_to_center(res, cloud, 50, 0, 15);
    CHECK(top.size() == 15);
    // the single closest point belongs to cluster 0 by definition of the assignment step
    CHECK(res.assignments[static_cast<size_t>(top[0])] == 0);
}

TEST_CASE("gating records: static variant is input-invariant, unified varies") {
    const std::string dir = "/tmp/osnet_introspect_unit";
    std::filesystem::remove_all(dir);
    auto ds = make_synthetic_dataset(dir, 2, 4, 32, 16, 17, 2);

    NetworkSpec spec;
    spec.width_multiplier = 0.25;
    spec.input_height = 32;
    spec.input_width = 16;
    spec.streams = 3;
    spec.fusion = Fusion::kStaticGate;
    OSNetModelT<float> stat(spec, 6);
    auto recs = collect_gating(stat, ds.train, dir);
    REQUIRE(recs.size() == ds.train.records.size());
    const int64_t c_mid_last = spec.mid_channels(2);
    CHECK(static_cast<int64_t>(recs[0].vector.size()) == spec.streams * c_mid_last);
    for (size_t i = 1; i < recs.size(); ++i) CHECK(recs[i].vector == recs[0].vector);
    for (auto v : recs[0].vector) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }

    spec.fusion = Fusion::kUnifiedAg;
    OSNetModelT<float> uni(spec, 6);
    auto urecs = collect_gating(uni, ds.train, dir);
    bool any_diff = false;
    for (size_t i = 1; i < urecs.size() && !any_diff; ++i) any_diff = urecs[i].vector != urecs[0].vector;
    CHECK(any_diff);
}

TEST_CASE("default-spec gating record length is streams x last mid width") {
    NetworkSpec spec;  // T=4, c_mid of conv4 = 512/4 = 128
    CHECK(spec.mid_channels(2) == 128);
    OSNetModelT<float> model(spec, 2);
    auto x = make_tensor<float>({1, 3, 256, 128}, 0.1f);
    GateCaptureT<float> cap;
    CtxT<float> ctx;
    engine::set_conv_path(engine::ConvPath::kLowered);
    model.forward(ctx, x, &cap);
    engine::set_conv_path(engine::ConvPath::kDirect);
    REQUIRE(cap.stream_gates.size() == 4);
    int64_t total = 0;
    for (const auto& g : cap.stream_gates) total += g->dim(1);
    CHECK(total == 4 * 128);
}
