#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "osnet/analysis.hpp"
#include "osnet/train.hpp"

using namespace osnet;

namespace {
using D = double;
}

TEST_CASE("cross entropy: peaked logits, uniform logits, formula oracle") {
    CtxT<D> ctx;
    // strongly peaked at the target with margin 20: loss below 1e-3 at eps=0
    auto peaked = make_tensor<D>({2, 4});
    peaked->at(1) = 20.0;   // row 0 target 1
    peaked->at(4 + 2) = 20.0;  // row 1 target 2
    auto l0 = cross_entropy_ls(ctx, peaked, {1, 2}, 0.0);
    CHECK(l0->at(0) < 1e-3);

    // uniform logits: exactly ln K for any smoothing
    for (double eps : {0.0, 0.1, 0.4}) {
        auto uniform = make_tensor<D>({3, 7}, 1.25);
        auto l = cross_entropy_ls(ctx, uniform, {0, 3, 6}, eps);
        CHECK(l->at(0) == doctest::Approx(std::log(7.0)).epsilon(1e-9));
    }

    // random case against a direct double-precision formula evaluation
    Rng rng(5);
    auto logits = random_tensor<D>({5, 6}, rng, -2, 2);
    std::vector<int64_t> targets{3, 0, 5, 2, 2};
    const double eps = 0.1;
    auto got = cross_entropy_ls(ctx, logits, targets, eps);
    double expect = 0.0;
    for (int64_t i = 0; i < 5; ++i) {
        double z = 0.0;
        for (int64_t j = 0; j < 6; ++j) z += std::exp(logits->at(i * 6 + j));
        for (int64_t j = 0; j < 6; ++j) {
            const double q = eps / 6.0 + (j == targets[static_cast<size_t>(i)] ? 1.0 - eps : 0.0);
            expect -= q * (logits->at(i * 6 + j) - std::log(z));
        }
    }
    expect /= 5.0;
    CHECK(std::abs(got->at(0) - expect) <= 1e-6);
}

TEST_CASE("cross entropy gradient check and minimum at the smoothed target") {
    Rng rng(7);
    auto logits = random_tensor<D>({4, 5}, rng, -2, 2);
    logits->set_requires_grad(true);
    std::vector<int64_t> targets{0, 4, 2, 1};
    TapeT<D> tape;
    CtxT<D> ctx{&tape, true};
    auto loss = cross_entropy_ls(ctx, logits, targets, 0.1);
    tape.backward(loss);
    GradCheckOptions opt;
    auto rep = finite_diff_compare<D>(
        [&]() {
            CtxT<D> c;
            return static_cast<double>(cross_entropy_ls(c, logits, targets, 0.1)->at(0));
        },
        {{"logits", logits}}, opt);
    INFO(gradcheck_summary(rep));
    CHECK(rep.pass);

    // logits = log(smoothed target) is a stationary point
    const double eps = 0.2;
    auto stationary = make_tensor<D>({2, 4});
    std::vector<int64_t> t2{1, 3};
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 4; ++j)
            stationary->at(i * 4 + j) =
                std::log(eps / 4.0 + (j == t2[static_cast<size_t>(i)] ? 1.0 - eps : 0.0));
    stationary->set_requires_grad(true);
    TapeT<D> tape2;
    CtxT<D> ctx2{&tape2, true};
    tape2.backward(cross_entropy_ls(ctx2, stationary, t2, eps));
    double norm = 0.0;
    for (auto g : stationary->grad()) norm += g * g;
    CHECK(std::sqrt(norm) < 1e-6);
}

TEST_CASE("hard triplet loss: separated clusters, degenerate case, exhaustive oracle") {
    CtxT<D> ctx;
    // two tight, well separated identity clusters: zero loss
    auto f = make_tensor<D>({4, 2});
    f->at(0) = 0.0; f->at(1) = 0.0;
    f->at(2) = 0.1; f->at(3) = 0.0;
    f->at(4) = 10.0; f->at(5) = 0.0;
    f->at(6) = 10.1; f->at(7) = 0.0;
    CHECK(hard_triplet_loss(ctx, f, {0, 0, 1, 1}, 0.3)->at(0) == 0.0);

    // all features identical: loss equals the margin
    auto same = make_tensor<D>({4, 3}, 1.0);
    CHECK(hard_triplet_loss(ctx, same, {0, 0, 1, 1}, 0.3)->at(0) == doctest::Approx(0.3));

    // random 8x4 batch against an exhaustive brute-force selection
    Rng rng(11);
    auto feats = random_tensor<D>({8, 4}, rng);
    std::vector<int64_t> pids{0, 0, 1, 1, 2, 2, 3, 3};
    const double margin = 0.5;
    auto got = hard_triplet_loss(ctx, feats, pids, margin);
    auto dist = [&](int64_t i, int64_t j) {
        double acc = 0;
        for (int64_t t = 0; t < 4; ++t) {
            const double d = feats->at(i * 4 + t) - feats->at(j * 4 + t);
            acc += d * d;
        }
        return std::sqrt(acc);
    };
    double expect = 0.0;
    for (int64_t a = 0; a < 8; ++a) {
        double dap = -1, dan = -1;
        for (int64_t p = 0; p < 8; ++p)
            if (p != a && pids[static_cast<size_t>(p)] == pids[static_cast<size_t>(a)]) dap = std::max(dap, dist(a, p));
        for (int64_t n = 0; n < 8; ++n)
            if (pids[static_cast<size_t>(n)] != pids[static_cast<size_t>(a)])
                dan = dan < 0 ? dist(a, n) : std::min(dan, dist(a, n));
        expect += std::max(0.0, margin + dap - dan);
    }
    expect /= 8.0;
    CHECK(std::abs(got->at(0) - expect) <= 1e-6);

    CHECK_THROWS_AS(hard_triplet_loss(ctx, feats, {0, 1, 2, 3, 4, 5, 6, 7}, margin), std::invalid_argument);
}

TEST_CASE("hard triplet gradient check") {
    Rng rng(13);
    auto feats = random_tensor<D>({8, 4}, rng);
    std::vector<int64_t> pids{0, 0, 1, 1, 2, 2, 3, 3};
    feats->set_requires_grad(true);
    TapeT<D> tape;
    CtxT<D> ctx{&tape, true};
    tape.backward(hard_triplet_loss(ctx, feats, pids, 5.0));  // large margin: all anchors active
    GradCheckOptions opt;
    auto rep = finite_diff_compare<D>(
        [&]() {
            CtxT<D> c;
            return static_cast<double>(hard_triplet_loss(c, feats, pids, 5.0)->at(0));
        },
        {{"features", feats}}, opt);
    INFO(gradcheck_summary(rep));
    CHECK(rep.pass);
}

TEST_CASE("combined loss composes its parts") {
    Rng rng(17);
    auto logits = random_tensor<D>({8, 4}, rng);
    auto feats = random_tensor<D>({8, 4}, rng);
    std::vector<int64_t> targets{0, 0, 1, 1, 2, 2, 3, 3};
    CtxT<D> ctx;
    LossConfig cfg;
    cfg.label_smoothing = 0.1;
    cfg.triplet_margin = 0.3;

    cfg.triplet_weight = 0.0;
    auto ce_only = combined_loss(ctx, logits, feats, targets, cfg);
    CHECK(ce_only->at(0) == cross_entropy_ls(ctx, logits, targets, 0.1)->at(0));

    cfg.triplet_weight = 0.5;
    auto both = combined_loss(ctx, logits, feats, targets, cfg);
    const double expect = cross_entropy_ls(ctx, logits, targets, 0.1)->at(0) +
                          0.5 * hard_triplet_loss(ctx, feats, targets, 0.3)->at(0);
    CHECK(both->at(0) == doctest::Approx(expect).epsilon(1e-12));

    // gradient of the combination equals the sum of part gradients
    logits->set_requires_grad(true);
    feats->set_requires_grad(true);
    TapeT<D> tape;
    CtxT<D> tctx{&tape, true};
    tape.backward(combined_loss(tctx, logits, feats, targets, cfg));
    GradCheckOptions opt;
    auto rep = finite_diff_compare<D>(
        [&]() {
            CtxT<D> c;
            return static_cast<double>(combined_loss(c, logits, feats, targets, cfg)->at(0));
        },
        {{"logits", logits}, {"features", feats}}, opt);
    CHECK(rep.pass);
}

TEST_CASE("sgd momentum: zero gradient fixpoint and hand-computed steps") {
    OptimConfig cfg;
    cfg.kind = OptimKind::kSgdMomentum;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.0;
    cfg.schedule = ScheduleKind::kConstant;
    cfg.lr = 0.1;

    auto p = make_param<float>({2}, 1.0f);
    OptimizerT<float> opt(cfg, {{"p", p}});
    p->grad();  // zeros
    opt.step(0.1);
    CHECK(p->at(0) == 1.0f);

    // single scalar, two steps: v1=g=2 -> theta=1-0.2=0.8; v2=0.9*2+2=3.8 -> 0.8-0.38=0.42
    auto q = make_param<float>({1}, 1.0f);
    OptimizerT<float> opt2(cfg, {{"q", q}});
    q->grad()[0] = 2.0f;
    opt2.step(0.1);
    CHECK(q->at(0) == doctest::Approx(0.8));
    q->grad()[0] = 2.0f;
    opt2.step(0.1);
    CHECK(q->at(0) == doctest::Approx(0.42));
}

TEST_CASE("amsgrad first step moves by lr and respects the vmax clamp") {
    OptimConfig cfg;
    cfg.kind = OptimKind::kAmsgrad;
    cfg.weight_decay = 0.0;
    cfg.lr = 0.01;
    auto p = make_param<double>({1}, 0.5);
    OptimizerT<double> opt(cfg, {{"p", p}});
    p->grad()[0] = 3.0;
    opt.step(0.01);
    // bias-corrected m-hat = g, v-hat = g^2: update = lr*g/(|g|+eps) ~= lr
    CHECK(p->at(0) == doctest::Approx(0.5 - 0.01).epsilon(1e-6));

    // a later tiny gradient cannot blow the step up beyond lr*mhat/sqrt(vmax-hat)
    p->grad()[0] = 1e-8;
    const double before = p->at(0);
    opt.step(0.01);
    CHECK(std::abs(p->at(0) - before) < 0.01);
}

TEST_CASE("schedules: step decay table value and cosine shape") {
    OptimConfig cfg;
    cfg.lr = 0.065;
    cfg.schedule = ScheduleKind::kStepDecay;
    cfg.milestones = {150, 225, 300};
    cfg.decay_factor = 0.1;
    CHECK(cfg.lr_at(0) == doctest::Approx(0.065));
    CHECK(cfg.lr_at(149) == doctest::Approx(0.065));
    CHECK(cfg.lr_at(200) == doctest::Approx(0.0065));
    CHECK(cfg.lr_at(250) == doctest::Approx(0.00065));
    CHECK(cfg.lr_at(340) == doctest::Approx(0.000065));

    cfg.schedule = ScheduleKind::kCosine;
    cfg.cosine_t_max = 100;
    CHECK(cfg.lr_at(0) == doctest::Approx(0.065));
    CHECK(cfg.lr_at(50) == doctest::Approx(0.0325));
    CHECK(cfg.lr_at(100) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("identity sampler composes P*K batches and flags replacement") {
    DatasetIndex idx;
    for (int64_t pid = 0; pid < 6; ++pid)
        for (int64_t i = 0; i < (pid == 5 ? 2 : 6); ++i)
            idx.records.push_back({"p" + std::to_string(pid) + "_" + std::to_string(i), pid, i % 2});
    IdentitySampler sampler(idx, 4, 4);
    Rng rng(3);
    SamplerStats stats;
    auto batches = sampler.epoch_batches(rng, &stats);
    REQUIRE(!batches.empty());
    for (const auto& batch : batches) {
        CHECK(batch.size() == 16);
        std::set<int64_t> pids;
        std::map<int64_t, int> per_pid;
        for (auto r : batch) {
            pids.insert(idx.records[static_cast<size_t>(r)].pid);
            per_pid[idx.records[static_cast<size_t>(r)].pid]++;
        }
        CHECK(pids.size() == 4);
        for (auto& [_, n] : per_pid) CHECK(n == 4);
    }
    // pid 5 has < K images: replacement is flagged whenever it was drawn
    Rng r2(3);
    SamplerStats s2;
    auto again = sampler.epoch_batches(r2, &s2);
    CHECK(again == batches);  // fixed seed reproducibility
    CHECK(s2.ids_with_replacement == stats.ids_with_replacement);
}

TEST_CASE("training on a tiny synthetic set decreases the loss and resumes bitwise") {
    const std::string dir = "/tmp/osnet_train_unit";
    std::filesystem::remove_all(dir);
    auto ds = make_synthetic_dataset(dir, 3, 10, 32, 16, 5, 4);

    NetworkSpec spec;
    spec.width_multiplier = 0.25;
    spec.input_height = 32;
    spec.input_width = 16;
    spec.streams = 2;
    spec.num_classes = 3;

    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 6;
    cfg.optim.lr = 0.02;
    cfg.optim.schedule = ScheduleKind::kConstant;
    cfg.seed = 9;
    cfg.image_root = dir;
    cfg.aug.crop_padding = 2;
    cfg.checkpoint_path = dir + "/ckpt_a.osar";

    OSNetModelT<float> model(spec, 1);
    auto result = train(model, ds.train, cfg);
    CHECK_FALSE(result.aborted_nan);
    REQUIRE(result.log.size() == 5);
    CHECK(result.log[0].lr == doctest::Approx(0.02));
    // initial loss is near ln(3) plus the smoothing offset; it must move down
    double best = result.log.front().loss;
    for (const auto& e : result.log) best = std::min(best, e.loss);
    CHECK(best < result.log.front().loss);
    for (const auto& e : result.log) CHECK(std::isfinite(e.loss));

    // resume: 2 epochs + 3 resumed epochs must equal 5 straight epochs bitwise
    OSNetModelT<float> model2(spec, 1);
    TrainConfig cfg2 = cfg;
    cfg2.epochs = 2;
    cfg2.checkpoint_path = dir + "/ckpt_b.osar";
    train(model2, ds.train, cfg2);
    OSNetModelT<float> model3(spec, 1);
    TrainConfig cfg3 = cfg;
    cfg3.epochs = 5;
    cfg3.resume_from = dir + "/ckpt_b.osar";
    cfg3.checkpoint_path = dir + "/ckpt_b.osar";
    auto resumed = train(model3, ds.train, cfg3);
    REQUIRE(resumed.log.size() == 5);
    CHECK(metrics_text(resumed.log) == metrics_text(result.log));

    auto bytes = [](const std::string& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    };
    CHECK(bytes(dir + "/ckpt_a.osar") == bytes(dir + "/ckpt_b.osar"));
}

TEST_CASE("pid class table maps sorted distinct pids") {
    DatasetIndex idx;
    idx.records = {{"a", 7, 0}, {"b", 3, 0}, {"c", 7, 1}, {"d", 12, 0}};
    auto table = class_of_pid_table(idx);
    CHECK(table == std::vector<int64_t>{3, 7, 12});
    CHECK(pid_to_class(table, 7) == 1);
    CHECK_THROWS_AS(pid_to_class(table, 5), std::invalid_argument);
}
