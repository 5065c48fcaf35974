#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "osnet/analysis.hpp"
#include "osnet/arch.hpp"
#include "osnet/data.hpp"
#include "osnet/engine.hpp"
#include "osnet/eval.hpp"
#include "osnet/introspect.hpp"
#include "osnet/serialize.hpp"
#include "osnet/train.hpp"

namespace {

using namespace osnet;

struct GlobalOpts {
    uint64_t seed = 0;
    bool deterministic = false;
    std::string precision = "f32";
    std::string spec_path;
};

NetworkSpec spec_or_default(const GlobalOpts& g) {
    if (!g.spec_path.empty()) return load_spec_file(g.spec_path);
    return NetworkSpec{};
}

void require_f32(const GlobalOpts& g, const std::string& cmd) {
    if (g.precision != "f32")
        throw std::runtime_error(cmd + " runs in single precision; the double-precision switch exists for the "
                                       "gradient-check suites (use it with 'gradcheck')");
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << text;
}

void write_ids_csv(const std::string& path, const DatasetIndex& index) {
    DatasetIndex copy = index;
    write_index(path, copy);
}

int cmd_summarize(const GlobalOpts& g, const std::string& csv_path, bool grid) {
    const NetworkSpec spec = spec_or_default(g);
    OSNetModelT<float> model(spec, g.seed);
    const CostReport params = count_params(model);
    const CostReport madds = count_multadds(model);
    std::cout << cost_table_text(params, madds);
    if (!csv_path.empty()) write_text_file(csv_path, cost_table_csv(params, madds));
    if (grid) {
        std::cout << "\nshrink grid (width multiplier beta x resolution multiplier gamma):\n";
        const auto cells = shrink_grid(spec, {1.0, 0.75, 0.5, 0.25}, {1.0, 0.75, 0.5, 0.25});
        std::cout << shrink_grid_text(cells);
    }
    return 0;
}

int cmd_gradcheck(const GlobalOpts& g, bool ops_only, bool model_only, double step, double tol_ops,
                  double tol_model, int64_t sample) {
    bool all_pass = true;
    if (!model_only) {
        auto reports = gradcheck_ops(g.seed, tol_ops);
        for (const auto& [name, rep] : reports) {
            std::cout << name << ": " << gradcheck_summary(rep) << '\n';
            all_pass = all_pass && rep.pass;
        }
    }
    if (!ops_only) {
        NetworkSpec spec;
        if (!g.spec_path.empty()) {
            spec = load_spec_file(g.spec_path);
        } else {
            spec.width_multiplier = 0.25;
            spec.input_height = 32;
            spec.input_width = 16;
        }
        GradCheckOptions opt;
        opt.step = step;
        opt.tolerance = tol_model;
        opt.sample = static_cast<size_t>(sample);
        opt.seed = g.seed;
        if (g.precision == "f64") {
            OSNetModelT<double> model(spec, g.seed);
            auto rep = gradcheck_model(model, 4, opt);
            std::cout << "model(f64): " << gradcheck_summary(rep) << '\n';
            all_pass = all_pass && rep.pass;
        } else {
            OSNetModelT<float> model(spec, g.seed);
            auto rep = gradcheck_model(model, 4, opt);
            std::cout << "model(f32): " << gradcheck_summary(rep) << '\n';
            all_pass = all_pass && rep.pass;
        }
    }
    if (!all_pass) throw std::runtime_error("gradient check failed");
    return 0;
}

int cmd_synth(const GlobalOpts& g, const std::string& out, int64_t ids, int64_t per_id, int64_t height,
              int64_t width, int64_t eval_per_id) {
    auto ds = make_synthetic_dataset(out, ids, per_id, height, width, g.seed, eval_per_id);
    std::cout << "wrote " << ds.all.records.size() << " images under " << out << " (train "
              << ds.train.records.size() << ", query " << ds.query.records.size() << ", gallery "
              << ds.gallery.records.size() << ")\n";
    return 0;
}

struct TrainCliOpts {
    std::string index_path, root, out, resume, metrics_path;
    int64_t epochs = 60, batch = 32;
    double lr = 0.065, weight_decay = 5e-4, momentum = 0.9;
    std::string optimizer = "sgd", schedule = "step";
    std::vector<int64_t> milestones{150, 225, 300};
    double decay = 0.1;
    int64_t cosine_t_max = 0;
    double label_smoothing = 0.1, lambda_t = 0.0, margin = 0.3;
    int64_t sampler_p = 8, sampler_k = 4;
    double flip = 0.5;
    int64_t crop_pad = 4;
    double erase = 0.0;
    bool patch = false;
    double stop_at_acc = -1.0;
};

int cmd_train(const GlobalOpts& g, const TrainCliOpts& o) {
    require_f32(g, "train");
    auto index = read_index(o.index_path, "train");
    NetworkSpec spec = spec_or_default(g);
    spec.num_classes = static_cast<int64_t>(class_of_pid_table(index).size());

    TrainConfig cfg;
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch;
    cfg.loss.label_smoothing = o.label_smoothing;
    cfg.loss.triplet_weight = o.lambda_t;
    cfg.loss.triplet_margin = o.margin;
    cfg.optim.kind = o.optimizer == "amsgrad" ? OptimKind::kAmsgrad : OptimKind::kSgdMomentum;
    cfg.optim.lr = o.lr;
    cfg.optim.momentum = o.momentum;
    cfg.optim.weight_decay = o.weight_decay;
    cfg.optim.milestones = o.milestones;
    cfg.optim.decay_factor = o.decay;
    if (o.schedule == "cosine") {
        cfg.optim.schedule = ScheduleKind::kCosine;
        cfg.optim.cosine_t_max = o.cosine_t_max > 0 ? o.cosine_t_max : o.epochs;
    } else if (o.schedule == "constant") {
        cfg.optim.schedule = ScheduleKind::kConstant;
    } else {
        cfg.optim.schedule = ScheduleKind::kStepDecay;
    }
    cfg.aug.flip_prob = o.flip;
    cfg.aug.crop_padding = o.crop_pad;
    cfg.aug.erase_prob = o.erase;
    cfg.aug.use_patch = o.patch;
    cfg.sampler_p = o.sampler_p;
    cfg.sampler_k = o.sampler_k;
    cfg.seed = g.seed;
    cfg.deterministic = g.deterministic;
    cfg.image_root = o.root;
    cfg.checkpoint_path = o.out;
    cfg.resume_from = o.resume;
    cfg.stop_at_accuracy = o.stop_at_acc;

    OSNetModelT<float> model(spec, g.seed);
    auto result = train(model, index, cfg);
    const std::string metrics = metrics_text(result.log);
    std::cout << metrics;
    if (!o.metrics_path.empty()) write_text_file(o.metrics_path, metrics);
    if (result.aborted_nan) throw std::runtime_error("training aborted on non-finite loss; last-good checkpoint kept");
    return 0;
}

int cmd_extract(const GlobalOpts& g, const std::string& ckpt, const std::string& index_path,
                const std::string& root, const std::string& out, const std::string& ids_out, int64_t batch,
                bool l2) {
    require_f32(g, "extract");
    auto model = load_model_checkpoint<float>(ckpt);
    auto index = read_index(index_path, "query");
    auto feats = extract_features(model, index, root, batch, l2);
    TensorT<float> matrix({feats.count, feats.dim}, feats.data);
    save_tensor_file(out, matrix);
    if (!ids_out.empty()) write_ids_csv(ids_out, index);
    std::cout << "extracted " << feats.count << " x " << feats.dim << " features to " << out << '\n';
    return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& ckpt, std::vector<std::string> query_paths,
             std::vector<std::string> gallery_paths, const std::string& root, const std::string& distmat_path,
             const std::string& qids_path, const std::string& gids_path, int64_t max_rank, bool l2,
             const std::string& csv_path) {
    require_f32(g, "eval");
    std::vector<EvalResult> results;
    if (!distmat_path.empty()) {
        auto dist = load_tensor_file<double>(distmat_path);
        if (dist->ndim() != 2) throw std::runtime_error("eval: distance matrix tensor must be 2-D");
        auto qidx = read_index(qids_path, "query");
        auto gidx = read_index(gids_path, "gallery");
        std::vector<int64_t> qp, qc, gp, gc;
        for (const auto& r : qidx.records) {
            qp.push_back(r.pid);
            qc.push_back(r.camid);
        }
        for (const auto& r : gidx.records) {
            gp.push_back(r.pid);
            gc.push_back(r.camid);
        }
        std::vector<double> d(dist->values().begin(), dist->values().end());
        results.push_back(evaluate(d, dist->dim(0), dist->dim(1), qp, gp, qc, gc, max_rank));
    } else {
        if (ckpt.empty() || query_paths.empty() || query_paths.size() != gallery_paths.size())
            throw std::runtime_error("eval: need --checkpoint with paired --query/--gallery index files, or --distmat");
        auto model = load_model_checkpoint<float>(ckpt);
        for (size_t s = 0; s < query_paths.size(); ++s) {
            auto qidx = read_index(query_paths[s], "query");
            auto gidx = read_index(gallery_paths[s], "gallery");
            auto qf = extract_features(model, qidx, root, 32, l2);
            auto gf = extract_features(model, gidx, root, 32, l2);
            auto dist = pairwise_distances(qf, gf);
            results.push_back(evaluate(dist, qf.count, gf.count, qf.pids, gf.pids, qf.camids, gf.camids, max_rank));
        }
    }
    double r1 = 0, map = 0;
    for (size_t s = 0; s < results.size(); ++s) {
        if (results.size() > 1) std::cout << "split " << s << ":\n";
        std::cout << eval_report_text(results[s]);
        r1 += results[s].cmc[0];
        map += results[s].map;
    }
    if (results.size() > 1) {
        char buf[80];
        std::snprintf(buf, sizeof(buf), "mean over %zu splits: Rank-1 %.3f mAP %.3f\n", results.size(),
                      r1 / static_cast<double>(results.size()), map / static_cast<double>(results.size()));
        std::cout << buf;
    }
    if (!csv_path.empty()) write_text_file(csv_path, eval_report_csv(results[0]));
    return 0;
}

int cmd_introspect(const GlobalOpts& g, const std::string& ckpt, const std::string& index_path,
                   const std::string& root, const std::string& out_dir, bool act_maps, bool gating,
                   int64_t k, int64_t top, int64_t iters) {
    require_f32(g, "introspect");
    if (!act_maps && !gating)
        throw std::runtime_error("introspect: choose --activation-maps and/or --gating-clusters");
    auto model = load_model_checkpoint<float>(ckpt);
    auto index = read_index(index_path, "query");
    std::filesystem::create_directories(out_dir);

    if (act_maps) {
        ImageCache cache;
        CtxT<float> ctx;
        std::string manifest;
        for (size_t i = 0; i < index.records.size(); ++i) {
            auto img = cache.get(root, index.records[i].path);
            if (img->dim(2) != model.spec().input_height || img->dim(3) != model.spec().input_width)
                img = resize_bilinear(img, model.spec().input_height, model.spec().input_width);
            GateCaptureT<float> cap;
            model.forward(ctx, normalize_channels(img, {0.485f, 0.456f, 0.406f}, {0.229f, 0.224f, 0.225f}),
                          &cap);
            if (!cap.last_feature_map) throw std::runtime_error("introspect: no feature map captured");
            auto amap = activation_map(cap.last_feature_map);
            const std::string file = "actmap_" + std::to_string(i) + ".ostn";
            save_tensor_file(out_dir + "/" + file, *amap);
            manifest += file + "," + index.records[i].path + "\n";
        }
        write_text_file(out_dir + "/actmaps.txt", manifest);
        std::cout << "wrote " << index.records.size() << " activation maps under " << out_dir << '\n';
    }

    if (gating) {
        auto records = collect_gating(model, index, root);
        const int64_t dim = static_cast<int64_t>(records[0].vector.size());
        std::vector<float> vectors;
        for (const auto& r : records) vectors.insert(vectors.end(), r.vector.begin(), r.vector.end());
        auto km = kmeans(vectors, static_cast<int64_t>(records.size()), dim, k, iters, g.seed);
        TensorT<float> centers({km.k, dim});
        for (int64_t i = 0; i < km.k * dim; ++i) centers.at(i) = static_cast<float>(km.centers[static_cast<size_t>(i)]);
        save_tensor_file(out_dir + "/gating_centers.ostn", centers);
        for (int64_t c = 0; c < k; ++c) {
            auto ids = nearest_to_center(km, vectors, static_cast<int64_t>(records.size()), c, top);
            std::string listing;
            for (auto id : ids) listing += records[static_cast<size_t>(id)].image + "\n";
            write_text_file(out_dir + "/cluster_" + std::to_string(c) + ".txt", listing);
        }
        std::cout << "wrote " << k << " gating clusters (top " << top << " images each) under " << out_dir
                  << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OSNet numerical engine: omni-scale residual networks with factorized convolutions,\n"
                 "cost analysis, desk-scale training, re-ID evaluation, and introspection"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    GlobalOpts g;
    app.add_option("--seed", g.seed, "global random seed");
    app.add_flag("--deterministic", g.deterministic, "pin kernels to one thread (results are order-fixed at any thread count)");
    app.add_option("--precision", g.precision, "f32|f64 (f64 serves the gradient-check suites)")
        ->check(CLI::IsMember({"f32", "f64"}));
    app.add_option("--spec", g.spec_path, "network spec manifest file");

    auto* summarize = app.add_subcommand("summarize", "parameter and mult-add tables for a spec");
    std::string csv_path;
    bool grid = false;
    summarize->add_option("--csv", csv_path, "write machine-readable table here");
    summarize->add_flag("--grid", grid, "also print the width/resolution shrink grid");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    bool ops_only = false, model_only = false;
    double step = 1e-4, tol_ops = 1e-4, tol_model = 1e-3;
    int64_t sample = 200;
    gradcheck->add_flag("--ops", ops_only, "only the per-op suite");
    gradcheck->add_flag("--model", model_only, "only the full-model check");
    gradcheck->add_option("--step", step, "central-difference step");
    gradcheck->add_option("--tolerance", tol_ops, "relative error tolerance for ops");
    gradcheck->add_option("--model-tolerance", tol_model, "relative error tolerance for the full model");
    gradcheck->add_option("--sample", sample, "parameters sampled in the model check");

    auto* synth = app.add_subcommand("synth", "generate the synthetic multi-scale dataset");
    std::string synth_out = "synth";
    int64_t ids = 10, per_id = 40, height = 64, width = 32, eval_per_id = 8;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--ids", ids, "number of identities");
    synth->add_option("--per-id", per_id, "images per identity");
    synth->add_option("--height", height, "image height");
    synth->add_option("--width", width, "image width");
    synth->add_option("--eval-per-id", eval_per_id, "held-out images per identity (query+gallery)");

    auto* train_cmd = app.add_subcommand("train", "train a model on an index");
    TrainCliOpts t;
    train_cmd->add_option("--index", t.index_path, "training index file")->required();
    train_cmd->add_option("--root", t.root, "image root directory");
    train_cmd->add_option("--out", t.out, "checkpoint output path")->required();
    train_cmd->add_option("--resume", t.resume, "resume from this checkpoint");
    train_cmd->add_option("--metrics", t.metrics_path, "write the epoch,lr,loss,acc log here");
    train_cmd->add_option("--epochs", t.epochs);
    train_cmd->add_option("--batch", t.batch);
    train_cmd->add_option("--lr", t.lr);
    train_cmd->add_option("--momentum", t.momentum);
    train_cmd->add_option("--weight-decay", t.weight_decay);
    train_cmd->add_option("--optimizer", t.optimizer)->check(CLI::IsMember({"sgd", "amsgrad"}));
    train_cmd->add_option("--schedule", t.schedule)->check(CLI::IsMember({"step", "cosine", "constant"}));
    train_cmd->add_option("--milestones", t.milestones, "step-decay epochs");
    train_cmd->add_option("--decay", t.decay, "step-decay factor");
    train_cmd->add_option("--cosine-t-max", t.cosine_t_max);
    train_cmd->add_option("--label-smoothing", t.label_smoothing);
    train_cmd->add_option("--lambda-t", t.lambda_t, "triplet auxiliary loss weight");
    train_cmd->add_option("--margin", t.margin, "triplet margin");
    train_cmd->add_option("--sampler-p", t.sampler_p, "identities per batch (triplet sampler)");
    train_cmd->add_option("--sampler-k", t.sampler_k, "instances per identity (triplet sampler)");
    train_cmd->add_option("--flip", t.flip, "random flip probability");
    train_cmd->add_option("--crop-pad", t.crop_pad, "random crop padding");
    train_cmd->add_option("--erase", t.erase, "random erasing probability");
    train_cmd->add_flag("--patch", t.patch, "enable the random-patch augmentation");
    train_cmd->add_option("--stop-at-acc", t.stop_at_acc, "early-stop at this train accuracy");

    auto* extract = app.add_subcommand("extract", "extract features for an index");
    std::string ex_ckpt, ex_index, ex_root, ex_out = "features.ostn", ex_ids;
    int64_t ex_batch = 32;
    bool ex_l2 = false;
    extract->add_option("--checkpoint", ex_ckpt)->required();
    extract->add_option("--index", ex_index)->required();
    extract->add_option("--root", ex_root);
    extract->add_option("--out", ex_out, "feature matrix tensor file");
    extract->add_option("--ids-out", ex_ids, "write aligned path,pid,camid rows here");
    extract->add_option("--batch", ex_batch);
    extract->add_flag("--l2", ex_l2, "l2-normalize feature rows (cosine matching)");

    auto* eval_cmd = app.add_subcommand("eval", "CMC/mAP evaluation");
    std::string ev_ckpt, ev_root, ev_distmat, ev_qids, ev_gids, ev_csv;
    std::vector<std::string> ev_query, ev_gallery;
    int64_t ev_rank = 20;
    bool ev_l2 = false;
    eval_cmd->add_option("--checkpoint", ev_ckpt);
    eval_cmd->add_option("--query", ev_query, "query index file(s)");
    eval_cmd->add_option("--gallery", ev_gallery, "gallery index file(s), paired with --query");
    eval_cmd->add_option("--root", ev_root);
    eval_cmd->add_option("--distmat", ev_distmat, "evaluate a precomputed distance matrix tensor (f64)");
    eval_cmd->add_option("--query-ids", ev_qids, "id rows for --distmat");
    eval_cmd->add_option("--gallery-ids", ev_gids, "id rows for --distmat");
    eval_cmd->add_option("--max-rank", ev_rank);
    eval_cmd->add_flag("--l2", ev_l2, "l2-normalize features before matching");
    eval_cmd->add_option("--csv", ev_csv, "write cmc/map rows here");

    auto* intro = app.add_subcommand("introspect", "activation maps and gating-vector clusters");
    std::string in_ckpt, in_index, in_root, in_out = "introspect";
    bool in_act = false;
    std::string in_gating;
    int64_t in_iters = 100;
    intro->add_option("--checkpoint", in_ckpt)->required();
    intro->add_option("--index", in_index)->required();
    intro->add_option("--root", in_root);
    intro->add_option("--out", in_out, "output directory");
    intro->add_flag("--activation-maps", in_act, "emit per-image activation maps");
    intro->add_option("--gating-clusters", in_gating, "k=<clusters> top=<images>, e.g. k=4 top=15");
    intro->add_option("--iters", in_iters, "k-means iteration cap");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints the message and usage
        return code == 0 ? 0 : 1;      // help/version exit clean; usage errors exit 1
    }

    try {
        if (g.deterministic) osnet::engine::set_deterministic(true);
        if (summarize->parsed()) return cmd_summarize(g, csv_path, grid);
        if (gradcheck->parsed()) return cmd_gradcheck(g, ops_only, model_only, step, tol_ops, tol_model, sample);
        if (synth->parsed()) return cmd_synth(g, synth_out, ids, per_id, height, width, eval_per_id);
        if (train_cmd->parsed()) return cmd_train(g, t);
        if (extract->parsed()) return cmd_extract(g, ex_ckpt, ex_index, ex_root, ex_out, ex_ids, ex_batch, ex_l2);
        if (eval_cmd->parsed())
            return cmd_eval(g, ev_ckpt, ev_query, ev_gallery, ev_root, ev_distmat, ev_qids, ev_gids, ev_rank,
                            ev_l2, ev_csv);
        if (intro->parsed()) {
            int64_t k = 4, top = 15;
            const bool gating = !in_gating.empty();
            if (gating) {
                // parse "k=4 top=15" style tokens
                std::istringstream is(in_gating);
                std::string tok;
                while (is >> tok) {
                    if (tok.rfind("k=", 0) == 0) k = std::stoll(tok.substr(2));
                    else if (tok.rfind("top=", 0) == 0) top = std::stoll(tok.substr(4));
                    else throw std::runtime_error("introspect: bad --gating-clusters token '" + tok + "'");
                }
            }
            return cmd_introspect(g, in_ckpt, in_index, in_root, in_out, in_act, gating, k, top, in_iters);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
