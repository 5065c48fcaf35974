#include "osnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "osnet/engine.hpp"

namespace osnet {

void LossConfig::validate() const {
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
        throw std::invalid_argument("loss: label_smoothing must lie in [0,1)");
    if (triplet_margin <= 0.0) throw std::invalid_argument("loss: triplet_margin must be positive");
    if (triplet_weight < 0.0) throw std::invalid_argument("loss: triplet_weight must be non-negative");
}

template <typename T>
TensorPtrT<T> cross_entropy_ls(const CtxT<T>& ctx, const TensorPtrT<T>& logits,
                               const std::vector<int64_t>& targets, double epsilon) {
    if (!logits || logits->ndim() != 2)
        throw std::invalid_argument("cross_entropy_ls: logits must be 2-D, got " +
                                    shape_str(logits ? logits->shape() : Shape{}));
    const int64_t n = logits->dim(0), k = logits->dim(1);
    if (static_cast<int64_t>(targets.size()) != n)
        throw std::invalid_argument("cross_entropy_ls: targets length != batch size");
    if (epsilon < 0.0 || epsilon >= 1.0) throw std::invalid_argument("cross_entropy_ls: epsilon must be in [0,1)");
    for (auto t : targets)
        if (t < 0 || t >= k) throw std::invalid_argument("cross_entropy_ls: target id out of range");

    // softmax probabilities, kept for the backward rule
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(n * k));
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const T* row = logits->data() + i * k;
        double mx = row[0];
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double z = 0.0;
        for (int64_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        const double logz = std::log(z) + mx;
        double row_loss = 0.0;
        for (int64_t j = 0; j < k; ++j) {
            const double logp = static_cast<double>(row[j]) - logz;
            (*probs)[static_cast<size_t>(i * k + j)] = std::exp(logp);
            const double q = epsilon / static_cast<double>(k) + (j == targets[i] ? 1.0 - epsilon : 0.0);
            row_loss -= q * logp;
        }
        total += row_loss;
    }
    auto loss = make_tensor<T>({1});
    loss->at(0) = static_cast<T>(total / static_cast<double>(n));

    if (ctx.tape && logits->requires_grad()) {
        loss->set_requires_grad(true);
        auto tgt = std::make_shared<std::vector<int64_t>>(targets);
        ctx.tape->record([logits, loss, probs, tgt, n, k, epsilon]() {
            if (!loss->has_grad()) return;
            const double g = loss->grad()[0];
            T* gl = logits->grad().data();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < k; ++j) {
                    const double q =
                        epsilon / static_cast<double>(k) + (j == (*tgt)[static_cast<size_t>(i)] ? 1.0 - epsilon : 0.0);
                    gl[i * k + j] += static_cast<T>(g * ((*probs)[static_cast<size_t>(i * k + j)] - q) /
                                                    static_cast<double>(n));
                }
        });
    }
    return loss;
}

namespace {

// Selected hardest positive/negative per anchor, with distances.
struct TripletPick {
    int64_t pos = -1, neg = -1;
    double d_ap = 0, d_an = 0;
    bool active = false;
};

}  // namespace

template <typename T>
TensorPtrT<T> hard_triplet_loss(const CtxT<T>& ctx, const TensorPtrT<T>& features,
                                const std::vector<int64_t>& pids, double margin) {
    if (!features || features->ndim() != 2)
        throw std::invalid_argument("hard_triplet_loss: features must be 2-D");
    const int64_t n = features->dim(0), d = features->dim(1);
    if (static_cast<int64_t>(pids.size()) != n)
        throw std::invalid_argument("hard_triplet_loss: pids length != batch size");
    if (margin <= 0.0) throw std::invalid_argument("hard_triplet_loss: margin must be positive");

    auto dist = [&](int64_t i, int64_t j) {
        double acc = 0.0;
        const T* a = features->data() + i * d;
        const T* b = features->data() + j * d;
        for (int64_t t = 0; t < d; ++t) {
            const double diff = static_cast<double>(a[t]) - b[t];
            acc += diff * diff;
        }
        return std::sqrt(acc);
    };

    auto picks = std::make_shared<std::vector<TripletPick>>(static_cast<size_t>(n));
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        TripletPick p;
        for (int64_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dij = dist(i, j);
            if (pids[static_cast<size_t>(j)] == pids[static_cast<size_t>(i)]) {
                if (p.pos < 0 || dij > p.d_ap) {
                    p.pos = j;
                    p.d_ap = dij;
                }
            } else {
                if (p.neg < 0 || dij < p.d_an) {
                    p.neg = j;
                    p.d_an = dij;
                }
            }
        }
        if (p.pos < 0 || p.neg < 0)
            throw std::invalid_argument("hard_triplet_loss: anchor " + std::to_string(i) +
                                        " lacks a positive or negative in the batch");
        const double hinge = margin + p.d_ap - p.d_an;
        p.active = hinge > 0.0;
        if (p.active) total += hinge;
        (*picks)[static_cast<size_t>(i)] = p;
    }
    auto loss = make_tensor<T>({1});
    loss->at(0) = static_cast<T>(total / static_cast<double>(n));

    if (ctx.tape && features->requires_grad()) {
        loss->set_requires_grad(true);
        ctx.tape->record([features, loss, picks, n, d]() {
            if (!loss->has_grad()) return;
            const double g = static_cast<double>(loss->grad()[0]) / static_cast<double>(n);
            T* gf = features->grad().data();
            const T* f = features->data();
            for (int64_t i = 0; i < n; ++i) {
                const auto& p = (*picks)[static_cast<size_t>(i)];
                if (!p.active) continue;
                // d(d_ap)/df through the selected pair; subgradient 0 at d=0
                if (p.d_ap > 1e-12) {
                    for (int64_t t = 0; t < d; ++t) {
                        const double diff = (static_cast<double>(f[i * d + t]) - f[p.pos * d + t]) / p.d_ap;
                        gf[i * d + t] += static_cast<T>(g * diff);
                        gf[p.pos * d + t] -= static_cast<T>(g * diff);
                    }
                }
                if (p.d_an > 1e-12) {
                    for (int64_t t = 0; t < d; ++t) {
                        const double diff = (static_cast<double>(f[i * d + t]) - f[p.neg * d + t]) / p.d_an;
                        gf[i * d + t] -= static_cast<T>(g * diff);
                        gf[p.neg * d + t] += static_cast<T>(g * diff);
                    }
                }
            }
        });
    }
    return loss;
}

template <typename T>
TensorPtrT<T> combined_loss(const CtxT<T>& ctx, const TensorPtrT<T>& logits, const TensorPtrT<T>& features,
                            const std::vector<int64_t>& targets, const LossConfig& cfg) {
    cfg.validate();
    auto ce = cross_entropy_ls(ctx, logits, targets, cfg.label_smoothing);
    if (cfg.triplet_weight == 0.0) return ce;
    auto tri = hard_triplet_loss(ctx, features, targets, cfg.triplet_margin);
    return add(ctx, ce, scale_by(ctx, tri, cfg.triplet_weight));
}

void OptimConfig::validate() const {
    if (lr <= 0.0) throw std::invalid_argument("optim: lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("optim: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw std::invalid_argument("optim: weight_decay must be non-negative");
    if (decay_factor <= 0.0 || decay_factor > 1.0)
        throw std::invalid_argument("optim: decay_factor must be in (0,1]");
    if (schedule == ScheduleKind::kCosine && cosine_t_max < 1)
        throw std::invalid_argument("optim: cosine_t_max must be >= 1");
    for (size_t i = 1; i < milestones.size(); ++i)
        if (milestones[i] <= milestones[i - 1])
            throw std::invalid_argument("optim: milestones must be strictly increasing");
}

double OptimConfig::lr_at(int64_t epoch) const {
    switch (schedule) {
        case ScheduleKind::kConstant:
            return lr;
        case ScheduleKind::kStepDecay: {
            double out = lr;
            for (auto m : milestones)
                if (epoch >= m) out *= decay_factor;
            return out;
        }
        case ScheduleKind::kCosine:
            return lr * 0.5 *
                   (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(epoch) /
                                   static_cast<double>(cosine_t_max)));
    }
    return lr;
}

template <typename T>
OptimizerT<T>::OptimizerT(const OptimConfig& cfg, std::vector<std::pair<std::string, TensorPtrT<T>>> params)
    : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    for (const auto& [_, t] : params_) {
        const size_t sz = static_cast<size_t>(t->numel());
        if (cfg_.kind == OptimKind::kSgdMomentum) {
            velocity_.emplace_back(sz, T(0));
        } else {
            m_.emplace_back(sz, T(0));
            v_.emplace_back(sz, T(0));
            vmax_.emplace_back(sz, T(0));
        }
    }
}

template <typename T>
void OptimizerT<T>::step(double lr) {
    ++step_count_;
    for (size_t p = 0; p < params_.size(); ++p) {
        auto& t = params_[p].second;
        if (!t->requires_grad()) continue;
        T* theta = t->data();
        const T* grad = t->grad().data();
        const int64_t n = t->numel();
        if (cfg_.kind == OptimKind::kSgdMomentum) {
            T* vel = velocity_[p].data();
            for (int64_t i = 0; i < n; ++i) {
                const double g = static_cast<double>(grad[i]) + cfg_.weight_decay * theta[i];
                const double v = cfg_.momentum * vel[i] + g;
                vel[i] = static_cast<T>(v);
                theta[i] = static_cast<T>(theta[i] - lr * v);
            }
        } else {
            T* m = m_[p].data();
            T* v = v_[p].data();
            T* vm = vmax_[p].data();
            const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
            const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
            for (int64_t i = 0; i < n; ++i) {
                const double g = static_cast<double>(grad[i]) + cfg_.weight_decay * theta[i];
                const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                const double vmi = std::max(static_cast<double>(vm[i]), vi);
                vm[i] = static_cast<T>(vmi);
                theta[i] = static_cast<T>(theta[i] - lr * (mi / bc1) / (std::sqrt(vmi / bc2) + cfg_.adam_epsilon));
            }
        }
    }
}

template <typename T>
void OptimizerT<T>::save_state(Archive& ar, const std::string& prefix) const {
    auto add_vec = [&](const std::string& name, const std::vector<T>& v) {
        TensorT<T> t({std::max<int64_t>(1, static_cast<int64_t>(v.size()))},
                     v.empty() ? std::vector<T>{T(0)} : v);
        archive_add_tensor(ar, name, t);
    };
    TensorT<T> steps({1}, std::vector<T>{static_cast<T>(step_count_)});
    archive_add_tensor(ar, prefix + "/steps", steps);
    for (size_t p = 0; p < params_.size(); ++p) {
        const std::string base = prefix + "/" + params_[p].first;
        if (cfg_.kind == OptimKind::kSgdMomentum) {
            add_vec(base + ".velocity", velocity_[p]);
        } else {
            add_vec(base + ".m", m_[p]);
            add_vec(base + ".v", v_[p]);
            add_vec(base + ".vmax", vmax_[p]);
        }
    }
}

template <typename T>
void OptimizerT<T>::load_state(const Archive& ar, const std::string& prefix) {
    step_count_ = static_cast<int64_t>(archive_get_tensor<T>(ar, prefix + "/steps")->at(0));
    auto get_vec = [&](const std::string& name, std::vector<T>& out) {
        auto t = archive_get_tensor<T>(ar, name);
        if (t->values().size() != out.size())
            throw std::runtime_error("optimizer state " + name + " has wrong length");
        out = t->values();
    };
    for (size_t p = 0; p < params_.size(); ++p) {
        const std::string base = prefix + "/" + params_[p].first;
        if (cfg_.kind == OptimKind::kSgdMomentum) {
            get_vec(base + ".velocity", velocity_[p]);
        } else {
            get_vec(base + ".m", m_[p]);
            get_vec(base + ".v", v_[p]);
            get_vec(base + ".vmax", vmax_[p]);
        }
    }
}

std::vector<int64_t> class_of_pid_table(const DatasetIndex& index) {
    std::vector<int64_t> pids;
    for (const auto& r : index.records) pids.push_back(r.pid);
    std::sort(pids.begin(), pids.end());
    pids.erase(std::unique(pids.begin(), pids.end()), pids.end());
    return pids;
}

int64_t pid_to_class(const std::vector<int64_t>& table, int64_t pid) {
    const auto it = std::lower_bound(table.begin(), table.end(), pid);
    if (it == table.end() || *it != pid)
        throw std::invalid_argument("pid " + std::to_string(pid) + " not present in the training index");
    return it - table.begin();
}

IdentitySampler::IdentitySampler(const DatasetIndex& index, int64_t p, int64_t k) : p_(p), k_(k) {
    if (p < 2 || k < 2) throw std::invalid_argument("identity sampler: need P >= 2 and K >= 2");
    std::map<int64_t, std::vector<int64_t>> by_pid;
    for (size_t i = 0; i < index.records.size(); ++i)
        by_pid[index.records[i].pid].push_back(static_cast<int64_t>(i));
    for (auto& [pid, recs] : by_pid) {
        pids_.push_back(pid);
        records_by_pid_.push_back(std::move(recs));
    }
    if (static_cast<int64_t>(pids_.size()) < p)
        throw std::invalid_argument("identity sampler: fewer than P distinct identities");
}

std::vector<std::vector<int64_t>> IdentitySampler::epoch_batches(Rng& rng, SamplerStats* stats) const {
    std::vector<size_t> order(pids_.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);

    std::vector<std::vector<int64_t>> batches;
    size_t cursor = 0;
    while (order.size() - cursor >= static_cast<size_t>(p_)) {
        std::vector<int64_t> batch;
        for (int64_t pi = 0; pi < p_; ++pi) {
            const auto& recs = records_by_pid_[order[cursor++]];
            if (static_cast<int64_t>(recs.size()) >= k_) {
                std::vector<int64_t> pool(recs);
                for (int64_t j = 0; j < k_; ++j) {
                    const int64_t pick = rng.uniform_int(j, static_cast<int64_t>(pool.size()) - 1);
                    std::swap(pool[static_cast<size_t>(j)], pool[static_cast<size_t>(pick)]);
                    batch.push_back(pool[static_cast<size_t>(j)]);
                }
            } else {
                if (stats) ++stats->ids_with_replacement;
                for (int64_t j = 0; j < k_; ++j)
                    batch.push_back(recs[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(recs.size()) - 1))]);
            }
        }
        batches.push_back(std::move(batch));
    }
    if (stats) {
        stats->batches += static_cast<int64_t>(batches.size());
        stats->dropped_tail_ids += static_cast<int64_t>(order.size() - cursor);
    }
    return batches;
}

std::vector<std::vector<int64_t>> shuffled_batches(int64_t count, int64_t batch_size, Rng& rng) {
    if (batch_size < 2) throw std::invalid_argument("shuffled_batches: batch size must be >= 2");
    std::vector<int64_t> order(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) order[static_cast<size_t>(i)] = i;
    for (int64_t i = count; i > 1; --i)
        std::swap(order[static_cast<size_t>(i - 1)], order[static_cast<size_t>(rng.uniform_int(0, i - 1))]);
    std::vector<std::vector<int64_t>> batches;
    for (int64_t start = 0; start < count; start += batch_size) {
        const int64_t end = std::min(count, start + batch_size);
        if (end - start < 2) break;  // batch statistics need at least two samples
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 2) throw std::invalid_argument("train: batch_size must be >= 2");
    loss.validate();
    optim.validate();
    aug.validate();
}

std::string metrics_text(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    char buf[128];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof(buf), "%lld,%.8g,%.8g,%.6f\n", static_cast<long long>(e.epoch), e.lr, e.loss,
                      e.accuracy);
        os << buf;
    }
    return os.str();
}

namespace {

std::vector<EpochLog> parse_metrics(const std::string& text) {
    std::vector<EpochLog> log;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        EpochLog e;
        long long epoch = 0;
        if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf", &epoch, &e.lr, &e.loss, &e.accuracy) != 4)
            throw std::runtime_error("checkpoint: malformed metrics line: " + line);
        e.epoch = epoch;
        log.push_back(e);
    }
    return log;
}

void save_train_checkpoint(const std::string& path, const OSNetModelT<float>& model,
                           const OptimizerT<float>& optimizer, const PatchPool& pool,
                           const std::vector<EpochLog>& log, int64_t next_epoch) {
    Archive ar;
    model.save_checkpoint(ar);
    optimizer.save_state(ar, "train/optim");
    std::ostringstream state;
    state << "next_epoch=" << next_epoch << '\n' << "pool_size=" << pool.size() << '\n';
    archive_add_text(ar, "train/state", state.str());
    archive_add_text(ar, "train/metrics", metrics_text(log));
    for (int64_t i = 0; i < pool.size(); ++i)
        archive_add_tensor(ar, "train/pool/" + std::to_string(i), *pool.patch(i));
    ar.save(path);
}

}  // namespace

TrainResult train(OSNetModelT<float>& model, const DatasetIndex& train_index, const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.deterministic) engine::set_deterministic(true);
    const auto pid_table = class_of_pid_table(train_index);
    if (model.spec().num_classes != static_cast<int64_t>(pid_table.size()))
        throw std::invalid_argument("train: model has " + std::to_string(model.spec().num_classes) +
                                    " classes but the index has " + std::to_string(pid_table.size()) +
                                    " identities");
    if (train_index.records.empty()) throw std::invalid_argument("train: empty index");

    TrainResult result;
    ImageCache cache;
    PatchPool pool(cfg.aug.patch_pool_capacity);
    OptimizerT<float> optimizer(cfg.optim, model.registry().params);
    int64_t start_epoch = 0;

    if (!cfg.resume_from.empty()) {
        Archive ar = Archive::load(cfg.resume_from);
        model.load_checkpoint(ar);
        optimizer.load_state(ar, "train/optim");
        std::istringstream state(archive_get_text(ar, "train/state"));
        std::string line;
        int64_t pool_size = 0;
        while (std::getline(state, line)) {
            if (line.rfind("next_epoch=", 0) == 0) start_epoch = std::stoll(line.substr(11));
            if (line.rfind("pool_size=", 0) == 0) pool_size = std::stoll(line.substr(10));
        }
        for (int64_t i = 0; i < pool_size; ++i)
            pool.insert(archive_get_tensor<float>(ar, "train/pool/" + std::to_string(i)));
        result.log = parse_metrics(archive_get_text(ar, "train/metrics"));
    }

    const bool use_triplet = cfg.loss.triplet_weight > 0.0;
    std::unique_ptr<IdentitySampler> sampler;
    if (use_triplet) sampler = std::make_unique<IdentitySampler>(train_index, cfg.sampler_p, cfg.sampler_k);

    for (int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.optim.lr_at(epoch);
        Rng batch_rng(cfg.seed, {0x65706f6368ULL, static_cast<uint64_t>(epoch)});
        const auto batches = use_triplet
                                 ? sampler->epoch_batches(batch_rng, &result.sampler_stats)
                                 : shuffled_batches(static_cast<int64_t>(train_index.records.size()),
                                                    cfg.batch_size, batch_rng);
        double loss_sum = 0.0;
        int64_t correct = 0, seen = 0;
        for (size_t bi = 0; bi < batches.size(); ++bi) {
            Rng aug_rng(cfg.seed, {0x617567ULL, static_cast<uint64_t>(epoch), bi});
            std::vector<TensorPtrT<float>> samples;
            std::vector<int64_t> targets;
            for (int64_t rec_idx : batches[bi]) {
                const auto& rec = train_index.records[static_cast<size_t>(rec_idx)];
                auto img = cache.get(cfg.image_root, rec.path);
                if (img->dim(2) != model.spec().input_height || img->dim(3) != model.spec().input_width)
                    img = resize_bilinear(img, model.spec().input_height, model.spec().input_width);
                img = augment_sample(img, cfg.aug, cfg.aug.use_patch ? &pool : nullptr, aug_rng);
                samples.push_back(normalize_channels(img, cfg.aug.norm_mean, cfg.aug.norm_std));
                targets.push_back(pid_to_class(pid_table, rec.pid));
            }
            auto x = stack_batch(samples);

            TapeT<float> tape;
            CtxT<float> ctx{&tape, true};
            auto out = model.forward(ctx, x);
            auto loss = combined_loss(ctx, out.logits, out.features, targets, cfg.loss);
            const double loss_value = loss->at(0);
            if (!std::isfinite(loss_value)) {
                // abort; the checkpoint from the previous epoch stays on disk
                result.aborted_nan = true;
                result.epochs_run = epoch - start_epoch;
                return result;
            }
            for (int64_t i = 0; i < out.logits->dim(0); ++i) {
                const float* row = out.logits->data() + i * out.logits->dim(1);
                int64_t best = 0;
                for (int64_t j = 1; j < out.logits->dim(1); ++j)
                    if (row[j] > row[best]) best = j;
                correct += best == targets[static_cast<size_t>(i)];
                ++seen;
            }
            loss_sum += loss_value * static_cast<double>(batches[bi].size());

            model.zero_grad();
            tape.backward(loss);
            optimizer.step(lr);
        }
        EpochLog e;
        e.epoch = epoch;
        e.lr = lr;
        e.loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
        e.accuracy = seen > 0 ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
        result.log.push_back(e);
        ++result.epochs_run;
        if (!cfg.checkpoint_path.empty())
            save_train_checkpoint(cfg.checkpoint_path, model, optimizer, pool, result.log, epoch + 1);
        if (cfg.stop_at_accuracy > 0.0 && e.accuracy >= cfg.stop_at_accuracy) break;
    }
    return result;
}

#define OSNET_INSTANTIATE_TRAIN(T)                                                                       \
    template TensorPtrT<T> cross_entropy_ls<T>(const CtxT<T>&, const TensorPtrT<T>&,                     \
                                               const std::vector<int64_t>&, double);                    \
    template TensorPtrT<T> hard_triplet_loss<T>(const CtxT<T>&, const TensorPtrT<T>&,                   \
                                                const std::vector<int64_t>&, double);                   \
    template TensorPtrT<T> combined_loss<T>(const CtxT<T>&, const TensorPtrT<T>&, const TensorPtrT<T>&, \
                                            const std::vector<int64_t>&, const LossConfig&);            \
    template class OptimizerT<T>;

OSNET_INSTANTIATE_TRAIN(float)
OSNET_INSTANTIATE_TRAIN(double)

#undef OSNET_INSTANTIATE_TRAIN

}  // namespace osnet
