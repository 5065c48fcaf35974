#pragma once

#include <string>
#include <vector>

#include "osnet/arch.hpp"
#include "osnet/data.hpp"
#include "osnet/ops.hpp"
#include "osnet/serialize.hpp"

namespace osnet {

struct LossConfig {
    double label_smoothing = 0.1;  // epsilon
    double triplet_margin = 0.3;
    double triplet_weight = 0.0;  // lambda_t; 0 = classification only

    void validate() const;
};

// Softmax cross entropy against the smoothed target distribution
// q = (1-eps)*onehot + eps/K, averaged over the batch. Uniform logits give
// exactly ln K for any eps.
template <typename T>
TensorPtrT<T> cross_entropy_ls(const CtxT<T>& ctx, const TensorPtrT<T>& logits,
                               const std::vector<int64_t>& targets, double epsilon);

// Batch-hard triplet loss: per anchor the farthest same-pid sample (self
// excluded) and the nearest different-pid sample, Euclidean distances,
// mean(max(0, margin + d_ap - d_an)). Ties resolve to the first index in
// scan order.
template <typename T>
TensorPtrT<T> hard_triplet_loss(const CtxT<T>& ctx, const TensorPtrT<T>& features,
                                const std::vector<int64_t>& pids, double margin);

template <typename T>
TensorPtrT<T> combined_loss(const CtxT<T>& ctx, const TensorPtrT<T>& logits, const TensorPtrT<T>& features,
                            const std::vector<int64_t>& targets, const LossConfig& cfg);

enum class OptimKind { kSgdMomentum, kAmsgrad };
enum class ScheduleKind { kConstant, kStepDecay, kCosine };

struct OptimConfig {
    OptimKind kind = OptimKind::kSgdMomentum;
    double lr = 0.065;
    double momentum = 0.9;
    double beta1 = 0.9, beta2 = 0.999, adam_epsilon = 1e-8;
    double weight_decay = 5e-4;
    ScheduleKind schedule = ScheduleKind::kStepDecay;
    std::vector<int64_t> milestones{150, 225, 300};
    double decay_factor = 0.1;
    int64_t cosine_t_max = 350;

    void validate() const;
    double lr_at(int64_t epoch) const;
};

// Owns per-parameter state buffers (velocity for SGD momentum; first/second
// moment and the running max of the second moment for AMSGrad). Weight decay
// is added to the gradient. Frozen parameters are skipped.
template <typename T>
class OptimizerT {
public:
    OptimizerT(const OptimConfig& cfg, std::vector<std::pair<std::string, TensorPtrT<T>>> params);

    void step(double lr);
    int64_t steps() const { return step_count_; }

    void save_state(Archive& ar, const std::string& prefix) const;
    void load_state(const Archive& ar, const std::string& prefix);

private:
    OptimConfig cfg_;
    std::vector<std::pair<std::string, TensorPtrT<T>>> params_;
    std::vector<std::vector<T>> velocity_, m_, v_, vmax_;
    int64_t step_count_ = 0;
};

using Optimizer = OptimizerT<float>;

// Dense class indices for the distinct pids of an index, in ascending pid
// order.
std::vector<int64_t> class_of_pid_table(const DatasetIndex& index);
int64_t pid_to_class(const std::vector<int64_t>& table, int64_t pid);

struct SamplerStats {
    int64_t batches = 0;
    int64_t ids_with_replacement = 0;  // identities with fewer than K images
    int64_t dropped_tail_ids = 0;
};

// P distinct identities x K instances per batch; identities cycle without
// replacement within an epoch, identities with fewer than K images are
// sampled with replacement and flagged.
class IdentitySampler {
public:
    IdentitySampler(const DatasetIndex& index, int64_t p, int64_t k);
    std::vector<std::vector<int64_t>> epoch_batches(Rng& rng, SamplerStats* stats = nullptr) const;

private:
    int64_t p_, k_;
    std::vector<int64_t> pids_;                           // distinct pids
    std::vector<std::vector<int64_t>> records_by_pid_;    // record indices per pid
};

// Shuffled fixed-size batches of record indices; a trailing batch of fewer
// than two samples is dropped (batch statistics need at least two).
std::vector<std::vector<int64_t>> shuffled_batches(int64_t count, int64_t batch_size, Rng& rng);

struct EpochLog {
    int64_t epoch = 0;
    double lr = 0, loss = 0, accuracy = 0;
};

struct TrainConfig {
    int64_t epochs = 60;
    int64_t batch_size = 32;
    LossConfig loss;
    OptimConfig optim;
    AugmentPolicy aug;
    int64_t sampler_p = 8, sampler_k = 4;  // used when triplet_weight > 0
    uint64_t seed = 0;
    bool deterministic = false;
    std::string image_root;
    std::string checkpoint_path;  // written after every epoch when non-empty
    std::string resume_from;      // checkpoint to continue from
    double stop_at_accuracy = -1.0;  // early stop threshold, <=0 disables

    void validate() const;
};

struct TrainResult {
    std::vector<EpochLog> log;
    bool aborted_nan = false;
    int64_t epochs_run = 0;
    SamplerStats sampler_stats;
};

// One line per epoch: epoch,lr,loss,acc
std::string metrics_text(const std::vector<EpochLog>& log);

// Deterministic given (seed, config, data): every per-epoch random stream is
// derived from (seed, epoch, batch). The checkpoint written per epoch holds
// model, optimizer state, patch pool, and the metrics log, so resuming from
// it reproduces the continued run exactly.
TrainResult train(OSNetModelT<float>& model, const DatasetIndex& train_index, const TrainConfig& cfg);

}  // namespace osnet
