#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "osnet/tensor.hpp"

namespace osnet {

template <typename T>
class OSNetModelT;

// Static cost accounting for one built model. Headline params count every
// learnable tensor of the feature extractor; the task classifier is kept
// separate. Headline mult-adds count conv and fc multiply-accumulates only;
// gate MLP mult-adds and pooling/normalization/activation work are reported
// in their own buckets. The convention string restates this in every report.
struct CostReport {
    long long params_total = 0;
    long long params_classifier = 0;
    long long multadds_total = 0;
    long long multadds_gate = 0;
    long long multadds_excluded = 0;
    std::vector<std::pair<std::string, long long>> params_by_layer;
    std::vector<std::pair<std::string, long long>> multadds_by_layer;
    std::string convention;
};

struct GradCheckOptions {
    double step = 1e-4;
    double tolerance = 1e-4;
    size_t sample = 0;  // 0 = check every element
    uint64_t seed = 0;
    size_t max_offenders = 10;
};

struct GradCheckIssue {
    std::string name;
    int64_t index = 0;
    double analytic = 0, numeric = 0, rel_err = 0;
};

struct GradCheckReport {
    bool pass = false;
    bool empty = false;  // nothing with requires_grad: trivially passing, warn
    double max_rel_err = 0;
    std::string worst_name;
    size_t checked = 0;
    std::vector<GradCheckIssue> offenders;  // entries exceeding tolerance, worst first
};

// Central finite differences against already-populated analytic gradients.
// loss_fn must re-evaluate the full forward pass from current parameter
// values. Relative error uses denominator max(|a|,|b|,1e-8).
template <typename T>
GradCheckReport finite_diff_compare(const std::function<double()>& loss_fn,
                                    const std::vector<std::pair<std::string, TensorPtrT<T>>>& params,
                                    const GradCheckOptions& opt);

std::string gradcheck_summary(const GradCheckReport& report);

// Exact integer counts from a static walk of the built model.
template <typename T>
CostReport count_params(const OSNetModelT<T>& model);

// Mult-adds are per sample at the spec's input size.
template <typename T>
CostReport count_multadds(const OSNetModelT<T>& model);

struct NetworkSpec;

struct ShrinkCell {
    double beta = 1.0, gamma = 1.0;
    int64_t input_height = 0, input_width = 0;
    long long params = 0, multadds = 0;
};

// Cost table over width and resolution multipliers. gamma scales the base
// spec's input size (rounded); params depend on beta only.
std::vector<ShrinkCell> shrink_grid(const NetworkSpec& base, const std::vector<double>& betas,
                                    const std::vector<double>& gammas);

// Finite-difference check of a full model: probe loss is a fixed random
// weighting of the features, forward runs in training mode.
template <typename T>
GradCheckReport gradcheck_model(OSNetModelT<T>& model, int64_t batch, const GradCheckOptions& opt);

// Per-op finite-difference suite on random small cases (double precision).
std::vector<std::pair<std::string, GradCheckReport>> gradcheck_ops(uint64_t seed, double tolerance = 1e-4);

std::string cost_table_text(const CostReport& params, const CostReport& multadds);
std::string cost_table_csv(const CostReport& params, const CostReport& multadds);
std::string shrink_grid_text(const std::vector<ShrinkCell>& grid);

}  // namespace osnet
