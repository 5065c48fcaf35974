#pragma once

#include <string>
#include <vector>

#include "osnet/arch.hpp"
#include "osnet/data.hpp"

namespace osnet {

struct FeatureMatrix {
    int64_t count = 0, dim = 0;
    std::vector<float> data;  // row-major (count, dim)
    std::vector<int64_t> pids, camids;
};

// Eval-mode forward over an index in batches; rows optionally l2-normalized
// (cosine matching). Images are resized to the model input size when needed
// and normalized with the given statistics.
FeatureMatrix extract_features(OSNetModelT<float>& model, const DatasetIndex& index, const std::string& root,
                               int64_t batch_size = 32, bool l2_normalize = false,
                               const std::array<float, 3>& mean = {0.485f, 0.456f, 0.406f},
                               const std::array<float, 3>& std = {0.229f, 0.224f, 0.225f});

// Euclidean distance matrix, row-major (nq, ng), computed in double.
std::vector<double> pairwise_distances(const FeatureMatrix& query, const FeatureMatrix& gallery);

struct EvalResult {
    std::vector<double> cmc;  // cmc[k] = rank-(k+1) accuracy
    double map = 0.0;
    int64_t valid_queries = 0, skipped_queries = 0;
    std::string protocol;
};

// Cross-camera retrieval metrics. Per query the gallery entries sharing both
// pid and camid are excluded, CMC rank-k is the fraction of queries with a
// correct match in the filtered top k, and mAP averages the per-query
// average precision. Queries with no valid match are skipped and counted;
// an evaluation where every query is invalid is an error.
EvalResult evaluate(const std::vector<double>& distmat, int64_t nq, int64_t ng,
                    const std::vector<int64_t>& q_pids, const std::vector<int64_t>& g_pids,
                    const std::vector<int64_t>& q_camids, const std::vector<int64_t>& g_camids,
                    int64_t max_rank = 20);

std::string eval_report_text(const EvalResult& r);
std::string eval_report_csv(const EvalResult& r);

}  // namespace osnet
