#pragma once

#include <string>
#include <vector>

#include "osnet/arch.hpp"
#include "osnet/data.hpp"

namespace osnet {

// Attention map per sample: M = sum_c |F_c|, then M / ||M||_2 over the
// spatial grid. (n,c,h,w) -> (n,h,w).
template <typename T>
TensorPtrT<T> activation_map(const TensorPtrT<T>& feature_map);

struct GatingRecord {
    std::string image;
    std::vector<float> vector;  // concatenated per-stream gate vectors of the last bottleneck
};

// Eval-mode forward over the index capturing the last bottleneck's gate
// outputs; one record per image, entries in (0,1).
std::vector<GatingRecord> collect_gating(OSNetModelT<float>& model, const DatasetIndex& index,
                                         const std::string& root, int64_t batch_size = 32,
                                         const std::array<float, 3>& mean = {0.485f, 0.456f, 0.406f},
                                         const std::array<float, 3>& std = {0.229f, 0.224f, 0.225f});

struct KMeansResult {
    int64_t k = 0, dim = 0;
    std::vector<int64_t> assignments;       // per vector
    std::vector<double> centers;            // row-major (k, dim)
    std::vector<double> objective_per_iter; // within-cluster sum of squares
    int64_t iterations = 0;
};

// Lloyd iterations from seeded random-point initialization, Euclidean
// metric; an empty cluster is reseeded from the point farthest from its
// assigned center. Stops when assignments stabilize or max_iters runs out.
KMeansResult kmeans(const std::vector<float>& vectors, int64_t count, int64_t dim, int64_t k,
                    int64_t max_iters, uint64_t seed);

// Indices of the top_n vectors closest to the given cluster center.
std::vector<int64_t> nearest_to_center(const KMeansResult& result, const std::vector<float>& vectors,
                                       int64_t count, int64_t center, int64_t top_n);

}  // namespace osnet
