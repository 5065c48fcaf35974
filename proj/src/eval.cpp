#include "osnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "osnet/ops.hpp"

namespace osnet {

FeatureMatrix extract_features(OSNetModelT<float>& model, const DatasetIndex& index, const std::string& root,
                               int64_t batch_size, bool l2_normalize, const std::array<float, 3>& mean,
                               const std::array<float, 3>& std) {
    if (batch_size < 1) throw std::invalid_argument("extract_features: batch size must be >= 1");
    FeatureMatrix out;
    out.dim = model.spec().feature_dim;
    ImageCache cache;
    CtxT<float> ctx;  // eval mode, no tape
    for (size_t start = 0; start < index.records.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(index.records.size(), start + static_cast<size_t>(batch_size));
        std::vector<TensorPtrT<float>> samples;
        for (size_t i = start; i < end; ++i) {
            const auto& rec = index.records[i];
            auto img = cache.get(root, rec.path);
            if (img->dim(2) != model.spec().input_height || img->dim(3) != model.spec().input_width)
                img = resize_bilinear(img, model.spec().input_height, model.spec().input_width);
            samples.push_back(normalize_channels(img, mean, std));
            out.pids.push_back(rec.pid);
            out.camids.push_back(rec.camid);
        }
        auto features = model.forward(ctx, stack_batch(samples)).features;
        for (int64_t r = 0; r < features->dim(0); ++r) {
            const float* row = features->data() + r * out.dim;
            if (l2_normalize) {
                double norm = 0.0;
                for (int64_t j = 0; j < out.dim; ++j) norm += static_cast<double>(row[j]) * row[j];
                const double inv = norm > 0.0 ? 1.0 / std::sqrt(norm) : 0.0;
                for (int64_t j = 0; j < out.dim; ++j)
                    out.data.push_back(static_cast<float>(row[j] * inv));
            } else {
                out.data.insert(out.data.end(), row, row + out.dim);
            }
        }
        out.count += features->dim(0);
    }
    return out;
}

std::vector<double> pairwise_distances(const FeatureMatrix& query, const FeatureMatrix& gallery) {
    if (query.dim != gallery.dim) throw std::invalid_argument("pairwise_distances: dimension mismatch");
    std::vector<double> dist(static_cast<size_t>(query.count * gallery.count));
    for (int64_t i = 0; i < query.count; ++i)
        for (int64_t j = 0; j < gallery.count; ++j) {
            double acc = 0.0;
            const float* a = query.data.data() + i * query.dim;
            const float* b = gallery.data.data() + j * gallery.dim;
            for (int64_t t = 0; t < query.dim; ++t) {
                const double d = static_cast<double>(a[t]) - b[t];
                acc += d * d;
            }
            dist[static_cast<size_t>(i * gallery.count + j)] = std::sqrt(acc);
        }
    return dist;
}

EvalResult evaluate(const std::vector<double>& distmat, int64_t nq, int64_t ng,
                    const std::vector<int64_t>& q_pids, const std::vector<int64_t>& g_pids,
                    const std::vector<int64_t>& q_camids, const std::vector<int64_t>& g_camids,
                    int64_t max_rank) {
    if (nq < 1 || ng < 1) throw std::invalid_argument("evaluate: empty query or gallery");
    if (static_cast<int64_t>(distmat.size()) != nq * ng)
        throw std::invalid_argument("evaluate: distmat size != nq*ng");
    if (static_cast<int64_t>(q_pids.size()) != nq || static_cast<int64_t>(q_camids.size()) != nq ||
        static_cast<int64_t>(g_pids.size()) != ng || static_cast<int64_t>(g_camids.size()) != ng)
        throw std::invalid_argument("evaluate: id/camera arrays do not match the distance matrix");
    if (max_rank < 1) throw std::invalid_argument("evaluate: max_rank must be >= 1");
    for (double d : distmat)
        if (!std::isfinite(d)) throw std::invalid_argument("evaluate: distance matrix must be finite");

    EvalResult result;
    result.cmc.assign(static_cast<size_t>(max_rank), 0.0);
    double ap_sum = 0.0;
    std::vector<int64_t> order(static_cast<size_t>(ng));
    for (int64_t q = 0; q < nq; ++q) {
        const double* row = distmat.data() + q * ng;
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) { return row[a] < row[b]; });

        // cross-camera protocol: drop same-pid same-camera gallery entries
        int64_t rank = 0, num_correct = 0, first_correct = -1;
        double ap = 0.0;
        for (int64_t g : order) {
            if (g_pids[static_cast<size_t>(g)] == q_pids[static_cast<size_t>(q)] &&
                g_camids[static_cast<size_t>(g)] == q_camids[static_cast<size_t>(q)])
                continue;
            ++rank;
            if (g_pids[static_cast<size_t>(g)] == q_pids[static_cast<size_t>(q)]) {
                ++num_correct;
                if (first_correct < 0) first_correct = rank;
                ap += static_cast<double>(num_correct) / static_cast<double>(rank);
            }
        }
        if (num_correct == 0) {
            ++result.skipped_queries;  // no valid match for this query
            continue;
        }
        ++result.valid_queries;
        ap_sum += ap / static_cast<double>(num_correct);
        for (int64_t k = first_correct - 1; k < max_rank; ++k) result.cmc[static_cast<size_t>(k)] += 1.0;
    }
    if (result.valid_queries == 0)
        throw std::invalid_argument("evaluate: every query lacks a valid cross-camera match");
    for (auto& v : result.cmc) v /= static_cast<double>(result.valid_queries);
    result.map = ap_sum / static_cast<double>(result.valid_queries);
    result.protocol = "distance=euclidean; filter=exclude gallery entries sharing pid and camid with the query; "
                      "queries without a valid match skipped (" +
                      std::to_string(result.skipped_queries) + " skipped, " +
                      std::to_string(result.valid_queries) + " scored)";
    return result;
}

std::string eval_report_text(const EvalResult& r) {
    std::ostringstream os;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "Rank-1 %.3f mAP %.3f\n", r.cmc.empty() ? 0.0 : r.cmc[0], r.map);
    os << buf;
    for (size_t k = 0; k < r.cmc.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "Rank-%zu %.4f\n", k + 1, r.cmc[k]);
        os << buf;
    }
    os << "protocol: " << r.protocol << '\n';
    return os.str();
}

std::string eval_report_csv(const EvalResult& r) {
    std::ostringstream os;
    os << "metric,value\n";
    char buf[64];
    for (size_t k = 0; k < r.cmc.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "cmc%zu,%.10f\n", k + 1, r.cmc[k]);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "map,%.10f\n", r.map);
    os << buf;
    return os.str();
}

}  // namespace osnet
