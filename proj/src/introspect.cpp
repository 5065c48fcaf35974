#include "osnet/introspect.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "osnet/rng.hpp"

namespace osnet {

template <typename T>
TensorPtrT<T> activation_map(const TensorPtrT<T>& feature_map) {
    if (!feature_map || feature_map->ndim() != 4)
        throw std::invalid_argument("activation_map: input must be (n,c,h,w)");
    const int64_t n = feature_map->dim(0), c = feature_map->dim(1);
    const int64_t h = feature_map->dim(2), w = feature_map->dim(3);
    auto out = make_tensor<T>({n, h, w});
    for (int64_t ni = 0; ni < n; ++ni) {
        T* m = out->data() + ni * h * w;
        for (int64_t ci = 0; ci < c; ++ci) {
            const T* f = feature_map->data() + (ni * c + ci) * h * w;
            for (int64_t i = 0; i < h * w; ++i) m[i] += std::abs(f[i]);
        }
        double norm = 0.0;
        for (int64_t i = 0; i < h * w; ++i) norm += static_cast<double>(m[i]) * m[i];
        if (norm > 0.0) {
            const double inv = 1.0 / std::sqrt(norm);
            for (int64_t i = 0; i < h * w; ++i) m[i] = static_cast<T>(m[i] * inv);
        }
    }
    return out;
}

std::vector<GatingRecord> collect_gating(OSNetModelT<float>& model, const DatasetIndex& index,
                                         const std::string& root, int64_t batch_size,
                                         const std::array<float, 3>& mean, const std::array<float, 3>& std) {
    std::vector<GatingRecord> records;
    ImageCache cache;
    CtxT<float> ctx;
    for (size_t start = 0; start < index.records.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(index.records.size(), start + static_cast<size_t>(batch_size));
        std::vector<TensorPtrT<float>> samples;
        for (size_t i = start; i < end; ++i) {
            auto img = cache.get(root, index.records[i].path);
            if (img->dim(2) != model.spec().input_height || img->dim(3) != model.spec().input_width)
                img = resize_bilinear(img, model.spec().input_height, model.spec().input_width);
            samples.push_back(normalize_channels(img, mean, std));
        }
        GateCaptureT<float> capture;
        model.forward(ctx, stack_batch(samples), &capture);
        if (capture.stream_gates.empty())
            throw std::runtime_error("collect_gating: the model's fusion variant has no gates");
        const int64_t n = static_cast<int64_t>(end - start);
        for (int64_t r = 0; r < n; ++r) {
            GatingRecord rec;
            rec.image = index.records[start + static_cast<size_t>(r)].path;
            for (const auto& gate : capture.stream_gates) {
                const int64_t gn = gate->dim(0), gc = gate->dim(1);
                const int64_t row = gn == 1 ? 0 : r;  // static gates broadcast over the batch
                const float* src = gate->data() + row * gc;
                rec.vector.insert(rec.vector.end(), src, src + gc);
            }
            records.push_back(std::move(rec));
        }
    }
    return records;
}

KMeansResult kmeans(const std::vector<float>& vectors, int64_t count, int64_t dim, int64_t k,
                    int64_t max_iters, uint64_t seed) {
    if (count < 1 || dim < 1) throw std::invalid_argument("kmeans: empty input");
    if (static_cast<int64_t>(vectors.size()) != count * dim)
        throw std::invalid_argument("kmeans: vector buffer size != count*dim");
    if (k < 1 || k > count) throw std::invalid_argument("kmeans: k must lie in [1, count]");

    KMeansResult res;
    res.k = k;
    res.dim = dim;
    res.centers.assign(static_cast<size_t>(k * dim), 0.0);
    res.assignments.assign(static_cast<size_t>(count), -1);

    // seeded random-point initialization: k distinct samples
    Rng rng(seed, {0x6b6d65616eULL});
    std::vector<int64_t> order(static_cast<size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    for (int64_t i = 0; i < k; ++i) {
        const int64_t j = rng.uniform_int(i, count - 1);
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        for (int64_t t = 0; t < dim; ++t)
            res.centers[static_cast<size_t>(i * dim + t)] = vectors[static_cast<size_t>(order[static_cast<size_t>(i)] * dim + t)];
    }

    auto dist2 = [&](int64_t point, int64_t center) {
        double acc = 0.0;
        for (int64_t t = 0; t < dim; ++t) {
            const double d = static_cast<double>(vectors[static_cast<size_t>(point * dim + t)]) -
                             res.centers[static_cast<size_t>(center * dim + t)];
            acc += d * d;
        }
        return acc;
    };

    for (int64_t iter = 0; iter < max_iters; ++iter) {
        // assignment step
        bool changed = false;
        double objective = 0.0;
        for (int64_t p = 0; p < count; ++p) {
            int64_t best = 0;
            double best_d = dist2(p, 0);
            for (int64_t c = 1; c < k; ++c) {
                const double d = dist2(p, c);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            objective += best_d;
            if (res.assignments[static_cast<size_t>(p)] != best) {
                res.assignments[static_cast<size_t>(p)] = best;
                changed = true;
            }
        }
        res.objective_per_iter.push_back(objective);
        res.iterations = iter + 1;
        if (!changed) break;

        // update step
        std::vector<double> sums(static_cast<size_t>(k * dim), 0.0);
        std::vector<int64_t> counts(static_cast<size_t>(k), 0);
        for (int64_t p = 0; p < count; ++p) {
            const int64_t c = res.assignments[static_cast<size_t>(p)];
            ++counts[static_cast<size_t>(c)];
            for (int64_t t = 0; t < dim; ++t)
                sums[static_cast<size_t>(c * dim + t)] += vectors[static_cast<size_t>(p * dim + t)];
        }
        for (int64_t c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] > 0) {
                for (int64_t t = 0; t < dim; ++t)
                    res.centers[static_cast<size_t>(c * dim + t)] =
                        sums[static_cast<size_t>(c * dim + t)] / static_cast<double>(counts[static_cast<size_t>(c)]);
            } else {
                // reseed an empty cluster from the point farthest from its center
                int64_t far_p = 0;
                double far_d = -1.0;
                for (int64_t p = 0; p < count; ++p) {
                    const double d = dist2(p, res.assignments[static_cast<size_t>(p)]);
                    if (d > far_d) {
                        far_d = d;
                        far_p = p;
                    }
                }
                for (int64_t t = 0; t < dim; ++t)
                    res.centers[static_cast<size_t>(c * dim + t)] = vectors[static_cast<size_t>(far_p * dim + t)];
            }
        }
    }
    return res;
}

std::vector<int64_t> nearest_to_center(const KMeansResult& result, const std::vector<float>& vectors,
                                       int64_t count, int64_t center, int64_t top_n) {
    if (center < 0 || center >= result.k) throw std::invalid_argument("nearest_to_center: bad center index");
    std::vector<std::pair<double, int64_t>> scored;
    scored.reserve(static_cast<size_t>(count));
    for (int64_t p = 0; p < count; ++p) {
        double acc = 0.0;
        for (int64_t t = 0; t < result.dim; ++t) {
            const double d = static_cast<double>(vectors[static_cast<size_t>(p * result.dim + t)]) -
                             result.centers[static_cast<size_t>(center * result.dim + t)];
            acc += d * d;
        }
        scored.emplace_back(acc, p);
    }
    std::stable_sort(scored.begin(), scored.end());
    std::vector<int64_t> ids;
    for (int64_t i = 0; i < std::min<int64_t>(top_n, count); ++i)
        ids.push_back(scored[static_cast<size_t>(i)].second);
    return ids;
}

template TensorPtrT<float> activation_map<float>(const TensorPtrT<float>&);
template TensorPtrT<double> activation_map<double>(const TensorPtrT<double>&);

}  // namespace osnet
