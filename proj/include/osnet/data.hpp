#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "osnet/rng.hpp"
#include "osnet/tensor.hpp"

namespace osnet {

struct DatasetRecord {
    std::string path;
    int64_t pid = 0;
    int64_t camid = 0;
};

struct DatasetIndex {
    std::vector<DatasetRecord> records;
    std::string split;  // train | query | gallery
};

// One record per line: path,pid,camid. Blank lines and '#' comments are
// ignored; malformed lines and duplicate paths are rejected with the line
// number.
DatasetIndex parse_index(const std::string& text, const std::string& split = "train");
DatasetIndex read_index(const std::string& path, const std::string& split = "train");
void write_index(const std::string& path, const DatasetIndex& index);

// Binary P6, maxval 255 only. Values scaled to [0,1], shape (1,3,H,W).
TensorPtrT<float> decode_ppm(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_ppm(const TensorT<float>& image);
TensorPtrT<float> load_ppm(const std::string& path);
void save_ppm(const std::string& path, const TensorT<float>& image);

// Bilinear, half-pixel centers (align-corners false), clamped borders.
TensorPtrT<float> resize_bilinear(const TensorPtrT<float>& x, int64_t out_h, int64_t out_w);

struct AugmentPolicy {
    double flip_prob = 0.5;
    int64_t crop_padding = 4;  // zero padding before taking a random original-size window
    double erase_prob = 0.0;
    double erase_area_lo = 0.02, erase_area_hi = 0.4;
    double erase_aspect_lo = 0.3, erase_aspect_hi = 3.33;
    bool use_patch = false;
    int64_t patch_pool_capacity = 50;
    double patch_apply_prob = 0.5;
    std::array<float, 3> norm_mean{0.485f, 0.456f, 0.406f};  // ImageNet statistics
    std::array<float, 3> norm_std{0.229f, 0.224f, 0.225f};

    void validate() const;
};

// Each takes and returns a (1,3,H,W) tensor in [0,1].
TensorPtrT<float> random_flip(const TensorPtrT<float>& x, double prob, Rng& rng);
TensorPtrT<float> random_crop(const TensorPtrT<float>& x, int64_t padding, Rng& rng);
TensorPtrT<float> random_erasing(const TensorPtrT<float>& x, const AugmentPolicy& policy, Rng& rng);

// Bounded FIFO pool of image patches for the random-patch augmentation.
// Insertion is exclusive: one writer at a time.
class PatchPool {
public:
    explicit PatchPool(int64_t capacity) : capacity_(capacity) {}
    void insert(TensorPtrT<float> patch);
    int64_t size() const { return static_cast<int64_t>(patches_.size()); }
    int64_t capacity() const { return capacity_; }
    const TensorPtrT<float>& patch(int64_t i) const { return patches_[static_cast<size_t>(i)]; }

private:
    int64_t capacity_;
    std::deque<TensorPtrT<float>> patches_;
    friend TensorPtrT<float> random_patch(const TensorPtrT<float>&, PatchPool&, double, Rng&);
};

// Extracts a random patch of x into the pool, then with apply_prob pastes a
// randomly chosen pool patch at a random position.
TensorPtrT<float> random_patch(const TensorPtrT<float>& x, PatchPool& pool, double apply_prob, Rng& rng);

// Full training-time pipeline: flip -> crop -> patch -> erase (normalization
// is applied separately so tests can inspect [0,1] outputs).
TensorPtrT<float> augment_sample(const TensorPtrT<float>& x, const AugmentPolicy& policy, PatchPool* pool,
                                 Rng& rng);

TensorPtrT<float> normalize_channels(const TensorPtrT<float>& x, const std::array<float, 3>& mean,
                                     const std::array<float, 3>& std);

// Stacks (1,3,H,W) samples into one (n,3,H,W) batch.
TensorPtrT<float> stack_batch(const std::vector<TensorPtrT<float>>& samples);

// Loads every image of an index once; keyed by path.
class ImageCache {
public:
    const TensorPtrT<float>& get(const std::string& root, const std::string& path);

private:
    std::unordered_map<std::string, TensorPtrT<float>> cache_;
};

// Synthetic multi-scale person stand-ins. Each identity is a conjunction of
// a global attribute (background hue), a mid-scale attribute (torso
// texture), and a small-scale attribute (logo position); attribute values
// are reused across identities so no single scale suffices. Jitter,
// brightness and noise vary per image; camera ids alternate 0/1.
struct SyntheticAttrs {
    int64_t global_hue = 0;
    int64_t torso_texture = 0;
    int64_t logo_position = 0;
};

SyntheticAttrs synthetic_attrs(int64_t pid);
TensorPtrT<float> render_synthetic_image(int64_t pid, int64_t image_index, int64_t camid, int64_t h, int64_t w,
                                         uint64_t seed);

struct SyntheticDataset {
    DatasetIndex all, train, query, gallery;
};

// Writes PPM files plus all/train/query/gallery index files under out_dir.
// eval_per_id images per identity are held out and split evenly between
// query (camera 0) and gallery (camera 1).
SyntheticDataset make_synthetic_dataset(const std::string& out_dir, int64_t num_ids, int64_t images_per_id,
                                        int64_t height, int64_t width, uint64_t seed, int64_t eval_per_id = 8);

}  // namespace osnet
