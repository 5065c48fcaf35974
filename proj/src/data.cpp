#include "osnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace osnet {

DatasetIndex parse_index(const std::string& text, const std::string& split) {
    DatasetIndex index;
    index.split = split;
    std::unordered_set<std::string> seen;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos)
            throw std::invalid_argument("index line " + std::to_string(lineno) +
                                        ": expected 'path,pid,camid', got '" + line + "'");
        DatasetRecord rec;
        rec.path = line.substr(0, c1);
        try {
            size_t used = 0;
            const std::string pid_s = line.substr(c1 + 1, c2 - c1 - 1);
            const std::string cam_s = line.substr(c2 + 1);
            rec.pid = std::stoll(pid_s, &used);
            if (used != pid_s.size()) throw std::invalid_argument("trailing characters");
            rec.camid = std::stoll(cam_s, &used);
            if (used != cam_s.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw std::invalid_argument("index line " + std::to_string(lineno) + ": pid/camid must be integers");
        }
        if (rec.path.empty() || rec.pid < 0 || rec.camid < 0)
            throw std::invalid_argument("index line " + std::to_string(lineno) +
                                        ": path must be non-empty and ids non-negative");
        if (!seen.insert(rec.path).second)
            throw std::invalid_argument("index line " + std::to_string(lineno) + ": duplicate path '" +
                                        rec.path + "'");
        index.records.push_back(std::move(rec));
    }
    return index;
}

DatasetIndex read_index(const std::string& path, const std::string& split) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open index file: " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return parse_index(os.str(), split);
}

void write_index(const std::string& path, const DatasetIndex& index) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& r : index.records) os << r.path << ',' << r.pid << ',' << r.camid << '\n';
}

namespace {

// PPM token reader: skips whitespace and '#' comments.
std::string ppm_token(const std::vector<uint8_t>& bytes, size_t& pos) {
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(bytes[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') tok.push_back(static_cast<char>(bytes[pos++]));
    return tok;
}

}  // namespace

TensorPtrT<float> decode_ppm(const std::vector<uint8_t>& bytes) {
    size_t pos = 0;
    if (ppm_token(bytes, pos) != "P6") throw std::invalid_argument("ppm: not a binary P6 file");
    const std::string ws = ppm_token(bytes, pos), hs = ppm_token(bytes, pos), ms = ppm_token(bytes, pos);
    int64_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoll(ws);
        h = std::stoll(hs);
        maxval = std::stoll(ms);
    } catch (const std::exception&) {
        throw std::invalid_argument("ppm: malformed header");
    }
    if (w < 1 || h < 1) throw std::invalid_argument("ppm: bad dimensions");
    if (maxval != 255) throw std::invalid_argument("ppm: only maxval 255 supported, got " + ms);
    ++pos;  // single whitespace after maxval
    if (bytes.size() - pos < static_cast<size_t>(3 * w * h)) throw std::invalid_argument("ppm: truncated payload");
    auto img = make_tensor<float>({1, 3, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                img->at4(0, c, y, x) = static_cast<float>(bytes[pos + static_cast<size_t>((y * w + x) * 3 + c)]) / 255.0f;
    return img;
}

std::vector<uint8_t> encode_ppm(const TensorT<float>& image) {
    if (image.ndim() != 4 || image.dim(0) != 1 || image.dim(1) != 3)
        throw std::invalid_argument("encode_ppm: image must be (1,3,H,W), got " + shape_str(image.shape()));
    const int64_t h = image.dim(2), w = image.dim(3);
    std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<uint8_t> bytes(header.begin(), header.end());
    bytes.reserve(bytes.size() + static_cast<size_t>(3 * h * w));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                const float v = std::clamp(image.at4(0, c, y, x), 0.0f, 1.0f);
                bytes.push_back(static_cast<uint8_t>(std::lround(v * 255.0f)));
            }
    return bytes;
}

TensorPtrT<float> load_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_ppm(bytes);
}

void save_ppm(const std::string& path, const TensorT<float>& image) {
    const auto bytes = encode_ppm(image);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

TensorPtrT<float> resize_bilinear(const TensorPtrT<float>& x, int64_t out_h, int64_t out_w) {
    if (!x || x->ndim() != 4) throw std::invalid_argument("resize_bilinear: input must be 4-D");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: output size must be positive");
    const int64_t n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
    if (h == out_h && w == out_w) return make_tensor<float>(x->shape(), x->values());
    auto y = make_tensor<float>({n, c, out_h, out_w});
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci)
            for (int64_t oy = 0; oy < out_h; ++oy) {
                const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
                const int64_t y0 = static_cast<int64_t>(fy);
                const int64_t y1 = std::min(y0 + 1, h - 1);
                const double wy = fy - static_cast<double>(y0);
                for (int64_t ox = 0; ox < out_w; ++ox) {
                    const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
                    const int64_t x0 = static_cast<int64_t>(fx);
                    const int64_t x1 = std::min(x0 + 1, w - 1);
                    const double wx = fx - static_cast<double>(x0);
                    const double v = (1 - wy) * ((1 - wx) * x->at4(ni, ci, y0, x0) + wx * x->at4(ni, ci, y0, x1)) +
                                     wy * ((1 - wx) * x->at4(ni, ci, y1, x0) + wx * x->at4(ni, ci, y1, x1));
                    y->at4(ni, ci, oy, ox) = static_cast<float>(v);
                }
            }
    return y;
}

void AugmentPolicy::validate() const {
    auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob_ok(flip_prob) || !prob_ok(erase_prob) || !prob_ok(patch_apply_prob))
        throw std::invalid_argument("augment policy: probabilities must lie in [0,1]");
    if (crop_padding < 0) throw std::invalid_argument("augment policy: crop_padding must be >= 0");
    if (!(erase_area_lo > 0.0 && erase_area_hi < 1.0 && erase_area_lo <= erase_area_hi))
        throw std::invalid_argument("augment policy: erase area range must satisfy 0 < lo <= hi < 1");
    if (!(erase_aspect_lo > 0.0 && erase_aspect_lo <= erase_aspect_hi))
        throw std::invalid_argument("augment policy: erase aspect range invalid");
    if (patch_pool_capacity < 1) throw std::invalid_argument("augment policy: patch pool capacity must be >= 1");
}

TensorPtrT<float> random_flip(const TensorPtrT<float>& x, double prob, Rng& rng) {
    if (!rng.bernoulli(prob)) return x;
    const int64_t n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
    auto y = make_tensor<float>(x->shape());
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci)
            for (int64_t yi = 0; yi < h; ++yi)
                for (int64_t xi = 0; xi < w; ++xi) y->at4(ni, ci, yi, xi) = x->at4(ni, ci, yi, w - 1 - xi);
    return y;
}

TensorPtrT<float> random_crop(const TensorPtrT<float>& x, int64_t padding, Rng& rng) {
    if (padding == 0) return x;
    const int64_t n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
    const int64_t dy = rng.uniform_int(0, 2 * padding);
    const int64_t dx = rng.uniform_int(0, 2 * padding);
    auto y = make_tensor<float>(x->shape());
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci)
            for (int64_t yi = 0; yi < h; ++yi) {
                const int64_t sy = yi + dy - padding;
                if (sy < 0 || sy >= h) continue;  // zero padding
                for (int64_t xi = 0; xi < w; ++xi) {
                    const int64_t sx = xi + dx - padding;
                    if (sx < 0 || sx >= w) continue;
                    y->at4(ni, ci, yi, xi) = x->at4(ni, ci, sy, sx);
                }
            }
    return y;
}

TensorPtrT<float> random_erasing(const TensorPtrT<float>& x, const AugmentPolicy& policy, Rng& rng) {
    if (!rng.bernoulli(policy.erase_prob)) return x;
    const int64_t h = x->dim(2), w = x->dim(3);
    auto y = make_tensor<float>(x->shape(), x->values());
    for (int attempt = 0; attempt < 100; ++attempt) {
        const double area = rng.uniform(policy.erase_area_lo, policy.erase_area_hi) * static_cast<double>(h * w);
        const double aspect = rng.uniform(policy.erase_aspect_lo, policy.erase_aspect_hi);
        const int64_t eh = static_cast<int64_t>(std::lround(std::sqrt(area * aspect)));
        const int64_t ew = static_cast<int64_t>(std::lround(std::sqrt(area / aspect)));
        if (eh < 1 || ew < 1 || eh >= h || ew >= w) continue;
        const int64_t top = rng.uniform_int(0, h - eh);
        const int64_t left = rng.uniform_int(0, w - ew);
        for (int64_t ci = 0; ci < x->dim(1); ++ci)
            for (int64_t yi = top; yi < top + eh; ++yi)
                for (int64_t xi = left; xi < left + ew; ++xi)
                    y->at4(0, ci, yi, xi) = static_cast<float>(rng.uniform());
        return y;
    }
    return y;
}

void PatchPool::insert(TensorPtrT<float> patch) {
    patches_.push_back(std::move(patch));
    while (static_cast<int64_t>(patches_.size()) > capacity_) patches_.pop_front();
}

TensorPtrT<float> random_patch(const TensorPtrT<float>& x, PatchPool& pool, double apply_prob, Rng& rng) {
    const int64_t h = x->dim(2), w = x->dim(3);
    // extraction: modest area ratio, mild aspect distortion
    const double area = rng.uniform(0.05, 0.3) * static_cast<double>(h * w);
    const double aspect = rng.uniform(0.5, 2.0);
    const int64_t ph = std::clamp<int64_t>(std::llround(std::sqrt(area * aspect)), 1, h);
    const int64_t pw = std::clamp<int64_t>(std::llround(std::sqrt(area / aspect)), 1, w);
    const int64_t top = rng.uniform_int(0, h - ph);
    const int64_t left = rng.uniform_int(0, w - pw);
    auto patch = make_tensor<float>({1, 3, ph, pw});
    for (int64_t ci = 0; ci < 3; ++ci)
        for (int64_t yi = 0; yi < ph; ++yi)
            for (int64_t xi = 0; xi < pw; ++xi) patch->at4(0, ci, yi, xi) = x->at4(0, ci, top + yi, left + xi);

    // paste decision looks at the pool before this insertion (bootstrap:
    // an empty pool never pastes)
    const int64_t avail = pool.size();
    pool.insert(std::move(patch));
    if (avail == 0 || !rng.bernoulli(apply_prob)) return x;
    const auto& chosen = pool.patch(rng.uniform_int(0, avail - 1));
    const int64_t ch = chosen->dim(2), cw = chosen->dim(3);
    if (ch > h || cw > w) return x;
    const int64_t py = rng.uniform_int(0, h - ch);
    const int64_t px = rng.uniform_int(0, w - cw);
    auto y = make_tensor<float>(x->shape(), x->values());
    for (int64_t ci = 0; ci < 3; ++ci)
        for (int64_t yi = 0; yi < ch; ++yi)
            for (int64_t xi = 0; xi < cw; ++xi) y->at4(0, ci, py + yi, px + xi) = chosen->at4(0, ci, yi, xi);
    return y;
}

TensorPtrT<float> augment_sample(const TensorPtrT<float>& x, const AugmentPolicy& policy, PatchPool* pool,
                                 Rng& rng) {
    auto y = random_flip(x, policy.flip_prob, rng);
    y = random_crop(y, policy.crop_padding, rng);
    if (policy.use_patch && pool) y = random_patch(y, *pool, policy.patch_apply_prob, rng);
    y = random_erasing(y, policy, rng);
    return y;
}

TensorPtrT<float> normalize_channels(const TensorPtrT<float>& x, const std::array<float, 3>& mean,
                                     const std::array<float, 3>& std) {
    const int64_t n = x->dim(0), c = x->dim(1), plane = x->dim(2) * x->dim(3);
    if (c != 3) throw std::invalid_argument("normalize_channels: expected 3 channels");
    auto y = make_tensor<float>(x->shape());
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci) {
            const float* xs = x->data() + (ni * c + ci) * plane;
            float* ys = y->data() + (ni * c + ci) * plane;
            for (int64_t i = 0; i < plane; ++i)
                ys[i] = (xs[i] - mean[static_cast<size_t>(ci)]) / std[static_cast<size_t>(ci)];
        }
    return y;
}

TensorPtrT<float> stack_batch(const std::vector<TensorPtrT<float>>& samples) {
    if (samples.empty()) throw std::invalid_argument("stack_batch: no samples");
    const auto& s0 = samples[0]->shape();
    auto batch = make_tensor<float>({static_cast<int64_t>(samples.size()), s0[1], s0[2], s0[3]});
    const int64_t per = samples[0]->numel();
    for (size_t i = 0; i < samples.size(); ++i) {
        if (samples[i]->shape() != s0)
            throw std::invalid_argument("stack_batch: sample " + std::to_string(i) + " has shape " +
                                        shape_str(samples[i]->shape()) + ", expected " + shape_str(s0));
        std::copy(samples[i]->data(), samples[i]->data() + per,
                  batch->data() + static_cast<int64_t>(i) * per);
    }
    return batch;
}

const TensorPtrT<float>& ImageCache::get(const std::string& root, const std::string& path) {
    const std::string full = root.empty() ? path : root + "/" + path;
    auto it = cache_.find(full);
    if (it == cache_.end()) it = cache_.emplace(full, load_ppm(full)).first;
    return it->second;
}

SyntheticAttrs synthetic_attrs(int64_t pid) {
    // Adjacent identities share attributes: pids 2k/2k+1 share the global
    // hue, 2k+1/2k+2 share the logo position, textures repeat mod 5.
    SyntheticAttrs a;
    a.global_hue = (pid / 2) % 5;
    a.torso_texture = pid % 5;
    a.logo_position = ((pid + 1) / 2) % 5;
    return a;
}

TensorPtrT<float> render_synthetic_image(int64_t pid, int64_t image_index, int64_t camid, int64_t h, int64_t w,
                                         uint64_t seed) {
    static const float kHues[5][3] = {{0.35f, 0.45f, 0.55f},
                                      {0.55f, 0.35f, 0.35f},
                                      {0.35f, 0.55f, 0.35f},
                                      {0.55f, 0.50f, 0.30f},
                                      {0.45f, 0.35f, 0.55f}};
    const SyntheticAttrs attrs = synthetic_attrs(pid);
    Rng rng(seed, {0x73796e7468ULL, static_cast<uint64_t>(pid), static_cast<uint64_t>(image_index)});

    auto img = make_tensor<float>({1, 3, h, w});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < h * w; ++i)
            img->data()[c * h * w + i] = kHues[attrs.global_hue][c];

    const int64_t jmax = std::max<int64_t>(1, h / 32);
    const int64_t dy = rng.uniform_int(-jmax, jmax);
    const int64_t dx = rng.uniform_int(-jmax, jmax);
    auto paint = [&](int64_t y0, int64_t y1, int64_t x0, int64_t x1, float r, float g, float b) {
        for (int64_t yi = std::max<int64_t>(0, y0 + dy); yi < std::min(h, y1 + dy); ++yi)
            for (int64_t xi = std::max<int64_t>(0, x0 + dx); xi < std::min(w, x1 + dx); ++xi) {
                img->at4(0, 0, yi, xi) = r;
                img->at4(0, 1, yi, xi) = g;
                img->at4(0, 2, yi, xi) = b;
            }
    };

    // head (identical for every identity)
    paint(h / 8, h * 28 / 100, w * 2 / 5, w * 3 / 5, 0.80f, 0.65f, 0.50f);
    // torso
    const int64_t ty0 = h * 3 / 10, ty1 = h * 9 / 10, tx0 = w / 4, tx1 = w * 3 / 4;
    paint(ty0, ty1, tx0, tx1, 0.68f, 0.68f, 0.68f);

    // mid-scale attribute: torso texture
    for (int64_t yi = std::max<int64_t>(0, ty0 + dy); yi < std::min(h, ty1 + dy); ++yi)
        for (int64_t xi = std::max<int64_t>(0, tx0 + dx); xi < std::min(w, tx1 + dx); ++xi) {
            const int64_t r = yi - ty0 - dy, c = xi - tx0 - dx;
            bool dark = false;
            switch (attrs.torso_texture) {
                case 0: dark = (r / 3) % 2 == 0; break;          // horizontal stripes
                case 1: dark = (c / 3) % 2 == 0; break;          // vertical stripes
                case 2: dark = ((r / 3) + (c / 3)) % 2 == 0; break;  // checker
                case 3: dark = true; break;                      // solid dark
                default: dark = ((r + c) / 3) % 2 == 0; break;   // diagonal stripes
            }
            if (dark)
                for (int64_t ch = 0; ch < 3; ++ch) img->at4(0, ch, yi, xi) = 0.34f;
        }

    // small-scale attribute: logo glyph position inside the torso
    static const double kLogoPos[5][2] = {{0.12, 0.15}, {0.12, 0.65}, {0.42, 0.40}, {0.72, 0.15}, {0.72, 0.65}};
    const int64_t lsize = std::max<int64_t>(3, h / 10);
    const int64_t ly = ty0 + static_cast<int64_t>(kLogoPos[attrs.logo_position][0] * static_cast<double>(ty1 - ty0));
    const int64_t lx = tx0 + static_cast<int64_t>(kLogoPos[attrs.logo_position][1] * static_cast<double>(tx1 - tx0));
    paint(ly, ly + lsize, lx, lx + lsize, 0.92f, 0.12f, 0.12f);

    // nuisance: per-image brightness, slight camera tint, pixel noise
    const float brightness = static_cast<float>(rng.uniform(0.85, 1.15)) * (camid == 1 ? 0.96f : 1.0f);
    for (auto& v : img->values())
        v = std::clamp(v * brightness + static_cast<float>(rng.uniform(-0.03, 0.03)), 0.0f, 1.0f);
    return img;
}

SyntheticDataset make_synthetic_dataset(const std::string& out_dir, int64_t num_ids, int64_t images_per_id,
                                        int64_t height, int64_t width, uint64_t seed, int64_t eval_per_id) {
    if (num_ids < 1 || images_per_id < 1) throw std::invalid_argument("synthetic dataset: need >= 1 id and image");
    if (eval_per_id < 0 || eval_per_id >= images_per_id)
        throw std::invalid_argument("synthetic dataset: eval_per_id must be in [0, images_per_id)");
    std::filesystem::create_directories(out_dir);
    SyntheticDataset ds;
    ds.all.split = "all";
    ds.train.split = "train";
    ds.query.split = "query";
    ds.gallery.split = "gallery";
    for (int64_t pid = 0; pid < num_ids; ++pid)
        for (int64_t idx = 0; idx < images_per_id; ++idx) {
            const int64_t camid = idx % 2;
            const std::string name = "img_" + std::to_string(pid) + "_" + std::to_string(idx) + ".ppm";
            auto img = render_synthetic_image(pid, idx, camid, height, width, seed);
            save_ppm(out_dir + "/" + name, *img);
            const DatasetRecord rec{name, pid, camid};
            ds.all.records.push_back(rec);
            if (idx < images_per_id - eval_per_id)
                ds.train.records.push_back(rec);
            else if (camid == 0)
                ds.query.records.push_back(rec);
            else
                ds.gallery.records.push_back(rec);
        }
    write_index(out_dir + "/all.idx", ds.all);
    write_index(out_dir + "/train.idx", ds.train);
    write_index(out_dir + "/query.idx", ds.query);
    write_index(out_dir + "/gallery.idx", ds.gallery);
    return ds;
}

}  // namespace osnet
