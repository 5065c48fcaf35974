#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "osnet/ops.hpp"
#include "osnet/rng.hpp"
#include "osnet/serialize.hpp"
#include "osnet/tape.hpp"
#include "osnet/tensor.hpp"

namespace osnet {

// How the multi-stream residual is fused back into one map.
enum class Fusion {
    kUnifiedAg,    // one channel-wise gate shared by all streams
    kSeparateAgs,  // an independent channel-wise gate per stream
    kStreamwiseAg, // shared gate with a scalar output per stream application
    kStaticGate,   // learned input-independent per-channel logits per stream
    kAdd,          // plain sum
    kConcat,       // channel concat + 1x1 back to the stream width
};

enum class ConvKind { kLite, kFull };
enum class DepthMode { kIncremental, kUniform };

std::string to_string(Fusion f);
std::string to_string(ConvKind k);
std::string to_string(DepthMode m);
Fusion parse_fusion(const std::string& s);
ConvKind parse_conv_kind(const std::string& s);
DepthMode parse_depth_mode(const std::string& s);

// Receptive field of a stream stacking t 3x3 layers: (2t+1).
int64_t receptive_field(int64_t t);

// Declarative description of one network. The width multiplier scales every
// channel width except the final feature layer, which stays at feature_dim.
struct NetworkSpec {
    std::array<int64_t, 4> stage_channels{64, 256, 384, 512};
    std::array<int64_t, 3> blocks_per_stage{2, 2, 2};
    int64_t streams = 4;  // T
    Fusion fusion = Fusion::kUnifiedAg;
    DepthMode depth_mode = DepthMode::kIncremental;
    int64_t uniform_depth = 1;
    ConvKind conv_kind = ConvKind::kLite;
    double width_multiplier = 1.0;
    int64_t input_height = 256;
    int64_t input_width = 128;
    int64_t feature_dim = 512;
    bool ibn = false;
    int64_t num_classes = 0;  // 0 = no classifier head
    int64_t gate_reduction = 16;

    void validate() const;
    int64_t scaled(int64_t channels) const;  // round(beta*c), floor 1
    int64_t mid_channels(int stage) const;   // scaled stage width / 4, floor 1
};

// key=value manifest, one field per line, '#' comments allowed.
std::string write_spec_manifest(const NetworkSpec& spec);
NetworkSpec parse_spec_manifest(const std::string& text);
NetworkSpec load_spec_file(const std::string& path);

// Named parameter/buffer store; order is construction order and is the
// checkpoint order.
template <typename T>
struct ParamRegistryT {
    std::vector<std::pair<std::string, TensorPtrT<T>>> params;
    std::vector<std::pair<std::string, TensorPtrT<T>>> buffers;

    TensorPtrT<T> param(const std::string& name, Shape shape);
    TensorPtrT<T> buffer(const std::string& name, Shape shape, T fill);
    TensorPtrT<T> find(const std::string& name) const;  // params then buffers, null if absent
    int64_t param_count() const;
};

// One layer visit during a static model walk: learnable size, conv/fc
// multiply-adds per sample, gate-MLP mult-adds, and auxiliary (pool, norm,
// activation) work, with the output shape (c, h, w) after the layer.
struct LayerInfo {
    std::string name;
    std::string kind;  // conv | linear | gate | pool | norm | act
    long long params = 0;
    long long macs = 0;
    long long gate_macs = 0;
    long long aux_ops = 0;
    int64_t out_c = 0, out_h = 0, out_w = 0;
};

using LayerVisitor = std::function<void(const LayerInfo&)>;

// conv + optional norm (batch or instance) + optional ReLU
template <typename T>
struct ConvUnitT {
    ConvKernelT<T> conv;
    enum class Norm { kNone, kBatch, kInstance } norm = Norm::kBatch;
    BatchNorm2dT<T> bn;
    TensorPtrT<T> in_scale, in_shift;
    bool act = true;

    ConvUnitT() = default;
    ConvUnitT(ParamRegistryT<T>& reg, const std::string& prefix, int64_t c_in, int64_t c_out, int64_t k,
              int64_t stride, int64_t pad, Norm norm, bool act, Rng& rng, int64_t groups = 1);
    TensorPtrT<T> forward(const CtxT<T>& ctx, const TensorPtrT<T>& x);
    void walk(const std::string& prefix, int64_t c_in, int64_t& h, int64_t& w, const LayerVisitor& fn) const;
};

// pointwise 1x1 then depthwise 3x3 (pad 1, stride 1), norm and ReLU after
// the depthwise stage. Spatial size is preserved.
template <typename T>
struct LiteConv3x3T {
    ConvKernelT<T> pointwise;
    ConvKernelT<T> depthwise;
    BatchNorm2dT<T> bn;
    bool use_norm = true;
    bool act = true;

    LiteConv3x3T() = default;
    LiteConv3x3T(ParamRegistryT<T>& reg, const std::string& prefix, int64_t c_in, int64_t c_out, Rng& rng,
                 bool use_norm = true, bool act = true);
    TensorPtrT<T> forward(const CtxT<T>& ctx, const TensorPtrT<T>& x);
    void walk(const std::string& prefix, int64_t c_in, int64_t& h, int64_t& w, const LayerVisitor& fn) const;
};

// GAP -> hidden (ReLU) -> output (sigmoid). Channel-wise head by default;
// scalar head for the stream-wise variant. Output lies strictly in (0,1).
template <typename T>
struct AggregationGateT {
    TensorPtrT<T> hidden_weight, hidden_bias;  // (hidden, c), (hidden)
    TensorPtrT<T> output_weight, output_bias;  // (out, hidden), (out)
    int64_t channels = 0, hidden = 0, out = 0;

    AggregationGateT() = default;
    AggregationGateT(ParamRegistryT<T>& reg, const std::string& prefix, int64_t c, int64_t reduction, Rng& rng,
                     bool scalar_output = false);
    // returns (n, out) gate weights
    TensorPtrT<T> forward(const CtxT<T>& ctx, const TensorPtrT<T>& xt) const;
    long long macs_per_sample() const;
};

template <typename T>
struct GateCaptureT {
    // post-sigmoid gate tensors of the captured block, one per stream;
    // shapes (n,c), (n,1) or (1,c) depending on the fusion variant
    std::vector<TensorPtrT<T>> stream_gates;
    // last convolutional feature map (conv5 output), for activation maps
    TensorPtrT<T> last_feature_map;
};

// Omni-scale residual bottleneck: 1x1 reduce, T streams of stacked 3x3
// layers (stream t has depth t), gated fusion, 1x1 restore, identity
// shortcut (1x1-projected when widths differ), then ReLU. With ibn an
// instance norm sits between the addition and the final ReLU.
template <typename T>
struct OSBlockT {
    using StreamLayer = std::variant<LiteConv3x3T<T>, ConvUnitT<T>>;

    int64_t c_in = 0, c_mid = 0, c_out = 0;
    int64_t num_streams = 1;
    Fusion fusion = Fusion::kUnifiedAg;

    ConvUnitT<T> reduce;
    std::vector<std::vector<StreamLayer>> streams;
    AggregationGateT<T> shared_gate;                 // unified / stream-wise
    std::vector<AggregationGateT<T>> stream_gates;   // separate AGs
    std::vector<TensorPtrT<T>> static_logits;        // static gates, (1, c_mid) each
    ConvKernelT<T> concat_fuse;                      // bare 1x1, concat variant
    ConvUnitT<T> restore;
    std::optional<ConvUnitT<T>> proj;
    TensorPtrT<T> in_scale, in_shift;  // post-addition instance norm (ibn)
    bool has_instance_norm = false;

    OSBlockT() = default;
    OSBlockT(ParamRegistryT<T>& reg, const std::string& prefix, const NetworkSpec& spec, int64_t c_in,
             int64_t c_mid, int64_t c_out, Rng& rng, bool instance_norm = false);
    TensorPtrT<T> forward(const CtxT<T>& ctx, const TensorPtrT<T>& x, GateCaptureT<T>* capture = nullptr);
    void walk(const std::string& prefix, int64_t& h, int64_t& w, const LayerVisitor& fn) const;

private:
    TensorPtrT<T> run_stream(const CtxT<T>& ctx, size_t t, const TensorPtrT<T>& x);
};

template <typename T>
class OSNetModelT {
public:
    struct Output {
        TensorPtrT<T> features;  // (n, feature_dim)
        TensorPtrT<T> logits;    // (n, num_classes) or null
    };

    OSNetModelT(const NetworkSpec& spec, uint64_t seed = 0);

    const NetworkSpec& spec() const { return spec_; }
    ParamRegistryT<T>& registry() { return reg_; }
    const ParamRegistryT<T>& registry() const { return reg_; }

    // Input must be (n, 3, spec.input_height, spec.input_width).
    Output forward(const CtxT<T>& ctx, const TensorPtrT<T>& x, GateCaptureT<T>* capture = nullptr);

    void zero_grad();
    void set_trainable(bool on);
    // Freeze/unfreeze parameters whose name starts with prefix.
    void set_trainable(const std::string& prefix, bool on);

    // Static traversal in forward order; per-sample costs.
    void walk(const LayerVisitor& fn) const;
    // Named milestone output shapes, one per architecture table row.
    std::vector<std::pair<std::string, Shape>> shape_ladder() const;

    void save_checkpoint(Archive& ar) const;
    void load_checkpoint(const Archive& ar);

private:
    NetworkSpec spec_;
    ParamRegistryT<T> reg_;
    ConvUnitT<T> conv1_;
    std::vector<std::vector<OSBlockT<T>>> stages_;
    std::vector<ConvUnitT<T>> transition_convs_;
    ConvUnitT<T> conv5_;
    TensorPtrT<T> fc_weight_, fc_bias_;
    TensorPtrT<T> cls_weight_, cls_bias_;
};

using OSNetModel = OSNetModelT<float>;

// Counts ".in_scale" entries; ibn=false models have none.
template <typename T>
int64_t count_instance_norm_layers(const OSNetModelT<T>& model);

template <typename T>
void save_model_checkpoint(const OSNetModelT<T>& model, const std::string& path);

template <typename T>
OSNetModelT<T> load_model_checkpoint(const std::string& path);

}  // namespace osnet
