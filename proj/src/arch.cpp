#include "osnet/arch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace osnet {

namespace {

int64_t conv_out(int64_t in, int64_t k, int64_t s, int64_t p) {
    const int64_t num = in + 2 * p - k;
    return num < 0 ? 0 : num / s + 1;  // plain division truncates toward zero
}

template <typename T>
void init_normal(const TensorPtrT<T>& t, double stddev, Rng& rng) {
    for (auto& v : t->values()) v = static_cast<T>(rng.normal(0.0, stddev));
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Milestone output shapes (c,h,w) for the ladder and the build-time
// geometry check; names match the architecture table rows.
std::vector<std::pair<std::string, Shape>> compute_ladder(const NetworkSpec& spec) {
    std::vector<std::pair<std::string, Shape>> rows;
    int64_t h = spec.input_height, w = spec.input_width;
    auto push = [&](const std::string& name, int64_t c, int64_t hh, int64_t ww) {
        if (hh < 1 || ww < 1)
            throw std::invalid_argument("build_model: input " + std::to_string(spec.input_height) + "x" +
                                        std::to_string(spec.input_width) + " too small, stage '" + name +
                                        "' would produce an empty " + std::to_string(hh) + "x" +
                                        std::to_string(ww) + " output");
        rows.emplace_back(name, Shape{c, hh, ww});
    };
    const int64_t c1 = spec.scaled(spec.stage_channels[0]);
    h = conv_out(h, 7, 2, 3);
    w = conv_out(w, 7, 2, 3);
    push("conv1.conv", c1, h, w);
    h = conv_out(h, 3, 2, 1);
    w = conv_out(w, 3, 2, 1);
    push("conv1.maxpool", c1, h, w);
    for (int s = 0; s < 3; ++s) {
        const int64_t cs = spec.scaled(spec.stage_channels[static_cast<size_t>(s) + 1]);
        push("conv" + std::to_string(s + 2), cs, h, w);
        if (s < 2) {
            push("transition" + std::to_string(s + 1) + ".conv", cs, h, w);
            h = conv_out(h, 2, 2, 0);
            w = conv_out(w, 2, 2, 0);
            push("transition" + std::to_string(s + 1) + ".pool", cs, h, w);
        }
    }
    const int64_t c5 = spec.scaled(spec.stage_channels[3]);
    push("conv5", c5, h, w);
    push("gap", c5, 1, 1);
    push("fc", spec.feature_dim, 1, 1);
    return rows;
}

}  // namespace

std::string to_string(Fusion f) {
    switch (f) {
        case Fusion::kUnifiedAg: return "unified_ag";
        case Fusion::kSeparateAgs: return "separate_ags";
        case Fusion::kStreamwiseAg: return "streamwise_ag";
        case Fusion::kStaticGate: return "static_gate";
        case Fusion::kAdd: return "add";
        case Fusion::kConcat: return "concat";
    }
    return "?";
}

std::string to_string(ConvKind k) { return k == ConvKind::kLite ? "lite" : "full"; }
std::string to_string(DepthMode m) { return m == DepthMode::kIncremental ? "incremental" : "uniform"; }

Fusion parse_fusion(const std::string& s) {
    for (auto f : {Fusion::kUnifiedAg, Fusion::kSeparateAgs, Fusion::kStreamwiseAg, Fusion::kStaticGate,
                   Fusion::kAdd, Fusion::kConcat})
        if (to_string(f) == s) return f;
    throw std::invalid_argument("unknown fusion variant: " + s);
}

ConvKind parse_conv_kind(const std::string& s) {
    if (s == "lite") return ConvKind::kLite;
    if (s == "full") return ConvKind::kFull;
    throw std::invalid_argument("unknown conv kind: " + s);
}

DepthMode parse_depth_mode(const std::string& s) {
    if (s == "incremental") return DepthMode::kIncremental;
    if (s == "uniform") return DepthMode::kUniform;
    throw std::invalid_argument("unknown depth mode: " + s);
}

int64_t receptive_field(int64_t t) {
    if (t < 1) throw std::invalid_argument("receptive_field: stream index must be >= 1");
    return 2 * t + 1;
}

void NetworkSpec::validate() const {
    if (streams < 1 || streams > 8) throw std::invalid_argument("spec: streams must be in 1..8");
    if (width_multiplier <= 0.0 || width_multiplier > 1.0)
        throw std::invalid_argument("spec: width_multiplier must be in (0,1]");
    for (auto b : blocks_per_stage)
        if (b < 1) throw std::invalid_argument("spec: blocks_per_stage entries must be >= 1");
    for (auto c : stage_channels)
        if (c < 1) throw std::invalid_argument("spec: stage_channels entries must be >= 1");
    if (uniform_depth < 1 || uniform_depth > 4) throw std::invalid_argument("spec: uniform_depth must be in 1..4");
    if (feature_dim < 1) throw std::invalid_argument("spec: feature_dim must be >= 1");
    if (gate_reduction < 1) throw std::invalid_argument("spec: gate_reduction must be >= 1");
    if (num_classes < 0) throw std::invalid_argument("spec: num_classes must be >= 0");
    if (input_height < 1 || input_width < 1) throw std::invalid_argument("spec: input size must be positive");
}

int64_t NetworkSpec::scaled(int64_t channels) const {
    return std::max<int64_t>(1, std::llround(width_multiplier * static_cast<double>(channels)));
}

int64_t NetworkSpec::mid_channels(int stage) const {
    return std::max<int64_t>(1, scaled(stage_channels[static_cast<size_t>(stage) + 1]) / 4);
}

std::string write_spec_manifest(const NetworkSpec& spec) {
    std::ostringstream os;
    os << "stage_channels=" << spec.stage_channels[0] << ',' << spec.stage_channels[1] << ','
       << spec.stage_channels[2] << ',' << spec.stage_channels[3] << '\n';
    os << "blocks_per_stage=" << spec.blocks_per_stage[0] << ',' << spec.blocks_per_stage[1] << ','
       << spec.blocks_per_stage[2] << '\n';
    os << "streams=" << spec.streams << '\n';
    os << "fusion=" << to_string(spec.fusion) << '\n';
    os << "depth_mode=" << to_string(spec.depth_mode) << '\n';
    os << "uniform_depth=" << spec.uniform_depth << '\n';
    os << "conv_kind=" << to_string(spec.conv_kind) << '\n';
    os << "width_multiplier=" << fmt_double(spec.width_multiplier) << '\n';
    os << "input_height=" << spec.input_height << '\n';
    os << "input_width=" << spec.input_width << '\n';
    os << "feature_dim=" << spec.feature_dim << '\n';
    os << "ibn=" << (spec.ibn ? 1 : 0) << '\n';
    os << "num_classes=" << spec.num_classes << '\n';
    os << "gate_reduction=" << spec.gate_reduction << '\n';
    return os.str();
}

NetworkSpec parse_spec_manifest(const std::string& text) {
    NetworkSpec spec;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    auto parse_list = [](const std::string& v, size_t expect, const std::string& key) {
        std::vector<int64_t> out;
        std::istringstream ls(v);
        std::string item;
        while (std::getline(ls, item, ',')) out.push_back(std::stoll(item));
        if (out.size() != expect)
            throw std::invalid_argument("spec manifest: " + key + " needs " + std::to_string(expect) + " values");
        return out;
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("spec manifest line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        try {
            if (key == "stage_channels") {
                auto v = parse_list(val, 4, key);
                std::copy(v.begin(), v.end(), spec.stage_channels.begin());
            } else if (key == "blocks_per_stage") {
                auto v = parse_list(val, 3, key);
                std::copy(v.begin(), v.end(), spec.blocks_per_stage.begin());
            } else if (key == "streams") {
                spec.streams = std::stoll(val);
            } else if (key == "fusion") {
                spec.fusion = parse_fusion(val);
            } else if (key == "depth_mode") {
                spec.depth_mode = parse_depth_mode(val);
            } else if (key == "uniform_depth") {
                spec.uniform_depth = std::stoll(val);
            } else if (key == "conv_kind") {
                spec.conv_kind = parse_conv_kind(val);
            } else if (key == "width_multiplier") {
                spec.width_multiplier = std::stod(val);
            } else if (key == "input_height") {
                spec.input_height = std::stoll(val);
            } else if (key == "input_width") {
                spec.input_width = std::stoll(val);
            } else if (key == "feature_dim") {
                spec.feature_dim = std::stoll(val);
            } else if (key == "ibn") {
                spec.ibn = std::stoll(val) != 0;
            } else if (key == "num_classes") {
                spec.num_classes = std::stoll(val);
            } else if (key == "gate_reduction") {
                spec.gate_reduction = std::stoll(val);
            } else if (key == "param" || key == "buffer") {
                // checkpoint manifests append these; ignore when parsing the spec
            } else {
                throw std::invalid_argument("unknown key '" + key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception& e) {
            throw std::invalid_argument("spec manifest line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    spec.validate();
    return spec;
}

NetworkSpec load_spec_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open spec file: " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return parse_spec_manifest(os.str());
}

template <typename T>
TensorPtrT<T> ParamRegistryT<T>::param(const std::string& name, Shape shape) {
    auto t = make_param<T>(std::move(shape));
    params.emplace_back(name, t);
    return t;
}

template <typename T>
TensorPtrT<T> ParamRegistryT<T>::buffer(const std::string& name, Shape shape, T fill) {
    auto t = make_tensor<T>(std::move(shape), fill);
    buffers.emplace_back(name, t);
    return t;
}

template <typename T>
TensorPtrT<T> ParamRegistryT<T>::find(const std::string& name) const {
    for (const auto& [n, t] : params)
        if (n == name) return t;
    for (const auto& [n, t] : buffers)
        if (n == name) return t;
    return nullptr;
}

template <typename T>
int64_t ParamRegistryT<T>::param_count() const {
    int64_t n = 0;
    for (const auto& [_, t] : params) n += t->numel();
    return n;
}

template <typename T>
ConvUnitT<T>::ConvUnitT(ParamRegistryT<T>& reg, const std::string& prefix, int64_t c_in, int64_t c_out,
                        int64_t k, int64_t stride, int64_t pad, Norm norm_kind, bool act_flag, Rng& rng,
                        int64_t groups) {
    conv.weight = reg.param(prefix + ".conv.weight", {c_out, c_in / groups, k, k});
    init_normal(conv.weight, std::sqrt(2.0 / static_cast<double>((c_in / groups) * k * k)), rng);
    conv.stride_h = conv.stride_w = stride;
    conv.pad_h = conv.pad_w = pad;
    conv.groups = groups;
    norm = norm_kind;
    if (norm == Norm::kBatch) {
        bn.scale = reg.param(prefix + ".bn.scale", {c_out});
        std::fill(bn.scale->values().begin(), bn.scale->values().end(), T(1));
        bn.shift = reg.param(prefix + ".bn.shift", {c_out});
        bn.running_mean = reg.buffer(prefix + ".bn.running_mean", {c_out}, T(0));
        bn.running_var = reg.buffer(prefix + ".bn.running_var", {c_out}, T(1));
    } else if (norm == Norm::kInstance) {
        in_scale = reg.param(prefix + ".in_scale", {c_out});
        std::fill(in_scale->values().begin(), in_scale->values().end(), T(1));
        in_shift = reg.param(prefix + ".in_shift", {c_out});
    }
    act = act_flag;
}

template <typename T>
TensorPtrT<T> ConvUnitT<T>::forward(const CtxT<T>& ctx, const TensorPtrT<T>& x) {
    auto y = conv2d(ctx, x, conv);
    if (norm == Norm::kBatch) y = batchnorm2d(ctx, y, bn);
    else if (norm == Norm::kInstance) y = instance_norm2d(ctx, y, in_scale, in_shift);
    if (act) y = relu(ctx, y);
    return y;
}

template <typename T>
void ConvUnitT<T>::walk(const std::string& prefix, int64_t c_in, int64_t& h, int64_t& w,
                        const LayerVisitor& fn) const {
    const int64_t c_out = conv.weight->dim(0), k = conv.weight->dim(2);
    h = conv_out(h, k, conv.stride_h, conv.pad_h);
    w = conv_out(w, k, conv.stride_w, conv.pad_w);
    LayerInfo ci{prefix + ".conv", "conv", conv.weight->numel() + (conv.bias ? conv.bias->numel() : 0),
                 (c_in / conv.groups) * k * k * c_out * h * w, 0, 0, c_out, h, w};
    fn(ci);
    if (norm != Norm::kNone) {
        LayerInfo ni{prefix + (norm == Norm::kBatch ? ".bn" : ".in"), "norm", 2 * c_out, 0, 0,
                     2 * c_out * h * w, c_out, h, w};
        fn(ni);
    }
    if (act) fn({prefix + ".relu", "act", 0, 0, 0, c_out * h * w, c_out, h, w});
}

template <typename T>
LiteConv3x3T<T>::LiteConv3x3T(ParamRegistryT<T>& reg, const std::string& prefix, int64_t c_in, int64_t c_out,
                              Rng& rng, bool use_norm_flag, bool act_flag) {
    pointwise.weight = reg.param(prefix + ".pw.weight", {c_out, c_in, 1, 1});
    init_normal(pointwise.weight, std::sqrt(2.0 / static_cast<double>(c_in)), rng);
    depthwise.weight = reg.param(prefix + ".dw.weight", {c_out, 1, 3, 3});
    init_normal(depthwise.weight, std::sqrt(2.0 / 9.0), rng);
    depthwise.groups = c_out;
    depthwise.pad_h = depthwise.pad_w = 1;
    use_norm = use_norm_flag;
    if (use_norm) {
        bn.scale = reg.param(prefix + ".bn.scale", {c_out});
        std::fill(bn.scale->values().begin(), bn.scale->values().end(), T(1));
        bn.shift = reg.param(prefix + ".bn.shift", {c_out});
        bn.running_mean = reg.buffer(prefix + ".bn.running_mean", {c_out}, T(0));
        bn.running_var = reg.buffer(prefix + ".bn.running_var", {c_out}, T(1));
    }
    act = act_flag;
}

template <typename T>
TensorPtrT<T> LiteConv3x3T<T>::forward(const CtxT<T>& ctx, const TensorPtrT<T>& x) {
    auto y = pointwise_conv(ctx, x, pointwise);
    y = depthwise_conv(ctx, y, depthwise);
    if (use_norm) y = batchnorm2d(ctx, y, bn);
    if (act) y = relu(ctx, y);
    return y;
}

template <typename T>
void LiteConv3x3T<T>::walk(const std::string& prefix, int64_t c_in, int64_t& h, int64_t& w,
                           const LayerVisitor& fn) const {
    const int64_t c_out = pointwise.weight->dim(0);
    fn({prefix + ".pw", "conv", pointwise.weight->numel(), c_in * c_out * h * w, 0, 0, c_out, h, w});
    fn({prefix + ".dw", "conv", depthwise.weight->numel(), 9 * c_out * h * w, 0, 0, c_out, h, w});
    if (use_norm) fn({prefix + ".bn", "norm", 2 * c_out, 0, 0, 2 * c_out * h * w, c_out, h, w});
    if (act) fn({prefix + ".relu", "act", 0, 0, 0, c_out * h * w, c_out, h, w});
}

template <typename T>
AggregationGateT<T>::AggregationGateT(ParamRegistryT<T>& reg, const std::string& prefix, int64_t c,
                                      int64_t reduction, Rng& rng, bool scalar_output) {
    channels = c;
    hidden = std::max<int64_t>(1, (c + reduction - 1) / reduction);
    out = scalar_output ? 1 : c;
    hidden_weight = reg.param(prefix + ".fc1.weight", {hidden, c});
    init_normal(hidden_weight, std::sqrt(2.0 / static_cast<double>(c)), rng);
    hidden_bias = reg.param(prefix + ".fc1.bias", {hidden});
    output_weight = reg.param(prefix + ".fc2.weight", {out, hidden});
    init_normal(output_weight, std::sqrt(2.0 / static_cast<double>(hidden)), rng);
    // zero output bias: gates start near 0.5
    output_bias = reg.param(prefix + ".fc2.bias", {out});
}

template <typename T>
TensorPtrT<T> AggregationGateT<T>::forward(const CtxT<T>& ctx, const TensorPtrT<T>& xt) const {
    if (xt->dim(1) != channels)
        throw std::invalid_argument("aggregation gate: input channels " + std::to_string(xt->dim(1)) +
                                    " != gate width " + std::to_string(channels));
    auto pooled = global_avg_pool(ctx, xt);
    auto flat = reshape(ctx, pooled, {xt->dim(0), channels});
    auto hid = relu(ctx, linear(ctx, flat, hidden_weight, hidden_bias));
    return sigmoid(ctx, linear(ctx, hid, output_weight, output_bias));
}

template <typename T>
long long AggregationGateT<T>::macs_per_sample() const {
    return static_cast<long long>(channels * hidden + hidden * out);
}

template <typename T>
OSBlockT<T>::OSBlockT(ParamRegistryT<T>& reg, const std::string& prefix, const NetworkSpec& spec, int64_t cin,
                      int64_t cmid, int64_t cout, Rng& rng, bool instance_norm) {
    c_in = cin;
    c_mid = cmid;
    c_out = cout;
    num_streams = spec.streams;
    fusion = spec.fusion;
    reduce = ConvUnitT<T>(reg, prefix + ".reduce", c_in, c_mid, 1, 1, 0, ConvUnitT<T>::Norm::kBatch, true, rng);
    for (int64_t t = 1; t <= num_streams; ++t) {
        const int64_t depth = spec.depth_mode == DepthMode::kIncremental ? t : spec.uniform_depth;
        std::vector<StreamLayer> layers;
        for (int64_t d = 0; d < depth; ++d) {
            const std::string lp = prefix + ".stream" + std::to_string(t) + ".layer" + std::to_string(d);
            if (spec.conv_kind == ConvKind::kLite)
                layers.emplace_back(LiteConv3x3T<T>(reg, lp, c_mid, c_mid, rng));
            else
                layers.emplace_back(
                    ConvUnitT<T>(reg, lp, c_mid, c_mid, 3, 1, 1, ConvUnitT<T>::Norm::kBatch, true, rng));
        }
        streams.push_back(std::move(layers));
    }
    switch (fusion) {
        case Fusion::kUnifiedAg:
            shared_gate = AggregationGateT<T>(reg, prefix + ".gate", c_mid, spec.gate_reduction, rng);
            break;
        case Fusion::kStreamwiseAg:
            shared_gate = AggregationGateT<T>(reg, prefix + ".gate", c_mid, spec.gate_reduction, rng, true);
            break;
        case Fusion::kSeparateAgs:
            for (int64_t t = 1; t <= num_streams; ++t)
                stream_gates.emplace_back(reg, prefix + ".gate" + std::to_string(t), c_mid, spec.gate_reduction,
                                          rng);
            break;
        case Fusion::kStaticGate:
            for (int64_t t = 1; t <= num_streams; ++t)
                static_logits.push_back(reg.param(prefix + ".static_gate" + std::to_string(t), {1, c_mid}));
            break;
        case Fusion::kConcat:
            concat_fuse.weight = reg.param(prefix + ".fuse.weight", {c_mid, num_streams * c_mid, 1, 1});
            init_normal(concat_fuse.weight, std::sqrt(2.0 / static_cast<double>(num_streams * c_mid)), rng);
            break;
        case Fusion::kAdd:
            break;
    }
    restore = ConvUnitT<T>(reg, prefix + ".restore", c_mid, c_out, 1, 1, 0, ConvUnitT<T>::Norm::kBatch, false, rng);
    if (c_in != c_out)
        proj = ConvUnitT<T>(reg, prefix + ".proj", c_in, c_out, 1, 1, 0, ConvUnitT<T>::Norm::kBatch, false, rng);
    if (instance_norm) {
        has_instance_norm = true;
        in_scale = reg.param(prefix + ".in_scale", {c_out});
        std::fill(in_scale->values().begin(), in_scale->values().end(), T(1));
        in_shift = reg.param(prefix + ".in_shift", {c_out});
    }
}

template <typename T>
TensorPtrT<T> OSBlockT<T>::run_stream(const CtxT<T>& ctx, size_t t, const TensorPtrT<T>& x) {
    TensorPtrT<T> y = x;
    for (auto& layer : streams[t])
        y = std::visit([&](auto& l) { return l.forward(ctx, y); }, layer);
    return y;
}

template <typename T>
TensorPtrT<T> OSBlockT<T>::forward(const CtxT<T>& ctx, const TensorPtrT<T>& x, GateCaptureT<T>* capture) {
    if (x->dim(1) != c_in)
        throw std::invalid_argument("osblock: input channels " + std::to_string(x->dim(1)) + " != expected " +
                                    std::to_string(c_in));
    auto reduced = reduce.forward(ctx, x);
    std::vector<TensorPtrT<T>> outs;
    outs.reserve(streams.size());
    for (size_t t = 0; t < streams.size(); ++t) outs.push_back(run_stream(ctx, t, reduced));

    std::vector<TensorPtrT<T>> gates;
    TensorPtrT<T> fused;
    auto accumulate = [&](const TensorPtrT<T>& v) { fused = fused ? add(ctx, fused, v) : v; };
    switch (fusion) {
        case Fusion::kUnifiedAg:
        case Fusion::kStreamwiseAg:
            for (auto& xt : outs) {
                auto g = shared_gate.forward(ctx, xt);
                gates.push_back(g);
                accumulate(broadcast_scale(ctx, xt, g));
            }
            break;
        case Fusion::kSeparateAgs:
            for (size_t t = 0; t < outs.size(); ++t) {
                auto g = stream_gates[t].forward(ctx, outs[t]);
                gates.push_back(g);
                accumulate(broadcast_scale(ctx, outs[t], g));
            }
            break;
        case Fusion::kStaticGate:
            for (size_t t = 0; t < outs.size(); ++t) {
                auto g = sigmoid(ctx, static_logits[t]);
                gates.push_back(g);
                accumulate(broadcast_scale(ctx, outs[t], g));
            }
            break;
        case Fusion::kAdd:
            for (auto& xt : outs) accumulate(xt);
            break;
        case Fusion::kConcat:
            fused = conv2d(ctx, concat_channels(ctx, outs), concat_fuse);
            break;
    }

    auto restored = restore.forward(ctx, fused);
    auto identity = proj ? proj->forward(ctx, x) : x;
    auto summed = add(ctx, restored, identity);
    if (has_instance_norm) summed = instance_norm2d(ctx, summed, in_scale, in_shift);
    auto out = relu(ctx, summed);
    if (capture) capture->stream_gates = std::move(gates);
    return out;
}

template <typename T>
void OSBlockT<T>::walk(const std::string& prefix, int64_t& h, int64_t& w, const LayerVisitor& fn) const {
    reduce.walk(prefix + ".reduce", c_in, h, w, fn);
    for (size_t t = 0; t < streams.size(); ++t) {
        int64_t sh = h, sw = w;  // streams preserve spatial size
        for (size_t d = 0; d < streams[t].size(); ++d) {
            const std::string lp =
                prefix + ".stream" + std::to_string(t + 1) + ".layer" + std::to_string(d);
            std::visit([&](const auto& l) { l.walk(lp, c_mid, sh, sw, fn); }, streams[t][d]);
        }
    }
    switch (fusion) {
        case Fusion::kUnifiedAg:
        case Fusion::kStreamwiseAg: {
            const auto& g = shared_gate;
            fn({prefix + ".gate", "gate",
                g.hidden_weight->numel() + g.hidden_bias->numel() + g.output_weight->numel() +
                    g.output_bias->numel(),
                0, num_streams * g.macs_per_sample(), 0, c_mid, h, w});
            break;
        }
        case Fusion::kSeparateAgs: {
            for (size_t t = 0; t < stream_gates.size(); ++t) {
                const auto& g = stream_gates[t];
                fn({prefix + ".gate" + std::to_string(t + 1), "gate",
                    g.hidden_weight->numel() + g.hidden_bias->numel() + g.output_weight->numel() +
                        g.output_bias->numel(),
                    0, g.macs_per_sample(), 0, c_mid, h, w});
            }
            break;
        }
        case Fusion::kStaticGate:
            for (size_t t = 0; t < static_logits.size(); ++t)
                fn({prefix + ".static_gate" + std::to_string(t + 1), "gate", static_logits[t]->numel(), 0, 0,
                    c_mid, c_mid, h, w});
            break;
        case Fusion::kConcat:
            fn({prefix + ".fuse", "conv", concat_fuse.weight->numel(),
                num_streams * c_mid * c_mid * h * w, 0, 0, c_mid, h, w});
            break;
        case Fusion::kAdd:
            break;
    }
    restore.walk(prefix + ".restore", c_mid, h, w, fn);
    if (proj) proj->walk(prefix + ".proj", c_in, h, w, fn);
    if (has_instance_norm)
        fn({prefix + ".in", "norm", 2 * c_out, 0, 0, 2 * c_out * h * w, c_out, h, w});
    fn({prefix + ".relu", "act", 0, 0, 0, c_out * h * w, c_out, h, w});
}

template <typename T>
OSNetModelT<T>::OSNetModelT(const NetworkSpec& spec, uint64_t seed) : spec_(spec) {
    spec_.validate();
    compute_ladder(spec_);  // throws when the input is too small for the stage ladder
    Rng rng(seed, {0x6d6f64656cULL});
    const int64_t c1 = spec_.scaled(spec_.stage_channels[0]);
    conv1_ = ConvUnitT<T>(reg_, "conv1", 3, c1, 7, 2, 3,
                          spec_.ibn ? ConvUnitT<T>::Norm::kInstance : ConvUnitT<T>::Norm::kBatch, true, rng);
    int64_t c_prev = c1;
    for (int s = 0; s < 3; ++s) {
        const int64_t cs = spec_.scaled(spec_.stage_channels[static_cast<size_t>(s) + 1]);
        const int64_t cm = spec_.mid_channels(s);
        std::vector<OSBlockT<T>> blocks;
        for (int64_t b = 0; b < spec_.blocks_per_stage[static_cast<size_t>(s)]; ++b) {
            const std::string prefix = "conv" + std::to_string(s + 2) + ".block" + std::to_string(b);
            blocks.emplace_back(reg_, prefix, spec_, b == 0 ? c_prev : cs, cm, cs, rng,
                                spec_.ibn && s == 0);
        }
        stages_.push_back(std::move(blocks));
        c_prev = cs;
        if (s < 2)
            transition_convs_.emplace_back(reg_, "transition" + std::to_string(s + 1), c_prev, c_prev, 1, 1, 0,
                                           ConvUnitT<T>::Norm::kBatch, true, rng);
    }
    conv5_ = ConvUnitT<T>(reg_, "conv5", c_prev, c_prev, 1, 1, 0, ConvUnitT<T>::Norm::kBatch, true, rng);
    fc_weight_ = reg_.param("fc.weight", {spec_.feature_dim, c_prev});
    init_normal(fc_weight_, std::sqrt(2.0 / static_cast<double>(c_prev)), rng);
    fc_bias_ = reg_.param("fc.bias", {spec_.feature_dim});
    if (spec_.num_classes > 0) {
        cls_weight_ = reg_.param("classifier.weight", {spec_.num_classes, spec_.feature_dim});
        init_normal(cls_weight_, std::sqrt(2.0 / static_cast<double>(spec_.feature_dim)), rng);
        cls_bias_ = reg_.param("classifier.bias", {spec_.num_classes});
    }
}

template <typename T>
typename OSNetModelT<T>::Output OSNetModelT<T>::forward(const CtxT<T>& ctx, const TensorPtrT<T>& x,
                                                        GateCaptureT<T>* capture) {
    if (!x || x->ndim() != 4 || x->dim(1) != 3 || x->dim(2) != spec_.input_height ||
        x->dim(3) != spec_.input_width)
        throw std::invalid_argument("model forward: input must be (n,3," + std::to_string(spec_.input_height) +
                                    "," + std::to_string(spec_.input_width) + "), got " +
                                    shape_str(x ? x->shape() : Shape{}));
    auto y = conv1_.forward(ctx, x);
    y = max_pool2d(ctx, y, 3, 2, 1);
    for (size_t s = 0; s < stages_.size(); ++s) {
        auto& blocks = stages_[s];
        for (size_t b = 0; b < blocks.size(); ++b) {
            const bool last_block = s + 1 == stages_.size() && b + 1 == blocks.size();
            y = blocks[b].forward(ctx, y, last_block ? capture : nullptr);
        }
        if (s < transition_convs_.size()) {
            y = transition_convs_[s].forward(ctx, y);
            y = avg_pool2d(ctx, y, 2, 2);
        }
    }
    y = conv5_.forward(ctx, y);
    if (capture) capture->last_feature_map = y;
    y = global_avg_pool(ctx, y);
    y = reshape(ctx, y, {y->dim(0), y->dim(1)});
    auto features = relu(ctx, linear(ctx, y, fc_weight_, fc_bias_));
    Output out;
    out.features = features;
    if (cls_weight_) out.logits = linear(ctx, features, cls_weight_, cls_bias_);
    return out;
}

template <typename T>
void OSNetModelT<T>::zero_grad() {
    for (auto& [_, t] : reg_.params) t->zero_grad();
}

template <typename T>
void OSNetModelT<T>::set_trainable(bool on) {
    for (auto& [_, t] : reg_.params) t->set_requires_grad(on);
}

template <typename T>
void OSNetModelT<T>::set_trainable(const std::string& prefix, bool on) {
    for (auto& [n, t] : reg_.params)
        if (n.rfind(prefix, 0) == 0) t->set_requires_grad(on);
}

template <typename T>
void OSNetModelT<T>::walk(const LayerVisitor& fn) const {
    int64_t h = spec_.input_height, w = spec_.input_width;
    conv1_.walk("conv1", 3, h, w, fn);
    h = conv_out(h, 3, 2, 1);
    w = conv_out(w, 3, 2, 1);
    const int64_t c1 = spec_.scaled(spec_.stage_channels[0]);
    fn({"conv1.maxpool", "pool", 0, 0, 0, 9 * c1 * h * w, c1, h, w});
    for (size_t s = 0; s < stages_.size(); ++s) {
        for (size_t b = 0; b < stages_[s].size(); ++b)
            stages_[s][b].walk("conv" + std::to_string(s + 2) + ".block" + std::to_string(b), h, w, fn);
        if (s < transition_convs_.size()) {
            const int64_t cs = stages_[s].back().c_out;
            transition_convs_[s].walk("transition" + std::to_string(s + 1), cs, h, w, fn);
            h = conv_out(h, 2, 2, 0);
            w = conv_out(w, 2, 2, 0);
            fn({"transition" + std::to_string(s + 1) + ".pool", "pool", 0, 0, 0, 4 * cs * h * w, cs, h, w});
        }
    }
    const int64_t c5in = stages_.back().back().c_out;
    conv5_.walk("conv5", c5in, h, w, fn);
    const int64_t c5 = conv5_.conv.weight->dim(0);
    fn({"gap", "pool", 0, 0, 0, c5 * h * w, c5, 1, 1});
    fn({"fc", "linear", fc_weight_->numel() + fc_bias_->numel(),
        static_cast<long long>(c5 * spec_.feature_dim), 0, 0, spec_.feature_dim, 1, 1});
    fn({"fc.relu", "act", 0, 0, 0, spec_.feature_dim, spec_.feature_dim, 1, 1});
    if (cls_weight_)
        fn({"classifier", "linear", cls_weight_->numel() + cls_bias_->numel(),
            static_cast<long long>(spec_.feature_dim * spec_.num_classes), 0, 0, spec_.num_classes, 1, 1});
}

template <typename T>
std::vector<std::pair<std::string, Shape>> OSNetModelT<T>::shape_ladder() const {
    return compute_ladder(spec_);
}

template <typename T>
void OSNetModelT<T>::save_checkpoint(Archive& ar) const {
    std::ostringstream manifest;
    manifest << write_spec_manifest(spec_);
    for (const auto& [n, _] : reg_.params) manifest << "param=" << n << '\n';
    for (const auto& [n, _] : reg_.buffers) manifest << "buffer=" << n << '\n';
    archive_add_text(ar, "manifest", manifest.str());
    for (const auto& [n, t] : reg_.params) archive_add_tensor(ar, "tensors/" + n, *t);
    for (const auto& [n, t] : reg_.buffers) archive_add_tensor(ar, "tensors/" + n, *t);
}

template <typename T>
void OSNetModelT<T>::load_checkpoint(const Archive& ar) {
    const std::string manifest = archive_get_text(ar, "manifest");
    const NetworkSpec loaded = parse_spec_manifest(manifest);
    if (write_spec_manifest(loaded) != write_spec_manifest(spec_))
        throw std::runtime_error("checkpoint spec does not match this model:\n" + write_spec_manifest(loaded));
    auto load_group = [&](const std::vector<std::pair<std::string, TensorPtrT<T>>>& group) {
        for (const auto& [n, t] : group) {
            auto stored = archive_get_tensor<T>(ar, "tensors/" + n);
            if (stored->shape() != t->shape())
                throw std::runtime_error("checkpoint tensor " + n + " has shape " + shape_str(stored->shape()) +
                                         ", expected " + shape_str(t->shape()));
            t->values() = stored->values();
        }
    };
    load_group(reg_.params);
    load_group(reg_.buffers);
}

template <typename T>
int64_t count_instance_norm_layers(const OSNetModelT<T>& model) {
    int64_t n = 0;
    for (const auto& [name, _] : model.registry().params) {
        const auto pos = name.rfind(".in_scale");
        if (pos != std::string::npos && pos + 9 == name.size()) ++n;
    }
    return n;
}

template <typename T>
void save_model_checkpoint(const OSNetModelT<T>& model, const std::string& path) {
    Archive ar;
    model.save_checkpoint(ar);
    ar.save(path);
}

template <typename T>
OSNetModelT<T> load_model_checkpoint(const std::string& path) {
    const Archive ar = Archive::load(path);
    const NetworkSpec spec = parse_spec_manifest(archive_get_text(ar, "manifest"));
    OSNetModelT<T> model(spec);
    model.load_checkpoint(ar);
    return model;
}

#define OSNET_INSTANTIATE_ARCH(T)                                             \
    template struct ParamRegistryT<T>;                                        \
    template struct ConvUnitT<T>;                                             \
    template struct LiteConv3x3T<T>;                                          \
    template struct AggregationGateT<T>;                                      \
    template struct OSBlockT<T>;                                              \
    template class OSNetModelT<T>;                                            \
    template int64_t count_instance_norm_layers<T>(const OSNetModelT<T>&);    \
    template void save_model_checkpoint<T>(const OSNetModelT<T>&, const std::string&); \
    template OSNetModelT<T> load_model_checkpoint<T>(const std::string&);

OSNET_INSTANTIATE_ARCH(float)
OSNET_INSTANTIATE_ARCH(double)

#undef OSNET_INSTANTIATE_ARCH

}  // namespace osnet
