#include "osnet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "osnet/arch.hpp"
#include "osnet/ops.hpp"
#include "osnet/rng.hpp"

namespace osnet {

namespace {

constexpr const char* kConvention =
    "params: every learnable feature-extractor tensor (conv, norm affine, gate, fc); "
    "classifier head excluded from the total and reported separately. "
    "mult-adds: conv and fc multiply-accumulates per sample at the spec input size; "
    "gate-MLP mult-adds and pool/norm/activation element work reported in separate buckets.";

// Grouping key for by-layer tables: stage blocks aggregate to
// "convN.blockM", everything else to its first name component.
std::string layer_group(const std::string& name) {
    const auto dot = name.find('.');
    const std::string head = dot == std::string::npos ? name : name.substr(0, dot);
    if (head == "conv2" || head == "conv3" || head == "conv4") {
        const auto dot2 = name.find('.', dot + 1);
        return dot2 == std::string::npos ? name : name.substr(0, dot2);
    }
    return head;
}

template <typename T>
void accumulate_costs(const OSNetModelT<T>& model, CostReport& rep) {
    std::vector<std::string> order;
    std::map<std::string, long long> params, macs;
    model.walk([&](const LayerInfo& li) {
        const std::string group = layer_group(li.name);
        if (group == "classifier") {
            rep.params_classifier += li.params;
            return;
        }
        if (params.find(group) == params.end()) order.push_back(group);
        params[group] += li.params;
        macs[group] += li.macs;
        rep.params_total += li.params;
        rep.multadds_total += li.macs;
        rep.multadds_gate += li.gate_macs;
        rep.multadds_excluded += li.aux_ops;
    });
    for (const auto& g : order) {
        rep.params_by_layer.emplace_back(g, params[g]);
        rep.multadds_by_layer.emplace_back(g, macs[g]);
    }
    rep.convention = kConvention;
}

}  // namespace

template <typename T>
GradCheckReport finite_diff_compare(const std::function<double()>& loss_fn,
                                    const std::vector<std::pair<std::string, TensorPtrT<T>>>& params,
                                    const GradCheckOptions& opt) {
    GradCheckReport rep;
    std::vector<std::pair<size_t, int64_t>> coords;  // (param idx, element idx)
    for (size_t p = 0; p < params.size(); ++p) {
        const auto& t = params[p].second;
        if (!t || !t->requires_grad()) continue;
        for (int64_t i = 0; i < t->numel(); ++i) coords.emplace_back(p, i);
    }
    if (coords.empty()) {
        rep.pass = true;
        rep.empty = true;
        return rep;
    }
    if (opt.sample > 0 && coords.size() > opt.sample) {
        // Fisher-Yates prefix shuffle of the coordinate list.
        Rng rng(opt.seed, {0x67726463u});
        for (size_t i = 0; i < opt.sample; ++i) {
            const size_t j = i + static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(coords.size() - i - 1)));
            std::swap(coords[i], coords[j]);
        }
        coords.resize(opt.sample);
    }

    rep.pass = true;
    for (const auto& [p, i] : coords) {
        const auto& name = params[p].first;
        const auto& t = params[p].second;
        const T saved = t->at(i);
        t->at(i) = static_cast<T>(static_cast<double>(saved) + opt.step);
        const double f_plus = loss_fn();
        t->at(i) = static_cast<T>(static_cast<double>(saved) - opt.step);
        const double f_minus = loss_fn();
        t->at(i) = saved;
        const double numeric = (f_plus - f_minus) / (2.0 * opt.step);
        const double analytic = t->has_grad() ? static_cast<double>(t->grad()[static_cast<size_t>(i)]) : 0.0;
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        const double rel = std::abs(analytic - numeric) / denom;
        ++rep.checked;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_name = name;
        }
        if (rel > opt.tolerance) {
            rep.pass = false;
            rep.offenders.push_back({name, i, analytic, numeric, rel});
        }
    }
    std::sort(rep.offenders.begin(), rep.offenders.end(),
              [](const GradCheckIssue& a, const GradCheckIssue& b) { return a.rel_err > b.rel_err; });
    if (rep.offenders.size() > opt.max_offenders) rep.offenders.resize(opt.max_offenders);
    return rep;
}

std::string gradcheck_summary(const GradCheckReport& rep) {
    std::ostringstream os;
    if (rep.empty) {
        os << "gradcheck: WARNING nothing to check (no tensor requires gradients); trivially passing";
        return os.str();
    }
    os << "gradcheck: " << (rep.pass ? "PASS" : "FAIL") << " checked=" << rep.checked
       << " max_rel_err=" << rep.max_rel_err;
    if (!rep.worst_name.empty()) os << " worst=" << rep.worst_name;
    for (const auto& o : rep.offenders)
        os << "\n  offender " << o.name << "[" << o.index << "] analytic=" << o.analytic
           << " numeric=" << o.numeric << " rel_err=" << o.rel_err;
    return os.str();
}

template <typename T>
CostReport count_params(const OSNetModelT<T>& model) {
    CostReport rep;
    accumulate_costs(model, rep);
    return rep;
}

template <typename T>
CostReport count_multadds(const OSNetModelT<T>& model) {
    CostReport rep;
    accumulate_costs(model, rep);
    return rep;
}

std::vector<ShrinkCell> shrink_grid(const NetworkSpec& base, const std::vector<double>& betas,
                                    const std::vector<double>& gammas) {
    std::vector<ShrinkCell> grid;
    for (double beta : betas)
        for (double gamma : gammas) {
            NetworkSpec spec = base;
            spec.width_multiplier = beta;
            spec.input_height = std::max<int64_t>(1, std::llround(gamma * static_cast<double>(base.input_height)));
            spec.input_width = std::max<int64_t>(1, std::llround(gamma * static_cast<double>(base.input_width)));
            OSNetModelT<float> model(spec);
            const CostReport rep = count_multadds(model);
            grid.push_back({beta, gamma, spec.input_height, spec.input_width, rep.params_total,
                            rep.multadds_total});
        }
    return grid;
}

template <typename T>
GradCheckReport gradcheck_model(OSNetModelT<T>& model, int64_t batch, const GradCheckOptions& opt) {
    Rng rng(opt.seed, {0x6d636864ULL});
    auto x = random_tensor<T>({batch, 3, model.spec().input_height, model.spec().input_width}, rng);
    std::vector<T> probe(static_cast<size_t>(batch * model.spec().feature_dim));
    for (auto& v : probe) v = static_cast<T>(rng.uniform(-1.0, 1.0));

    model.zero_grad();
    TapeT<T> tape;
    CtxT<T> ctx{&tape, true};
    auto loss = inner_const(ctx, model.forward(ctx, x).features, probe);
    tape.backward(loss);

    auto loss_fn = [&model, &x, &probe]() {
        CtxT<T> c{nullptr, true};
        return static_cast<double>(inner_const(c, model.forward(c, x).features, probe)->at(0));
    };
    return finite_diff_compare<T>(loss_fn, model.registry().params, opt);
}

std::vector<std::pair<std::string, GradCheckReport>> gradcheck_ops(uint64_t seed, double tolerance) {
    using D = double;
    std::vector<std::pair<std::string, GradCheckReport>> out;
    Rng rng(seed, {0x6f707363ULL});

    auto probe_for = [&rng](const TensorPtrT<D>& t) {
        std::vector<D> p(static_cast<size_t>(t->numel()));
        for (auto& v : p) v = rng.uniform(-1.0, 1.0);
        return p;
    };
    auto run = [&](const std::string& name, const std::function<TensorPtrT<D>(const CtxT<D>&)>& build,
                   std::vector<std::pair<std::string, TensorPtrT<D>>> params) {
        for (auto& [_, t] : params) t->zero_grad();
        TapeT<D> tape;
        CtxT<D> ctx{&tape, true};
        auto loss = build(ctx);
        tape.backward(loss);
        GradCheckOptions opt;
        opt.tolerance = tolerance;
        opt.seed = seed;
        auto rep = finite_diff_compare<D>(
            [&build]() {
                CtxT<D> c{nullptr, true};
                return static_cast<double>(build(c)->at(0));
            },
            params, opt);
        out.emplace_back(name, rep);
    };

    {
        auto x = random_tensor<D>({2, 3, 6, 6}, rng);
        auto w = random_tensor<D>({4, 3, 3, 3}, rng);
        auto b = random_tensor<D>({4}, rng);
        for (auto& t : {x, w, b}) t->set_requires_grad(true);
        ConvKernelT<D> k{w, b, 2, 2, 1, 1, 1};
        auto y0 = [&] { CtxT<D> c; return conv2d(c, x, k); }();
        auto probe = probe_for(y0);
        run("conv2d", [&](const CtxT<D>& c) { return inner_const(c, conv2d(c, x, k), probe); },
            {{"x", x}, {"weight", w}, {"bias", b}});
    }
    {
        auto x = random_tensor<D>({2, 5, 4, 4}, rng);
        auto w = random_tensor<D>({7, 5, 1, 1}, rng);
        x->set_requires_grad(true);
        w->set_requires_grad(true);
        ConvKernelT<D> k{w, nullptr, 1, 1, 0, 0, 1};
        auto probe = probe_for([&] { CtxT<D> c; return pointwise_conv(c, x, k); }());
        run("pointwise_conv", [&](const CtxT<D>& c) { return inner_const(c, pointwise_conv(c, x, k), probe); },
            {{"x", x}, {"weight", w}});
    }
    {
        auto x = random_tensor<D>({1, 3, 5, 5}, rng);
        auto w = random_tensor<D>({3, 1, 3, 3}, rng);
        x->set_requires_grad(true);
        w->set_requires_grad(true);
        ConvKernelT<D> k{w, nullptr, 1, 1, 1, 1, 3};
        auto probe = probe_for(x);
        run("depthwise_conv", [&](const CtxT<D>& c) { return inner_const(c, depthwise_conv(c, x, k), probe); },
            {{"x", x}, {"weight", w}});
    }
    {
        auto x = random_tensor<D>({3, 2, 4, 4}, rng);
        x->set_requires_grad(true);
        BatchNorm2dT<D> bn;
        bn.scale = make_param<D>({2}, 1.0);
        bn.shift = make_param<D>({2}, 0.0);
        bn.running_mean = make_tensor<D>({2}, 0.0);
        bn.running_var = make_tensor<D>({2}, 1.0);
        auto probe = probe_for(x);
        run("batchnorm2d", [&](const CtxT<D>& c) { return inner_const(c, batchnorm2d(c, x, bn), probe); },
            {{"x", x}, {"scale", bn.scale}, {"shift", bn.shift}});
    }
    {
        auto x = random_tensor<D>({2, 3, 4, 4}, rng);
        x->set_requires_grad(true);
        auto scale = make_param<D>({3}, 1.0);
        auto shift = make_param<D>({3}, 0.0);
        auto probe = probe_for(x);
        run("instance_norm2d",
            [&](const CtxT<D>& c) { return inner_const(c, instance_norm2d(c, x, scale, shift), probe); },
            {{"x", x}, {"scale", scale}, {"shift", shift}});
    }
    {
        auto x = random_tensor<D>({2, 3, 4, 4}, rng);
        for (auto& v : x->values())
            if (std::abs(v) < 1e-3) v = 0.2;  // keep clear of the relu kink
        x->set_requires_grad(true);
        auto probe = probe_for(x);
        run("relu", [&](const CtxT<D>& c) { return inner_const(c, relu(c, x), probe); }, {{"x", x}});
        x->zero_grad();
        run("sigmoid", [&](const CtxT<D>& c) { return inner_const(c, sigmoid(c, x), probe); }, {{"x", x}});
    }
    {
        auto x = random_tensor<D>({2, 3, 4, 4}, rng);
        x->set_requires_grad(true);
        std::vector<D> probe(2 * 3);
        for (auto& v : probe) v = rng.uniform(-1.0, 1.0);
        run("global_avg_pool",
            [&](const CtxT<D>& c) { return inner_const(c, global_avg_pool(c, x), probe); }, {{"x", x}});
    }
    {
        auto x = random_tensor<D>({2, 2, 6, 6}, rng);
        x->set_requires_grad(true);
        std::vector<D> probe(2 * 2 * 3 * 3);
        for (auto& v : probe) v = rng.uniform(-1.0, 1.0);
        run("max_pool2d", [&](const CtxT<D>& c) { return inner_const(c, max_pool2d(c, x, 2, 2), probe); },
            {{"x", x}});
        x->zero_grad();
        run("avg_pool2d", [&](const CtxT<D>& c) { return inner_const(c, avg_pool2d(c, x, 2, 2), probe); },
            {{"x", x}});
    }
    {
        auto x = random_tensor<D>({3, 5}, rng);
        auto w = random_tensor<D>({4, 5}, rng);
        auto b = random_tensor<D>({4}, rng);
        for (auto& t : {x, w, b}) t->set_requires_grad(true);
        std::vector<D> probe(12);
        for (auto& v : probe) v = rng.uniform(-1.0, 1.0);
        run("linear", [&](const CtxT<D>& c) { return inner_const(c, linear(c, x, w, b), probe); },
            {{"x", x}, {"weight", w}, {"bias", b}});
    }
    return out;
}

namespace {

std::string human_count(long long v) {
    std::ostringstream os;
    if (v >= 1000000) os << std::fixed << std::setprecision(2) << static_cast<double>(v) / 1e6 << "M";
    else if (v >= 1000) os << std::fixed << std::setprecision(1) << static_cast<double>(v) / 1e3 << "K";
    else os << v;
    return os.str();
}

}  // namespace

std::string cost_table_text(const CostReport& params, const CostReport& multadds) {
    std::ostringstream os;
    size_t width = 12;
    for (const auto& [n, _] : params.params_by_layer) width = std::max(width, n.size());
    os << std::left << std::setw(static_cast<int>(width + 2)) << "layer" << std::right << std::setw(14)
       << "params" << std::setw(16) << "mult-adds" << '\n';
    for (size_t i = 0; i < params.params_by_layer.size(); ++i) {
        os << std::left << std::setw(static_cast<int>(width + 2)) << params.params_by_layer[i].first
           << std::right << std::setw(14) << params.params_by_layer[i].second << std::setw(16)
           << multadds.multadds_by_layer[i].second << '\n';
    }
    os << std::left << std::setw(static_cast<int>(width + 2)) << "total" << std::right << std::setw(14)
       << params.params_total << std::setw(16) << multadds.multadds_total << '\n';
    os << "total (human): params " << human_count(params.params_total) << ", mult-adds "
       << human_count(multadds.multadds_total) << '\n';
    if (params.params_classifier > 0)
        os << "classifier head params (reported separately): " << params.params_classifier << '\n';
    os << "gate MLP mult-adds (reported separately): " << multadds.multadds_gate << '\n';
    os << "pool/norm/activation element ops (excluded): " << multadds.multadds_excluded << '\n';
    os << "convention: " << params.convention << '\n';
    return os.str();
}

std::string cost_table_csv(const CostReport& params, const CostReport& multadds) {
    std::ostringstream os;
    os << "layer,params,multadds\n";
    for (size_t i = 0; i < params.params_by_layer.size(); ++i)
        os << params.params_by_layer[i].first << ',' << params.params_by_layer[i].second << ','
           << multadds.multadds_by_layer[i].second << '\n';
    os << "total," << params.params_total << ',' << multadds.multadds_total << '\n';
    return os.str();
}

std::string shrink_grid_text(const std::vector<ShrinkCell>& grid) {
    std::ostringstream os;
    os << std::left << std::setw(7) << "beta" << std::setw(7) << "gamma" << std::setw(12) << "input"
       << std::right << std::setw(12) << "params" << std::setw(16) << "mult-adds" << '\n';
    for (const auto& cell : grid) {
        std::ostringstream in;
        in << cell.input_height << 'x' << cell.input_width;
        os << std::left << std::setw(7) << cell.beta << std::setw(7) << cell.gamma << std::setw(12) << in.str()
           << std::right << std::setw(12) << cell.params << std::setw(16) << cell.multadds << '\n';
    }
    return os.str();
}

template GradCheckReport finite_diff_compare<float>(const std::function<double()>&,
                                                    const std::vector<std::pair<std::string, TensorPtrT<float>>>&,
                                                    const GradCheckOptions&);
template GradCheckReport finite_diff_compare<double>(const std::function<double()>&,
                                                     const std::vector<std::pair<std::string, TensorPtrT<double>>>&,
                                                     const GradCheckOptions&);
template CostReport count_params<float>(const OSNetModelT<float>&);
template CostReport count_params<double>(const OSNetModelT<double>&);
template CostReport count_multadds<float>(const OSNetModelT<float>&);
template CostReport count_multadds<double>(const OSNetModelT<double>&);
template GradCheckReport gradcheck_model<float>(OSNetModelT<float>&, int64_t, const GradCheckOptions&);
template GradCheckReport gradcheck_model<double>(OSNetModelT<double>&, int64_t, const GradCheckOptions&);

}  // namespace osnet
