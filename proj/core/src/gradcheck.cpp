#include "transmat/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "transmat/attention.hpp"
#include "transmat/losses.hpp"
#include "transmat/mgf.hpp"
#include "transmat/network.hpp"
#include "transmat/tgtb.hpp"

namespace transmat::gradcheck {

std::string Report::summary() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s: max rel error %.3e (%s), tolerance %.0e -> %s", component.c_str(),
                  max_rel_error, worst_tensor.c_str(), tolerance, passed ? "pass" : "FAIL");
    return buf;
}

Report check(const std::string& component, const std::function<Var<double>()>& objective, const Inputs& inputs,
             double tolerance, const Options& opts) {
    for (const auto& [name, v] : inputs) {
        Var<double> var = v;
        var.zero_grad();
    }
    objective().backward();

    Report rep;
    rep.component = component;
    rep.tolerance = tolerance;
    Rng rng = make_rng(opts.seed, 0x67726164);
    for (const auto& [name, v] : inputs) {
        Var<double> var = v;
        Tensor<double> analytic = var.grad();
        if (name == opts.corrupt && analytic.size() > 0) {
            double norm = 0;
            for (double g : analytic.storage()) norm += g * g;
            analytic[0] += 0.1 * std::max(std::sqrt(norm), 1.0);
        }
        std::vector<int64_t> order(static_cast<size_t>(analytic.size()));
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
        const bool sampled = opts.max_entries > 0 && analytic.size() > opts.max_entries;
        if (sampled) std::shuffle(order.begin(), order.end(), rng);
        const double f0 = opts.kink_threshold > 0 ? objective().value()[0] : 0.0;
        double diff2 = 0, a2 = 0, n2 = 0;
        int64_t probed = 0, skipped = 0, refined = 0;
        for (const int64_t i : order) {
            if (sampled && probed == opts.max_entries) break;
            double& x = var.mutable_value()[i];
            const double saved = x;
            double numeric = 0;
            bool smooth = false;
            // Shrink the step when the stencil straddles a kink.
            double eps = opts.eps;
            for (int attempt = 0; attempt < (opts.kink_threshold > 0 ? 4 : 1); ++attempt, eps /= 10) {
                x = saved + eps;
                const double fp = objective().value()[0];
                x = saved - eps;
                const double fm = objective().value()[0];
                x = saved;
                numeric = (fp - fm) / (2 * eps);
                if (opts.kink_threshold <= 0) {
                    smooth = true;
                    break;
                }
                const double fwd = (fp - f0) / eps, bwd = (f0 - fm) / eps;
                if (std::abs(fwd - bwd) <= opts.kink_threshold * std::max({std::abs(fwd), std::abs(bwd), 1.0})) {
                    smooth = true;
                    break;
                }
                if (attempt == 0) ++refined;
            }
            if (!smooth) {
                ++skipped;
                continue;
            }
            diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
            ++probed;
        }
        double rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), opts.abs_floor});
        // A tensor that is mostly kinks is not being checked at all.
        if (probed == 0 || skipped > probed) rel = std::numeric_limits<double>::infinity();
        rep.tensors.push_back({name, rel, probed, refined, skipped, std::sqrt(a2), std::sqrt(n2)});
        if (rel >= rep.max_rel_error) {
            rep.max_rel_error = rel;
            rep.worst_tensor = name;
        }
    }
    rep.passed = rep.max_rel_error <= tolerance;
    return rep;
}

const std::vector<std::string>& components() {
    static const std::vector<std::string> names{"attention", "tri_token_attention", "tgtb_block",
                                                "mgf_fuse",  "losses",              "full_model_toy"};
    return names;
}

namespace {

constexpr double kTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;

Tensor<double> uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.storage()) v = d(rng);
    return t;
}

LabelGrid random_labels(int64_t n, int64_t h, int64_t w, Rng& rng) {
    LabelGrid g{n, h, w, std::vector<uint8_t>(static_cast<size_t>(n * h * w))};
    for (auto& l : g.labels) l = static_cast<uint8_t>(rng() % 3);
    return g;
}

Report attention_check(const Options& opts) {
    Rng rng = make_rng(opts.seed, 1);
    auto q = Var<double>::leaf(uniform({9, 4}, rng));
    auto k = Var<double>::leaf(uniform({9, 4}, rng));
    auto v = Var<double>::leaf(uniform({9, 4}, rng));
    const auto w = uniform({9, 4}, rng);
    return check("attention", [&] { return ops::dot_const(attn::attention(q, k, v), w); },
                 {{"q", q}, {"k", k}, {"v", v}}, kTolerance, opts);
}

Report tri_token_check(const Options& opts) {
    Rng rng = make_rng(opts.seed, 2);
    const int64_t d = 6;
    auto q = Var<double>::leaf(uniform({4, d}, rng));
    auto k = Var<double>::leaf(uniform({4, d}, rng));
    auto v = Var<double>::leaf(uniform({4, d}, rng));
    TriTokenSet<double> tokens{Var<double>::leaf(uniform({3, d}, rng, -0.5, 0.5))};
    const LabelGrid labels{1, 2, 2, {0, 1, 2, 0}};
    const auto w = uniform({4, d}, rng);
    return check(
        "tri_token_attention",
        [&] {
            const auto map = ops::reshape(expand(labels, tokens, 2, 2), {4, d});
            return ops::dot_const(attn::tri_token_attention(q, k, v, map), w);
        },
        {{"q", q}, {"k", k}, {"v", v}, {"tokens", tokens.tokens}}, kTolerance, opts);
}

Report tgtb_check(const Options& opts) {
    Rng rng = make_rng(opts.seed, 3);
    nn::ParameterSet<double> ps;
    const int64_t c = 8;
    // A single-window 4x4 block and a shifted 8x8 block with relative position bias.
    TgtbBlock<double> plain(nn::Scope<double>{&ps, "plain", &rng}, c, 2, 4, 2, false, true, false);
    TgtbBlock<double> shifted(nn::Scope<double>{&ps, "shifted", &rng}, c, 2, 4, 2, true, true, true);
    const auto tokens = init_tokens<double>(nn::Scope<double>{&ps, "tri", &rng}, c);
    // Larger tokens than the default initialisation so their gradient is well resolved.
    for (auto& t : Var<double>(tokens.tokens).mutable_value().storage()) t *= 25.0;
    for (const auto& p : ps.params()) {
        if (p.name.ends_with(".bias") || p.name.ends_with(".beta")) {
            Var<double> var = p.var;
            var.mutable_value() = uniform(var.shape(), rng, -0.1, 0.1);
        }
    }
    auto x4 = Var<double>::leaf(uniform({1, 4, 4, c}, rng));
    auto x8 = Var<double>::leaf(uniform({1, 8, 8, c}, rng));
    const auto l4 = random_labels(1, 4, 4, rng);
    const auto l8 = random_labels(1, 8, 8, rng);
    const auto w4 = uniform({1, 4, 4, c}, rng);
    const auto w8 = uniform({1, 8, 8, c}, rng);
    Inputs inputs{{"plain.x", x4}, {"shifted.x", x8}};
    for (const auto& p : ps.params()) inputs.emplace_back(p.name, p.var);
    return check(
        "tgtb_block",
        [&] {
            const auto a = ops::dot_const(plain(x4, expand(l4, tokens, 4, 4)), w4);
            const auto b = ops::dot_const(shifted(x8, expand(l8, tokens, 8, 8)), w8);
            return ops::add(a, b);
        },
        inputs, kTolerance, opts);
}

Report mgf_check(const Options& opts) {
    Rng rng = make_rng(opts.seed, 4);
    nn::ParameterSet<double> ps;
    MgfFuse<double> fuse(nn::Scope<double>{&ps, "mgf", &rng}, 4, 6, 8, MgfConfig{});
    for (const auto& p : ps.params()) {
        if (p.name.ends_with(".bias")) {
            Var<double> var = p.var;
            var.mutable_value() = uniform(var.shape(), rng, -0.5, 0.5);
        }
    }
    auto prev = Var<double>::leaf(uniform({2, 8, 8, 4}, rng));
    auto cur = Var<double>::leaf(uniform({2, 4, 4, 6}, rng));
    auto next = Var<double>::leaf(uniform({2, 2, 2, 8}, rng));
    Tensor<double> mask({2, 8, 8, 1});
    for (auto& m : mask.storage()) m = (rng() % 5) ? 1.0 : 0.0;
    const auto w = uniform({2, 4, 4, 6}, rng);
    Inputs inputs{{"t_prev", prev}, {"t_n", cur}, {"t_next", next}};
    for (const auto& p : ps.params()) inputs.emplace_back(p.name, p.var);
    return check("mgf_fuse", [&] { return ops::dot_const(fuse(prev, cur, next, mask), w); }, inputs, kTolerance, opts);
}

Report losses_check(const Options& opts) {
    Rng rng = make_rng(opts.seed, 5);
    auto pred = Var<double>::leaf(uniform({1, 4, 4, 1}, rng, 0.05, 0.95));
    auto pred8 = Var<double>::leaf(uniform({1, 8, 8, 1}, rng, 0.05, 0.95));
    const auto gt = uniform({1, 4, 4, 1}, rng, 0.0, 1.0);
    const auto gt8 = uniform({1, 8, 8, 1}, rng, 0.0, 1.0);
    const auto fg = uniform({1, 4, 4, 3}, rng, 0.0, 1.0);
    const auto bg = uniform({1, 4, 4, 3}, rng, 0.0, 1.0);
    const auto img = uniform({1, 4, 4, 3}, rng, 0.0, 1.0);
    Tensor<double> region({1, 4, 4, 1}), region8({1, 8, 8, 1});
    for (auto& r : region.storage()) r = (rng() % 4) ? 1.0 : 0.0;
    for (auto& r : region8.storage()) r = (rng() % 4) ? 1.0 : 0.0;
    region[0] = 1.0;
    Report a = check("losses", [&] { return loss::alpha_loss(pred, gt, region); }, {{"alpha_loss.pred", pred}},
                     kTolerance, opts);
    Report c = check("losses", [&] { return loss::composition_loss(pred, fg, bg, img, region); },
                     {{"composition_loss.pred", pred}}, kTolerance, opts);
    Report l = check("losses", [&] { return loss::laplacian_loss(pred, gt, region); }, {{"laplacian_loss.pred", pred}},
                     kTolerance, opts);
    Report l8 = check("losses", [&] { return loss::laplacian_loss(pred8, gt8, region8); },
                      {{"laplacian_loss_8x8.pred", pred8}}, kTolerance, opts);
    for (const Report* r : {&c, &l, &l8}) {
        a.tensors.insert(a.tensors.end(), r->tensors.begin(), r->tensors.end());
        if (r->max_rel_error >= a.max_rel_error) {
            a.max_rel_error = r->max_rel_error;
            a.worst_tensor = r->worst_tensor;
        }
    }
    a.passed = a.max_rel_error <= kTolerance;
    return a;
}

}  // namespace

NetworkConfig toy_network_config(uint64_t seed) {
    NetworkConfig cfg;
    cfg.encoder.stem_widths = {4, 8};
    cfg.encoder.attention.embed_dims = {8, 16, 32, 64};
    cfg.encoder.attention.num_heads = {2, 2, 4, 4};
    cfg.encoder.attention.blocks_per_stage = {2, 1, 1, 1};
    cfg.encoder.attention.mlp_ratio = 2;
    cfg.encoder.attention.tri_token_period = 1;
    cfg.decoder.widths = {16, 8, 8, 8, 4, 4};
    cfg.init_seed = seed;
    return cfg;
}

namespace {

Report full_model_check(const Options& opts) {
    Network<double> net(toy_network_config(opts.seed));
    Rng rng = make_rng(opts.seed, 6);
    for (const auto& p : net.parameters().params()) {
        if (p.name.ends_with(".bias") || p.name.ends_with(".beta")) {
            Var<double> var = p.var;
            var.mutable_value() = uniform(var.shape(), rng, -0.1, 0.1);
        }
    }
    const int64_t n = 2, s = 32;
    const auto labels = random_labels(n, s, s, rng);
    Tensor<double> input = uniform({n, s, s, 4}, rng, 0.0, 1.0);
    const auto enc = labels.encoded_plane<double>();
    for (int64_t i = 0; i < n * s * s; ++i) input[i * 4 + 3] = enc[i];
    const auto w = uniform({n, s, s, 1}, rng);
    Inputs inputs;
    for (const auto& p : net.parameters().params()) inputs.emplace_back(p.name, p.var);
    Options o = opts;
    if (o.max_entries == 0) o.max_entries = 4;
    // Key biases and biases ahead of a batch-normalised conv have zero gradient; their
    // central differences are pure roundoff of order 1e-9.
    o.abs_floor = std::max(o.abs_floor, 1e-5);
    return check("full_model_toy", [&] { return ops::dot_const(net.forward(input, labels, true), w); }, inputs,
                 kModelTolerance, o);
}

}  // namespace

Report run(const std::string& component, const Options& opts) {
    if (component == "attention") return attention_check(opts);
    if (component == "tri_token_attention") return tri_token_check(opts);
    if (component == "tgtb_block") return tgtb_check(opts);
    if (component == "mgf_fuse") return mgf_check(opts);
    if (component == "losses") return losses_check(opts);
    if (component == "full_model_toy") return full_model_check(opts);
    throw std::invalid_argument("unknown gradcheck component '" + component + "'");
}

}  // namespace transmat::gradcheck
