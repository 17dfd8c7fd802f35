#include "matching.hpp"

#include <algorithm>
#include <cmath>

namespace cfmn {

void validate(const MatchBlockConfig& cfg, const char* where) {
    if (cfg.lambda < real(0) || cfg.lambda > real(1))
        throw ConfigError(std::string(where) + ": lambda must be in [0,1], got " +
                          std::to_string(cfg.lambda));
    if (cfg.c_in < 1) throw ConfigError(std::string(where) + ": c_in must be >= 1");
    if (cfg.use_transform && cfg.c_m < 1)
        throw ConfigError(std::string(where) + ": c_m must be >= 1");
}

MatchBlockParams MatchBlockParams::init(int c_in, int c_m, Rng& rng) {
    MatchBlockParams p;
    const real std_in = std::sqrt(real(2) / static_cast<real>(c_in));
    p.mu_w = random_normal({c_m, c_in}, rng, std_in);
    p.mu_b = Tensor({c_m});
    p.phi_w = random_normal({c_m, c_in}, rng, std_in);
    p.phi_b = Tensor({c_m});
    p.omega_w = random_normal({c_m, c_in}, rng, std_in);
    p.omega_b = Tensor({c_m});
    // lambda already gates the matched branch, so the restore map starts
    // small but not zero
    p.restore_w = random_normal({c_in, c_m}, rng, real(0.01));
    p.restore_b = Tensor({c_in});
    return p;
}

MatchBlockParams MatchBlockParams::identity(int c) {
    MatchBlockParams p;
    p.mu_w = Tensor({c, c});
    for (int i = 0; i < c; ++i) p.mu_w.at(i, i) = 1;
    p.phi_w = p.mu_w;
    p.omega_w = p.mu_w;
    p.restore_w = p.mu_w;
    p.mu_b = Tensor({c});
    p.phi_b = Tensor({c});
    p.omega_b = Tensor({c});
    p.restore_b = Tensor({c});
    return p;
}

MatchVars to_vars(Tape& t, const MatchBlockParams& p, bool needs_grad) {
    MatchVars v;
    if (p.mu_w.empty()) return v;
    v.mu_w = t.leaf(p.mu_w, needs_grad);
    v.mu_b = t.leaf(p.mu_b, needs_grad);
    v.phi_w = t.leaf(p.phi_w, needs_grad);
    v.phi_b = t.leaf(p.phi_b, needs_grad);
    v.omega_w = t.leaf(p.omega_w, needs_grad);
    v.omega_b = t.leaf(p.omega_b, needs_grad);
    v.restore_w = t.leaf(p.restore_w, needs_grad);
    v.restore_b = t.leaf(p.restore_b, needs_grad);
    return v;
}

namespace {

void check_pair(const Tensor& zq, const Tensor& zs, const MatchBlockConfig& cfg,
                const char* stage) {
    if (zq.rank() != 3 || zs.rank() != 3 || !zq.same_shape(zs))
        throw ShapeError(std::string(stage) + ": query/support feature shape mismatch " +
                         zq.shape_str() + " vs " + zs.shape_str());
    if (zq.extent(0) != cfg.c_in)
        throw ShapeError(std::string(stage) + ": feature has " + std::to_string(zq.extent(0)) +
                         " channels, matching block expects " + std::to_string(cfg.c_in));
}

}  // namespace

Var compute_attention_op(Tape& t, Var zq, Var zs, const MatchVars& p, const MatchBlockConfig& cfg,
                         const char* stage) {
    check_pair(t.val(zq), t.val(zs), cfg, stage);
    Var mq = ops::spatial_flatten(t, zq);
    Var ms = ops::spatial_flatten(t, zs);
    if (cfg.use_transform) {
        mq = ops::fully_connected(t, mq, p.mu_w, p.mu_b);
        ms = ops::fully_connected(t, ms, p.phi_w, p.phi_b);
    }
    Var logits = ops::matmul(t, mq, ops::transpose(t, ms));
    return cfg.use_softmax ? ops::row_softmax(t, logits) : logits;
}

Var apply_matching_op(Tape& t, Var zq, Var zs, const MatchVars& p, const MatchBlockConfig& cfg,
                      const char* stage, AttentionMap* capture) {
    const Tensor& q = t.val(zq);
    check_pair(q, t.val(zs), cfg, stage);
    const int h = q.extent(1), w = q.extent(2);
    if (cfg.lambda == real(0) && capture == nullptr) return zq;

    Var attn = compute_attention_op(t, zq, zs, p, cfg, stage);
    if (capture) {
        capture->h = h;
        capture->w = w;
        capture->weights = t.val(attn);
    }
    if (cfg.lambda == real(0)) return zq;

    Var ws = ops::spatial_flatten(t, zs);
    if (cfg.use_transform) ws = ops::fully_connected(t, ws, p.omega_w, p.omega_b);
    Var g = ops::matmul(t, attn, ws);
    if (cfg.use_transform) g = ops::fully_connected(t, g, p.restore_w, p.restore_b);
    Var gm = ops::spatial_unflatten(t, g, h, w);
    return ops::blend(t, zq, gm, cfg.lambda);
}

AttentionMap compute_attention(const Tensor& zq, const Tensor& zs, const MatchBlockParams& p,
                               const MatchBlockConfig& cfg, const char* stage) {
    Tape t;
    Var q = t.leaf(zq);
    Var s = t.leaf(zs);
    MatchVars v = to_vars(t, p, false);
    Var attn = compute_attention_op(t, q, s, v, cfg, stage);
    AttentionMap out;
    out.h = zq.extent(1);
    out.w = zq.extent(2);
    out.weights = t.val(attn);
    return out;
}

Tensor apply_matching(const Tensor& zq, const Tensor& zs, const MatchBlockParams& p,
                      const MatchBlockConfig& cfg, const char* stage, AttentionMap* attn_out) {
    Tape t;
    Var q = t.leaf(zq);
    Var s = t.leaf(zs);
    MatchVars v = to_vars(t, p, false);
    Var out = apply_matching_op(t, q, s, v, cfg, stage, attn_out);
    return t.val(out);
}

std::vector<Correspondence> top_k_correspondences(const AttentionMap& attn, int query_row,
                                                  int query_col, int k) {
    const int hw = attn.h * attn.w;
    if (query_row < 0 || query_row >= attn.h || query_col < 0 || query_col >= attn.w)
        throw ProtocolError("top_k: query position (" + std::to_string(query_row) + "," +
                            std::to_string(query_col) + ") outside " + std::to_string(attn.h) +
                            "x" + std::to_string(attn.w) + " grid");
    if (k < 1 || k > hw)
        throw ProtocolError("top_k: k = " + std::to_string(k) + " not in [1, " +
                            std::to_string(hw) + "]");
    const int row = query_row * attn.w + query_col;
    std::vector<int> order(static_cast<size_t>(hw));
    for (int i = 0; i < hw; ++i) order[static_cast<size_t>(i)] = i;
    const real* wrow = attn.weights.ptr() + static_cast<size_t>(row) * hw;
    std::stable_sort(order.begin(), order.end(),
                     [wrow](int a, int b) { return wrow[a] > wrow[b]; });
    std::vector<Correspondence> out;
    out.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
        const int pos = order[static_cast<size_t>(i)];
        out.push_back({pos / attn.w, pos % attn.w, wrow[pos]});
    }
    return out;
}

}  // namespace cfmn
