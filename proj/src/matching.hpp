#pragma once

#include <vector>

#include "ops.hpp"

namespace cfmn {

struct MatchBlockConfig {
    int c_in = 64;
    int c_m = 64;        // reduction dim of the mu/phi/omega maps
    real lambda = real(0.5);
    bool use_softmax = true;
    bool use_transform = true;  // false: mu = phi = omega = restore = identity
};

void validate(const MatchBlockConfig& cfg, const char* where);

// Row-stochastic (H*W)x(H*W) correspondence map between query and support
// positions; entry (i, j) is the response of query position i to support
// position j. Position index = row * W + col.
struct AttentionMap {
    int h = 0;
    int w = 0;
    Tensor weights;
};

// Learned 1x1-conv maps of one matching block, as plain tensors. Empty when
// the block runs without transformation.
struct MatchBlockParams {
    Tensor mu_w, mu_b;            // [c_m x c_in], [c_m]
    Tensor phi_w, phi_b;
    Tensor omega_w, omega_b;
    Tensor restore_w, restore_b;  // [c_in x c_m], [c_in]

    static MatchBlockParams init(int c_in, int c_m, Rng& rng);
    static MatchBlockParams identity(int c);
};

// Tape handles for a block's params; invalid vars when use_transform is off.
struct MatchVars {
    Var mu_w, mu_b, phi_w, phi_b, omega_w, omega_b, restore_w, restore_b;
};

MatchVars to_vars(Tape& t, const MatchBlockParams& p, bool needs_grad);

// h = S(mu(z_q) phi(z_s)^T); raw product when use_softmax is off.
// zq/zs are [C x H x W]; `stage` names the cascade stage in errors.
Var compute_attention_op(Tape& t, Var zq, Var zs, const MatchVars& p, const MatchBlockConfig& cfg,
                         const char* stage);

// Full block: g = h * omega(z_s), restored to C channels, blended
// lambda : (1 - lambda) with the original query feature. lambda == 0
// returns zq itself, untouched.
Var apply_matching_op(Tape& t, Var zq, Var zs, const MatchVars& p, const MatchBlockConfig& cfg,
                      const char* stage, AttentionMap* capture = nullptr);

// Tensor-level conveniences (no gradients).
AttentionMap compute_attention(const Tensor& zq, const Tensor& zs, const MatchBlockParams& p,
                               const MatchBlockConfig& cfg, const char* stage = "matching");
Tensor apply_matching(const Tensor& zq, const Tensor& zs, const MatchBlockParams& p,
                      const MatchBlockConfig& cfg, const char* stage = "matching",
                      AttentionMap* attn_out = nullptr);

struct Correspondence {
    int row = 0;
    int col = 0;
    real weight = 0;
};

// k support positions with the largest response for the given query
// position, descending; ties broken by row-major position order.
std::vector<Correspondence> top_k_correspondences(const AttentionMap& attn, int query_row,
                                                  int query_col, int k);

}  // namespace cfmn
