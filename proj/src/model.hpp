#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "matching.hpp"

namespace cfmn {

struct ConvBlockSpec {
    int filters = 64;
    int kernel = 3;
    int padding = 0;
    bool pool = false;
    int pool_window = 2;
    int pool_stride = 2;

    bool operator==(const ConvBlockSpec&) const = default;
};

// Backbone layout: CB1..CB4 extractor, channel concat, CB5/CB6 + FCB metric
// head. Matching blocks sit after the extractor stages listed in
// matching_stages (1-based block numbers).
struct CFMNConfig {
    int input_size = 84;
    int channels_in = 3;
    std::array<ConvBlockSpec, 6> blocks{};
    int fcb_hidden = 8;
    std::vector<int> matching_stages{2, 3, 4};
    std::map<int, MatchBlockConfig> match_cfg;
    int n_way = 5;
    int k_shot = 1;
    real bn_eps = real(1e-5);
    real bn_momentum = real(0.1);
};

// The 84x84x3 backbone: pads 0,0,1,1,0,0, pools on CB1/CB2/CB5/CB6,
// 64 filters, matching after CB2/CB3/CB4 with c_m 64 and lambda 0.5.
CFMNConfig default_config();

// Compact builder for other input sizes. Starts from the default block
// layout, then per block: padding is bumped to 1 if the conv would collapse
// the spatial extent, and pooling is dropped if the window no longer fits.
// The FCB input width always comes from the traced shape.
CFMNConfig make_config(int input_size, int channels_in, int filters, int c_m, real lambda,
                       std::vector<int> stages = {2, 3, 4}, int n_way = 5, int k_shot = 1);

struct BlockShape {
    int c = 0, h = 0, w = 0;
    bool operator==(const BlockShape&) const = default;
};

struct TracedShapes {
    std::array<BlockShape, 6> after_block{};  // CB1..CB6 outputs
    BlockShape concat{};                      // CO output
    int fcb_in = 0;
};

// Walks the conv/pool arithmetic; throws ConfigError naming the offending
// block. Also validates matching-stage configs against block widths.
TracedShapes trace_shapes(const CFMNConfig& cfg);

std::string config_to_json(const CFMNConfig& cfg);
CFMNConfig config_from_json(const std::string& text);

// All learnable tensors plus batch-norm running state, keyed by name.
class ModelParams {
public:
    static ModelParams init(const CFMNConfig& cfg, uint64_t seed);

    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) != 0; }

    BatchNormState& bn(const std::string& block);
    const BatchNormState& bn(const std::string& block) const;

    std::map<std::string, Parameter>& all() { return params_; }
    const std::map<std::string, Parameter>& all() const { return params_; }
    std::map<std::string, BatchNormState>& bn_all() { return bn_; }
    const std::map<std::string, BatchNormState>& bn_all() const { return bn_; }

    void zero_grads();

private:
    std::map<std::string, Parameter> params_;
    std::map<std::string, BatchNormState> bn_;
};

struct Model {
    CFMNConfig cfg;
    TracedShapes shapes;
    ModelParams params;

    static Model create(const CFMNConfig& cfg, uint64_t seed);
};

// One episode's images. Query and support branches share the extractor
// parameters; the query branch is re-extracted once per support image when
// matching is on.
struct EpisodeBatch {
    std::vector<const Tensor*> support_images;
    std::vector<std::vector<int>> support_slots;  // sampled-class slots per support
    std::vector<const Tensor*> query_images;
    int way = 0;
    int k_shot = 0;  // 0: multilabel grouping (uneven per-class counts allowed)
};

struct ForwardResult {
    Tensor scores;   // [Q x N]
    Var scores_var;  // flattened [Q*N]; valid while the tape lives
};

// Full episodic forward. All tensors that flow through a block in this call
// form that block's batch-norm statistics batch.
ForwardResult episode_forward(Tape& t, Model& m, const EpisodeBatch& batch, BnMode mode,
                              bool with_grads);

// Query/support features after the cascaded extractor (the pair path).
// `capture` collects per-stage attention maps when given.
std::pair<Tensor, Tensor> extract_pair(Model& m, const Tensor& query, const Tensor& support,
                                       BnMode mode,
                                       std::map<int, AttentionMap>* capture = nullptr);

// Metric head on one concatenated pair; value in (0, 1).
real score_pair(Model& m, const Tensor& q_feat, const Tensor& s_feat, BnMode mode);

// N scores for one query against an N-way K-shot support set.
Tensor classify_episode(Model& m, const Tensor& query,
                        const std::vector<std::pair<const Tensor*, int>>& support, BnMode mode);

// Multi-label: class c averages the concatenated features of every support
// image whose label set contains c.
Tensor classify_multilabel(Model& m, const Tensor& query,
                           const std::vector<std::pair<const Tensor*, std::vector<int>>>& support,
                           int n_way, BnMode mode);

}  // namespace cfmn
