#include "model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace cfmn {

using nlohmann::json;

CFMNConfig default_config() {
    CFMNConfig cfg;
    // Table-1 layout; pads forced by the printed output sizes
    cfg.blocks[0] = {64, 3, 0, true, 2, 2};
    cfg.blocks[1] = {64, 3, 0, true, 2, 2};
    cfg.blocks[2] = {64, 3, 1, false, 2, 2};
    cfg.blocks[3] = {64, 3, 1, false, 2, 2};
    cfg.blocks[4] = {64, 3, 0, true, 2, 2};
    cfg.blocks[5] = {64, 3, 0, true, 2, 2};
    for (int s : cfg.matching_stages) {
        MatchBlockConfig mc;
        mc.c_in = 64;
        mc.c_m = 64;
        mc.lambda = real(0.5);
        cfg.match_cfg[s] = mc;
    }
    return cfg;
}

CFMNConfig make_config(int input_size, int channels_in, int filters, int c_m, real lambda,
                       std::vector<int> stages, int n_way, int k_shot) {
    CFMNConfig cfg = default_config();
    cfg.input_size = input_size;
    cfg.channels_in = channels_in;
    cfg.n_way = n_way;
    cfg.k_shot = k_shot;
    for (auto& b : cfg.blocks) b.filters = filters;
    cfg.matching_stages = stages;
    cfg.match_cfg.clear();
    for (int s : stages) {
        MatchBlockConfig mc;
        mc.c_in = filters;
        mc.c_m = c_m;
        mc.lambda = lambda;
        cfg.match_cfg[s] = mc;
    }
    // adapt the block layout to the input size
    int h = input_size;
    for (int b = 0; b < 6; ++b) {
        ConvBlockSpec& spec = cfg.blocks[static_cast<size_t>(b)];
        if (h + 2 * spec.padding - spec.kernel < 0) spec.padding = 1;
        h = h + 2 * spec.padding - spec.kernel + 1;
        if (h < 1)
            throw ConfigError("make_config: CB" + std::to_string(b + 1) +
                              " collapses the spatial extent even with padding 1 (input " +
                              std::to_string(input_size) + ")");
        if (spec.pool && spec.pool_window > h) spec.pool = false;
        if (spec.pool) h = (h - spec.pool_window) / spec.pool_stride + 1;
    }
    return cfg;
}

TracedShapes trace_shapes(const CFMNConfig& cfg) {
    if (cfg.input_size < 1 || cfg.channels_in < 1)
        throw ConfigError("config: input_size and channels_in must be positive");
    if (cfg.fcb_hidden < 1) throw ConfigError("config: fcb_hidden must be positive");
    for (int s : cfg.matching_stages) {
        if (s < 1 || s > 4)
            throw ConfigError("config: matching stage CB" + std::to_string(s) +
                              " does not exist (valid: CB1..CB4)");
        auto it = cfg.match_cfg.find(s);
        if (it == cfg.match_cfg.end())
            throw ConfigError("config: no matching config for stage CB" + std::to_string(s));
        const std::string where = "match" + std::to_string(s);
        validate(it->second, where.c_str());
        if (it->second.c_in != cfg.blocks[static_cast<size_t>(s - 1)].filters)
            throw ConfigError("config: " + where + " c_in " + std::to_string(it->second.c_in) +
                              " != CB" + std::to_string(s) + " filters " +
                              std::to_string(cfg.blocks[static_cast<size_t>(s - 1)].filters));
    }

    TracedShapes ts;
    int c = cfg.channels_in, h = cfg.input_size, w = cfg.input_size;
    for (int b = 0; b < 6; ++b) {
        const ConvBlockSpec& spec = cfg.blocks[static_cast<size_t>(b)];
        const std::string name = "CB" + std::to_string(b + 1);
        if (b == 4) {
            // metric head consumes the channel concat of the two branches
            c = 2 * cfg.blocks[3].filters;
            ts.concat = {c, h, w};
        }
        h = conv_out_extent(h, spec.kernel, 1, spec.padding, name.c_str());
        w = conv_out_extent(w, spec.kernel, 1, spec.padding, name.c_str());
        c = spec.filters;
        if (spec.pool) {
            if (spec.pool_window > h || spec.pool_window > w)
                throw ConfigError(name + ": pool window " + std::to_string(spec.pool_window) +
                                  " exceeds extent " + std::to_string(h));
            h = (h - spec.pool_window) / spec.pool_stride + 1;
            w = (w - spec.pool_window) / spec.pool_stride + 1;
        }
        ts.after_block[static_cast<size_t>(b)] = {c, h, w};
    }
    ts.fcb_in = c * h * w;
    return ts;
}

namespace {

json match_to_json(const MatchBlockConfig& m) {
    return json{{"c_in", m.c_in},
                {"c_m", m.c_m},
                {"lambda", m.lambda},
                {"use_softmax", m.use_softmax},
                {"use_transform", m.use_transform}};
}

MatchBlockConfig match_from_json(const json& j, const MatchBlockConfig& base) {
    MatchBlockConfig m = base;
    if (j.contains("c_in")) m.c_in = j["c_in"].get<int>();
    if (j.contains("c_m")) m.c_m = j["c_m"].get<int>();
    if (j.contains("lambda")) m.lambda = j["lambda"].get<real>();
    if (j.contains("use_softmax")) m.use_softmax = j["use_softmax"].get<bool>();
    if (j.contains("use_transform")) m.use_transform = j["use_transform"].get<bool>();
    return m;
}

}  // namespace

std::string config_to_json(const CFMNConfig& cfg) {
    json j;
    j["input_size"] = cfg.input_size;
    j["channels_in"] = cfg.channels_in;
    j["fcb_hidden"] = cfg.fcb_hidden;
    j["n_way"] = cfg.n_way;
    j["k_shot"] = cfg.k_shot;
    j["bn_eps"] = cfg.bn_eps;
    j["bn_momentum"] = cfg.bn_momentum;
    j["matching_stages"] = cfg.matching_stages;
    json blocks = json::array();
    for (const auto& b : cfg.blocks)
        blocks.push_back(json{{"filters", b.filters},
                              {"kernel", b.kernel},
                              {"padding", b.padding},
                              {"pool", b.pool},
                              {"pool_window", b.pool_window},
                              {"pool_stride", b.pool_stride}});
    j["blocks"] = blocks;
    json mc;
    for (const auto& [stage, m] : cfg.match_cfg) mc[std::to_string(stage)] = match_to_json(m);
    j["match_cfg"] = mc;
    return j.dump(2);
}

CFMNConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad JSON: ") + e.what());
    }
    try {
        const int input_size = j.value("input_size", 84);
        const int channels_in = j.value("channels_in", 3);
        const int filters = j.value("filters", 64);
        MatchBlockConfig base;
        base.c_in = filters;
        if (j.contains("match")) base = match_from_json(j["match"], base);
        std::vector<int> stages = {2, 3, 4};
        if (j.contains("matching_stages")) stages = j["matching_stages"].get<std::vector<int>>();
        CFMNConfig cfg = make_config(input_size, channels_in, filters, base.c_m, base.lambda,
                                     stages, j.value("n_way", 5), j.value("k_shot", 1));
        for (auto& [s, m] : cfg.match_cfg) {
            m.use_softmax = base.use_softmax;
            m.use_transform = base.use_transform;
        }
        cfg.fcb_hidden = j.value("fcb_hidden", 8);
        cfg.bn_eps = j.value("bn_eps", real(1e-5));
        cfg.bn_momentum = j.value("bn_momentum", real(0.1));
        if (j.contains("blocks")) {
            const json& blocks = j["blocks"];
            if (!blocks.is_array() || blocks.size() != 6)
                throw ConfigError("config: blocks must be an array of 6 entries");
            for (size_t b = 0; b < 6; ++b) {
                ConvBlockSpec& spec = cfg.blocks[b];
                const json& jb = blocks[b];
                spec.filters = jb.value("filters", spec.filters);
                spec.kernel = jb.value("kernel", spec.kernel);
                spec.padding = jb.value("padding", spec.padding);
                spec.pool = jb.value("pool", spec.pool);
                spec.pool_window = jb.value("pool_window", spec.pool_window);
                spec.pool_stride = jb.value("pool_stride", spec.pool_stride);
            }
        }
        if (j.contains("match_cfg")) {
            for (const auto& [key, jm] : j["match_cfg"].items()) {
                const int stage = std::stoi(key);
                MatchBlockConfig stage_base = base;
                auto it = cfg.match_cfg.find(stage);
                if (it != cfg.match_cfg.end()) stage_base = it->second;
                cfg.match_cfg[stage] = match_from_json(jm, stage_base);
            }
        }
        return cfg;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

Parameter& ModelParams::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

const Parameter& ModelParams::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

BatchNormState& ModelParams::bn(const std::string& block) {
    auto it = bn_.find(block);
    if (it == bn_.end()) throw ConfigError("unknown batchnorm state: " + block);
    return it->second;
}

const BatchNormState& ModelParams::bn(const std::string& block) const {
    auto it = bn_.find(block);
    if (it == bn_.end()) throw ConfigError("unknown batchnorm state: " + block);
    return it->second;
}

void ModelParams::zero_grads() {
    for (auto& [name, p] : params_) p.zero_grad();
}

ModelParams ModelParams::init(const CFMNConfig& cfg, uint64_t seed) {
    const TracedShapes ts = trace_shapes(cfg);
    ModelParams mp;
    Rng rng(mix_u64(seed, 0x636668e6eULL));
    auto add = [&mp](const std::string& name, Tensor t) {
        mp.params_.emplace(name, Parameter(name, std::move(t)));
    };

    int in_c = cfg.channels_in;
    for (int b = 0; b < 6; ++b) {
        const ConvBlockSpec& spec = cfg.blocks[static_cast<size_t>(b)];
        const std::string prefix = "cb" + std::to_string(b + 1);
        if (b == 4) in_c = ts.concat.c;
        const real std_w =
            std::sqrt(real(2) / static_cast<real>(in_c * spec.kernel * spec.kernel));
        add(prefix + ".conv.weight",
            random_normal({spec.filters, in_c, spec.kernel, spec.kernel}, rng, std_w));
        add(prefix + ".conv.bias", Tensor({spec.filters}));
        add(prefix + ".bn.gamma", Tensor({spec.filters}, real(1)));
        add(prefix + ".bn.beta", Tensor({spec.filters}));
        mp.bn_.emplace(prefix, BatchNormState(spec.filters));
        in_c = spec.filters;
    }

    for (int s : cfg.matching_stages) {
        const MatchBlockConfig& mc = cfg.match_cfg.at(s);
        if (!mc.use_transform) continue;
        MatchBlockParams p = MatchBlockParams::init(mc.c_in, mc.c_m, rng);
        const std::string prefix = "match" + std::to_string(s);
        add(prefix + ".mu.weight", std::move(p.mu_w));
        add(prefix + ".mu.bias", std::move(p.mu_b));
        add(prefix + ".phi.weight", std::move(p.phi_w));
        add(prefix + ".phi.bias", std::move(p.phi_b));
        add(prefix + ".omega.weight", std::move(p.omega_w));
        add(prefix + ".omega.bias", std::move(p.omega_b));
        add(prefix + ".restore.weight", std::move(p.restore_w));
        add(prefix + ".restore.bias", std::move(p.restore_b));
    }

    const real std_fc1 = std::sqrt(real(2) / static_cast<real>(ts.fcb_in));
    add("fcb.fc1.weight", random_normal({cfg.fcb_hidden, ts.fcb_in}, rng, std_fc1));
    add("fcb.fc1.bias", Tensor({cfg.fcb_hidden}));
    const real std_fc2 = std::sqrt(real(2) / static_cast<real>(cfg.fcb_hidden));
    add("fcb.fc2.weight", random_normal({1, cfg.fcb_hidden}, rng, std_fc2));
    add("fcb.fc2.bias", Tensor({1}));
    return mp;
}

Model Model::create(const CFMNConfig& cfg, uint64_t seed) {
    Model m;
    m.cfg = cfg;
    m.shapes = trace_shapes(cfg);
    m.params = ModelParams::init(cfg, seed);
    return m;
}

namespace {

struct BoundParams {
    // tape handles for conv/bn params per block and matching/fcb params
    struct Block {
        Var conv_w, conv_b, gamma, beta;
    };
    std::array<Block, 6> blocks;
    std::map<int, MatchVars> match;
    Var fc1_w, fc1_b, fc2_w, fc2_b;
};

Var bind(Tape& t, Parameter& p, bool with_grads) {
    return with_grads ? t.param(p) : t.leaf(p.value, false);
}

BoundParams bind_all(Tape& t, Model& m, bool with_grads) {
    BoundParams bp;
    for (int b = 0; b < 6; ++b) {
        const std::string prefix = "cb" + std::to_string(b + 1);
        bp.blocks[static_cast<size_t>(b)] = {
            bind(t, m.params.at(prefix + ".conv.weight"), with_grads),
            bind(t, m.params.at(prefix + ".conv.bias"), with_grads),
            bind(t, m.params.at(prefix + ".bn.gamma"), with_grads),
            bind(t, m.params.at(prefix + ".bn.beta"), with_grads)};
    }
    for (int s : m.cfg.matching_stages) {
        const MatchBlockConfig& mc = m.cfg.match_cfg.at(s);
        MatchVars v;
        if (mc.use_transform) {
            const std::string prefix = "match" + std::to_string(s);
            v.mu_w = bind(t, m.params.at(prefix + ".mu.weight"), with_grads);
            v.mu_b = bind(t, m.params.at(prefix + ".mu.bias"), with_grads);
            v.phi_w = bind(t, m.params.at(prefix + ".phi.weight"), with_grads);
            v.phi_b = bind(t, m.params.at(prefix + ".phi.bias"), with_grads);
            v.omega_w = bind(t, m.params.at(prefix + ".omega.weight"), with_grads);
            v.omega_b = bind(t, m.params.at(prefix + ".omega.bias"), with_grads);
            v.restore_w = bind(t, m.params.at(prefix + ".restore.weight"), with_grads);
            v.restore_b = bind(t, m.params.at(prefix + ".restore.bias"), with_grads);
        }
        bp.match.emplace(s, v);
    }
    bp.fc1_w = bind(t, m.params.at("fcb.fc1.weight"), with_grads);
    bp.fc1_b = bind(t, m.params.at("fcb.fc1.bias"), with_grads);
    bp.fc2_w = bind(t, m.params.at("fcb.fc2.weight"), with_grads);
    bp.fc2_b = bind(t, m.params.at("fcb.fc2.bias"), with_grads);
    return bp;
}

// conv -> BN (joint batch over the group) -> relu -> optional pool
std::vector<Var> stage_forward(Tape& t, Model& m, const BoundParams& bp, int block,
                               const std::vector<Var>& inputs, BnMode mode) {
    const ConvBlockSpec& spec = m.cfg.blocks[static_cast<size_t>(block)];
    const std::string name = "CB" + std::to_string(block + 1);
    const BoundParams::Block& pb = bp.blocks[static_cast<size_t>(block)];
    std::vector<Var> conv_outs;
    conv_outs.reserve(inputs.size());
    for (Var in : inputs)
        conv_outs.push_back(
            ops::conv2d(t, in, pb.conv_w, pb.conv_b, 1, spec.padding, name.c_str()));
    Var stacked = ops::stack_batch(t, conv_outs);
    Var normed = ops::batchnorm(t, stacked, pb.gamma, pb.beta,
                                m.params.bn("cb" + std::to_string(block + 1)), mode, m.cfg.bn_eps,
                                m.cfg.bn_momentum, true, name.c_str());
    std::vector<Var> outs;
    outs.reserve(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
        Var x = ops::slice_batch(t, normed, static_cast<int>(i));
        x = ops::relu(t, x);
        if (spec.pool) x = ops::maxpool2d(t, x, spec.pool_window, spec.pool_stride, name.c_str());
        outs.push_back(x);
    }
    return outs;
}

bool stage_matches(const Model& m, int block_num) {
    return std::find(m.cfg.matching_stages.begin(), m.cfg.matching_stages.end(), block_num) !=
           m.cfg.matching_stages.end();
}

struct ExtractResult {
    std::vector<Var> support;                 // per support image
    std::vector<std::vector<Var>> per_pair;   // [query][support]; empty if never forked
    std::vector<Var> query;                   // per query; valid until fork
    bool forked = false;
};

// Cascade of Fig. 3: support branch runs plain; the query branch feature is
// replaced by the matched feature after every matching stage, so each later
// stage sees one query path per support image.
ExtractResult cascade_extract(Tape& t, Model& m, const BoundParams& bp,
                              const std::vector<Var>& support_imgs,
                              const std::vector<Var>& query_imgs, BnMode mode,
                              std::map<int, AttentionMap>* capture) {
    ExtractResult r;
    r.support = support_imgs;
    r.query = query_imgs;
    const size_t ns = support_imgs.size();
    const size_t nq = query_imgs.size();

    for (int block = 0; block < 4; ++block) {
        std::vector<Var> group = r.support;
        if (!r.forked) {
            group.insert(group.end(), r.query.begin(), r.query.end());
        } else {
            for (const auto& row : r.per_pair) group.insert(group.end(), row.begin(), row.end());
        }
        std::vector<Var> outs = stage_forward(t, m, bp, block, group, mode);
        r.support.assign(outs.begin(), outs.begin() + static_cast<long>(ns));
        if (!r.forked) {
            r.query.assign(outs.begin() + static_cast<long>(ns), outs.end());
        } else {
            size_t k = ns;
            for (auto& row : r.per_pair)
                for (auto& v : row) v = outs[k++];
        }

        const int block_num = block + 1;
        if (!stage_matches(m, block_num)) continue;
        const MatchBlockConfig& mc = m.cfg.match_cfg.at(block_num);
        const MatchVars& mv = bp.match.at(block_num);
        const std::string stage = "CB" + std::to_string(block_num) + " matching";
        if (!r.forked) {
            r.per_pair.assign(nq, std::vector<Var>(ns));
            for (size_t q = 0; q < nq; ++q)
                for (size_t s = 0; s < ns; ++s)
                    r.per_pair[q][s] =
                        apply_matching_op(t, r.query[q], r.support[s], mv, mc, stage.c_str(),
                                          capture ? &(*capture)[block_num] : nullptr);
            r.forked = true;
            r.query.clear();
        } else {
            for (size_t q = 0; q < nq; ++q)
                for (size_t s = 0; s < ns; ++s)
                    r.per_pair[q][s] =
                        apply_matching_op(t, r.per_pair[q][s], r.support[s], mv, mc, stage.c_str(),
                                          capture ? &(*capture)[block_num] : nullptr);
        }
    }
    return r;
}

// CB5 -> CB6 -> flatten -> FC/ReLU -> FC/Sigmoid over a group of
// concatenated (and K-averaged) features; returns one scalar per entry.
std::vector<Var> metric_head(Tape& t, Model& m, const BoundParams& bp,
                             const std::vector<Var>& feats, BnMode mode) {
    std::vector<Var> x = stage_forward(t, m, bp, 4, feats, mode);
    x = stage_forward(t, m, bp, 5, x, mode);
    std::vector<Var> scores;
    scores.reserve(x.size());
    for (Var v : x) {
        Var f = ops::flatten(t, v);
        Var h = ops::relu(t, ops::fully_connected(t, f, bp.fc1_w, bp.fc1_b));
        Var o = ops::sigmoid(t, ops::fully_connected(t, h, bp.fc2_w, bp.fc2_b));
        scores.push_back(o);
    }
    return scores;
}

void check_image(const Tensor& img, const Model& m, const char* what) {
    if (img.rank() != 3 || img.extent(0) != m.cfg.channels_in ||
        img.extent(1) != m.cfg.input_size || img.extent(2) != m.cfg.input_size)
        throw ProtocolError(std::string(what) + " image " + img.shape_str() +
                            " does not match model input [" +
                            std::to_string(m.cfg.channels_in) + "x" +
                            std::to_string(m.cfg.input_size) + "x" +
                            std::to_string(m.cfg.input_size) + "]");
}

}  // namespace

ForwardResult episode_forward(Tape& t, Model& m, const EpisodeBatch& batch, BnMode mode,
                              bool with_grads) {
    const int n = batch.way;
    const size_t ns = batch.support_images.size();
    const size_t nq = batch.query_images.size();
    if (n < 1 || ns == 0 || nq == 0)
        throw ProtocolError("episode_forward: empty episode (way " + std::to_string(n) + ", " +
                            std::to_string(ns) + " supports, " + std::to_string(nq) + " queries)");
    if (batch.support_slots.size() != ns)
        throw ProtocolError("episode_forward: slot list size mismatch");

    // class slot -> indices of supports carrying it
    std::vector<std::vector<int>> groups(static_cast<size_t>(n));
    for (size_t s = 0; s < ns; ++s) {
        for (int slot : batch.support_slots[s]) {
            if (slot < 0 || slot >= n)
                throw ProtocolError("episode_forward: class slot " + std::to_string(slot) +
                                    " outside 0.." + std::to_string(n - 1));
            groups[static_cast<size_t>(slot)].push_back(static_cast<int>(s));
        }
    }
    for (int c = 0; c < n; ++c) {
        const size_t count = groups[static_cast<size_t>(c)].size();
        if (count == 0)
            throw ProtocolError("episode_forward: class slot " + std::to_string(c) +
                                " has no supporting image");
        if (batch.k_shot > 0 && count != static_cast<size_t>(batch.k_shot))
            throw ProtocolError("episode_forward: class slot " + std::to_string(c) + " has " +
                                std::to_string(count) + " supports, expected " +
                                std::to_string(batch.k_shot));
    }

    for (const Tensor* img : batch.support_images) check_image(*img, m, "support");
    for (const Tensor* img : batch.query_images) check_image(*img, m, "query");

    BoundParams bp = bind_all(t, m, with_grads);
    std::vector<Var> s_imgs, q_imgs;
    for (const Tensor* img : batch.support_images) s_imgs.push_back(t.leaf(*img, false));
    for (const Tensor* img : batch.query_images) q_imgs.push_back(t.leaf(*img, false));

    ExtractResult ex = cascade_extract(t, m, bp, s_imgs, q_imgs, mode, nullptr);

    // K-shot averaging on the concatenated feature, one metric-head entry
    // per (query, class)
    std::vector<Var> head_in;
    head_in.reserve(nq * static_cast<size_t>(n));
    for (size_t q = 0; q < nq; ++q) {
        for (int c = 0; c < n; ++c) {
            std::vector<Var> members;
            for (int s : groups[static_cast<size_t>(c)]) {
                Var qf = ex.forked ? ex.per_pair[q][static_cast<size_t>(s)] : ex.query[q];
                members.push_back(
                    ops::concat_channels(t, qf, ex.support[static_cast<size_t>(s)]));
            }
            head_in.push_back(members.size() == 1 ? members[0]
                                                  : ops::elementwise_mean(t, members));
        }
    }
    std::vector<Var> scalar_scores = metric_head(t, m, bp, head_in, mode);
    Var flat = ops::concat_scalars(t, scalar_scores);

    ForwardResult fr;
    fr.scores_var = flat;
    fr.scores = Tensor::from({static_cast<int>(nq), n}, t.val(flat).data);
    return fr;
}

std::pair<Tensor, Tensor> extract_pair(Model& m, const Tensor& query, const Tensor& support,
                                       BnMode mode, std::map<int, AttentionMap>* capture) {
    check_image(query, m, "query");
    check_image(support, m, "support");
    Tape t;
    BoundParams bp = bind_all(t, m, false);
    std::vector<Var> s_imgs{t.leaf(support, false)};
    std::vector<Var> q_imgs{t.leaf(query, false)};
    ExtractResult ex = cascade_extract(t, m, bp, s_imgs, q_imgs, mode, capture);
    Var qf = ex.forked ? ex.per_pair[0][0] : ex.query[0];
    return {t.val(qf), t.val(ex.support[0])};
}

real score_pair(Model& m, const Tensor& q_feat, const Tensor& s_feat, BnMode mode) {
    if (!q_feat.same_shape(s_feat))
        throw ShapeError("score_pair: feature shapes differ: " + q_feat.shape_str() + " vs " +
                         s_feat.shape_str());
    Tape t;
    BoundParams bp = bind_all(t, m, false);
    Var concat = ops::concat_channels(t, t.leaf(q_feat, false), t.leaf(s_feat, false));
    std::vector<Var> s = metric_head(t, m, bp, {concat}, mode);
    return t.val(s[0]).data[0];
}

Tensor classify_episode(Model& m, const Tensor& query,
                        const std::vector<std::pair<const Tensor*, int>>& support, BnMode mode) {
    if (support.empty()) throw ProtocolError("classify_episode: empty support set");
    int n = 0;
    for (const auto& [img, cls] : support) n = std::max(n, cls + 1);
    EpisodeBatch batch;
    batch.way = n;
    const size_t per_class = support.size() / static_cast<size_t>(n);
    batch.k_shot = static_cast<int>(per_class);
    for (const auto& [img, cls] : support) {
        batch.support_images.push_back(img);
        batch.support_slots.push_back({cls});
    }
    batch.query_images.push_back(&query);
    Tape t;
    ForwardResult fr = episode_forward(t, m, batch, mode, false);
    return Tensor::from({n}, fr.scores.data);
}

Tensor classify_multilabel(Model& m, const Tensor& query,
                           const std::vector<std::pair<const Tensor*, std::vector<int>>>& support,
                           int n_way, BnMode mode) {
    if (support.empty()) throw ProtocolError("classify_multilabel: empty support set");
    EpisodeBatch batch;
    batch.way = n_way;
    batch.k_shot = 0;
    for (const auto& [img, slots] : support) {
        batch.support_images.push_back(img);
        batch.support_slots.push_back(slots);
    }
    batch.query_images.push_back(&query);
    Tape t;
    ForwardResult fr = episode_forward(t, m, batch, mode, false);
    return Tensor::from({n_way}, fr.scores.data);
}

}  // namespace cfmn
