#include "trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace cfmn {

using nlohmann::json;

void TrainConfig::validate() const {
    if (plateau_window >= stop_window)
        throw ConfigError("train config: plateau_window must be < stop_window");
    if (decay <= real(0) || decay >= real(1))
        throw ConfigError("train config: decay factor must lie in (0,1)");
    if (val_every < 1 || val_episodes < 1 || queries_per_class < 1)
        throw ConfigError("train config: counts must be >= 1");
    if (lr <= real(0)) throw ConfigError("train config: learning rate must be positive");
}

real episode_loss(const Tensor& scores, const Tensor& targets) {
    if (!scores.same_shape(targets))
        throw ShapeError("episode_loss: " + scores.shape_str() + " vs " + targets.shape_str());
    for (real t : targets.data)
        if (t != real(0) && t != real(1))
            throw ProtocolError("episode_loss: targets must be 0/1");
    real acc = 0;
    for (size_t i = 0; i < scores.data.size(); ++i) {
        const real d = scores.data[i] - targets.data[i];
        acc += d * d;
    }
    return acc / static_cast<real>(scores.numel());
}

void adam_step(ModelParams& params, AdamState& state, real lr, real beta1, real beta2, real eps) {
    state.step += 1;
    const real bc1 = real(1) - static_cast<real>(std::pow(static_cast<double>(beta1),
                                                          static_cast<double>(state.step)));
    const real bc2 = real(1) - static_cast<real>(std::pow(static_cast<double>(beta2),
                                                          static_cast<double>(state.step)));
    for (auto& [name, p] : params.all()) {
        for (real g : p.grad.data)
            if (!std::isfinite(g))
                throw NumericError("non-finite gradient in parameter " + name);
        auto it = state.moments.find(name);
        if (it == state.moments.end())
            it = state.moments
                     .emplace(name, std::make_pair(Tensor(p.value.shape), Tensor(p.value.shape)))
                     .first;
        Tensor& m = it->second.first;
        Tensor& v = it->second.second;
        for (size_t i = 0; i < p.value.data.size(); ++i) {
            const real g = p.grad.data[i];
            m.data[i] = beta1 * m.data[i] + (real(1) - beta1) * g;
            v.data[i] = beta2 * v.data[i] + (real(1) - beta2) * g * g;
            const real mhat = m.data[i] / bc1;
            const real vhat = v.data[i] / bc2;
            p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

namespace {

double default_validation(Model& m, const DatasetIndex& data, const TrainConfig& cfg, int way,
                          int shot) {
    std::vector<double> accs;
    accs.reserve(static_cast<size_t>(cfg.val_episodes));
    for (int e = 0; e < cfg.val_episodes; ++e) {
        Rng rng(mix_u64(mix_u64(cfg.seed, 0x76616cULL), static_cast<uint64_t>(e)));
        const Episode ep = cfg.multilabel
                               ? sample_multilabel_episode(data, Split::val, way, shot,
                                                           cfg.queries_per_class, rng)
                               : sample_episode(data, Split::val, way, shot,
                                                cfg.queries_per_class, rng);
        EpisodeBatch batch = make_batch(data, ep);
        Tape tape;
        ForwardResult fr = episode_forward(tape, m, batch, BnMode::eval, false);
        if (cfg.multilabel) {
            auto [p, r, f1] = multilabel_metrics({{fr.scores, ep.targets}}, cfg.threshold);
            accs.push_back(f1);
        } else {
            accs.push_back(episode_accuracy(fr.scores, ep.targets));
        }
    }
    return mean_of(accs);
}

bool bn_ready(const Model& m) {
    for (const auto& [block, state] : m.params.bn_all())
        if (!state.initialized) return false;
    return true;
}

void append_log(std::ofstream* f, const LogRecord& r) {
    if (!f || !f->is_open()) return;
    json j{{"episode", r.episode}, {"loss", r.loss}, {"train_acc", r.train_acc}, {"lr", r.lr}};
    j["val_acc"] = r.val_acc >= 0 ? json(r.val_acc) : json(nullptr);
    j["event"] = r.event.empty() ? json(nullptr) : json(r.event);
    (*f) << j.dump() << "\n";
    f->flush();
}

}  // namespace

TrainResult train_loop(Model& m, const DatasetIndex& data, const TrainConfig& cfg,
                       const TrainHooks* hooks) {
    cfg.validate();
    const int way = cfg.way > 0 ? cfg.way : m.cfg.n_way;
    const int shot = cfg.shot > 0 ? cfg.shot : m.cfg.k_shot;
    if (cfg.multilabel != data.multilabel)
        throw ProtocolError("train_loop: dataset/config multilabel mismatch");

    auto validate_fn = [&](long episode) -> double {
        if (hooks && hooks->validate) return hooks->validate(m, episode);
        return default_validation(m, data, cfg, way, shot);
    };

    std::ofstream log_file;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        log_file.open(std::filesystem::path(cfg.out_dir) / "train_log.jsonl", std::ios::trunc);
        if (!log_file) throw IoError("cannot write training log under " + cfg.out_dir);
    }
    auto save_best = [&](const ParamSnapshot& snap) {
        if (cfg.out_dir.empty()) return;
        ModelParams tmp = m.params;
        restore(tmp, snap);
        save_checkpoint(tmp, (std::filesystem::path(cfg.out_dir) / "best.ckpt").string());
    };

    TrainResult result;
    AdamState adam;
    ParamSnapshot best;
    real lr = cfg.lr;
    long best_episode = 0;
    long last_lr_change = 0;

    // Baseline validation before any training, when the model can run in
    // eval mode (injected hook, or batch-norm state loaded from a
    // checkpoint). A fresh model gets its baseline at the first block.
    double best_val = -std::numeric_limits<double>::infinity();
    if ((hooks && hooks->validate) || bn_ready(m)) {
        best_val = validate_fn(0);
        best = snapshot(m.params);
        result.log.push_back({0, 0, 0, best_val, static_cast<double>(lr), "baseline"});
        append_log(log_file.is_open() ? &log_file : nullptr, result.log.back());
    }

    for (long episode = 1;; ++episode) {
        Rng rng(mix_u64(cfg.seed, static_cast<uint64_t>(episode)));
        const Episode ep = cfg.multilabel
                               ? sample_multilabel_episode(data, Split::train, way, shot,
                                                           cfg.queries_per_class, rng)
                               : sample_episode(data, Split::train, way, shot,
                                                cfg.queries_per_class, rng);
        EpisodeBatch batch = make_batch(data, ep);
        Tape tape;
        ForwardResult fr = episode_forward(tape, m, batch, BnMode::train, true);
        const real loss = episode_loss(fr.scores, ep.targets);
        double train_acc;
        if (cfg.multilabel) {
            auto [p, r, f1] = multilabel_metrics({{fr.scores, ep.targets}}, cfg.threshold);
            train_acc = f1;
        } else {
            train_acc = episode_accuracy(fr.scores, ep.targets);
        }

        m.params.zero_grads();
        Var loss_var = ops::mse(tape, fr.scores_var,
                                Tensor::from({static_cast<int>(ep.targets.numel())},
                                             ep.targets.data));
        tape.backward(loss_var);
        adam_step(m.params, adam, lr, cfg.beta1, cfg.beta2, cfg.adam_eps);

        LogRecord rec{episode, static_cast<double>(loss), train_acc, -1,
                      static_cast<double>(lr), ""};
        result.episodes_run = episode;

        if (episode % cfg.val_every == 0) {
            const double val = validate_fn(episode);
            rec.val_acc = val;
            if (val > best_val) {
                best_val = val;
                best_episode = episode;
                best = snapshot(m.params);
                save_best(best);
                rec.event = "improve";
            } else if (episode - best_episode >= cfg.stop_window) {
                rec.event = "stop";
            } else if (episode - best_episode >= cfg.plateau_window &&
                       episode - last_lr_change >= cfg.plateau_window) {
                if (!best.empty()) restore(m.params, best);
                lr *= cfg.decay;
                last_lr_change = episode;
                rec.event = "decay_reload";
            }
        }
        bool stop_now = rec.event == "stop";
        if (cfg.max_episodes > 0 && episode >= cfg.max_episodes) {
            if (rec.event.empty()) rec.event = "max_episodes";
            stop_now = true;
        }

        result.log.push_back(rec);
        append_log(log_file.is_open() ? &log_file : nullptr, rec);
        if (stop_now) break;
    }

    result.best_val = best_val;
    result.best_episode = best_episode;
    if (!cfg.out_dir.empty())
        save_checkpoint(m.params, (std::filesystem::path(cfg.out_dir) / "last.ckpt").string());
    if (!best.empty()) restore(m.params, best);
    return result;
}

}  // namespace cfmn
