#pragma once

#include <functional>

#include "checkpoint.hpp"
#include "evaluate.hpp"

namespace cfmn {

struct TrainConfig {
    int way = 0;   // 0: take the model's n_way
    int shot = 0;  // 0: take the model's k_shot
    int queries_per_class = 15;
    real lr = real(1e-3);
    real beta1 = real(0.9), beta2 = real(0.999), adam_eps = real(1e-8);
    int plateau_window = 1500;  // episodes without val improvement before decay
    int stop_window = 5000;     // episodes without val improvement before stop
    real decay = real(0.1);
    int val_every = 100;
    int val_episodes = 100;  // fixed validation block, fixed seed
    int max_episodes = 0;    // 0: run until early stop
    uint64_t seed = 0;
    bool multilabel = false;
    real threshold = real(0.4);  // multilabel validation cutoff
    std::string out_dir;         // empty: keep everything in memory

    void validate() const;
};

struct AdamState {
    std::map<std::string, std::pair<Tensor, Tensor>> moments;  // first, second
    long step = 0;
};

// mean over all Q*N entries of (score - target)^2; targets must be 0/1
real episode_loss(const Tensor& scores, const Tensor& targets);

// standard Adam with bias correction; aborts with the parameter name on a
// non-finite gradient
void adam_step(ModelParams& params, AdamState& state, real lr, real beta1 = real(0.9),
               real beta2 = real(0.999), real eps = real(1e-8));

struct LogRecord {
    long episode = 0;
    double loss = 0;
    double train_acc = 0;
    double val_acc = -1;  // < 0: no validation this episode
    double lr = 0;
    std::string event;    // "", "improve", "decay_reload", "stop", "max_episodes"
};

struct TrainHooks {
    // overrides the validation protocol (used by schedule tests)
    std::function<double(Model&, long episode)> validate;
};

struct TrainResult {
    double best_val = -1;
    long best_episode = -1;
    long episodes_run = 0;
    std::vector<LogRecord> log;
};

// Episodic MSE training: sample, forward (train-mode batch norm), backward,
// one Adam step per episode. Validation every val_every episodes on a fixed
// seeded block; on plateau the best checkpoint is reloaded and the learning
// rate decays by `decay`; training stops after stop_window episodes without
// improvement. The model holds the best parameters when this returns.
TrainResult train_loop(Model& m, const DatasetIndex& data, const TrainConfig& cfg,
                       const TrainHooks* hooks = nullptr);

}  // namespace cfmn
