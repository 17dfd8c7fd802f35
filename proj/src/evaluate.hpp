#pragma once

#include <tuple>

#include "episodes.hpp"
#include "model.hpp"

namespace cfmn {

struct EvalProtocol {
    int episodes = 600;
    int repetitions = 10;
    int queries_per_class = 15;
    int way = 5;
    int shot = 1;
    real threshold = real(0.4);  // multi-label positive cutoff, strict >
    uint64_t seed = 0;
    Split split = Split::test;
    int workers = 1;

    void validate() const;
};

struct RepStats {
    double mean = 0;   // accuracy (or per-episode micro-F1 for multilabel)
    double ci95 = 0;
    double precision = 0, recall = 0, f1 = 0;  // micro within the repetition
};

struct EvalReport {
    EvalProtocol protocol;
    std::vector<RepStats> reps;
    double mean = 0;               // mean of repetition means
    double ci95_mean_of_reps = 0;  // average of per-repetition halfwidths
    double ci95_pooled = 0;        // over all episodes of all repetitions
    bool multilabel = false;
    double precision = 0, recall = 0, f1 = 0;  // micro over the whole run
    long long classifications_per_rep = 0;     // queries classified per repetition
};

double mean_of(const std::vector<double>& xs);
// 1.96 * sample standard deviation / sqrt(n); 0 when n < 2
double ci95_halfwidth(const std::vector<double>& xs);

// argmax-match rate of query rows; ties resolve to the first index
double episode_accuracy(const Tensor& scores, const Tensor& targets);

// micro-averaged over all (query, class) decisions; a prediction is
// positive iff score > threshold (strict). Zero denominators yield 0.
std::tuple<double, double, double> multilabel_metrics(
    const std::vector<std::pair<Tensor, Tensor>>& score_truth, real threshold);

EpisodeBatch make_batch(const DatasetIndex& index, const Episode& ep);

EvalReport evaluate(Model& m, const DatasetIndex& index, const EvalProtocol& protocol);
EvalReport evaluate_multilabel(Model& m, const DatasetIndex& index, const EvalProtocol& protocol);

std::string report_to_json(const EvalReport& report);

}  // namespace cfmn
