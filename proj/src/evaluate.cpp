#include "evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <json.hpp>

namespace cfmn {

using nlohmann::json;

void EvalProtocol::validate() const {
    if (episodes < 1 || repetitions < 1 || queries_per_class < 1 || way < 1 || shot < 1)
        throw ProtocolError("eval protocol: all counts must be >= 1");
    if (threshold <= real(0) || threshold >= real(1))
        throw ProtocolError("eval protocol: threshold must lie in (0,1)");
    if (workers < 1) throw ProtocolError("eval protocol: workers must be >= 1");
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0;
    double s = 0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double ci95_halfwidth(const std::vector<double>& xs) {
    const size_t n = xs.size();
    if (n < 2) return 0;
    const double m = mean_of(xs);
    double ss = 0;
    for (double x : xs) ss += (x - m) * (x - m);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    return 1.96 * sd / std::sqrt(static_cast<double>(n));
}

namespace {

int argmax_row(const Tensor& t, int row) {
    const int n = t.extent(1);
    int best = 0;
    for (int j = 1; j < n; ++j)
        if (t.at(row, j) > t.at(row, best)) best = j;
    return best;
}

struct PrfCounts {
    long long tp = 0, fp = 0, fn = 0;
    void add(const Tensor& scores, const Tensor& targets, real threshold) {
        for (size_t i = 0; i < scores.data.size(); ++i) {
            const bool pred = scores.data[i] > threshold;
            const bool truth = targets.data[i] != real(0);
            if (pred && truth)
                ++tp;
            else if (pred && !truth)
                ++fp;
            else if (!pred && truth)
                ++fn;
        }
    }
};

std::tuple<double, double, double> prf(const PrfCounts& c) {
    const double p = (c.tp + c.fp) == 0 ? 0.0
                                        : static_cast<double>(c.tp) /
                                              static_cast<double>(c.tp + c.fp);
    const double r = (c.tp + c.fn) == 0 ? 0.0
                                        : static_cast<double>(c.tp) /
                                              static_cast<double>(c.tp + c.fn);
    const double f1 = (p + r) == 0 ? 0.0 : 2.0 * p * r / (p + r);
    return {p, r, f1};
}

}  // namespace

double episode_accuracy(const Tensor& scores, const Tensor& targets) {
    if (!scores.same_shape(targets))
        throw ShapeError("episode_accuracy: " + scores.shape_str() + " vs " +
                         targets.shape_str());
    const int q = scores.extent(0);
    int hits = 0;
    for (int i = 0; i < q; ++i)
        if (targets.at(i, argmax_row(scores, i)) != real(0)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(q);
}

std::tuple<double, double, double> multilabel_metrics(
    const std::vector<std::pair<Tensor, Tensor>>& score_truth, real threshold) {
    if (threshold <= real(0) || threshold >= real(1))
        throw ProtocolError("multilabel_metrics: threshold must lie in (0,1)");
    PrfCounts counts;
    for (const auto& [scores, truth] : score_truth) {
        if (!scores.same_shape(truth))
            throw ShapeError("multilabel_metrics: " + scores.shape_str() + " vs " +
                             truth.shape_str());
        counts.add(scores, truth, threshold);
    }
    return prf(counts);
}

EpisodeBatch make_batch(const DatasetIndex& index, const Episode& ep) {
    EpisodeBatch batch;
    batch.way = ep.way;
    batch.k_shot = index.multilabel ? 0 : ep.shot;
    for (size_t i = 0; i < ep.support_items.size(); ++i) {
        batch.support_images.push_back(&index.items[static_cast<size_t>(ep.support_items[i])].image);
        batch.support_slots.push_back(ep.support_slots[i]);
    }
    for (int item : ep.query_items)
        batch.query_images.push_back(&index.items[static_cast<size_t>(item)].image);
    return batch;
}

namespace {

struct EpisodeOutcome {
    double accuracy = 0;
    long long queries = 0;
    PrfCounts counts;
};

template <typename Fn>
void parallel_episodes(int episodes, int workers, const Fn& run_one) {
    if (workers <= 1) {
        for (int e = 0; e < episodes; ++e) run_one(e);
        return;
    }
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (int e = w; e < episodes; e += workers) run_one(e);
        });
    for (auto& t : pool) t.join();
}

EvalReport run_protocol(Model& m, const DatasetIndex& index, const EvalProtocol& protocol,
                        bool multilabel) {
    protocol.validate();
    if (index.multilabel != multilabel)
        throw ProtocolError(multilabel ? "evaluate_multilabel needs a multi-label index"
                                       : "evaluate needs a single-label index");
    EvalReport report;
    report.protocol = protocol;
    report.multilabel = multilabel;

    std::vector<double> all_episode_means;
    std::vector<double> rep_halfwidths;
    PrfCounts grand_counts;
    long long classifications = -1;

    for (int rep = 0; rep < protocol.repetitions; ++rep) {
        std::vector<EpisodeOutcome> outcomes(static_cast<size_t>(protocol.episodes));
        parallel_episodes(protocol.episodes, protocol.workers, [&](int e) {
            Rng rng(mix_u64(protocol.seed,
                            static_cast<uint64_t>(rep) * static_cast<uint64_t>(protocol.episodes) +
                                static_cast<uint64_t>(e)));
            const Episode ep =
                multilabel ? sample_multilabel_episode(index, protocol.split, protocol.way,
                                                       protocol.shot, protocol.queries_per_class,
                                                       rng)
                           : sample_episode(index, protocol.split, protocol.way, protocol.shot,
                                            protocol.queries_per_class, rng);
            EpisodeBatch batch = make_batch(index, ep);
            Tape tape;
            ForwardResult fr = episode_forward(tape, m, batch, BnMode::eval, false);
            EpisodeOutcome& out = outcomes[static_cast<size_t>(e)];
            out.queries = static_cast<long long>(ep.query_items.size());
            if (multilabel) {
                out.counts.add(fr.scores, ep.targets, protocol.threshold);
                auto [p, r, f1] = prf(out.counts);
                out.accuracy = f1;  // per-episode micro-F1 feeds the CI
            } else {
                out.accuracy = episode_accuracy(fr.scores, ep.targets);
            }
        });

        RepStats stats;
        std::vector<double> accs;
        accs.reserve(outcomes.size());
        long long rep_queries = 0;
        PrfCounts rep_counts;
        for (const auto& out : outcomes) {
            accs.push_back(out.accuracy);
            rep_queries += out.queries;
            rep_counts.tp += out.counts.tp;
            rep_counts.fp += out.counts.fp;
            rep_counts.fn += out.counts.fn;
        }
        stats.mean = mean_of(accs);
        stats.ci95 = ci95_halfwidth(accs);
        if (multilabel) std::tie(stats.precision, stats.recall, stats.f1) = prf(rep_counts);
        report.reps.push_back(stats);
        rep_halfwidths.push_back(stats.ci95);
        all_episode_means.insert(all_episode_means.end(), accs.begin(), accs.end());
        grand_counts.tp += rep_counts.tp;
        grand_counts.fp += rep_counts.fp;
        grand_counts.fn += rep_counts.fn;
        if (classifications < 0)
            classifications = rep_queries;
        else if (classifications != rep_queries)
            throw ProtocolError("evaluate: repetition query counts differ");
    }

    std::vector<double> rep_means;
    for (const auto& r : report.reps) rep_means.push_back(r.mean);
    report.mean = mean_of(rep_means);
    report.ci95_mean_of_reps = mean_of(rep_halfwidths);
    report.ci95_pooled = ci95_halfwidth(all_episode_means);
    report.classifications_per_rep = classifications;
    if (multilabel)
        std::tie(report.precision, report.recall, report.f1) = prf(grand_counts);
    return report;
}

}  // namespace

EvalReport evaluate(Model& m, const DatasetIndex& index, const EvalProtocol& protocol) {
    return run_protocol(m, index, protocol, false);
}

EvalReport evaluate_multilabel(Model& m, const DatasetIndex& index,
                               const EvalProtocol& protocol) {
    return run_protocol(m, index, protocol, true);
}

std::string report_to_json(const EvalReport& report) {
    json j;
    j["protocol"] = {{"episodes", report.protocol.episodes},
                     {"repetitions", report.protocol.repetitions},
                     {"queries_per_class", report.protocol.queries_per_class},
                     {"way", report.protocol.way},
                     {"shot", report.protocol.shot},
                     {"threshold", report.protocol.threshold},
                     {"seed", report.protocol.seed},
                     {"split", split_name(report.protocol.split)}};
    json reps = json::array();
    for (const auto& r : report.reps) {
        json jr = {{"mean", r.mean}, {"ci95", r.ci95}};
        if (report.multilabel) {
            jr["precision"] = r.precision;
            jr["recall"] = r.recall;
            jr["f1"] = r.f1;
        }
        reps.push_back(jr);
    }
    j["per_rep"] = reps;
    j["mean"] = report.mean;
    j["ci95"] = report.ci95_mean_of_reps;
    j["ci95_pooled"] = report.ci95_pooled;
    j["classifications_per_rep"] = report.classifications_per_rep;
    if (report.multilabel) {
        j["precision"] = report.precision;
        j["recall"] = report.recall;
        j["f1"] = report.f1;
    }
    return j.dump(2);
}

}  // namespace cfmn
